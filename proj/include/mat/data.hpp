#pragma once

// Built-in datasets, stratified splitting and the on-disk CSV dataset format.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mat/dataset.hpp"
#include "mat/error.hpp"
#include "mat/rng.hpp"

namespace mat {

// Isotropic Gaussian blobs; class centres drawn uniformly in [-spread, spread]^dim.
inline Dataset make_blobs(int num_classes, int dim, int per_class, double spread, double noise, std::uint64_t seed) {
  if (num_classes < 2 || dim < 1 || per_class < 1) throw ConfigError("invalid blob dataset parameters");
  Rng rng(seed);
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(num_classes), std::vector<double>(dim));
  for (auto& c : centers)
    for (auto& v : c) v = rng.uniform(-spread, spread);
  Dataset d;
  d.name = "blobs";
  d.input_shape = {dim};
  d.num_classes = num_classes;
  std::vector<float> x(static_cast<std::size_t>(dim));
  std::size_t id = 0;
  for (int i = 0; i < per_class; ++i)
    for (int c = 0; c < num_classes; ++c) {
      for (int j = 0; j < dim; ++j) x[j] = static_cast<float>(centers[c][j] + rng.normal(0.0, noise));
      d.push_back(x, c, id++);
    }
  return d;
}

// Parameters of the synthetic multi-view texture images.
struct TextureParams {
  int num_classes = 6;
  int size = 8;                 // square image side
  int per_class = 400;
  double multiview_fraction = 0.1;  // share of samples carrying a strong second-class texture
  double weak_max = 0.25;       // secondary weight range for ordinary samples
  double strong_min = 0.6, strong_max = 0.95;  // ... and for multi-view samples
  double noise = 0.3;
  double partner_prob = 1.0;  // chance the second texture is class (c + 1) mod K rather than uniform
};

// Each class is an oriented sinusoidal grating with its own orientation and
// frequency; every sample shows its class's grating (random phase) plus a
// second class's grating at a smaller weight, and pixel noise. Multi-view
// samples carry a second texture of comparable strength.
inline Dataset make_textures(const TextureParams& p, std::uint64_t seed, std::size_t first_id = 0) {
  if (p.num_classes < 2 || p.size < 2 || p.per_class < 1) throw ConfigError("invalid texture dataset parameters");
  Rng rng(seed);
  Dataset d;
  d.name = "textures";
  d.input_shape = {1, p.size, p.size};
  d.num_classes = p.num_classes;
  const int K = p.num_classes;
  auto grating = [&](int c, double phase, std::vector<double>& out) {
    const double theta = std::numbers::pi * static_cast<double>(c) / K;
    const double freq = (c % 2 == 0) ? 0.22 : 0.34;
    for (int y = 0; y < p.size; ++y)
      for (int x = 0; x < p.size; ++x)
        out[static_cast<std::size_t>(y * p.size + x)] =
            std::cos(2.0 * std::numbers::pi * freq * (x * std::cos(theta) + y * std::sin(theta)) + phase);
  };
  const std::size_t n = static_cast<std::size_t>(p.size) * p.size;
  std::vector<double> g1(n), g2(n);
  std::vector<float> img(n);
  std::size_t id = first_id;
  for (int i = 0; i < p.per_class; ++i)
    for (int c = 0; c < K; ++c) {
      int other = static_cast<int>(rng.below(static_cast<std::uint64_t>(K - 1)));
      if (other >= c) ++other;
      if (rng.uniform() < p.partner_prob) other = (c + 1) % K;
      const bool mv = rng.uniform() < p.multiview_fraction;
      const double w2 = mv ? rng.uniform(p.strong_min, p.strong_max) : rng.uniform(0.0, p.weak_max);
      grating(c, rng.uniform(0.0, 2.0 * std::numbers::pi), g1);
      grating(other, rng.uniform(0.0, 2.0 * std::numbers::pi), g2);
      for (std::size_t k = 0; k < n; ++k) img[k] = static_cast<float>(g1[k] + w2 * g2[k] + rng.normal(0.0, p.noise));
      d.push_back(img, c, id++);
    }
  return d;
}

// Class-stratified split: each class contributes round(fraction * class size)
// rows to the first part, except that the overall first-part size is pinned to
// round(fraction * |data|) by adjusting the largest-remainder classes.
inline std::pair<Dataset, Dataset> split_dataset(const Dataset& data, double fraction, std::uint64_t seed,
                                                 const std::string& first_name = "source",
                                                 const std::string& second_name = "surrogate") {
  if (data.empty()) throw DataError("cannot split an empty dataset");
  if (!(fraction > 0.0 && fraction < 1.0)) throw ConfigError("split fraction must lie in (0, 1)");
  const auto total = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
  if (total == 0 || total == data.size()) throw ConfigError("split fraction leaves one side empty");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.labels[i]].push_back(i);
  Rng rng(seed);
  std::vector<std::pair<double, int>> remainders;
  std::map<int, std::size_t> take;
  std::size_t assigned = 0;
  for (auto& [c, rows] : by_class) {
    rng.shuffle(rows);
    const double exact = fraction * static_cast<double>(rows.size());
    take[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += take[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; assigned < total && i < remainders.size(); ++i, ++assigned) ++take[remainders[i].second];
  std::vector<std::size_t> first, second;
  for (auto& [c, rows] : by_class) {
    first.insert(first.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take[c]));
    second.insert(second.end(), rows.begin() + static_cast<std::ptrdiff_t>(take[c]), rows.end());
  }
  std::sort(first.begin(), first.end());
  std::sort(second.begin(), second.end());
  return {data.subset(first, first_name), data.subset(second, second_name)};
}

// ---- CSV dataset format -----------------------------------------------------
//
//   # mat dataset v1
//   name=<string>
//   shape=<d0>x<d1>x...
//   classes=<K>
//   <label>,<v_0>,...,<v_{d-1}>        one row per sample; ids are row numbers

inline std::string format_dataset_csv(const Dataset& d) {
  std::ostringstream out;
  out << "# mat dataset v1\nname=" << d.name << "\nshape=";
  for (std::size_t i = 0; i < d.input_shape.size(); ++i) out << (i ? "x" : "") << d.input_shape[i];
  out << "\nclasses=" << d.num_classes << "\n";
  out.precision(9);  // round-trips float32
  for (std::size_t i = 0; i < d.size(); ++i) {
    out << d.labels[i];
    for (float v : d.row(i)) out << ',' << v;
    out << '\n';
  }
  return out.str();
}

// `origin` only labels error messages.
inline Dataset parse_dataset_csv(const std::string& text, const std::string& origin = "dataset") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != "# mat dataset v1") throw DataError(origin + ": not a mat dataset file");
  Dataset d;
  for (int i = 0; i < 3; ++i) {
    if (!std::getline(in, line)) throw DataError(origin + ": truncated header");
    const auto eq = line.find('=');
    const auto key = line.substr(0, eq), val = eq == std::string::npos ? "" : line.substr(eq + 1);
    if (key == "name") {
      d.name = val;
    } else if (key == "shape") {
      std::istringstream ss(val);
      std::string tok;
      while (std::getline(ss, tok, 'x')) d.input_shape.push_back(std::stoi(tok));
    } else if (key == "classes") {
      d.num_classes = std::stoi(val);
    } else {
      throw DataError(origin + ": unexpected header key '" + key + "'");
    }
  }
  if (d.input_shape.empty() || d.num_classes < 2) throw DataError(origin + ": incomplete header");
  std::vector<float> x(d.dim());
  std::size_t id = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string tok;
    std::getline(ss, tok, ',');
    int label = 0;
    try {
      label = std::stoi(tok);
      std::size_t k = 0;
      while (std::getline(ss, tok, ',')) {
        if (k >= x.size()) throw DataError(origin + ": row " + std::to_string(id) + " is too wide");
        x[k++] = std::stof(tok);
      }
      if (k != x.size()) throw DataError(origin + ": row " + std::to_string(id) + " is too short");
    } catch (const std::logic_error&) {
      throw DataError(origin + ": row " + std::to_string(id) + " has a malformed value");
    }
    d.push_back(x, label, id++);
  }
  d.validate_labels();
  return d;
}

inline void write_dataset_csv(const Dataset& d, const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::trunc | std::ios::binary);
  if (!out) throw PersistenceError("cannot write " + p.string());
  out << format_dataset_csv(d);
}

inline Dataset read_dataset_csv(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot open dataset " + p.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_dataset_csv(ss.str(), p.string());
}

}  // namespace mat
