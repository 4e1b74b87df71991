#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mat/error.hpp"

namespace mat {

using Shape = std::vector<int>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1},
                         [](std::size_t a, int b) { return a * static_cast<std::size_t>(b); });
}

// Labeled samples stored row-major. `ids` are stable identifiers that survive
// subsetting, so a trigger entry can always be traced back to its origin.
struct Dataset {
  std::string name;
  Shape input_shape;
  int num_classes = 0;
  std::vector<float> features;
  std::vector<int> labels;
  std::vector<std::size_t> ids;

  std::size_t size() const { return labels.size(); }
  bool empty() const { return labels.empty(); }
  std::size_t dim() const { return shape_size(input_shape); }

  std::span<const float> row(std::size_t i) const {
    return {features.data() + i * dim(), dim()};
  }

  void push_back(std::span<const float> x, int label, std::size_t id) {
    if (x.size() != dim()) throw InputError("sample width does not match dataset input shape");
    features.insert(features.end(), x.begin(), x.end());
    labels.push_back(label);
    ids.push_back(id);
  }

  // Empty dataset with this one's schema.
  Dataset like(std::string new_name = {}) const {
    Dataset d;
    d.name = new_name.empty() ? name : std::move(new_name);
    d.input_shape = input_shape;
    d.num_classes = num_classes;
    return d;
  }

  Dataset subset(std::span<const std::size_t> rows, std::string new_name = {}) const {
    Dataset d = like(std::move(new_name));
    d.features.reserve(rows.size() * dim());
    d.labels.reserve(rows.size());
    d.ids.reserve(rows.size());
    for (std::size_t r : rows) d.push_back(row(r), labels[r], ids[r]);
    return d;
  }

  // Gathers rows into a contiguous batch buffer.
  std::vector<float> gather(std::span<const std::size_t> rows) const {
    std::vector<float> out;
    out.reserve(rows.size() * dim());
    for (std::size_t r : rows) {
      auto x = row(r);
      out.insert(out.end(), x.begin(), x.end());
    }
    return out;
  }

  std::unordered_map<std::size_t, std::size_t> index_by_id() const {
    std::unordered_map<std::size_t, std::size_t> m;
    m.reserve(size());
    for (std::size_t i = 0; i < size(); ++i) m.emplace(ids[i], i);
    return m;
  }

  void validate_labels() const {
    if (num_classes < 2) throw DataError("dataset must declare at least two classes");
    for (int y : labels)
      if (y < 0 || y >= num_classes)
        throw DataError("label " + std::to_string(y) + " outside [0, " +
                        std::to_string(num_classes) + ")");
  }
};

inline Dataset concat(const Dataset& a, const Dataset& b) {
  Dataset d = a;
  d.features.insert(d.features.end(), b.features.begin(), b.features.end());
  d.labels.insert(d.labels.end(), b.labels.begin(), b.labels.end());
  d.ids.insert(d.ids.end(), b.ids.begin(), b.ids.end());
  return d;
}

}  // namespace mat
