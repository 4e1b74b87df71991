#pragma once

// Shared fixtures and brute-force reference implementations for the tests.
// Oracles are written independently of the library code paths they check.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mat/dataset.hpp"
#include "mat/model.hpp"
#include "mat/train.hpp"

namespace mat::testing {

inline std::filesystem::path fresh_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("mat_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

inline Dataset random_dataset(const Shape& shape, int K, std::size_t n, std::uint64_t seed) {
  std::mt19937_64 g(seed);
  std::normal_distribution<float> x(0.0f, 1.0f);
  std::uniform_int_distribution<int> y(0, K - 1);
  Dataset d;
  d.name = "random";
  d.input_shape = shape;
  d.num_classes = K;
  std::vector<float> row(shape_size(shape));
  for (std::size_t i = 0; i < n; ++i) {
    for (auto& v : row) v = x(g);
    d.push_back(row, y(g), i);
  }
  return d;
}

template <class T>
std::vector<T> random_vector(std::size_t n, std::mt19937_64& g, double sd = 1.0) {
  std::normal_distribution<double> d(0.0, sd);
  std::vector<T> v(n);
  for (auto& x : v) x = static_cast<T>(d(g));
  return v;
}

template <class T>
Model<T> random_model(const ModelSpec& spec, std::uint64_t seed, double sd = 0.5) {
  Model<T> m = zero_model<T>(spec);
  std::mt19937_64 g(seed);
  m.params = random_vector<T>(m.params.size(), g, sd);
  return m;
}

// Probe models for finite-difference checks. The first two have exactly ten
// parameters.
inline ModelSpec probe_linear() { return {.arch = Arch::linear, .num_classes = 2, .input_shape = {4}, .widths = {}}; }
inline ModelSpec probe_mlp10() { return {.arch = Arch::mlp, .num_classes = 2, .input_shape = {3}, .widths = {1, 1}}; }
inline ModelSpec probe_mlp() { return {.arch = Arch::mlp, .num_classes = 3, .input_shape = {3}, .widths = {4, 3}}; }
inline ModelSpec probe_conv() {
  return {.arch = Arch::conv, .num_classes = 3, .input_shape = {1, 4, 4}, .widths = {2, 2, 2, 2}};
}

// Parameters positive enough that the narrow ReLU layers of probe_mlp10 are
// active on positive inputs.
inline Model<double> live_mlp10(std::uint64_t seed) {
  auto m = random_model<double>(probe_mlp10(), seed);
  const auto L = detail::make_layout(m.spec);
  for (std::size_t li = 0; li + 1 < L.dense.size(); ++li) {
    const auto& d = L.dense[li];
    for (std::size_t i = 0; i < d.in * d.out; ++i) m.params[d.w + i] = std::abs(m.params[d.w + i]) + 0.1;
    for (std::size_t i = 0; i < d.out; ++i) m.params[d.b + i] = std::abs(m.params[d.b + i]) + 0.1;
  }
  return m;
}

// ---- brute-force references (long double) ------------------------------------

inline long double ref_log_sum_exp(std::span<const double> z) {
  long double mx = z[0];
  for (double v : z) mx = std::max<long double>(mx, v);
  long double s = 0;
  for (double v : z) s += std::exp(static_cast<long double>(v) - mx);
  return mx + std::log(s);
}

inline std::vector<long double> ref_softmax(std::span<const double> z) {
  const long double lse = ref_log_sum_exp(z);
  std::vector<long double> p(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) p[i] = std::exp(static_cast<long double>(z[i]) - lse);
  return p;
}

// Mean over rows of -log softmax(z)_y.
inline long double ref_cross_entropy(std::span<const double> z, std::size_t K, std::span<const int> y) {
  long double total = 0;
  for (std::size_t s = 0; s < y.size(); ++s) {
    const auto row = z.subspan(s * K, K);
    total += ref_log_sum_exp(row) - row[static_cast<std::size_t>(y[s])];
  }
  return total / static_cast<long double>(y.size());
}

// Sum_i p_i log(p_i / q_i).
inline long double ref_kl(const std::vector<long double>& p, const std::vector<long double>& q) {
  long double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p[i] > 0) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

// Central differences of f around `params`, compared to `analytic`.
// Returns the largest relative error, with a 1e-6 floor on the denominator.
template <class F>
double max_fd_relative_error(std::vector<double> params, const std::vector<double>& analytic, F&& f,
                             double step = 1e-5) {
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + step;
    const double up = f(params);
    params[i] = keep - step;
    const double down = f(params);
    params[i] = keep;
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

}  // namespace mat::testing
