#pragma once

// Loss functions over batches of logits. Each returns the batch-mean loss and
// optionally writes d(loss)/d(logits), already divided by the batch size.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mat/error.hpp"

namespace mat {

template <class T>
void require_finite(std::span<const T> z) {
  for (T v : z)
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("non-finite logit");
}

template <class T>
std::vector<T> log_softmax(std::span<const T> z, double temperature = 1.0) {
  require_finite(z);
  if (z.empty()) throw NumericError("softmax of an empty vector");
  const T inv = static_cast<T>(1.0 / temperature);
  const T mx = *std::max_element(z.begin(), z.end()) * inv;
  T sum = T(0);
  for (T v : z) sum += std::exp(v * inv - mx);
  const T lse = mx + std::log(sum);
  std::vector<T> out(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i] * inv - lse;
  return out;
}

template <class T>
std::vector<T> softmax(std::span<const T> z, double temperature = 1.0) {
  require_finite(z);
  if (z.empty()) throw NumericError("softmax of an empty vector");
  const T inv = static_cast<T>(1.0 / temperature);
  const T mx = *std::max_element(z.begin(), z.end()) * inv;
  std::vector<T> out(z.size());
  T sum = T(0);
  for (std::size_t i = 0; i < z.size(); ++i) sum += out[i] = std::exp(z[i] * inv - mx);
  for (auto& v : out) v /= sum;
  return out;
}

template <class T>
std::vector<T> softmax(const std::vector<T>& z, double temperature = 1.0) {
  return softmax(std::span<const T>(z), temperature);
}

// Mean cross-entropy of `logits` (n x K) against integer labels.
template <class T>
double cross_entropy(std::span<const T> logits, std::size_t K, std::span<const int> labels,
                     std::vector<T>* dlogits = nullptr) {
  const std::size_t n = labels.size();
  if (logits.size() != n * K) throw InputError("cross_entropy: logits/labels size mismatch");
  if (n == 0) throw DomainError("cross_entropy of an empty batch");
  if (dlogits) dlogits->assign(n * K, T(0));
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const int y = labels[s];
    if (y < 0 || static_cast<std::size_t>(y) >= K) throw DataError("label out of range");
    const auto row = logits.subspan(s * K, K);
    const auto lp = log_softmax(row);
    total -= static_cast<double>(lp[static_cast<std::size_t>(y)]);
    if (dlogits) {
      for (std::size_t j = 0; j < K; ++j)
        (*dlogits)[s * K + j] = (std::exp(lp[j]) - (j == static_cast<std::size_t>(y) ? T(1) : T(0))) / static_cast<T>(n);
    }
  }
  return total / static_cast<double>(n);
}

// D_KL(p || q) = sum_i p_i log(p_i / q_i), with 0 log 0 = 0.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw InputError("kl_divergence: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) return INFINITY;
    s += p[i] * std::log(p[i] / q[i]);
  }
  return s;
}

enum class KlDirection {
  surrogate_source,  // D_KL(surrogate || source), argument order of the extraction objective
  source_surrogate,  // D_KL(source || surrogate), the usual distillation direction
};

inline std::string to_string(KlDirection d) {
  return d == KlDirection::surrogate_source ? "surrogate_source" : "source_surrogate";
}

inline KlDirection parse_kl_direction(const std::string& s) {
  if (s == "surrogate_source") return KlDirection::surrogate_source;
  if (s == "source_surrogate") return KlDirection::source_surrogate;
  throw ConfigError("unknown KL direction '" + s + "'");
}

// Mean KL between the surrogate's softmax(logits / temperature) and target
// distributions given as log-probabilities (n x K). Targets are constants.
template <class T>
double extraction_loss(std::span<const T> logits, std::span<const T> target_log_probs, std::size_t K,
                       KlDirection dir, std::vector<T>* dlogits = nullptr, double temperature = 1.0) {
  if (logits.size() != target_log_probs.size() || K == 0 || logits.size() % K != 0)
    throw InputError("extraction_loss: shape mismatch");
  const std::size_t n = logits.size() / K;
  if (n == 0) throw DomainError("extraction_loss of an empty batch");
  if (dlogits) dlogits->assign(n * K, T(0));
  const T inv_t = static_cast<T>(1.0 / temperature);
  double total = 0.0;
  for (std::size_t s = 0; s < n; ++s) {
    const auto lp = log_softmax(logits.subspan(s * K, K), temperature);
    const auto lq = target_log_probs.subspan(s * K, K);
    T row = T(0);
    if (dir == KlDirection::surrogate_source) {
      for (std::size_t j = 0; j < K; ++j) row += std::exp(lp[j]) * (lp[j] - lq[j]);
      if (dlogits)
        for (std::size_t j = 0; j < K; ++j)
          (*dlogits)[s * K + j] = std::exp(lp[j]) * (lp[j] - lq[j] - row) * inv_t / static_cast<T>(n);
    } else {
      for (std::size_t j = 0; j < K; ++j) {
        const T q = std::exp(lq[j]);
        if (q > T(0)) row += q * (lq[j] - lp[j]);
      }
      if (dlogits)
        for (std::size_t j = 0; j < K; ++j)
          (*dlogits)[s * K + j] = (std::exp(lp[j]) - std::exp(lq[j])) * inv_t / static_cast<T>(n);
    }
    total += static_cast<double>(row);
  }
  return total / static_cast<double>(n);
}

// alpha * KL + (1 - alpha) * cross-entropy on ground-truth labels.
template <class T>
double distillation_loss(std::span<const T> logits, std::span<const T> target_log_probs, std::span<const int> labels,
                         std::size_t K, double alpha, KlDirection dir, std::vector<T>* dlogits = nullptr,
                         double temperature = 1.0) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("distillation alpha must lie in [0, 1]");
  std::vector<T> gk, gc;
  const double kl = extraction_loss(logits, target_log_probs, K, dir, dlogits ? &gk : nullptr, temperature);
  const double ce = cross_entropy(logits, K, labels, dlogits ? &gc : nullptr);
  if (dlogits) {
    dlogits->resize(gk.size());
    const T a = static_cast<T>(alpha), b = static_cast<T>(1.0 - alpha);
    for (std::size_t i = 0; i < gk.size(); ++i) (*dlogits)[i] = a * gk[i] + b * gc[i];
  }
  return alpha * kl + (1.0 - alpha) * ce;
}

}  // namespace mat
