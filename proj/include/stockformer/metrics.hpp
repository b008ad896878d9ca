#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "stockformer/csv.hpp"
#include "stockformer/error.hpp"

namespace stockformer {

namespace detail {

inline void require_same_length(std::span<const double> x, std::span<const double> y, const char* op) {
  if (x.size() != y.size()) {
    throw LengthMismatch(std::string(op) + ": lengths " + std::to_string(x.size()) + " and " + std::to_string(y.size()));
  }
  if (x.empty()) throw LengthMismatch(std::string(op) + ": empty input");
}

}  // namespace detail

inline double mse(std::span<const double> x, std::span<const double> y) {
  detail::require_same_length(x, y, "mse");
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) total += (x[i] - y[i]) * (x[i] - y[i]);
  return total / static_cast<double>(x.size());
}

/// 1 - sum (x - y)^2 / sum (x - mean x)^2.
inline double r2(std::span<const double> x, std::span<const double> y) {
  detail::require_same_length(x, y, "r2");
  if (x.size() < 2) throw DegenerateTruth("r2: need at least two samples");
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    ss_res += (x[i] - y[i]) * (x[i] - y[i]);
    ss_tot += (x[i] - mean) * (x[i] - mean);
  }
  if (ss_tot == 0.0) throw DegenerateTruth("r2: ground truth is constant");
  return 1.0 - ss_res / ss_tot;
}

/// Over all pairs (a, b) with x_a > x_b: 1 if y_a > y_b, 0.5 on a tie in y,
/// 0 otherwise; returns the mean. Pairs tied in x are not counted.
/// O(n log n): sweep x in increasing order and query a Fenwick tree over y
/// ranks of the strictly smaller x values already inserted.
inline double regression_auc(std::span<const double> x, std::span<const double> y) {
  detail::require_same_length(x, y, "regression_auc");
  const std::size_t n = x.size();
  std::vector<double> ys(y.begin(), y.end());
  std::sort(ys.begin(), ys.end());
  ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
  auto rank = [&](double v) { return static_cast<std::size_t>(std::lower_bound(ys.begin(), ys.end(), v) - ys.begin()); };

  std::vector<std::uint64_t> tree(ys.size() + 1, 0);
  auto insert = [&](std::size_t r) {
    for (std::size_t i = r + 1; i < tree.size(); i += i & (~i + 1)) ++tree[i];
  };
  auto count_le = [&](std::size_t r) {  // inserted elements with rank <= r
    std::uint64_t c = 0;
    for (std::size_t i = r + 1; i > 0; i -= i & (~i + 1)) c += tree[i];
    return c;
  };

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });

  std::uint64_t pairs = 0, concordant = 0, ties = 0, inserted = 0;
  for (std::size_t lo = 0; lo < n;) {
    std::size_t hi = lo;
    while (hi < n && x[order[hi]] == x[order[lo]]) ++hi;
    for (std::size_t k = lo; k < hi; ++k) {
      const std::size_t r = rank(y[order[k]]);
      const std::uint64_t le = count_le(r);
      const std::uint64_t lt = r == 0 ? 0 : count_le(r - 1);
      concordant += lt;
      ties += le - lt;
      pairs += inserted;
    }
    for (std::size_t k = lo; k < hi; ++k) insert(rank(y[order[k]]));
    inserted += hi - lo;
    lo = hi;
  }
  if (pairs == 0) throw NoValidPairs("regression_auc: every ground-truth value is equal");
  return (static_cast<double>(concordant) + 0.5 * static_cast<double>(ties)) / static_cast<double>(pairs);
}

/// Fraction of samples where truth and prediction fall on the same side of
/// the prior truth: both >= prior, or both < prior.
inline double directional_accuracy(std::span<const double> x, std::span<const double> y, std::span<const double> prior) {
  detail::require_same_length(x, y, "directional_accuracy");
  detail::require_same_length(x, prior, "directional_accuracy");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const bool truth_up = x[i] >= prior[i];
    const bool pred_up = y[i] >= prior[i];
    hits += truth_up == pred_up ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(x.size());
}

struct EvalSeries {
  std::vector<double> truth;
  std::vector<double> pred;
  std::vector<double> prior;
};

struct EvalReport {
  std::string model;
  std::size_t lag = 0;
  std::uint64_t seed = 0;
  std::size_t n_samples = 0;
  double mse = 0.0;
  double r2 = 0.0;
  double auc = 0.0;
  double directional_accuracy = 0.0;

  static std::string csv_header() { return "model,lag,seed,n_samples,mse,r2,auc,dir_acc"; }
  std::string csv_row() const {
    return model + ',' + std::to_string(lag) + ',' + std::to_string(seed) + ',' + std::to_string(n_samples) + ',' +
           csv::format(mse) + ',' + csv::format(r2) + ',' + csv::format(auc) + ',' + csv::format(directional_accuracy);
  }
};

inline EvalReport evaluate(const EvalSeries& s, std::string model, std::size_t lag, std::uint64_t seed) {
  EvalReport r;
  r.model = std::move(model);
  r.lag = lag;
  r.seed = seed;
  r.n_samples = s.truth.size();
  r.mse = mse(s.truth, s.pred);
  r.r2 = r2(s.truth, s.pred);
  r.auc = regression_auc(s.truth, s.pred);
  r.directional_accuracy = directional_accuracy(s.truth, s.pred, s.prior);
  return r;
}

}  // namespace stockformer
