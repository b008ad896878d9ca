#pragma once

// Straightforward reference implementations used only by tests. They are
// written from the definitions, independently of the library code paths.

#include <cmath>
#include <vector>

namespace stockformer::testkit {

inline double oracle_rsi(const std::vector<double>& closes, std::size_t window) {
  std::vector<double> ups, downs;
  for (std::size_t k = 0; k < window; ++k) {
    const std::size_t i = closes.size() - 1 - k;
    const double d = closes[i] - closes[i - 1];
    if (d > 0) ups.push_back(d);
    if (d < 0) downs.push_back(-d);
  }
  if (downs.empty()) return ups.empty() ? 50.0 : 100.0;
  if (ups.empty()) return 0.0;
  double su = 0, sd = 0;
  for (double u : ups) su += u;
  for (double d : downs) sd += d;
  const double avg_up = su / static_cast<double>(ups.size());
  const double avg_down = sd / static_cast<double>(downs.size());
  return 100.0 - 100.0 / (1.0 + avg_up / avg_down);
}

// Unrolled recurrence, computed front to back on a copy.
inline std::vector<double> oracle_ema(const std::vector<double>& closes, std::size_t period) {
  const double j = 2.0 / (static_cast<double>(period) + 1.0);
  std::vector<double> out;
  double prev = 0.0;
  for (std::size_t t = 0; t < closes.size(); ++t) {
    prev = t == 0 ? closes[0] : closes[t] * j + prev * (1.0 - j);
    out.push_back(prev);
  }
  return out;
}

inline double oracle_sma(const std::vector<double>& closes, std::size_t window) {
  double s = 0;
  for (std::size_t k = 0; k < window; ++k) s += closes[closes.size() - 1 - k];
  return s / static_cast<double>(window);
}

inline double oracle_mse(const std::vector<double>& x, const std::vector<double>& y) {
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) s += std::pow(x[i] - y[i], 2);
  return s / static_cast<double>(x.size());
}

inline double oracle_r2(const std::vector<double>& x, const std::vector<double>& y) {
  double mean = 0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    num += std::pow(x[i] - y[i], 2);
    den += std::pow(x[i] - mean, 2);
  }
  return 1.0 - num / den;
}

// O(n^2) enumeration of ordered pairs.
inline double oracle_auc(const std::vector<double>& x, const std::vector<double>& y) {
  double score = 0;
  std::size_t pairs = 0;
  for (std::size_t a = 0; a < x.size(); ++a) {
    for (std::size_t b = 0; b < x.size(); ++b) {
      if (!(x[a] > x[b])) continue;
      ++pairs;
      if (y[a] > y[b]) score += 1.0;
      else if (y[a] == y[b]) score += 0.5;
    }
  }
  return score / static_cast<double>(pairs);
}

inline double oracle_dir_acc(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& prior) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] >= prior[i] && y[i] >= prior[i]) ++hits;
    else if (x[i] < prior[i] && y[i] < prior[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(x.size());
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace stockformer::testkit
