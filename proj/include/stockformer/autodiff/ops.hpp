#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "stockformer/autodiff/rng.hpp"
#include "stockformer/autodiff/tensor.hpp"

// Differentiable tensor operations.
//
// Broadcasting is limited to leading-batch broadcast: in a binary elementwise
// op one operand's shape must equal, or be a trailing suffix of, the other's.
// matmul broadcasts a rank-2 right operand over every leading dimension of
// the left operand.

namespace stockformer::ad {

namespace detail {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

[[noreturn]] inline void shape_error(const char* op, const Shape& a, const Shape& b) {
  throw ShapeMismatch(std::string(op) + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

inline bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

inline std::size_t normalize_axis(long axis, std::size_t rank, const char* op) {
  const long r = static_cast<long>(rank);
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw ShapeMismatch(std::string(op) + ": axis out of range for rank " + std::to_string(rank));
  return static_cast<std::size_t>(axis);
}

// Splits shape around axis into (outer, axis length, inner).
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto x = a.data();
  Buffer out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i]);
  return make_result(a.shape(), std::move(out), {a}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.write_grad([&](double* g, auto fresh) {
      for (std::size_t i = 0; i < self.value.size(); ++i) put(fresh, g[i], self.grad[i] * deriv(p.value[i], self.value[i]));
    });
  });
}

enum class BinOp { add, sub, mul };

// Runs f(i, j) over the broadcast layout: the output is `outer` repeats of
// the smaller operand's `inner` elements, i the output index and j the index
// into the smaller operand.
template <typename F>
void broadcast_loop(std::size_t n, std::size_t inner, F f) {
  for (std::size_t base = 0; base < n; base += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(base + j, j);
  }
}

inline Tensor binary(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa != sb && !is_suffix(sb, sa) && !is_suffix(sa, sb)) shape_error(name, sa, sb);
  const bool a_big = sa.size() >= sb.size() && a.size() >= b.size();
  const Shape& out_shape = a_big ? sa : sb;
  const std::size_t n = numel(out_shape);
  const std::size_t inner = a_big ? b.size() : a.size();
  const double* x = a.data().data();
  const double* y = b.data().data();
  Buffer out(n);
  double* o = out.data();
  // index of each operand for output element i and small-operand element j
  auto run = [&](auto f) {
    if (a_big) broadcast_loop(n, inner, [&](std::size_t i, std::size_t j) { o[i] = f(x[i], y[j]); });
    else broadcast_loop(n, inner, [&](std::size_t i, std::size_t j) { o[i] = f(x[j], y[i]); });
  };
  switch (op) {
    case BinOp::add: run([](double u, double v) { return u + v; }); break;
    case BinOp::sub: run([](double u, double v) { return u - v; }); break;
    case BinOp::mul: run([](double u, double v) { return u * v; }); break;
  }
  return make_result(out_shape, std::move(out), {a, b}, [op, a_big, inner](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    const std::size_t n = self.value.size();
    const double* g = self.grad.data();
    // grad of operand `p` given the other operand `q`; p_big says which of the
    // two is indexed by the output index
    auto accumulate = [&](Node& p, const Node& q, bool p_big, double sign) {
      if (!p.requires_grad) return;
      const double* qv = q.value.data();
      if (p_big) {
        p.write_grad([&](double* gp, auto fresh) {
          if (op == BinOp::mul) broadcast_loop(n, inner, [&](std::size_t i, std::size_t j) { put(fresh, gp[i], g[i] * qv[j]); });
          else broadcast_loop(n, inner, [&](std::size_t i, std::size_t) { put(fresh, gp[i], sign * g[i]); });
        });
        return;
      }
      double* gp = p.ensure_grad();
      if (op == BinOp::mul) broadcast_loop(n, inner, [&](std::size_t i, std::size_t j) { gp[j] += g[i] * qv[i]; });
      else broadcast_loop(n, inner, [&](std::size_t i, std::size_t j) { gp[j] += sign * g[i]; });
    };
    accumulate(pa, pb, a_big, 1.0);
    accumulate(pb, pa, !a_big, op == BinOp::sub ? -1.0 : 1.0);
  });
}

// dst = lhs * rhs on a fresh buffer, dst += lhs * rhs otherwise.
template <typename Dst, typename Lhs, typename Rhs, typename Fresh>
void gemm(Dst&& dst, const Lhs& lhs, const Rhs& rhs, Fresh) {
  if constexpr (Fresh::value) dst.noalias() = lhs * rhs;
  else dst.noalias() += lhs * rhs;
}

// out[perm-index] = in, where output axis k is input axis perm[k].
inline void permute_into(const double* in, const Shape& in_shape, const std::vector<std::size_t>& perm, double* out,
                         bool accumulate) {
  const std::size_t rank = in_shape.size();
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_stride[i - 1] = in_stride[i] * in_shape[i];
  std::vector<std::size_t> out_shape(rank), step(rank);
  for (std::size_t k = 0; k < rank; ++k) {
    out_shape[k] = in_shape[perm[k]];
    step[k] = in_stride[perm[k]];
  }
  const std::size_t n = numel(in_shape);
  if (rank == 0) {
    if (n) out[0] = accumulate ? out[0] + in[0] : in[0];
    return;
  }
  std::vector<std::size_t> idx(rank, 0);
  std::size_t offset = 0;
  const std::size_t last = rank - 1;
  for (std::size_t o = 0; o < n;) {
    // innermost output axis as a tight loop
    const std::size_t len = out_shape[last];
    const std::size_t st = step[last];
    if (accumulate) {
      for (std::size_t j = 0; j < len; ++j) out[o + j] += in[offset + j * st];
    } else {
      for (std::size_t j = 0; j < len; ++j) out[o + j] = in[offset + j * st];
    }
    o += len;
    for (std::size_t k = last; k-- > 0;) {
      offset += step[k];
      if (++idx[k] < out_shape[k]) break;
      offset -= step[k] * out_shape[k];
      idx[k] = 0;
    }
  }
}

}  // namespace detail

// --- elementwise -------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::add, "add"); }
inline Tensor sub(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::sub, "sub"); }
inline Tensor mul(const Tensor& a, const Tensor& b) { return detail::binary(a, b, detail::BinOp::mul, "mul"); }

inline Tensor scale(const Tensor& a, double factor) {
  return detail::unary(
      a, [factor](double x) { return x * factor; }, [factor](double, double) { return factor; });
}

inline Tensor tanh(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }

// --- linear algebra ------------------------------------------------------------

/// a: [..., m, k]; b: [k, p] (shared across the batch) or [..., k, p] with the
/// same leading dimensions as a. Result: [..., m, p].
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sb.size() < 2) detail::shape_error("matmul", sa, sb);
  const std::size_t m = sa[sa.size() - 2], k = sa.back();
  const std::size_t kb = sb[sb.size() - 2], p = sb.back();
  if (k != kb) detail::shape_error("matmul", sa, sb);
  const bool shared = sb.size() == 2;
  if (!shared && (sb.size() != sa.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()))) {
    detail::shape_error("matmul", sa, sb);
  }
  std::size_t batch = 1;
  for (std::size_t i = 0; i + 2 < sa.size(); ++i) batch *= sa[i];
  Shape out_shape(sa.begin(), sa.end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(p);

  using detail::CMapMat;
  using detail::MapMat;
  Buffer out(batch * m * p);
  if (shared) {
    MapMat(out.data(), static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(p)).noalias() =
        CMapMat(a.data().data(), static_cast<Eigen::Index>(batch * m), static_cast<Eigen::Index>(k)) *
        CMapMat(b.data().data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
  } else {
    for (std::size_t i = 0; i < batch; ++i) {
      detail::gemm(MapMat(out.data() + i * m * p, m, p), CMapMat(a.data().data() + i * m * k, m, k),
                   CMapMat(b.data().data() + i * k * p, k, p), std::true_type{});
    }
  }
  return make_result(std::move(out_shape), std::move(out), {a, b}, [shared, batch, m, k, p](detail::Node& self) {
    detail::Node& pa = *self.parents[0];
    detail::Node& pb = *self.parents[1];
    const double* g = self.grad.data();
    const std::size_t rows = shared ? batch * m : m;
    const std::size_t reps = shared ? 1 : batch;
    // dA = G B^T per batch entry
    if (pa.requires_grad) {
      pa.write_grad([&](double* ga, auto fresh) {
        for (std::size_t i = 0; i < reps; ++i) {
          detail::gemm(MapMat(ga + i * rows * k, rows, k), CMapMat(g + i * rows * p, rows, p),
                       CMapMat(pb.value.data() + (shared ? 0 : i * k * p), k, p).transpose(), fresh);
        }
      });
    }
    // dB = A^T G, summed over the batch when B is shared
    if (pb.requires_grad) {
      if (shared) {
        pb.write_grad([&](double* gb, auto fresh) {
          detail::gemm(MapMat(gb, k, p), CMapMat(pa.value.data(), rows, k).transpose(), CMapMat(g, rows, p), fresh);
        });
      } else {
        pb.write_grad([&](double* gb, auto fresh) {
          for (std::size_t i = 0; i < batch; ++i) {
            detail::gemm(MapMat(gb + i * k * p, k, p), CMapMat(pa.value.data() + i * m * k, m, k).transpose(),
                         CMapMat(g + i * m * p, m, p), fresh);
          }
        });
      }
    }
  });
}

/// Swaps two axes (default: the last two).
inline Tensor transpose(const Tensor& a, long axis1 = -2, long axis2 = -1) {
  const std::size_t rank = a.rank();
  const std::size_t i = detail::normalize_axis(axis1, rank, "transpose");
  const std::size_t j = detail::normalize_axis(axis2, rank, "transpose");
  std::vector<std::size_t> perm(rank);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::swap(perm[i], perm[j]);
  Shape out_shape = a.shape();
  std::swap(out_shape[i], out_shape[j]);
  Buffer out(a.size());
  detail::permute_into(a.data().data(), a.shape(), perm, out.data(), false);
  return make_result(out_shape, std::move(out), {a}, [perm, out_shape](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    // swapping is its own inverse
    p.write_grad([&](double* g, auto fresh) { detail::permute_into(self.grad.data(), out_shape, perm, g, !fresh); });
  });
}

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) detail::shape_error("reshape", a.shape(), shape);
  Buffer out(a.data().begin(), a.data().end());
  return make_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    p.write_grad([&](double* g, auto fresh) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) detail::put(fresh, g[i], self.grad[i]);
    });
  });
}

/// Concatenates along axis; all other dimensions must agree.
inline Tensor concat(const std::vector<Tensor>& parts, long axis) {
  if (parts.empty()) throw ShapeMismatch("concat: no inputs");
  const Shape& first = parts.front().shape();
  const std::size_t ax = detail::normalize_axis(axis, first.size(), "concat");
  Shape out_shape = first;
  out_shape[ax] = 0;
  for (const auto& t : parts) {
    const Shape& s = t.shape();
    if (s.size() != first.size()) detail::shape_error("concat", first, s);
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != ax && s[d] != first[d]) detail::shape_error("concat", first, s);
    }
    out_shape[ax] += s[ax];
  }
  const auto split = detail::split_axis(out_shape, ax);
  std::vector<std::size_t> widths;  // block length per outer index, per part
  for (const auto& t : parts) widths.push_back(t.shape()[ax] * split.inner);
  const std::size_t row = out_shape[ax] * split.inner;
  Buffer out(numel(out_shape));
  std::size_t col = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const double* src = parts[pi].data().data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src + o * widths[pi], widths[pi], out.data() + o * row + col);
    }
    col += widths[pi];
  }
  return make_result(std::move(out_shape), std::move(out), parts, [widths, row, outer = split.outer](detail::Node& self) {
    std::size_t col = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      detail::Node& p = *self.parents[pi];
      if (p.requires_grad) {
        double* g = p.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
          const double* src = self.grad.data() + o * row + col;
          for (std::size_t j = 0; j < widths[pi]; ++j) g[o * widths[pi] + j] += src[j];
        }
      }
      col += widths[pi];
    }
  });
}

/// Elements [start, start + length) along axis.
inline Tensor slice(const Tensor& a, long axis, std::size_t start, std::size_t length) {
  const std::size_t ax = detail::normalize_axis(axis, a.rank(), "slice");
  if (start + length > a.shape()[ax]) {
    throw ShapeMismatch("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                        ") exceeds axis of shape " + to_string(a.shape()));
  }
  const auto split = detail::split_axis(a.shape(), ax);
  Shape out_shape = a.shape();
  out_shape[ax] = length;
  const std::size_t width = length * split.inner;
  const std::size_t row = split.len * split.inner;
  const std::size_t offset = start * split.inner;
  Buffer out(split.outer * width);
  const double* src = a.data().data();
  for (std::size_t o = 0; o < split.outer; ++o) std::copy_n(src + o * row + offset, width, out.data() + o * width);
  return make_result(std::move(out_shape), std::move(out), {a}, [width, row, offset, outer = split.outer](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    double* g = p.ensure_grad();
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < width; ++j) g[o * row + offset + j] += self.grad[o * width + j];
    }
  });
}

// --- reductions and normalization ----------------------------------------------

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result(Shape{}, {total}, {a}, [](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    double* g = p.ensure_grad();
    for (std::size_t i = 0; i < p.value.size(); ++i) g[i] += self.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

/// Softmax along axis. -infinity entries get weight exactly 0; every slice
/// needs at least one finite entry.
inline Tensor softmax(const Tensor& a, long axis = -1) {
  const std::size_t ax = detail::normalize_axis(axis, a.rank(), "softmax");
  const auto s = detail::split_axis(a.shape(), ax);
  const double* x = a.data().data();
  Buffer out(a.size());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.len * s.inner + in;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < s.len; ++j) mx = std::max(mx, x[base + j * s.inner]);
      double z = 0.0;
      for (std::size_t j = 0; j < s.len; ++j) {
        const double e = std::exp(x[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        z += e;
      }
      for (std::size_t j = 0; j < s.len; ++j) out[base + j * s.inner] /= z;
    }
  }
  return make_result(a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    double* g = p.ensure_grad();
    const double* y = self.value.data();
    const double* gy = self.grad.data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.len * s.inner + in;
        double dot = 0.0;
        for (std::size_t j = 0; j < s.len; ++j) dot += gy[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.len; ++j) {
          const std::size_t idx = base + j * s.inner;
          g[idx] += y[idx] * (gy[idx] - dot);
        }
      }
    }
  });
}

/// softmax(factor * a + mask) over the last axis, in one node. mask is
/// [..., n] broadcast over a's leading dims like add(); -infinity entries get
/// weight exactly 0.
inline Tensor scaled_masked_softmax(const Tensor& a, double factor, const Tensor* mask = nullptr) {
  if (a.rank() == 0) throw ShapeMismatch("scaled_masked_softmax: scalar input");
  if (mask && !detail::is_suffix(mask->shape(), a.shape())) detail::shape_error("scaled_masked_softmax", a.shape(), mask->shape());
  const std::size_t len = a.shape().back();
  const std::size_t rows = a.size() / len;
  const std::size_t mask_size = mask ? mask->size() : 0;
  const double* x = a.data().data();
  const double* m = mask ? mask->data().data() : nullptr;
  Buffer out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double* y = out.data() + r * len;
    const double* mr = m ? m + (r * len) % mask_size : nullptr;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < len; ++j) {
      y[j] = factor * x[r * len + j] + (mr ? mr[j] : 0.0);
      mx = std::max(mx, y[j]);
    }
    Eigen::Map<Eigen::ArrayXd> row(y, static_cast<Eigen::Index>(len));
    row = (row - mx).exp();
    // the vectorized exp clamps -inf to a tiny positive value; those
    // positions must get exactly zero weight
    for (std::size_t j = 0; j < len; ++j) {
      if (factor * x[r * len + j] + (mr ? mr[j] : 0.0) == -std::numeric_limits<double>::infinity()) y[j] = 0.0;
    }
    row /= row.sum();
  }
  return make_result(a.shape(), std::move(out), {a}, [len, rows, factor](detail::Node& self) {
    detail::Node& p = *self.parents[0];
    if (!p.requires_grad) return;
    double* g = p.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * len;
      const double* gy = self.grad.data() + r * len;
      double dot = 0.0;
      for (std::size_t j = 0; j < len; ++j) dot += gy[j] * y[j];
      for (std::size_t j = 0; j < len; ++j) g[r * len + j] += factor * y[j] * (gy[j] - dot);
    }
  });
}

/// Scaled dot-product attention per leading index:
///   softmax(factor * Q K^T + mask) V
/// q: [..., n_q, d], k and v: [..., n_k, d] with equal leading dims, mask
/// [n_q, n_k] additive (-infinity gives weight exactly 0). When `weights` is
/// given it receives the attention weights [..., n_q, n_k], off the tape.
inline Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, double factor, const Tensor* mask = nullptr,
                        Tensor* weights = nullptr) {
  const Shape& sq = q.shape();
  const Shape& sk = k.shape();
  if (sq.size() < 2 || sk != v.shape() || sk.size() != sq.size() || sq.back() != sk.back() ||
      !std::equal(sq.begin(), sq.end() - 2, sk.begin())) {
    throw ShapeMismatch("attention: queries " + to_string(sq) + ", keys " + to_string(sk) + ", values " + to_string(v.shape()));
  }
  const std::size_t nq = sq[sq.size() - 2], nk = sk[sk.size() - 2], d = sq.back();
  if (mask && mask->shape() != Shape{nq, nk}) detail::shape_error("attention mask", Shape{nq, nk}, mask->shape());
  const std::size_t batch = q.size() / (nq * d);
  const double* m = mask ? mask->data().data() : nullptr;

  using detail::CMapMat;
  using detail::MapMat;
  auto w = std::make_shared<Buffer>(batch * nq * nk);
  Buffer out(batch * nq * d);
  for (std::size_t b = 0; b < batch; ++b) {
    MapMat W(w->data() + b * nq * nk, nq, nk);
    W.noalias() = CMapMat(q.data().data() + b * nq * d, nq, d) * CMapMat(k.data().data() + b * nk * d, nk, d).transpose();
    for (std::size_t i = 0; i < nq; ++i) {
      double* row = W.data() + i * nk;
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < nk; ++j) {
        row[j] = factor * row[j] + (m ? m[i * nk + j] : 0.0);
        mx = std::max(mx, row[j]);
      }
      Eigen::Map<Eigen::ArrayXd> r(row, static_cast<Eigen::Index>(nk));
      r = (r - mx).exp();
      // the vectorized exp clamps -inf to a tiny positive value
      if (m) {
        for (std::size_t j = 0; j < nk; ++j) {
          if (m[i * nk + j] == -std::numeric_limits<double>::infinity()) row[j] = 0.0;
        }
      }
      r /= r.sum();
    }
    MapMat(out.data() + b * nq * d, nq, d).noalias() = W * CMapMat(v.data().data() + b * nk * d, nk, d);
  }
  if (weights) {
    Shape ws(sq.begin(), sq.end() - 2);
    ws.push_back(nq);
    ws.push_back(nk);
    *weights = Tensor::make(std::move(ws), *w);
  }
  return make_result(sq, std::move(out), {q, k, v}, [w, batch, nq, nk, d, factor](detail::Node& self) {
    detail::Node& pq = *self.parents[0];
    detail::Node& pk = *self.parents[1];
    detail::Node& pv = *self.parents[2];
    auto each = [&](detail::Node& p, auto body) {
      if (!p.requires_grad) return;
      p.write_grad([&](double* g, auto fresh) {
        for (std::size_t b = 0; b < batch; ++b) body(g, b, fresh);
      });
    };
    // dV = W^T dO
    each(pv, [&](double* g, std::size_t b, auto fresh) {
      detail::gemm(MapMat(g + b * nk * d, nk, d), CMapMat(w->data() + b * nq * nk, nq, nk).transpose(),
                   CMapMat(self.grad.data() + b * nq * d, nq, d), fresh);
    });
    if (!pq.requires_grad && !pk.requires_grad) return;
    // dS = factor * W o (dW - rowsum(dW o W)), dW = dO V^T; kept per batch
    // entry in one buffer so both dQ and dK can read it
    Buffer ds(batch * nq * nk);
    for (std::size_t b = 0; b < batch; ++b) {
      MapMat S(ds.data() + b * nq * nk, nq, nk);
      S.noalias() = CMapMat(self.grad.data() + b * nq * d, nq, d) * CMapMat(pv.value.data() + b * nk * d, nk, d).transpose();
      const double* W = w->data() + b * nq * nk;
      for (std::size_t i = 0; i < nq; ++i) {
        double* row = S.data() + i * nk;
        double dot = 0.0;
        for (std::size_t j = 0; j < nk; ++j) dot += row[j] * W[i * nk + j];
        for (std::size_t j = 0; j < nk; ++j) row[j] = factor * W[i * nk + j] * (row[j] - dot);
      }
    }
    // dQ = dS K, dK = dS^T Q
    each(pq, [&](double* g, std::size_t b, auto fresh) {
      detail::gemm(MapMat(g + b * nq * d, nq, d), CMapMat(ds.data() + b * nq * nk, nq, nk),
                   CMapMat(pk.value.data() + b * nk * d, nk, d), fresh);
    });
    each(pk, [&](double* g, std::size_t b, auto fresh) {
      detail::gemm(MapMat(g + b * nk * d, nk, d), CMapMat(ds.data() + b * nq * nk, nq, nk).transpose(),
                   CMapMat(pq.value.data() + b * nq * d, nq, d), fresh);
    });
  });
}

/// Normalizes over the last axis, then applies gain and bias (both [last]).
inline Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5) {
  if (x.rank() == 0) throw ShapeMismatch("layer_norm: scalar input");
  const std::size_t d = x.shape().back();
  if (gain.shape() != Shape{d}) detail::shape_error("layer_norm", x.shape(), gain.shape());
  if (bias.shape() != Shape{d}) detail::shape_error("layer_norm", x.shape(), bias.shape());
  const std::size_t rows = x.size() / d;
  const double* in = x.data().data();
  const double* gm = gain.data().data();
  const double* bt = bias.data().data();
  Buffer out(x.size());
  // normalized values and inverse std per row, reused by backward
  auto xhat = std::make_shared<Buffer>(x.size());
  auto inv_std = std::make_shared<Buffer>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * is;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gm[j] + bt[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias}, [d, rows, xhat, inv_std](detail::Node& self) {
    detail::Node& px = *self.parents[0];
    detail::Node& pg = *self.parents[1];
    detail::Node& pb = *self.parents[2];
    const double* gy = self.grad.data();
    const double* h = xhat->data();
    if (pg.requires_grad || pb.requires_grad) {
      double* gg = pg.requires_grad ? pg.ensure_grad() : nullptr;
      double* gb = pb.requires_grad ? pb.ensure_grad() : nullptr;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < d; ++j) {
          if (gg) gg[j] += gy[r * d + j] * h[r * d + j];
          if (gb) gb[j] += gy[r * d + j];
        }
      }
    }
    if (px.requires_grad) {
      double* gx = px.ensure_grad();
      const double* gm = pg.value.data();
      const double inv_d = 1.0 / static_cast<double>(d);
      for (std::size_t r = 0; r < rows; ++r) {
        double mean_dh = 0.0, mean_dh_h = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = gy[r * d + j] * gm[j];
          mean_dh += dh;
          mean_dh_h += dh * h[r * d + j];
        }
        mean_dh *= inv_d;
        mean_dh_h *= inv_d;
        for (std::size_t j = 0; j < d; ++j) {
          const double dh = gy[r * d + j] * gm[j];
          gx[r * d + j] += (*inv_std)[r] * (dh - mean_dh - h[r * d + j] * mean_dh_h);
        }
      }
    }
  });
}

/// Inverted dropout: in training, zeroes each element with probability p and
/// scales survivors by 1/(1-p). Identity outside training or when p == 0.
inline Tensor dropout(const Tensor& x, double p, Rng& rng, bool training) {
  if (p < 0.0 || p > 1.0) throw InvalidArgument("dropout probability must be in [0, 1]");
  if (!training || p == 0.0) return x;
  Buffer mask(x.size(), 0.0);
  if (p < 1.0) {
    const double keep_scale = 1.0 / (1.0 - p);
    for (double& m : mask) m = rng.uniform() >= p ? keep_scale : 0.0;
  }
  return mul(x, Tensor::make(x.shape(), std::move(mask)));
}

/// Mean squared error between equal-shaped tensors; returns a scalar.
inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) detail::shape_error("mse_loss", pred.shape(), target.shape());
  const std::size_t n = pred.size();
  if (n == 0) throw ShapeMismatch("mse_loss: empty input");
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = pred[i] - target[i];
    total += e * e;
  }
  return make_result(Shape{}, {total / static_cast<double>(n)}, {pred, target}, [n](detail::Node& self) {
    detail::Node& pp = *self.parents[0];
    detail::Node& pt = *self.parents[1];
    const double c = 2.0 * self.grad[0] / static_cast<double>(n);
    if (pp.requires_grad) {
      double* g = pp.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] += c * (pp.value[i] - pt.value[i]);
    }
    if (pt.requires_grad) {
      double* g = pt.ensure_grad();
      for (std::size_t i = 0; i < n; ++i) g[i] -= c * (pp.value[i] - pt.value[i]);
    }
  });
}

}  // namespace stockformer::ad
