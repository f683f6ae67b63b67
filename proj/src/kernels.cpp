#include "dronecam/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>

namespace dronecam::kernels {
namespace {

constexpr Eigen::Index kRowTile = 4;
constexpr Eigen::Index kColTile = 32;

using Range = std::pair<Eigen::Index, Eigen::Index>;

enum class Init { kZero, kBias, kAccumulate };

struct FullRange {
  Eigen::Index n;
  Range operator()(Eigen::Index, Eigen::Index) const { return {0, n}; }
};

// Rows [r0, r1) of c = init + op(a) * b, where op(a) is a or, with TransA,
// a^T read in place. Each row tile is restricted to the output columns
// cols(first_row, last_row) and the inner indices inner(first_row, last_row).
// Every element is an fma chain over the inner index in ascending order
// whichever path computes it, and skipped inner terms are always ones the
// caller guarantees to be zero, so restricting ranges never changes a result.
template <bool TransA, class ColFn, class InnerFn>
void gemm_rows(const Mat& a, const Mat& b, const Vec* bias, Init init, Mat& c, Eigen::Index r0,
               Eigen::Index r1, ColFn cols, InnerFn inner) {
  const Eigen::Index lda = a.cols();
  const Eigen::Index out = b.cols();
  const double* ap = a.data();
  const double* bp = b.data();
  double* cp = c.data();
  auto a_at = [&](Eigen::Index r, Eigen::Index k) { return TransA ? ap[k * lda + r] : ap[r * lda + k]; };
  auto start_value = [&](Eigen::Index i, Eigen::Index j) {
    switch (init) {
      case Init::kBias: return (*bias)[j];
      case Init::kAccumulate: return cp[i * out + j];
      default: return 0.0;
    }
  };
  auto tail_rows = [&](Eigen::Index first, Eigen::Index last, Eigen::Index j0, Eigen::Index j1,
                       Range kr) {
    for (Eigen::Index r = first; r < last; ++r) {
      double* cr = cp + r * out;
      for (Eigen::Index j = j0; j < j1; ++j) cr[j] = start_value(r, j);
      for (Eigen::Index k = kr.first; k < kr.second; ++k) {
        const double v = a_at(r, k);
        const double* bk = bp + k * out;
        for (Eigen::Index j = j0; j < j1; ++j) cr[j] = std::fma(v, bk[j], cr[j]);
      }
    }
  };

  Eigen::Index i = r0;
  for (; i + kRowTile <= r1; i += kRowTile) {
    const Range cr = cols(i, i + kRowTile - 1);
    const Range kr = inner(i, i + kRowTile - 1);
    Eigen::Index j0 = cr.first;
    for (; j0 + kColTile <= cr.second; j0 += kColTile) {
      double c0[kColTile], c1[kColTile], c2[kColTile], c3[kColTile];
      for (Eigen::Index t = 0; t < kColTile; ++t) {
        c0[t] = start_value(i, j0 + t);
        c1[t] = start_value(i + 1, j0 + t);
        c2[t] = start_value(i + 2, j0 + t);
        c3[t] = start_value(i + 3, j0 + t);
      }
      for (Eigen::Index k = kr.first; k < kr.second; ++k) {
        const double* bk = bp + k * out + j0;
        const double v0 = a_at(i, k), v1 = a_at(i + 1, k), v2 = a_at(i + 2, k), v3 = a_at(i + 3, k);
#pragma GCC unroll 32
        for (Eigen::Index t = 0; t < kColTile; ++t) {
          const double w = bk[t];
          c0[t] = std::fma(v0, w, c0[t]);
          c1[t] = std::fma(v1, w, c1[t]);
          c2[t] = std::fma(v2, w, c2[t]);
          c3[t] = std::fma(v3, w, c3[t]);
        }
      }
      for (Eigen::Index t = 0; t < kColTile; ++t) {
        cp[i * out + j0 + t] = c0[t];
        cp[(i + 1) * out + j0 + t] = c1[t];
        cp[(i + 2) * out + j0 + t] = c2[t];
        cp[(i + 3) * out + j0 + t] = c3[t];
      }
    }
    if (j0 < cr.second) tail_rows(i, i + kRowTile, j0, cr.second, kr);
  }
  for (; i < r1; ++i) {
    const Range cr = cols(i, i);
    tail_rows(i, i + 1, cr.first, cr.second, inner(i, i));
  }
}

template <bool TransA = false, class ColFn, class InnerFn>
void gemm(const Mat& a, const Mat& b, const Vec* bias, Init init, Mat& c, bool parallel, ColFn cols,
          InnerFn inner) {
  const Eigen::Index rows = TransA ? a.cols() : a.rows();
  const Eigen::Index tiles = (rows + kRowTile - 1) / kRowTile;
  if (!parallel || tiles <= 1 || omp_get_max_threads() == 1) {
    gemm_rows<TransA>(a, b, bias, init, c, 0, rows, cols, inner);
    return;
  }
#pragma omp parallel for schedule(dynamic, 4)
  for (Eigen::Index t = 0; t < tiles; ++t) {
    const Eigen::Index r0 = t * kRowTile;
    gemm_rows<TransA>(a, b, bias, init, c, r0, std::min(r0 + kRowTile, rows), cols, inner);
  }
}

void gemm_full(const Mat& a, const Mat& b, const Vec* bias, Init init, Mat& c, bool parallel) {
  gemm(a, b, bias, init, c, parallel, FullRange{b.cols()}, FullRange{a.cols()});
}

// c (+)= a^T * b without materializing the transpose.
void gemm_tn_full(const Mat& a, const Mat& b, Init init, Mat& c, bool parallel) {
  gemm<true>(a, b, nullptr, init, c, parallel, FullRange{b.cols()}, FullRange{a.rows()});
}

// exp for x <= 0, written so the compiler can vectorize it. Round-to-nearest
// via the 1.5 * 2^52 shifter, Cody-Waite reduction to |r| <= ln2/2 and a
// degree-12 Taylor polynomial.
inline double exp_nonpositive(double x) {
  constexpr double kShifter = 0x1.8p52;
  x = std::max(x, -700.0);
  const double kd = std::fma(x, 1.4426950408889634, kShifter);
  const std::uint64_t ki = std::bit_cast<std::uint64_t>(kd);
  const double k = kd - kShifter;
  const double r = std::fma(k, -1.4286068203094172e-06, std::fma(k, -0.69314575195312500, x));
  double p = 2.08767569878680989792e-09;
  p = std::fma(p, r, 2.50521083854417187751e-08);
  p = std::fma(p, r, 2.75573192239858906526e-07);
  p = std::fma(p, r, 2.75573192239858906526e-06);
  p = std::fma(p, r, 2.48015873015873015873e-05);
  p = std::fma(p, r, 1.98412698412698412698e-04);
  p = std::fma(p, r, 1.38888888888888888889e-03);
  p = std::fma(p, r, 8.33333333333333333333e-03);
  p = std::fma(p, r, 4.16666666666666666667e-02);
  p = std::fma(p, r, 1.66666666666666666667e-01);
  p = std::fma(p, r, 0.5);
  p = std::fma(p, r, 1.0);
  p = std::fma(p, r, 1.0);
  return p * std::bit_cast<double>((ki + 1023) << 52);
}

constexpr int kLanes = 8;

// Reductions with a fixed lane layout: element j goes to lane j % kLanes and
// lanes are combined in order, so the result depends only on the row.
inline double lane_max(const double* x, Eigen::Index len) {
  double l[kLanes];
  for (int t = 0; t < kLanes; ++t) l[t] = -INFINITY;
  Eigen::Index j = 0;
  for (; j + kLanes <= len; j += kLanes)
    for (int t = 0; t < kLanes; ++t) l[t] = l[t] > x[j + t] ? l[t] : x[j + t];
  for (int t = 0; j + t < len; ++t) l[t] = l[t] > x[j + t] ? l[t] : x[j + t];
  double m = l[0];
  for (int t = 1; t < kLanes; ++t) m = m > l[t] ? m : l[t];
  return m;
}

inline double lane_sum(const double* x, Eigen::Index len) {
  double l[kLanes] = {};
  Eigen::Index j = 0;
  for (; j + kLanes <= len; j += kLanes)
    for (int t = 0; t < kLanes; ++t) l[t] += x[j + t];
  for (int t = 0; j + t < len; ++t) l[t] += x[j + t];
  double s = 0;
  for (int t = 0; t < kLanes; ++t) s += l[t];
  return s;
}

inline double lane_dot(const double* x, const double* y, Eigen::Index len) {
  double l[kLanes] = {};
  Eigen::Index j = 0;
  for (; j + kLanes <= len; j += kLanes)
    for (int t = 0; t < kLanes; ++t) l[t] = std::fma(x[j + t], y[j + t], l[t]);
  for (int t = 0; j + t < len; ++t) l[t] = std::fma(x[j + t], y[j + t], l[t]);
  double s = 0;
  for (int t = 0; t < kLanes; ++t) s += l[t];
  return s;
}

void check_linear(const Mat& x, const Mat& w, const Vec& b) {
  if (x.cols() != w.rows()) throw std::invalid_argument("linear: input width does not match weight rows");
  if (b.size() != 0 && b.size() != w.cols()) throw std::invalid_argument("linear: bias size mismatch");
}

void bias_grad(const Mat& dy, Vec& db) {
  if (db.size() == 0) return;
  for (Eigen::Index i = 0; i < dy.rows(); ++i)
    for (Eigen::Index j = 0; j < dy.cols(); ++j) db[j] += dy(i, j);
}

int attention_setup(const Mat& q, const Mat& k, const Mat& v, Eigen::Index start, int heads,
                    Mat& out, std::vector<Mat>* probs) {
  if (heads <= 0 || q.cols() % heads != 0) throw std::invalid_argument("attention: width not divisible by heads");
  if (k.rows() < start + q.rows() || v.rows() != k.rows() || k.cols() != q.cols() || v.cols() != q.cols())
    throw std::invalid_argument("attention: key/value shape mismatch");
  out.resize(q.rows(), q.cols());
  if (probs) probs->assign(static_cast<size_t>(heads), Mat());
  return static_cast<int>(q.cols()) / heads;
}

// Columns a row tile needs: keys up to the tile's last absolute position.
struct CausalCols {
  Eigen::Index start;
  Range operator()(Eigen::Index, Eigen::Index last) const { return {0, start + last + 1}; }
};
// Inner range for P * V style products, where P is zero past each row's position.
struct CausalInner {
  Eigen::Index start;
  Range operator()(Eigen::Index, Eigen::Index last) const { return {0, start + last + 1}; }
};
// Inner range for P^T * X style products: row j of P^T is zero for query rows
// i < j - start.
struct TransposedCausalInner {
  Eigen::Index start;
  Eigen::Index n;
  Range operator()(Eigen::Index first, Eigen::Index) const {
    return {std::clamp<Eigen::Index>(first - start, 0, n), n};
  }
};

void attention_head(const Mat& q, const Mat& k, const Mat& v, Eigen::Index start, int head, int hd,
                    bool parallel, Mat& out, std::vector<Mat>* probs) {
  const Eigen::Index n = q.rows();
  const Eigen::Index m = k.rows();
  const Eigen::Index c0 = static_cast<Eigen::Index>(head) * hd;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Mat qh = q.middleCols(c0, hd);
  const Mat kt = k.middleCols(c0, hd).transpose();
  const Mat vh = v.middleCols(c0, hd);

  // Entries past a tile's causal columns are left unset here and zeroed by
  // the softmax pass.
  Mat s(n, m);
  gemm(qh, kt, nullptr, Init::kZero, s, parallel, CausalCols{start}, FullRange{hd});

  auto softmax_row = [&](Eigen::Index i) {
    double* si = s.data() + i * m;
    const Eigen::Index len = start + i + 1;
    for (Eigen::Index j = 0; j < len; ++j) si[j] *= scale;
    const double mx = lane_max(si, len);
    for (Eigen::Index j = 0; j < len; ++j) si[j] = exp_nonpositive(si[j] - mx);
    const double inv = 1.0 / lane_sum(si, len);
    for (Eigen::Index j = 0; j < len; ++j) si[j] *= inv;
    for (Eigen::Index j = len; j < m; ++j) si[j] = 0.0;
  };
  if (parallel && omp_get_max_threads() > 1) {
#pragma omp parallel for schedule(dynamic, 16)
    for (Eigen::Index i = 0; i < n; ++i) softmax_row(i);
  } else {
    for (Eigen::Index i = 0; i < n; ++i) softmax_row(i);
  }

  Mat oh(n, hd);
  gemm(s, vh, nullptr, Init::kZero, oh, parallel, FullRange{hd}, CausalInner{start});
  out.middleCols(c0, hd) = oh;
  if (probs) (*probs)[static_cast<size_t>(head)] = std::move(s);
}

void attention_head_backward(const Mat& dout, const Mat& q, const Mat& k, const Mat& v,
                             const Mat& p, Eigen::Index start, int head, int hd, bool parallel,
                             Mat& dq, Mat& dk, Mat& dv) {
  const Eigen::Index n = q.rows();
  const Eigen::Index m = k.rows();
  const Eigen::Index c0 = static_cast<Eigen::Index>(head) * hd;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  const Mat doh = dout.middleCols(c0, hd);
  const Mat vt = v.middleCols(c0, hd).transpose();

  Mat ds(n, m);
  gemm(doh, vt, nullptr, Init::kZero, ds, parallel, CausalCols{start}, FullRange{hd});
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::Index len = start + i + 1;
    const double* pi = p.data() + i * m;
    double* di = ds.data() + i * m;
    const double dot = lane_dot(pi, di, len);
    for (Eigen::Index j = 0; j < len; ++j) di[j] = pi[j] * (di[j] - dot) * scale;
    for (Eigen::Index j = len; j < m; ++j) di[j] = 0.0;
  }

  const Mat kh = k.middleCols(c0, hd);
  const Mat qh = q.middleCols(c0, hd);
  Mat dqh(n, hd);
  gemm(ds, kh, nullptr, Init::kZero, dqh, parallel, FullRange{hd}, CausalInner{start});
  dq.middleCols(c0, hd) = dqh;

  Mat dkh(m, hd);
  gemm<true>(ds, qh, nullptr, Init::kZero, dkh, parallel, FullRange{hd}, TransposedCausalInner{start, n});
  dk.middleCols(c0, hd) += dkh;

  Mat dvh(m, hd);
  gemm<true>(p, doh, nullptr, Init::kZero, dvh, parallel, FullRange{hd}, TransposedCausalInner{start, n});
  dv.middleCols(c0, hd) += dvh;
}

void attention_backward_impl(const Mat& dout, const Mat& q, const Mat& k, const Mat& v,
                             const std::vector<Mat>& probs, Eigen::Index start, int heads, Mat& dq,
                             Mat& dk, Mat& dv, bool parallel) {
  if (heads <= 0 || q.cols() % heads != 0) throw std::invalid_argument("attention backward: width not divisible by heads");
  if (static_cast<int>(probs.size()) != heads) throw std::invalid_argument("attention backward: missing probabilities");
  if (dk.rows() != k.rows() || dv.rows() != k.rows() || dk.cols() != k.cols() || dv.cols() != k.cols())
    throw std::invalid_argument("attention backward: gradient buffers must match keys");
  const int hd = static_cast<int>(q.cols()) / heads;
  dq.resize(q.rows(), q.cols());
  for (int h = 0; h < heads; ++h)
    attention_head_backward(dout, q, k, v, probs[static_cast<size_t>(h)], start, h, hd, parallel, dq, dk, dv);
}

}  // namespace

namespace serial {

void linear_forward(const Mat& x, const Mat& w, const Vec& b, Mat& y) {
  check_linear(x, w, b);
  y.resize(x.rows(), w.cols());
  gemm_full(x, w, &b, b.size() ? Init::kBias : Init::kZero, y, false);
}

void linear_backward_input(const Mat& dy, const Mat& w, Mat& dx) {
  const Mat wt = w.transpose();
  dx.resize(dy.rows(), w.rows());
  gemm_full(dy, wt, nullptr, Init::kZero, dx, false);
}

void linear_backward_params(const Mat& x, const Mat& dy, Mat& dw, Vec& db) {
  gemm_tn_full(x, dy, Init::kAccumulate, dw, false);
  bias_grad(dy, db);
}

void attention_forward(const Mat& q, const Mat& k, const Mat& v, Eigen::Index start, int heads,
                       Mat& out, std::vector<Mat>* probs) {
  const int hd = attention_setup(q, k, v, start, heads, out, probs);
  for (int h = 0; h < heads; ++h) attention_head(q, k, v, start, h, hd, false, out, probs);
}

void attention_backward(const Mat& dout, const Mat& q, const Mat& k, const Mat& v,
                        const std::vector<Mat>& probs, Eigen::Index start, int heads, Mat& dq,
                        Mat& dk, Mat& dv) {
  attention_backward_impl(dout, q, k, v, probs, start, heads, dq, dk, dv, false);
}

}  // namespace serial

void linear_forward(const Mat& x, const Mat& w, const Vec& b, Mat& y) {
  check_linear(x, w, b);
  y.resize(x.rows(), w.cols());
  gemm_full(x, w, &b, b.size() ? Init::kBias : Init::kZero, y, true);
}

void linear_backward_input(const Mat& dy, const Mat& w, Mat& dx) {
  const Mat wt = w.transpose();
  dx.resize(dy.rows(), w.rows());
  gemm_full(dy, wt, nullptr, Init::kZero, dx, true);
}

void linear_backward_params(const Mat& x, const Mat& dy, Mat& dw, Vec& db) {
  gemm_tn_full(x, dy, Init::kAccumulate, dw, true);
  bias_grad(dy, db);
}

void attention_forward(const Mat& q, const Mat& k, const Mat& v, Eigen::Index start, int heads,
                       Mat& out, std::vector<Mat>* probs) {
  const int hd = attention_setup(q, k, v, start, heads, out, probs);
  for (int h = 0; h < heads; ++h) attention_head(q, k, v, start, h, hd, true, out, probs);
}

void attention_backward(const Mat& dout, const Mat& q, const Mat& k, const Mat& v,
                        const std::vector<Mat>& probs, Eigen::Index start, int heads, Mat& dq,
                        Mat& dk, Mat& dv) {
  attention_backward_impl(dout, q, k, v, probs, start, heads, dq, dk, dv, true);
}

int max_threads() { return omp_get_max_threads(); }
void set_threads(int n) { omp_set_num_threads(std::max(1, n)); }

}  // namespace dronecam::kernels
