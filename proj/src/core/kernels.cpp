#include "wm/core/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace wm::core::kernels {

namespace {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
using ConstVec = Eigen::Map<const Eigen::VectorXd>;
using Vec = Eigen::Map<Eigen::VectorXd>;
}  // namespace

void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool transpose_a, bool transpose_b, bool accumulate) {
  const auto M = static_cast<Eigen::Index>(m);
  const auto K = static_cast<Eigen::Index>(k);
  const auto N = static_cast<Eigen::Index>(n);
  Map C(c, M, N);
  if (!accumulate) C.setZero();
  if (!transpose_a && !transpose_b) {
    C.noalias() += ConstMap(a, M, K) * ConstMap(b, K, N);
  } else if (transpose_a && !transpose_b) {
    C.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, K, N);
  } else if (!transpose_a && transpose_b) {
    C.noalias() += ConstMap(a, M, K) * ConstMap(b, N, K).transpose();
  } else {
    C.noalias() += ConstMap(a, K, M).transpose() * ConstMap(b, N, K).transpose();
  }
}

void matvec(std::span<const double> w, std::span<const double> x, std::span<const double> bias,
            std::span<double> y) {
  const auto rows = static_cast<Eigen::Index>(y.size());
  const auto cols = static_cast<Eigen::Index>(x.size());
  if (w.size() != y.size() * x.size() || (!bias.empty() && bias.size() != y.size()))
    throw ShapeError("matvec: weight " + std::to_string(w.size()) + " vs " + std::to_string(y.size()) +
                     "x" + std::to_string(x.size()));
  Vec out(y.data(), rows);
  if (bias.empty())
    out.setZero();
  else
    out = ConstVec(bias.data(), rows);
  out.noalias() += ConstMap(w.data(), rows, cols) * ConstVec(x.data(), cols);
}

Array matmul(const Array& a, const Array& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) throw_shape_mismatch("matmul", a.shape(), b.shape());
  Array out({a.dim(0), b.dim(1)});
  gemm(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1), false, false, false);
  return out;
}

std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride) {
  if (kernel == 0 || stride == 0 || in < kernel) return 0;
  return (in - kernel) / stride + 1;
}

std::size_t deconv_out_size(std::size_t in, std::size_t kernel, std::size_t stride) {
  return (in - 1) * stride + kernel;
}

void im2col(const double* x, std::size_t batch, const ConvGeometry& g, double* cols) {
  const std::size_t k = g.kernel, s = g.stride;
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t plane = g.in_h * g.in_w;
  const std::size_t positions = oh * ow;
  const std::size_t row_len = batch * positions;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        double* row = cols + ((c * k + ki) * k + kj) * row_len;
        for (std::size_t n = 0; n < batch; ++n) {
          const double* src = x + (n * g.channels + c) * plane;
          double* dst = row + n * positions;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            const double* line = src + (oy * s + ki) * g.in_w + kj;
            for (std::size_t ox = 0; ox < ow; ++ox) dst[oy * ow + ox] = line[ox * s];
          }
        }
      }
}

void col2im(const double* cols, std::size_t batch, const ConvGeometry& g, double* x) {
  const std::size_t k = g.kernel, s = g.stride;
  const std::size_t oh = g.out_h(), ow = g.out_w();
  const std::size_t plane = g.in_h * g.in_w;
  const std::size_t positions = oh * ow;
  const std::size_t row_len = batch * positions;
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < k; ++ki)
      for (std::size_t kj = 0; kj < k; ++kj) {
        const double* row = cols + ((c * k + ki) * k + kj) * row_len;
        for (std::size_t n = 0; n < batch; ++n) {
          double* dst = x + (n * g.channels + c) * plane;
          const double* src = row + n * positions;
          for (std::size_t oy = 0; oy < oh; ++oy) {
            double* line = dst + (oy * s + ki) * g.in_w + kj;
            for (std::size_t ox = 0; ox < ow; ++ox) line[ox * s] += src[oy * ow + ox];
          }
        }
      }
}

void batch_to_channel_major(const double* x, std::size_t n, std::size_t c, std::size_t s, double* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) std::copy_n(x + (i * c + j) * s, s, out + (j * n + i) * s);
}

void channel_to_batch_major(const double* x, std::size_t n, std::size_t c, std::size_t s, double* out) {
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < c; ++j) std::copy_n(x + (j * n + i) * s, s, out + (i * c + j) * s);
}

Array conv2d(const Array& x, const Array& w, const Array& b, std::size_t stride) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(1) != x.dim(1) || w.dim(2) != w.dim(3))
    throw_shape_mismatch("conv2d", x.shape(), w.shape());
  if (b.size() != w.dim(0)) throw_shape_mismatch("conv2d bias", w.shape(), b.shape());
  const ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), stride};
  if (conv_out_size(g.in_h, g.kernel, stride) == 0 || conv_out_size(g.in_w, g.kernel, stride) == 0)
    throw_shape_mismatch("conv2d (kernel larger than input)", x.shape(), w.shape());
  const std::size_t n = x.dim(0), out_c = w.dim(0);
  const std::size_t ckk = g.channels * g.kernel * g.kernel;
  const std::size_t positions = g.out_h() * g.out_w();
  std::vector<double> cols(ckk * n * positions);
  im2col(x.data(), n, g, cols.data());
  std::vector<double> y(out_c * n * positions);
  gemm(w.data(), cols.data(), y.data(), out_c, ckk, n * positions, false, false, false);
  Array out({n, out_c, g.out_h(), g.out_w()});
  channel_to_batch_major(y.data(), n, out_c, positions, out.data());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out_c; ++o) {
      double* p = out.data() + (i * out_c + o) * positions;
      for (std::size_t j = 0; j < positions; ++j) p[j] += b[o];
    }
  return out;
}

Array deconv2d(const Array& x, const Array& w, const Array& b, std::size_t stride) {
  if (x.rank() != 4 || w.rank() != 4 || w.dim(0) != x.dim(1) || w.dim(2) != w.dim(3))
    throw_shape_mismatch("deconv2d", x.shape(), w.shape());
  if (b.size() != w.dim(1)) throw_shape_mismatch("deconv2d bias", w.shape(), b.shape());
  const std::size_t n = x.dim(0), in_c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t out_c = w.dim(1), k = w.dim(2);
  const std::size_t oh = deconv_out_size(h, k, stride), ow = deconv_out_size(wd, k, stride);
  const std::size_t positions = h * wd;
  const std::size_t okk = out_c * k * k;
  std::vector<double> xm(in_c * n * positions);
  batch_to_channel_major(x.data(), n, in_c, positions, xm.data());
  std::vector<double> cols(okk * n * positions);
  gemm(w.data(), xm.data(), cols.data(), okk, in_c, n * positions, true, false, false);
  Array out({n, out_c, oh, ow});
  const ConvGeometry g{out_c, oh, ow, k, stride};
  col2im(cols.data(), n, g, out.data());
  const std::size_t plane = oh * ow;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t o = 0; o < out_c; ++o) {
      double* p = out.data() + (i * out_c + o) * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] += b[o];
    }
  return out;
}

double logsumexp(std::span<const double> x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

Array logsumexp_last(const Array& x) {
  if (x.rank() == 0) throw ShapeError("logsumexp_last on scalar");
  const std::size_t d = x.shape().back();
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  Array out(out_shape);
  for (std::size_t r = 0; r < out.size(); ++r) out[r] = logsumexp(x.span().subspan(r * d, d));
  return out;
}

Array log_softmax_last(const Array& x) {
  if (x.rank() == 0) throw ShapeError("log_softmax_last on scalar");
  const std::size_t d = x.shape().back();
  Array out(x.shape());
  for (std::size_t r = 0; r < x.size() / d; ++r) {
    const double lse = logsumexp(x.span().subspan(r * d, d));
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x[r * d + j] - lse;
  }
  return out;
}

Array softmax_last(const Array& x) {
  Array out = log_softmax_last(x);
  for (auto& v : out.storage()) v = std::exp(v);
  return out;
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace wm::core::kernels
