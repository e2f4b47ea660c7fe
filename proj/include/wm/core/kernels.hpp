#pragma once

// Forward kernels shared by the gradient tape and the tape-free inference paths.
// Keeping one implementation guarantees both paths produce identical values.

#include <cstddef>
#include <span>

#include "wm/core/array.hpp"

namespace wm::core::kernels {

/// C (m×n) = op(A) · op(B) [+ C if accumulate]; all row-major.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n,
          bool transpose_a, bool transpose_b, bool accumulate);

/// y = W·x + b for W (rows×cols), optional bias.
void matvec(std::span<const double> w, std::span<const double> x, std::span<const double> bias,
            std::span<double> y);

Array matmul(const Array& a, const Array& b);

/// Spatial geometry of a square-kernel strided convolution, valid padding.
struct ConvGeometry {
  std::size_t channels = 0;
  std::size_t in_h = 0, in_w = 0;
  std::size_t kernel = 0, stride = 1;
  std::size_t out_h() const { return (in_h - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w - kernel) / stride + 1; }
};

/// Output size of a valid strided convolution, or 0 if the kernel does not fit.
std::size_t conv_out_size(std::size_t in, std::size_t kernel, std::size_t stride);
/// Output size of a strided transposed convolution.
std::size_t deconv_out_size(std::size_t in, std::size_t kernel, std::size_t stride);

/// x: [N, C, H, W] -> columns [C*k*k, N*Ho*Wo].
void im2col(const double* x, std::size_t batch, const ConvGeometry& g, double* cols);
/// Scatter-add of columns back to [N, C, H, W].
void col2im(const double* cols, std::size_t batch, const ConvGeometry& g, double* x);

/// x [N,C,H,W], w [O,C,k,k], b [O] -> [N,O,Ho,Wo].
Array conv2d(const Array& x, const Array& w, const Array& b, std::size_t stride);
/// x [N,C,H,W], w [C,O,k,k], b [O] -> [N,O,(H-1)s+k,(W-1)s+k].
Array deconv2d(const Array& x, const Array& w, const Array& b, std::size_t stride);

/// Row-wise along the last axis.
Array softmax_last(const Array& x);
Array log_softmax_last(const Array& x);
Array logsumexp_last(const Array& x);
double logsumexp(std::span<const double> x);

double sigmoid(double x);
double softplus(double x);

/// [N, C, S] <-> [C, N*S] permutations used around batched GEMMs.
void batch_to_channel_major(const double* x, std::size_t n, std::size_t c, std::size_t s, double* out);
void channel_to_batch_major(const double* x, std::size_t n, std::size_t c, std::size_t s, double* out);

}  // namespace wm::core::kernels
