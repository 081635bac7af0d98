#pragma once

#include <vector>

#include "pdp/core/backend.hpp"
#include "pdp/core/tensor.hpp"

// Low-level numeric kernels. Every kernel ships in two variants: a plain-loop
// serial reference and an OpenMP/BLAS parallel version. The unsuffixed entry
// points dispatch on the global backend; tests compare the two variants
// directly and the bench target times them against each other.
namespace pdp::kernels {

struct ConvSpec {
    int kernel = 3;
    int stride = 1;
    int pad = 1;
    int groups = 1;
};

void check_conv_args(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& s);
std::vector<int> conv_out_shape(const Tensor& x, const Tensor& w, const ConvSpec& s);

// x (N,Cin,H,W), w (Cout,Cin/g,k,k), b (Cout) optional -> y (N,Cout,Ho,Wo)
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& s);
Tensor conv2d_forward_serial(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& s);
Tensor conv2d_forward_parallel(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& s);

void conv2d_backward(const Tensor& x, const Tensor& w, const ConvSpec& s, const Tensor& gy,
                     Tensor& gx, Tensor& gw, Tensor* gb);
void conv2d_backward_serial(const Tensor& x, const Tensor& w, const ConvSpec& s, const Tensor& gy,
                            Tensor& gx, Tensor& gw, Tensor* gb);
void conv2d_backward_parallel(const Tensor& x, const Tensor& w, const ConvSpec& s, const Tensor& gy,
                              Tensor& gx, Tensor& gw, Tensor* gb);

// Stride-2 transposed convolution with a 2x2 kernel: exact x2 upsampling with
// learned weights. w layout (Cin,Cout,2,2), b (Cout).
Tensor conv_transpose2x_forward(const Tensor& x, const Tensor& w, const Tensor* b);
Tensor conv_transpose2x_forward_serial(const Tensor& x, const Tensor& w, const Tensor* b);
Tensor conv_transpose2x_forward_parallel(const Tensor& x, const Tensor& w, const Tensor* b);

void conv_transpose2x_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                               Tensor& gx, Tensor& gw, Tensor* gb);
void conv_transpose2x_backward_serial(const Tensor& x, const Tensor& w, const Tensor& gy,
                                      Tensor& gx, Tensor& gw, Tensor* gb);
void conv_transpose2x_backward_parallel(const Tensor& x, const Tensor& w, const Tensor& gy,
                                        Tensor& gx, Tensor& gw, Tensor* gb);

// Max pooling with odd kernel, stride 1, same padding. argmax holds the flat
// input index feeding each output element (ties resolved to the first in scan
// order) and is consumed by the backward pass.
Tensor max_pool_same_forward(const Tensor& x, int k, std::vector<std::int64_t>& argmax);
Tensor max_pool_same_forward_serial(const Tensor& x, int k, std::vector<std::int64_t>& argmax);
Tensor max_pool_same_forward_parallel(const Tensor& x, int k, std::vector<std::int64_t>& argmax);

Tensor max_pool_same_backward(const Tensor& x, int k, const std::vector<std::int64_t>& argmax, const Tensor& gy);
Tensor max_pool_same_backward_serial(const Tensor& x, int k, const std::vector<std::int64_t>& argmax, const Tensor& gy);
Tensor max_pool_same_backward_parallel(const Tensor& x, int k, const std::vector<std::int64_t>& argmax, const Tensor& gy);

// Nearest-neighbour x2 upsampling.
Tensor upsample2_forward(const Tensor& x);
Tensor upsample2_forward_serial(const Tensor& x);
Tensor upsample2_forward_parallel(const Tensor& x);

Tensor upsample2_backward(const Tensor& gy);
Tensor upsample2_backward_serial(const Tensor& gy);
Tensor upsample2_backward_parallel(const Tensor& gy);

// Row-major matrix product helpers used by the parallel conv path.
// c[m x n] = a[m x k] * b[k x n] (+ c when accumulate).
void gemm(bool trans_a, bool trans_b, int m, int n, int k,
          const real* a, const real* b, real* c, bool accumulate);

}  // namespace pdp::kernels
