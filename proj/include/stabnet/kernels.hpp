#pragma once

#include "stabnet/errors.hpp"

namespace stabnet::kernels {

// Dense kernels behind the differentiable ops. The production versions are
// OpenMP-parallel over independent output elements: each output value is
// accumulated by exactly one thread in a fixed order, so results are
// bit-identical for any thread count. The serial reference implementations
// in kernels::ref are independent (different loop structure, 64-bit
// accumulation) and exist for testing and benchmarking.

// C[m,p] = A[m,k] * B[k,p]; accumulate=true adds into C instead.
void matmul_nn(const float* a, const float* b, float* c, int m, int k, int p,
               bool accumulate = false);

// C[m,k] = A[m,p] * B[k,p]^T
void matmul_nt(const float* a, const float* b, float* c, int m, int p, int k,
               bool accumulate = false);

// C[k,p] = A[m,k]^T * B[m,p]
void matmul_tn(const float* a, const float* b, float* c, int m, int k, int p,
               bool accumulate = false);

struct Conv2dDims {
    int batch = 0, cin = 0, h = 0, w = 0;
    int cout = 0, kh = 0, kw = 0;
    int stride = 1, pad = 0;
    int oh = 0, ow = 0;

    int patch() const { return cin * kh * kw; }        // im2col rows
    int positions() const { return oh * ow; }          // im2col cols
};

// Validates and computes output extents. Throws DimensionError when the
// kernel does not fit the padded input.
Conv2dDims conv2d_dims(int batch, int cin, int h, int w, int cout, int kh, int kw, int stride,
                       int pad);

// x: [B,Cin,H,W], w: [Cout,Cin,kh,kw], y: [B,Cout,OH,OW].
// cols (may be null) receives the im2col lowering, [B, patch, positions],
// retained by the caller for the backward pass.
void conv2d_forward(const float* x, const float* w, float* y, const Conv2dDims& d, float* cols);

// dx += col2im(w^T * dy) per sample; dx is accumulated into.
void conv2d_backward_input(const float* w, const float* dy, float* dx, const Conv2dDims& d);

// dw += sum_b dy_b * cols_b^T; needs the cols buffer from the forward pass.
void conv2d_backward_kernel(const float* cols, const float* dy, float* dw, const Conv2dDims& d);

// Lowers one sample to the patch matrix [patch, positions].
void im2col(const float* x, float* cols, const Conv2dDims& d);

namespace ref {

// Naive triple loop, 64-bit accumulators.
void matmul(const float* a, const float* b, float* c, int m, int k, int p);

// Direct convolution loops, 64-bit accumulators. y: [B,Cout,OH,OW].
void conv2d_forward(const float* x, const float* w, float* y, const Conv2dDims& d);

}  // namespace ref

}  // namespace stabnet::kernels
