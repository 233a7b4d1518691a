#pragma once

#include <algorithm>
#include <cstdint>

#include "lmpforge/errors.hpp"

namespace lmpforge::kernels {

enum class Pad { same, valid };

/// Geometry of one convolution, always described from the conv2d direction:
/// X (batch,in_h,in_w,in_c) -> Y (batch,out_h,out_w,out_c) with kernel
/// (k_h,k_w,in_c,out_c). conv2d_transpose runs the adjoint map Y-side ->
/// X-side through the same geometry.
struct ConvGeom {
    int batch = 1;
    int in_h = 0, in_w = 0, in_c = 0;
    int k_h = 0, k_w = 0, out_c = 0;
    int stride_h = 1, stride_w = 1;
    int pad_h = 0, pad_w = 0;  // top/left padding; bottom/right is the remainder
    int out_h = 0, out_w = 0;
};

/// out = ceil(in/stride) for same padding, floor((in-k)/stride)+1 for valid.
inline ConvGeom conv_geometry(int batch, int in_h, int in_w, int in_c, int k_h, int k_w,
                              int out_c, int stride_h, int stride_w, Pad pad) {
    ConvGeom g;
    g.batch = batch;
    g.in_h = in_h;
    g.in_w = in_w;
    g.in_c = in_c;
    g.k_h = k_h;
    g.k_w = k_w;
    g.out_c = out_c;
    g.stride_h = stride_h;
    g.stride_w = stride_w;
    if (pad == Pad::same) {
        g.out_h = (in_h + stride_h - 1) / stride_h;
        g.out_w = (in_w + stride_w - 1) / stride_w;
        g.pad_h = std::max(0, ((g.out_h - 1) * stride_h + k_h - in_h)) / 2;
        g.pad_w = std::max(0, ((g.out_w - 1) * stride_w + k_w - in_w)) / 2;
    } else {
        if (k_h > in_h || k_w > in_w)
            throw DimensionError("valid convolution: kernel " + std::to_string(k_h) + "x" +
                                 std::to_string(k_w) + " exceeds input " + std::to_string(in_h) +
                                 "x" + std::to_string(in_w));
        g.out_h = (in_h - k_h) / stride_h + 1;
        g.out_w = (in_w - k_w) / stride_w + 1;
    }
    return g;
}

/// Transpose-direction output size: the X-side dims recovered from Y-side
/// dims. Exact inverse of conv_geometry for stride 1; for larger strides it
/// follows the in = out*stride (same) / (out-1)*stride+k (valid) convention.
inline ConvGeom conv_transpose_geometry(int batch, int y_h, int y_w, int out_c, int k_h, int k_w,
                                        int in_c, int stride_h, int stride_w, Pad pad) {
    int in_h = (pad == Pad::same) ? y_h * stride_h : (y_h - 1) * stride_h + k_h;
    int in_w = (pad == Pad::same) ? y_w * stride_w : (y_w - 1) * stride_w + k_w;
    ConvGeom g = conv_geometry(batch, in_h, in_w, in_c, k_h, k_w, out_c, stride_h, stride_w, pad);
    require(g.out_h == y_h && g.out_w == y_w, "conv transpose geometry is not invertible for these dims");
    return g;
}

/// Fixed-order 4-accumulator dot product. The partial-sum combine order is
/// part of the determinism contract: every code path that reduces uses this.
inline double dot4(const double* a, const double* b, int n) {
    double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int i = 0;
    for (; i + 4 <= n; i += 4) {
        s0 += a[i] * b[i];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
    }
    for (; i < n; ++i) s0 += a[i] * b[i];
    return (s0 + s1) + (s2 + s3);
}

// All kernels ACCUMULATE into their output buffer; callers zero-fill first.
// OpenMP versions parallelize so that each output element is produced by
// exactly one thread with a fixed-order inner reduction, which makes results
// bit-identical for any thread count.

/// Y[m,oy,ox,co] += sum_{ky,kx,ci} X[m, oy*s+ky-pad, ox*s+kx-pad, ci] * K[ky,kx,ci,co]
void conv2d_forward(const ConvGeom& g, const double* x, const double* k, double* y);

/// X'[m,iy,ix,ci] += sum_{oy,ox,ky,kx,co} Y'[m,oy,ox,co] * K[ky,kx,ci,co]
/// (adjoint of conv2d_forward; also conv2d's input gradient)
void conv2d_adjoint(const ConvGeom& g, const double* gy, const double* k, double* gx);

/// GK[ky,kx,ci,co] += sum_{m,oy,ox} X[m,iy,ix,ci] * GY[m,oy,ox,co]
void conv2d_kernel_grad(const ConvGeom& g, const double* x, const double* gy, double* gk);

/// Y[m,j] += sum_i X[m,i] * W[i,j]   (row-vector x matrix convention)
void dense_forward(int m, int fin, int fout, const double* x, const double* w, double* y);

/// GX[m,i] += sum_j GY[m,j] * W[i,j]
void dense_input_grad(int m, int fin, int fout, const double* gy, const double* w, double* gx);

/// GW[i,j] += sum_m X[m,i] * GY[m,j]
void dense_weight_grad(int m, int fin, int fout, const double* x, const double* gy, double* gw);

/// Serial reference implementations, kept for correctness tests and the
/// kernel benchmark. Plain nested loops, no manual unrolling.
namespace ref {
void conv2d_forward(const ConvGeom& g, const double* x, const double* k, double* y);
void conv2d_adjoint(const ConvGeom& g, const double* gy, const double* k, double* gx);
void conv2d_kernel_grad(const ConvGeom& g, const double* x, const double* gy, double* gk);
void dense_forward(int m, int fin, int fout, const double* x, const double* w, double* y);
void dense_input_grad(int m, int fin, int fout, const double* gy, const double* w, double* gx);
void dense_weight_grad(int m, int fin, int fout, const double* x, const double* gy, double* gw);
}  // namespace ref

}  // namespace lmpforge::kernels
