#include "lmpforge/kernels.hpp"

// Naive quadruple-loop versions. Slow on purpose: these are the ground truth
// the parallel kernels are checked against.

namespace lmpforge::kernels::ref {

void conv2d_forward(const ConvGeom& g, const double* x, const double* k, double* y) {
    for (int m = 0; m < g.batch; ++m)
        for (int oy = 0; oy < g.out_h; ++oy)
            for (int ox = 0; ox < g.out_w; ++ox)
                for (int co = 0; co < g.out_c; ++co) {
                    double acc = 0.0;
                    for (int ky = 0; ky < g.k_h; ++ky)
                        for (int kx = 0; kx < g.k_w; ++kx)
                            for (int ci = 0; ci < g.in_c; ++ci) {
                                const int iy = oy * g.stride_h + ky - g.pad_h;
                                const int ix = ox * g.stride_w + kx - g.pad_w;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                acc += x[((int64_t(m) * g.in_h + iy) * g.in_w + ix) * g.in_c + ci] *
                                       k[((int64_t(ky) * g.k_w + kx) * g.in_c + ci) * g.out_c + co];
                            }
                    y[((int64_t(m) * g.out_h + oy) * g.out_w + ox) * g.out_c + co] += acc;
                }
}

void conv2d_adjoint(const ConvGeom& g, const double* gy, const double* k, double* gx) {
    for (int m = 0; m < g.batch; ++m)
        for (int oy = 0; oy < g.out_h; ++oy)
            for (int ox = 0; ox < g.out_w; ++ox)
                for (int co = 0; co < g.out_c; ++co) {
                    const double gv = gy[((int64_t(m) * g.out_h + oy) * g.out_w + ox) * g.out_c + co];
                    for (int ky = 0; ky < g.k_h; ++ky)
                        for (int kx = 0; kx < g.k_w; ++kx)
                            for (int ci = 0; ci < g.in_c; ++ci) {
                                const int iy = oy * g.stride_h + ky - g.pad_h;
                                const int ix = ox * g.stride_w + kx - g.pad_w;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                gx[((int64_t(m) * g.in_h + iy) * g.in_w + ix) * g.in_c + ci] +=
                                    gv * k[((int64_t(ky) * g.k_w + kx) * g.in_c + ci) * g.out_c + co];
                            }
                }
}

void conv2d_kernel_grad(const ConvGeom& g, const double* x, const double* gy, double* gk) {
    for (int m = 0; m < g.batch; ++m)
        for (int oy = 0; oy < g.out_h; ++oy)
            for (int ox = 0; ox < g.out_w; ++ox)
                for (int co = 0; co < g.out_c; ++co) {
                    const double gv = gy[((int64_t(m) * g.out_h + oy) * g.out_w + ox) * g.out_c + co];
                    for (int ky = 0; ky < g.k_h; ++ky)
                        for (int kx = 0; kx < g.k_w; ++kx)
                            for (int ci = 0; ci < g.in_c; ++ci) {
                                const int iy = oy * g.stride_h + ky - g.pad_h;
                                const int ix = ox * g.stride_w + kx - g.pad_w;
                                if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) continue;
                                gk[((int64_t(ky) * g.k_w + kx) * g.in_c + ci) * g.out_c + co] +=
                                    gv * x[((int64_t(m) * g.in_h + iy) * g.in_w + ix) * g.in_c + ci];
                            }
                }
}

void dense_forward(int m, int fin, int fout, const double* x, const double* w, double* y) {
    for (int r = 0; r < m; ++r)
        for (int j = 0; j < fout; ++j) {
            double acc = 0.0;
            for (int i = 0; i < fin; ++i) acc += x[int64_t(r) * fin + i] * w[int64_t(i) * fout + j];
            y[int64_t(r) * fout + j] += acc;
        }
}

void dense_input_grad(int m, int fin, int fout, const double* gy, const double* w, double* gx) {
    for (int r = 0; r < m; ++r)
        for (int i = 0; i < fin; ++i) {
            double acc = 0.0;
            for (int j = 0; j < fout; ++j)
                acc += gy[int64_t(r) * fout + j] * w[int64_t(i) * fout + j];
            gx[int64_t(r) * fin + i] += acc;
        }
}

void dense_weight_grad(int m, int fin, int fout, const double* x, const double* gy, double* gw) {
    for (int i = 0; i < fin; ++i)
        for (int j = 0; j < fout; ++j) {
            double acc = 0.0;
            for (int r = 0; r < m; ++r)
                acc += x[int64_t(r) * fin + i] * gy[int64_t(r) * fout + j];
            gw[int64_t(i) * fout + j] += acc;
        }
}

}  // namespace lmpforge::kernels::ref
