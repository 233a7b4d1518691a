#include "lmpforge/kernels.hpp"

namespace lmpforge::kernels {

namespace {

inline void axpy(double a, const double* x, double* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += a * x[i];
}

}  // namespace

void conv2d_forward(const ConvGeom& g, const double* x, const double* k, double* y) {
    const int64_t out_plane = int64_t(g.out_h) * g.out_w;
    const int64_t n_out = g.batch * out_plane;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < n_out; ++idx) {
        const int m = int(idx / out_plane);
        const int oy = int(idx % out_plane) / g.out_w;
        const int ox = int(idx % out_plane) % g.out_w;
        double* yrow = y + idx * g.out_c;
        for (int ky = 0; ky < g.k_h; ++ky) {
            const int iy = oy * g.stride_h + ky - g.pad_h;
            if (iy < 0 || iy >= g.in_h) continue;
            for (int kx = 0; kx < g.k_w; ++kx) {
                const int ix = ox * g.stride_w + kx - g.pad_w;
                if (ix < 0 || ix >= g.in_w) continue;
                const double* xpix = x + ((int64_t(m) * g.in_h + iy) * g.in_w + ix) * g.in_c;
                const double* krow = k + (int64_t(ky) * g.k_w + kx) * g.in_c * g.out_c;
                for (int ci = 0; ci < g.in_c; ++ci)
                    axpy(xpix[ci], krow + int64_t(ci) * g.out_c, yrow, g.out_c);
            }
        }
    }
}

void conv2d_adjoint(const ConvGeom& g, const double* gy, const double* k, double* gx) {
    const int64_t in_plane = int64_t(g.in_h) * g.in_w;
    const int64_t n_in = g.batch * in_plane;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < n_in; ++idx) {
        const int m = int(idx / in_plane);
        const int iy = int(idx % in_plane) / g.in_w;
        const int ix = int(idx % in_plane) % g.in_w;
        double* gxpix = gx + idx * g.in_c;
        for (int ky = 0; ky < g.k_h; ++ky) {
            const int ny = iy + g.pad_h - ky;
            if (ny < 0 || ny % g.stride_h != 0) continue;
            const int oy = ny / g.stride_h;
            if (oy >= g.out_h) continue;
            for (int kx = 0; kx < g.k_w; ++kx) {
                const int nx = ix + g.pad_w - kx;
                if (nx < 0 || nx % g.stride_w != 0) continue;
                const int ox = nx / g.stride_w;
                if (ox >= g.out_w) continue;
                const double* gyrow = gy + ((int64_t(m) * g.out_h + oy) * g.out_w + ox) * g.out_c;
                const double* krow = k + (int64_t(ky) * g.k_w + kx) * g.in_c * g.out_c;
                for (int ci = 0; ci < g.in_c; ++ci)
                    gxpix[ci] += dot4(gyrow, krow + int64_t(ci) * g.out_c, g.out_c);
            }
        }
    }
}

void conv2d_kernel_grad(const ConvGeom& g, const double* x, const double* gy, double* gk) {
    const int64_t n_rows = int64_t(g.k_h) * g.k_w * g.in_c;
#pragma omp parallel for schedule(static)
    for (int64_t row = 0; row < n_rows; ++row) {
        const int ky = int(row / (g.k_w * g.in_c));
        const int kx = int(row / g.in_c) % g.k_w;
        const int ci = int(row % g.in_c);
        double* gkrow = gk + row * g.out_c;
        for (int m = 0; m < g.batch; ++m) {
            for (int oy = 0; oy < g.out_h; ++oy) {
                const int iy = oy * g.stride_h + ky - g.pad_h;
                if (iy < 0 || iy >= g.in_h) continue;
                for (int ox = 0; ox < g.out_w; ++ox) {
                    const int ix = ox * g.stride_w + kx - g.pad_w;
                    if (ix < 0 || ix >= g.in_w) continue;
                    const double xv = x[((int64_t(m) * g.in_h + iy) * g.in_w + ix) * g.in_c + ci];
                    const double* gyrow =
                        gy + ((int64_t(m) * g.out_h + oy) * g.out_w + ox) * g.out_c;
                    axpy(xv, gyrow, gkrow, g.out_c);
                }
            }
        }
    }
}

void dense_forward(int m, int fin, int fout, const double* x, const double* w, double* y) {
#pragma omp parallel for schedule(static)
    for (int r = 0; r < m; ++r) {
        const double* xrow = x + int64_t(r) * fin;
        double* yrow = y + int64_t(r) * fout;
        for (int i = 0; i < fin; ++i) axpy(xrow[i], w + int64_t(i) * fout, yrow, fout);
    }
}

void dense_input_grad(int m, int fin, int fout, const double* gy, const double* w, double* gx) {
    const int64_t n = int64_t(m) * fin;
#pragma omp parallel for schedule(static)
    for (int64_t idx = 0; idx < n; ++idx) {
        const int64_t r = idx / fin;
        const int64_t i = idx % fin;
        gx[idx] += dot4(gy + r * fout, w + i * fout, fout);
    }
}

void dense_weight_grad(int m, int fin, int fout, const double* x, const double* gy, double* gw) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < fin; ++i) {
        double* gwrow = gw + int64_t(i) * fout;
        for (int r = 0; r < m; ++r) axpy(x[int64_t(r) * fin + i], gy + int64_t(r) * fout, gwrow, fout);
    }
}

}  // namespace lmpforge::kernels
