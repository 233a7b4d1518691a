// Times the OpenMP kernels against the serial reference loops and checks
// that both paths produce bit-identical output on every shape they run.
#include <chrono>
#include <cstring>
#include <functional>
#include <iostream>
#include <vector>

#include "lmpforge/kernels.hpp"
#include "lmpforge/rng.hpp"
#include "lmpforge/textio.hpp"

using namespace lmpforge;
using kernels::ConvGeom;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    const auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<double> random_buf(int64_t n, Rng& rng) {
    std::vector<double> v(static_cast<size_t>(n));
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

struct Row {
    std::string name;
    double omp_ms = 0, ref_ms = 0;
    bool identical = false;
};

void print_row(const Row& r) {
    std::cout << r.name << ": omp " << fmt_fixed(r.omp_ms, 3) << " ms, ref "
              << fmt_fixed(r.ref_ms, 3) << " ms, speedup "
              << fmt_fixed(r.ref_ms / r.omp_ms, 2) << "x, bit-identical "
              << (r.identical ? "yes" : "NO") << "\n";
}

Row bench_conv(const std::string& name, const ConvGeom& g, int reps, Rng& rng) {
    const int64_t xn = int64_t(g.batch) * g.in_h * g.in_w * g.in_c;
    const int64_t kn = int64_t(g.k_h) * g.k_w * g.in_c * g.out_c;
    const int64_t yn = int64_t(g.batch) * g.out_h * g.out_w * g.out_c;
    const auto x = random_buf(xn, rng);
    const auto k = random_buf(kn, rng);
    std::vector<double> y_omp(static_cast<size_t>(yn)), y_ref(static_cast<size_t>(yn));

    Row row{name, 0, 0, false};
    row.omp_ms = time_ms(
        [&] {
            std::fill(y_omp.begin(), y_omp.end(), 0.0);
            kernels::conv2d_forward(g, x.data(), k.data(), y_omp.data());
        },
        reps);
    row.ref_ms = time_ms(
        [&] {
            std::fill(y_ref.begin(), y_ref.end(), 0.0);
            kernels::ref::conv2d_forward(g, x.data(), k.data(), y_ref.data());
        },
        reps);
    row.identical =
        std::memcmp(y_omp.data(), y_ref.data(), y_omp.size() * sizeof(double)) == 0;
    return row;
}

Row bench_dense(const std::string& name, int m, int fin, int fout, int reps, Rng& rng) {
    const auto x = random_buf(int64_t(m) * fin, rng);
    const auto w = random_buf(int64_t(fin) * fout, rng);
    std::vector<double> y_omp(size_t(m) * fout), y_ref(size_t(m) * fout);

    Row row{name, 0, 0, false};
    row.omp_ms = time_ms(
        [&] {
            std::fill(y_omp.begin(), y_omp.end(), 0.0);
            kernels::dense_forward(m, fin, fout, x.data(), w.data(), y_omp.data());
        },
        reps);
    row.ref_ms = time_ms(
        [&] {
            std::fill(y_ref.begin(), y_ref.end(), 0.0);
            kernels::ref::dense_forward(m, fin, fout, x.data(), w.data(), y_ref.data());
        },
        reps);
    row.identical =
        std::memcmp(y_omp.data(), y_ref.data(), y_omp.size() * sizeof(double)) == 0;
    return row;
}

}  // namespace

int main() {
    Rng rng(42);
    bool all_identical = true;

    // The two production shapes plus a larger stress shape.
    const ConvGeom case1 = kernels::conv_geometry(32, 3, 3, 4, 3, 3, 64, 1, 1,
                                                  kernels::Pad::same);
    const ConvGeom case2 = kernels::conv_geometry(8, 12, 18, 16, 12, 18, 64, 1, 1,
                                                  kernels::Pad::same);
    const ConvGeom big = kernels::conv_geometry(4, 32, 32, 32, 5, 5, 64, 1, 1,
                                                kernels::Pad::same);

    std::vector<Row> rows;
    rows.push_back(bench_conv("conv2d 32x(3x3x4) k3x3 c64", case1, 50, rng));
    rows.push_back(bench_conv("conv2d 8x(12x18x16) k12x18 c64", case2, 5, rng));
    rows.push_back(bench_conv("conv2d 4x(32x32x32) k5x5 c64", big, 3, rng));
    rows.push_back(bench_dense("dense 64x4096->1024", 64, 4096, 1024, 5, rng));
    rows.push_back(bench_dense("dense 256x1024->512", 256, 1024, 512, 10, rng));

    for (const Row& r : rows) {
        print_row(r);
        all_identical = all_identical && r.identical;
    }
    if (!all_identical) {
        std::cout << "FAIL: omp and reference outputs differ\n";
        return 1;
    }
    std::cout << "all outputs bit-identical across omp and reference paths\n";
    return 0;
}
