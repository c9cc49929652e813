#include <catch_amalgamated.hpp>

#include <omp.h>

#include "spinterp/common.hpp"
#include "spinterp/nn/kernels.hpp"

using namespace spinterp;
using namespace spinterp::nn::kernels;
using Catch::Approx;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

// Textbook triple loop with explicit transposition.
std::vector<double> naive_matmul(const std::vector<double>& a, const std::vector<double>& b, const MatmulShape& s) {
    std::vector<double> c(static_cast<std::size_t>(s.m) * s.n);
    for (int i = 0; i < s.m; ++i)
        for (int j = 0; j < s.n; ++j) {
            double acc = 0;
            for (int p = 0; p < s.k; ++p) {
                const double av = s.trans_a ? a[p * s.m + i] : a[i * s.k + p];
                const double bv = s.trans_b ? b[j * s.k + p] : b[p * s.n + j];
                acc += av * bv;
            }
            c[i * s.n + j] = acc;
        }
    return c;
}

double naive_conv(const std::vector<double>& x, const std::vector<double>& w, const std::vector<double>& bias,
                  const ConvShape& s, int b, int o, int oy, int ox) {
    double acc = bias[o];
    for (int c = 0; c < s.in_ch; ++c)
        for (int ky = 0; ky < s.kernel; ++ky)
            for (int kx = 0; kx < s.kernel; ++kx) {
                const int iy = oy * s.stride - s.pad + ky, ix = ox * s.stride - s.pad + kx;
                if (iy < 0 || ix < 0 || iy >= s.in_h || ix >= s.in_w) continue;
                acc += x[((b * s.in_ch + c) * s.in_h + iy) * s.in_w + ix] * w[((o * s.in_ch + c) * s.kernel + ky) * s.kernel + kx];
            }
    return acc;
}

}  // namespace

TEST_CASE("matmul matches the naive oracle and serial equals parallel bitwise") {
    Rng rng(1);
    for (int ta = 0; ta < 2; ++ta)
        for (int tb = 0; tb < 2; ++tb)
            for (int acc = 0; acc < 2; ++acc) {
                MatmulShape s{13, 29, 7, ta == 1, tb == 1, acc == 1};
                const auto a = random_vec(13 * 29, rng), b = random_vec(29 * 7, rng);
                const auto init = random_vec(13 * 7, rng);
                auto c1 = init, c2 = init;
                serial::matmul(a, b, c1, s);
                parallel::matmul(a, b, c2, s);
                CHECK(c1 == c2);
                const auto ref = naive_matmul(a, b, s);
                for (std::size_t i = 0; i < ref.size(); ++i)
                    REQUIRE(c1[i] == Approx(ref[i] + (acc ? init[i] : 0.0)).margin(1e-12));
            }
}

TEST_CASE("conv2d kernels: oracle, adjoint identity, serial equals parallel") {
    Rng rng(2);
    for (int stride : {1, 2}) {
        ConvShape s{2, 3, 9, 8, 4, 3, stride, 1};
        const auto x = random_vec(2 * 3 * 9 * 8, rng);
        const auto w = random_vec(4 * 3 * 9, rng);
        const auto bias = random_vec(4, rng);
        const std::size_t out_n = static_cast<std::size_t>(2) * 4 * s.out_h() * s.out_w();
        std::vector<double> o1(out_n), o2(out_n);
        serial::conv2d_forward(x, w, bias, o1, s);
        parallel::conv2d_forward(x, w, bias, o2, s);
        CHECK(o1 == o2);
        for (int b = 0; b < 2; ++b)
            for (int o = 0; o < 4; ++o)
                for (int oy = 0; oy < s.out_h(); ++oy)
                    for (int ox = 0; ox < s.out_w(); ++ox)
                        REQUIRE(o1[((b * 4 + o) * s.out_h() + oy) * s.out_w() + ox] ==
                                Approx(naive_conv(x, w, bias, s, b, o, oy, ox)).margin(1e-12));

        // <conv(x), g> = <x, conv^T(g)>, and likewise for the weights.
        const auto g = random_vec(out_n, rng);
        std::vector<double> gi1(x.size()), gi2(x.size()), gw1(w.size()), gw2(w.size()), gb1(4), gb2(4);
        serial::conv2d_backward_input(g, w, gi1, s);
        parallel::conv2d_backward_input(g, w, gi2, s);
        serial::conv2d_backward_weight(g, x, gw1, gb1, s);
        parallel::conv2d_backward_weight(g, x, gw2, gb2, s);
        CHECK(gi1 == gi2);
        CHECK(gw1 == gw2);
        CHECK(gb1 == gb2);
        std::vector<double> zero_bias(4, 0.0), lin(out_n);
        serial::conv2d_forward(x, w, zero_bias, lin, s);
        double lhs = 0, rhs_x = 0, rhs_w = 0;
        for (std::size_t i = 0; i < out_n; ++i) lhs += lin[i] * g[i];
        for (std::size_t i = 0; i < x.size(); ++i) rhs_x += x[i] * gi1[i];
        for (std::size_t i = 0; i < w.size(); ++i) rhs_w += w[i] * gw1[i];
        CHECK(lhs == Approx(rhs_x).epsilon(1e-12));
        CHECK(lhs == Approx(rhs_w).epsilon(1e-12));
    }
}

TEST_CASE("parallel results do not depend on the thread count") {
    Rng rng(3);
    MatmulShape s{40, 33, 21, false, true, false};
    const auto a = random_vec(40 * 33, rng), b = random_vec(21 * 33, rng);
    std::vector<double> c1(40 * 21), c4(40 * 21);
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    parallel::matmul(a, b, c1, s);
    omp_set_num_threads(4);
    parallel::matmul(a, b, c4, s);
    omp_set_num_threads(saved);
    CHECK(c1 == c4);
}
