#include "spinterp/nn/kernels.hpp"

#include <algorithm>
#include <stdexcept>
#include <vector>

namespace spinterp::nn::kernels {

namespace {

void check_matmul(std::size_t a, std::size_t b, std::size_t c, const MatmulShape& s) {
    const auto m = static_cast<std::size_t>(s.m), k = static_cast<std::size_t>(s.k), n = static_cast<std::size_t>(s.n);
    if (a != m * k || b != k * n || c != m * n) throw std::invalid_argument("matmul: buffer sizes do not match shape");
}

void check_conv(std::size_t x, std::size_t w, std::size_t out, const ConvShape& s) {
    const auto in = static_cast<std::size_t>(s.batch) * s.in_ch * s.in_h * s.in_w;
    const auto wt = static_cast<std::size_t>(s.out_ch) * s.in_ch * s.kernel * s.kernel;
    const auto o = static_cast<std::size_t>(s.batch) * s.out_ch * s.out_h() * s.out_w();
    if (x != in || w != wt || out != o) throw std::invalid_argument("conv2d: buffer sizes do not match shape");
}

}  // namespace

// ---------------------------------------------------------------------------
// Serial reference
// ---------------------------------------------------------------------------

namespace serial {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, const MatmulShape& s) {
    check_matmul(a.size(), b.size(), c.size(), s);
    for (int i = 0; i < s.m; ++i) {
        for (int j = 0; j < s.n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < s.k; ++p) {
                const double av = s.trans_a ? a[static_cast<std::size_t>(p) * s.m + i] : a[static_cast<std::size_t>(i) * s.k + p];
                const double bv = s.trans_b ? b[static_cast<std::size_t>(j) * s.k + p] : b[static_cast<std::size_t>(p) * s.n + j];
                acc += av * bv;
            }
            double& dst = c[static_cast<std::size_t>(i) * s.n + j];
            dst = s.accumulate ? dst + acc : acc;
        }
    }
}

void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                    std::span<double> out, const ConvShape& s) {
    check_conv(x.size(), w.size(), out.size(), s);
    const int oh = s.out_h(), ow = s.out_w();
    for (int b = 0; b < s.batch; ++b)
        for (int o = 0; o < s.out_ch; ++o)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = bias[o];
                    for (int c = 0; c < s.in_ch; ++c)
                        for (int ky = 0; ky < s.kernel; ++ky) {
                            const int iy = oy * s.stride - s.pad + ky;
                            if (iy < 0 || iy >= s.in_h) continue;
                            for (int kx = 0; kx < s.kernel; ++kx) {
                                const int ix = ox * s.stride - s.pad + kx;
                                if (ix < 0 || ix >= s.in_w) continue;
                                acc += w[((static_cast<std::size_t>(o) * s.in_ch + c) * s.kernel + ky) * s.kernel + kx] *
                                       x[((static_cast<std::size_t>(b) * s.in_ch + c) * s.in_h + iy) * s.in_w + ix];
                            }
                        }
                    out[((static_cast<std::size_t>(b) * s.out_ch + o) * oh + oy) * ow + ox] = acc;
                }
}

void conv2d_backward_input(std::span<const double> grad_out, std::span<const double> w, std::span<double> grad_in,
                           const ConvShape& s) {
    check_conv(grad_in.size(), w.size(), grad_out.size(), s);
    const int oh = s.out_h(), ow = s.out_w();
    for (int b = 0; b < s.batch; ++b)
        for (int c = 0; c < s.in_ch; ++c)
            for (int iy = 0; iy < s.in_h; ++iy)
                for (int ix = 0; ix < s.in_w; ++ix) {
                    double acc = 0.0;
                    for (int o = 0; o < s.out_ch; ++o)
                        for (int ky = 0; ky < s.kernel; ++ky) {
                            const int ny = iy + s.pad - ky;
                            if (ny < 0 || ny % s.stride != 0 || ny / s.stride >= oh) continue;
                            const int oy = ny / s.stride;
                            for (int kx = 0; kx < s.kernel; ++kx) {
                                const int nx = ix + s.pad - kx;
                                if (nx < 0 || nx % s.stride != 0 || nx / s.stride >= ow) continue;
                                const int ox = nx / s.stride;
                                acc += w[((static_cast<std::size_t>(o) * s.in_ch + c) * s.kernel + ky) * s.kernel + kx] *
                                       grad_out[((static_cast<std::size_t>(b) * s.out_ch + o) * oh + oy) * ow + ox];
                            }
                        }
                    double& dst = grad_in[((static_cast<std::size_t>(b) * s.in_ch + c) * s.in_h + iy) * s.in_w + ix];
                    dst = dst + acc;
                }
}

void conv2d_backward_weight(std::span<const double> grad_out, std::span<const double> x, std::span<double> grad_w,
                            std::span<double> grad_b, const ConvShape& s) {
    check_conv(x.size(), grad_w.size(), grad_out.size(), s);
    const int oh = s.out_h(), ow = s.out_w();
    for (int o = 0; o < s.out_ch; ++o) {
        for (int c = 0; c < s.in_ch; ++c)
            for (int ky = 0; ky < s.kernel; ++ky)
                for (int kx = 0; kx < s.kernel; ++kx) {
                    double acc = 0.0;
                    for (int b = 0; b < s.batch; ++b)
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * s.stride - s.pad + ky;
                            if (iy < 0 || iy >= s.in_h) continue;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * s.stride - s.pad + kx;
                                if (ix < 0 || ix >= s.in_w) continue;
                                acc += grad_out[((static_cast<std::size_t>(b) * s.out_ch + o) * oh + oy) * ow + ox] *
                                       x[((static_cast<std::size_t>(b) * s.in_ch + c) * s.in_h + iy) * s.in_w + ix];
                            }
                        }
                    double& dst = grad_w[((static_cast<std::size_t>(o) * s.in_ch + c) * s.kernel + ky) * s.kernel + kx];
                    dst = dst + acc;
                }
        double acc = 0.0;
        for (int b = 0; b < s.batch; ++b)
            for (int p = 0; p < oh * ow; ++p) acc += grad_out[(static_cast<std::size_t>(b) * s.out_ch + o) * oh * ow + p];
        grad_b[o] = grad_b[o] + acc;
    }
}

}  // namespace serial

// ---------------------------------------------------------------------------
// OpenMP versions. Loops are reordered for contiguous inner access, but each
// output element still sums its terms in the serial order.
// ---------------------------------------------------------------------------

namespace parallel {

void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, const MatmulShape& s) {
    check_matmul(a.size(), b.size(), c.size(), s);
    const int m = s.m, k = s.k, n = s.n;
    if (s.trans_b) {
        // Dot products against contiguous rows of b.
#pragma omp parallel for schedule(static)
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < n; ++j) {
                const double* brow = b.data() + static_cast<std::size_t>(j) * k;
                double acc = 0.0;
                if (s.trans_a) {
                    for (int p = 0; p < k; ++p) acc += a[static_cast<std::size_t>(p) * m + i] * brow[p];
                } else {
                    const double* arow = a.data() + static_cast<std::size_t>(i) * k;
                    for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                }
                double& dst = c[static_cast<std::size_t>(i) * n + j];
                dst = s.accumulate ? dst + acc : acc;
            }
        }
        return;
    }
#pragma omp parallel
    {
        std::vector<double> row(static_cast<std::size_t>(n));
#pragma omp for schedule(static)
        for (int i = 0; i < m; ++i) {
            std::fill(row.begin(), row.end(), 0.0);
            for (int p = 0; p < k; ++p) {
                const double av = s.trans_a ? a[static_cast<std::size_t>(p) * m + i] : a[static_cast<std::size_t>(i) * k + p];
                const double* brow = b.data() + static_cast<std::size_t>(p) * n;
                for (int j = 0; j < n; ++j) row[j] += av * brow[j];
            }
            double* dst = c.data() + static_cast<std::size_t>(i) * n;
            if (s.accumulate)
                for (int j = 0; j < n; ++j) dst[j] = dst[j] + row[j];
            else
                std::copy(row.begin(), row.end(), dst);
        }
    }
}

void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                    std::span<double> out, const ConvShape& s) {
    check_conv(x.size(), w.size(), out.size(), s);
    const int oh = s.out_h(), ow = s.out_w();
    const int K = s.kernel;
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<std::size_t>(ow));
#pragma omp for schedule(static)
        for (int bo = 0; bo < s.batch * s.out_ch; ++bo) {
            const int b = bo / s.out_ch, o = bo % s.out_ch;
            for (int oy = 0; oy < oh; ++oy) {
                std::fill(acc.begin(), acc.end(), bias[o]);
                for (int c = 0; c < s.in_ch; ++c) {
                    const double* xplane = x.data() + (static_cast<std::size_t>(b) * s.in_ch + c) * s.in_h * s.in_w;
                    const double* wk = w.data() + (static_cast<std::size_t>(o) * s.in_ch + c) * K * K;
                    for (int ky = 0; ky < K; ++ky) {
                        const int iy = oy * s.stride - s.pad + ky;
                        if (iy < 0 || iy >= s.in_h) continue;
                        const double* xrow = xplane + static_cast<std::size_t>(iy) * s.in_w;
                        for (int kx = 0; kx < K; ++kx) {
                            const double wv = wk[ky * K + kx];
                            // ox range with 0 <= ox*stride - pad + kx < in_w
                            int lo = 0;
                            while (lo < ow && lo * s.stride - s.pad + kx < 0) ++lo;
                            int hi = ow;
                            while (hi > lo && (hi - 1) * s.stride - s.pad + kx >= s.in_w) --hi;
                            if (s.stride == 1) {
                                const int shift = kx - s.pad;
                                for (int ox = lo; ox < hi; ++ox) acc[ox] += wv * xrow[ox + shift];
                            } else {
                                for (int ox = lo; ox < hi; ++ox) acc[ox] += wv * xrow[ox * s.stride - s.pad + kx];
                            }
                        }
                    }
                }
                std::copy(acc.begin(), acc.end(), out.data() + ((static_cast<std::size_t>(b) * s.out_ch + o) * oh + oy) * ow);
            }
        }
    }
}

void conv2d_backward_input(std::span<const double> grad_out, std::span<const double> w, std::span<double> grad_in,
                           const ConvShape& s) {
    check_conv(grad_in.size(), w.size(), grad_out.size(), s);
    const int oh = s.out_h(), ow = s.out_w();
    const int K = s.kernel;
#pragma omp parallel
    {
        std::vector<double> acc(static_cast<std::size_t>(s.in_w));
#pragma omp for schedule(static)
        for (int bc = 0; bc < s.batch * s.in_ch; ++bc) {
            const int b = bc / s.in_ch, c = bc % s.in_ch;
            for (int iy = 0; iy < s.in_h; ++iy) {
                std::fill(acc.begin(), acc.end(), 0.0);
                for (int o = 0; o < s.out_ch; ++o) {
                    const double* gplane = grad_out.data() + (static_cast<std::size_t>(b) * s.out_ch + o) * oh * ow;
                    const double* wk = w.data() + (static_cast<std::size_t>(o) * s.in_ch + c) * K * K;
                    for (int ky = 0; ky < K; ++ky) {
                        const int ny = iy + s.pad - ky;
                        if (ny < 0 || ny % s.stride != 0 || ny / s.stride >= oh) continue;
                        const double* grow = gplane + static_cast<std::size_t>(ny / s.stride) * ow;
                        for (int kx = 0; kx < K; ++kx) {
                            const double wv = wk[ky * K + kx];
                            if (s.stride == 1) {
                                // ox = ix + pad - kx must lie in [0, ow)
                                const int lo = std::max(0, kx - s.pad);
                                const int hi = std::min(s.in_w, ow + kx - s.pad);
                                const int shift = s.pad - kx;
                                for (int ix = lo; ix < hi; ++ix) acc[ix] += wv * grow[ix + shift];
                            } else {
                                // each ix receives at most one term per (o, ky, kx)
                                for (int ox = 0; ox < ow; ++ox) {
                                    const int ix = ox * s.stride - s.pad + kx;
                                    if (ix >= 0 && ix < s.in_w) acc[ix] += wv * grow[ox];
                                }
                            }
                        }
                    }
                }
                double* dst = grad_in.data() + ((static_cast<std::size_t>(b) * s.in_ch + c) * s.in_h + iy) * s.in_w;
                for (int ix = 0; ix < s.in_w; ++ix) dst[ix] = dst[ix] + acc[ix];
            }
        }
    }
}

void conv2d_backward_weight(std::span<const double> grad_out, std::span<const double> x, std::span<double> grad_w,
                            std::span<double> grad_b, const ConvShape& s) {
    check_conv(x.size(), grad_w.size(), grad_out.size(), s);
    const int oh = s.out_h(), ow = s.out_w();
    const int K = s.kernel;
    constexpr int kLanes = 4;  // independent accumulators (channels) per pass
#pragma omp parallel for schedule(static)
    for (int o = 0; o < s.out_ch; ++o) {
        for (int c0 = 0; c0 < s.in_ch; c0 += kLanes) {
            const int lanes = std::min(kLanes, s.in_ch - c0);
            for (int ky = 0; ky < K; ++ky)
                for (int kx = 0; kx < K; ++kx) {
                    int lo = 0;
                    while (lo < ow && lo * s.stride - s.pad + kx < 0) ++lo;
                    int hi = ow;
                    while (hi > lo && (hi - 1) * s.stride - s.pad + kx >= s.in_w) --hi;
                    double acc[kLanes] = {0.0, 0.0, 0.0, 0.0};
                    for (int b = 0; b < s.batch; ++b) {
                        const double* gplane = grad_out.data() + (static_cast<std::size_t>(b) * s.out_ch + o) * oh * ow;
                        const std::size_t plane = static_cast<std::size_t>(s.in_h) * s.in_w;
                        const double* xbase = x.data() + (static_cast<std::size_t>(b) * s.in_ch + c0) * plane;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * s.stride - s.pad + ky;
                            if (iy < 0 || iy >= s.in_h) continue;
                            const double* grow = gplane + static_cast<std::size_t>(oy) * ow;
                            const double* xrow = xbase + static_cast<std::size_t>(iy) * s.in_w;
                            if (lanes == kLanes) {
                                for (int ox = lo; ox < hi; ++ox) {
                                    const double gv = grow[ox];
                                    const auto xi = static_cast<std::size_t>(ox * s.stride - s.pad + kx);
                                    acc[0] += gv * xrow[xi];
                                    acc[1] += gv * xrow[xi + plane];
                                    acc[2] += gv * xrow[xi + 2 * plane];
                                    acc[3] += gv * xrow[xi + 3 * plane];
                                }
                            } else {
                                for (int ox = lo; ox < hi; ++ox)
                                    for (int l = 0; l < lanes; ++l)
                                        acc[l] += grow[ox] * xrow[static_cast<std::size_t>(ox * s.stride - s.pad + kx) + l * plane];
                            }
                        }
                    }
                    for (int l = 0; l < lanes; ++l) {
                        double& dst = grad_w[((static_cast<std::size_t>(o) * s.in_ch + c0 + l) * K + ky) * K + kx];
                        dst = dst + acc[l];
                    }
                }
        }
        double acc = 0.0;
        for (int b = 0; b < s.batch; ++b) {
            const double* gplane = grad_out.data() + (static_cast<std::size_t>(b) * s.out_ch + o) * oh * ow;
            for (int p = 0; p < oh * ow; ++p) acc += gplane[p];
        }
        grad_b[o] = grad_b[o] + acc;
    }
}

}  // namespace parallel

}  // namespace spinterp::nn::kernels
