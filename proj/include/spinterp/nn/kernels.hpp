#pragma once

#include <span>

namespace spinterp::nn::kernels {

// Two implementations of every hot loop: `serial` is the plain reference,
// `parallel` is the OpenMP version used by the graph ops. Both accumulate each
// output element over the same index order, so results are bit-identical and
// independent of the thread count.

struct MatmulShape {
    int m = 0, k = 0, n = 0;
    bool trans_a = false;  // a stored as [k, m]
    bool trans_b = false;  // b stored as [n, k]
    bool accumulate = false;  // c += op(a) op(b) instead of c = ...
};

struct ConvShape {
    int batch = 0, in_ch = 0, in_h = 0, in_w = 0;
    int out_ch = 0, kernel = 3, stride = 1, pad = 1;

    int out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
    int out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
};

namespace serial {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, const MatmulShape& s);
void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                    std::span<double> out, const ConvShape& s);
/// grad_in += d out / d x applied to grad_out.
void conv2d_backward_input(std::span<const double> grad_out, std::span<const double> w, std::span<double> grad_in,
                           const ConvShape& s);
/// grad_w += ..., grad_b += ...
void conv2d_backward_weight(std::span<const double> grad_out, std::span<const double> x, std::span<double> grad_w,
                            std::span<double> grad_b, const ConvShape& s);
}  // namespace serial

namespace parallel {
void matmul(std::span<const double> a, std::span<const double> b, std::span<double> c, const MatmulShape& s);
void conv2d_forward(std::span<const double> x, std::span<const double> w, std::span<const double> bias,
                    std::span<double> out, const ConvShape& s);
void conv2d_backward_input(std::span<const double> grad_out, std::span<const double> w, std::span<double> grad_in,
                           const ConvShape& s);
void conv2d_backward_weight(std::span<const double> grad_out, std::span<const double> x, std::span<double> grad_w,
                            std::span<double> grad_b, const ConvShape& s);
}  // namespace parallel

}  // namespace spinterp::nn::kernels
