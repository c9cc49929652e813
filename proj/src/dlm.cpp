#include "spinterp/dlm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace spinterp::dlm {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Logistic density sigma(x) * sigma(-x); zero at +-inf.
double logistic_pdf(double x) {
    if (std::isinf(x)) return 0.0;
    const double e = std::exp(-std::abs(x));
    return e / ((1.0 + e) * (1.0 + e));
}

// x * pdf(x), with the limit 0 at +-inf.
double x_pdf(double x) { return std::isinf(x) ? 0.0 : x * logistic_pdf(x); }

// sigma(a) - sigma(b) for a > b without cancellation on the upper tail.
double cdf_diff(double a, double b) {
    if (b > 0.0) return sigmoid(-b) - sigmoid(-a);
    return sigmoid(a) - sigmoid(b);
}

struct BinEdges {
    double lo;  // -inf for the lowest bin
    double hi;  // +inf for the highest bin
};

BinEdges edges(const QuantGrid& grid, int bin) {
    if (bin < 0 || bin >= grid.steps())
        throw std::out_of_range("dlm: bin " + std::to_string(bin) + " outside [0, " + std::to_string(grid.steps()) + ")");
    const double v = grid.value(bin);
    const double half = 0.5 * grid.bin_width();
    return {bin == 0 ? -kInf : v - half, bin == grid.steps() - 1 ? kInf : v + half};
}

void check_shape(const DlmParams& p) {
    if (p.logits.empty() || p.means.size() != p.logits.size() || p.log_scales.size() != p.logits.size())
        throw std::invalid_argument("dlm: logits, means and log_scales must have equal non-zero length");
}

}  // namespace

double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

std::vector<double> DlmParams::weights() const {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> w(logits.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) sum += (w[i] = std::exp(logits[i] - mx));
    for (double& x : w) x /= sum;
    return w;
}

double bin_prob(const DlmParams& params, const QuantGrid& grid, int bin) {
    check_shape(params);
    const auto [lo, hi] = edges(grid, bin);
    const auto w = params.weights();
    double p = 0.0;
    for (int i = 0; i < params.components(); ++i) {
        const double inv_s = std::exp(-params.log_scales[i]);
        const double a = hi == kInf ? kInf : (hi - params.means[i]) * inv_s;
        const double b = lo == -kInf ? -kInf : (lo - params.means[i]) * inv_s;
        p += w[i] * cdf_diff(a, b);
    }
    return p;
}

double log_prob_with_grad(const DlmParams& params, const QuantGrid& grid, int bin, std::span<double> grad) {
    check_shape(params);
    const int K = params.components();
    if (!grad.empty() && static_cast<int>(grad.size()) != 3 * K) throw std::invalid_argument("dlm: grad must have size 3K");
    const auto [lo, hi] = edges(grid, bin);
    const auto w = params.weights();

    std::vector<double> comp(K), dmean(K), dlogs(K);
    double p = 0.0;
    for (int i = 0; i < K; ++i) {
        const double inv_s = std::exp(-params.log_scales[i]);
        const double a = hi == kInf ? kInf : (hi - params.means[i]) * inv_s;
        const double b = lo == -kInf ? -kInf : (lo - params.means[i]) * inv_s;
        comp[i] = cdf_diff(a, b);
        dmean[i] = -(logistic_pdf(a) - logistic_pdf(b)) * inv_s;
        dlogs[i] = -(x_pdf(a) - x_pdf(b));
        p += w[i] * comp[i];
    }
    if (!(p > kProbFloor)) {
        if (!grad.empty()) std::fill(grad.begin(), grad.end(), 0.0);
        return std::log(kProbFloor);
    }
    if (!grad.empty()) {
        for (int i = 0; i < K; ++i) {
            grad[i] = w[i] * (comp[i] - p) / p;
            grad[K + i] = w[i] * dmean[i] / p;
            grad[2 * K + i] = w[i] * dlogs[i] / p;
        }
    }
    return std::log(p);
}

double log_prob(const DlmParams& params, const QuantGrid& grid, double value) {
    if (!grid.on_grid(value)) throw std::invalid_argument("dlm::log_prob: value " + format_sig(value, 17) + " is off-grid");
    return log_prob_with_grad(params, grid, grid.nearest_index(value), {});
}

std::vector<double> pmf(const DlmParams& params, const QuantGrid& grid) {
    std::vector<double> out(static_cast<std::size_t>(grid.steps()));
    for (int q = 0; q < grid.steps(); ++q) out[q] = bin_prob(params, grid, q);
    return out;
}

int mode_index(const DlmParams& params, const QuantGrid& grid) {
    const auto p = pmf(params, grid);
    const double best = *std::max_element(p.begin(), p.end());
    for (int q = 0; q < grid.steps(); ++q)
        if (p[q] >= best * (1.0 - 1e-12)) return q;
    return 0;
}

double mode(const DlmParams& params, const QuantGrid& grid) { return grid.value(mode_index(params, grid)); }

double sample(const DlmParams& params, const QuantGrid& grid, Rng& rng) {
    check_shape(params);
    const auto w = params.weights();
    double u = rng.uniform();
    int comp = params.components() - 1;
    for (int i = 0; i < params.components(); ++i) {
        if (u < w[i]) {
            comp = i;
            break;
        }
        u -= w[i];
    }
    const double v = rng.uniform_open();
    const double x = params.means[comp] + std::exp(params.log_scales[comp]) * (std::log(v) - std::log1p(-v));
    return quantize(std::clamp(x, 0.0, 1.0), grid);
}

double floored_log_scale(double raw) {
    static const double log_min = std::log(kMinScale);
    const double x = raw - log_min;
    // softplus(x) = log(1 + e^x), evaluated stably.
    const double softplus = x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    return log_min + softplus;
}

DlmParams from_head(std::span<const double> head, int components) {
    if (static_cast<int>(head.size()) != 3 * components) throw std::invalid_argument("dlm::from_head: expected 3K values");
    DlmParams p;
    p.logits.assign(head.begin(), head.begin() + components);
    p.means.assign(head.begin() + components, head.begin() + 2 * components);
    p.log_scales.resize(components);
    for (int i = 0; i < components; ++i) p.log_scales[i] = floored_log_scale(head[2 * components + i]);
    return p;
}

double head_log_prob(std::span<const double> head, int components, const QuantGrid& grid, int bin, std::span<double> grad) {
    const auto params = from_head(head, components);
    const double lp = log_prob_with_grad(params, grid, bin, grad);
    if (!grad.empty()) {
        static const double log_min = std::log(kMinScale);
        for (int i = 0; i < components; ++i) grad[2 * components + i] *= sigmoid(head[2 * components + i] - log_min);
    }
    return lp;
}

}  // namespace spinterp::dlm
