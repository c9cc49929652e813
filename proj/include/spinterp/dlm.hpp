#pragma once

#include <span>
#include <vector>

#include "spinterp/common.hpp"
#include "spinterp/preset_schema.hpp"

namespace spinterp::dlm {

inline constexpr double kMinScale = 1e-3;
inline constexpr double kProbFloor = 1e-12;

/// Discretized logistic mixture. log_scales are actual log s_i; the s_min
/// floor is applied when network outputs are mapped to parameters
/// (see from_head).
struct DlmParams {
    std::vector<double> logits;
    std::vector<double> means;
    std::vector<double> log_scales;

    int components() const { return static_cast<int>(logits.size()); }
    std::vector<double> weights() const;  // softmax(logits)
};

/// Logistic CDF.
double sigmoid(double x);

/// Probability mass of one bin. The lowest and highest bins carry the open tails.
double bin_prob(const DlmParams& params, const QuantGrid& grid, int bin);

/// log bin_prob at an on-grid value, floored at log(kProbFloor).
double log_prob(const DlmParams& params, const QuantGrid& grid, double value);

std::vector<double> pmf(const DlmParams& params, const QuantGrid& grid);

/// Index of the most probable bin; near-ties (relative 1e-12) resolve to the lower index.
int mode_index(const DlmParams& params, const QuantGrid& grid);
double mode(const DlmParams& params, const QuantGrid& grid);

double sample(const DlmParams& params, const QuantGrid& grid, Rng& rng);

// Network head layout: [logits(K) | means(K) | raw log-scales(K)].

/// log s = log s_min + softplus(raw - log s_min): smooth, never below log s_min.
double floored_log_scale(double raw);

DlmParams from_head(std::span<const double> head, int components);

/// Head-space log-likelihood of bin `bin`. If grad is non-empty (size 3K) it
/// receives d log P / d head.
double head_log_prob(std::span<const double> head, int components, const QuantGrid& grid, int bin,
                     std::span<double> grad = {});

/// Gradient of log_prob with respect to (logits, means, log_scales), packed like a head.
double log_prob_with_grad(const DlmParams& params, const QuantGrid& grid, int bin, std::span<double> grad);

}  // namespace spinterp::dlm
