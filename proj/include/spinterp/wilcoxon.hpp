#pragma once

#include <span>

namespace spinterp {

enum class WilcoxonMode { Auto, Exact, Normal };

struct WilcoxonResult {
    int n = 0;            // non-zero differences
    double w_plus = 0;    // sum of ranks of positive differences
    double p = 1.0;       // P(W+ <= observed) under H0
    bool exact = false;
};

/// One-sided signed-rank test of "candidate < reference" on paired differences
/// candidate - reference. Zeros are dropped, ties get average ranks. Auto uses
/// the exact null distribution up to n = 20 and the tie- and
/// continuity-corrected normal approximation above. Throws ValidationError
/// when no difference is non-zero.
WilcoxonResult wilcoxon_one_sided(std::span<const double> differences, WilcoxonMode mode = WilcoxonMode::Auto);

inline constexpr int kWilcoxonExactMax = 20;

}  // namespace spinterp
