#pragma once

#include <functional>
#include <string>
#include <vector>

#include "spinterp/common.hpp"
#include "spinterp/nn/graph.hpp"

namespace spinterp::testing {

nn::Tensor random_tensor(const nn::Shape& shape, Rng& rng, double scale = 1.0);

/// Builds the function under test from input variables. Non-scalar outputs are
/// reduced with a fixed random projection before differentiation.
using GraphFn = std::function<nn::Var(nn::Graph&, const std::vector<nn::Var>&)>;

struct GradCheck {
    double rel_error = 0;  // max |analytic - numeric| / max(max |numeric|, 1e-8)
    int checked = 0;       // perturbed entries
};

/// Central differences over every input entry and every entry of `store`
/// (or `param_samples` random entries of it when > 0).
GradCheck gradcheck(const GraphFn& f, std::vector<nn::Tensor> inputs, nn::ParameterStore* store = nullptr,
                    std::uint64_t seed = 1, double h = 1e-6, int param_samples = 0);

/// One named gradient case; each call runs one randomized trial.
struct GradCase {
    std::string name;
    double tolerance;
    std::function<GradCheck(std::uint64_t seed)> trial;
};

/// Every graph op and layer in isolation (tolerance 1e-5), and the full model
/// loss in each encoder mode and numerical head (tolerance 1e-4).
std::vector<GradCase> gradient_suite();

}  // namespace spinterp::testing
