#pragma once

#include <vector>

#include "spinterp/nn/graph.hpp"

namespace spinterp::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moments, one tensor per store parameter in store order.
struct AdamState {
    long long step = 0;
    std::vector<Tensor> m;
    std::vector<Tensor> v;

    static AdamState zeros_like(const ParameterStore& store);
};

/// One bias-corrected Adam update using the gradients held in the store.
void adam_step(ParameterStore& store, AdamState& state, const AdamConfig& cfg);

}  // namespace spinterp::nn
