#include "spinterp/nn/optim.hpp"

#include <cmath>

namespace spinterp::nn {

AdamState AdamState::zeros_like(const ParameterStore& store) {
    AdamState s;
    for (std::size_t i = 0; i < store.size(); ++i) {
        s.m.emplace_back(store[i].value.shape);
        s.v.emplace_back(store[i].value.shape);
    }
    return s;
}

void adam_step(ParameterStore& store, AdamState& state, const AdamConfig& cfg) {
    if (state.m.size() != store.size() || state.v.size() != store.size())
        throw std::invalid_argument("adam: state does not match parameter store");
    ++state.step;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (std::size_t p = 0; p < store.size(); ++p) {
        auto& w = store[p].value.data;
        const auto& g = store[p].grad.data;
        auto& m = state.m[p].data;
        auto& v = state.v[p].data;
        if (m.size() != w.size() || v.size() != w.size())
            throw std::invalid_argument("adam: moment shape mismatch for '" + store[p].name + "'");
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double mh = m[i] / c1;
            const double vh = v[i] / c2;
            w[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
        }
    }
}

}  // namespace spinterp::nn
