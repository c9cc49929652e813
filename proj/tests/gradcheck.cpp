#include "gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "spinterp/model.hpp"
#include "spinterp/nn/layers.hpp"

namespace spinterp::testing {

using nn::Graph;
using nn::Shape;
using nn::Tensor;
using nn::Var;

Tensor random_tensor(const Shape& shape, Rng& rng, double scale) {
    Tensor t(shape);
    for (double& v : t.data) v = scale * rng.normal();
    return t;
}

namespace {

struct Slot {
    double* value;
    double analytic;
    int group;
};

}  // namespace

GradCheck gradcheck(const GraphFn& f, std::vector<Tensor> inputs, nn::ParameterStore* store, std::uint64_t seed, double h,
                    int param_samples) {
    Rng rng(seed);
    Tensor projection;
    std::vector<Tensor> input_grads;
    auto run = [&](bool with_grad) {
        Graph g;
        std::vector<Var> vars;
        for (const auto& t : inputs) vars.push_back(g.input(t));
        Var out = f(g, vars);
        if (g.value(out).size() != 1) {
            if (projection.shape != g.shape(out)) {
                Rng prng(mix_seed(seed, 77));
                projection = random_tensor(g.shape(out), prng);
            }
            out = g.sum(g.mul(out, g.input(projection)));
        }
        if (with_grad) {
            if (store) store->zero_grad();
            g.backward(out);
            input_grads.clear();
            for (Var v : vars) input_grads.push_back(g.grad(v));
        }
        return g.value(out)[0];
    };
    run(true);

    std::vector<Slot> slots;
    int group = 0;
    for (std::size_t i = 0; i < inputs.size(); ++i, ++group)
        for (std::size_t j = 0; j < inputs[i].size(); ++j) slots.push_back({&inputs[i].data[j], input_grads[i].data[j], group});
    if (store) {
        if (param_samples > 0) {
            for (int s = 0; s < param_samples; ++s) {
                const auto pi = rng.below(store->size());
                auto& p = (*store)[pi];
                const std::size_t j = rng.below(p.value.size());
                slots.push_back({&p.value.data[j], p.grad.data[j], group + static_cast<int>(pi)});
            }
            group += static_cast<int>(store->size());
        } else {
            for (std::size_t pi = 0; pi < store->size(); ++pi, ++group) {
                auto& p = (*store)[pi];
                for (std::size_t j = 0; j < p.value.size(); ++j) slots.push_back({&p.value.data[j], p.grad.data[j], group});
            }
        }
    }

    std::vector<double> numeric(slots.size());
    for (std::size_t s = 0; s < slots.size(); ++s) {
        double& x = *slots[s].value;
        const double x0 = x;
        const double step = h * std::max(1.0, std::fabs(x0));
        x = x0 + step;
        const double fp = run(false);
        x = x0 - step;
        const double fm = run(false);
        x = x0;
        numeric[s] = (fp - fm) / (2 * step);
    }

    // Relative error per group, with the denominator floored at 1e-3 of the
    // largest gradient so groups that barely influence the output do not
    // dominate.
    double global = 1e-8;
    for (double v : numeric) global = std::max(global, std::fabs(v));
    std::vector<double> gmax(group + 1, 0.0), gerr(group + 1, 0.0);
    for (std::size_t s = 0; s < slots.size(); ++s) {
        const int gi = slots[s].group;
        gmax[gi] = std::max(gmax[gi], std::fabs(numeric[s]));
        gerr[gi] = std::max(gerr[gi], std::fabs(numeric[s] - slots[s].analytic));
    }
    GradCheck res;
    res.checked = static_cast<int>(slots.size());
    for (std::size_t gi = 0; gi < gmax.size(); ++gi)
        res.rel_error = std::max(res.rel_error, gerr[gi] / std::max(gmax[gi], 1e-3 * global));
    return res;
}

namespace {

constexpr double kLayerTol = 1e-5;
constexpr double kLossTol = 1e-4;

GradCase input_case(std::string name, std::vector<Shape> shapes, GraphFn f, double scale = 1.0) {
    return {name, kLayerTol, [shapes, f, scale](std::uint64_t seed) {
                Rng rng(seed);
                std::vector<Tensor> in;
                for (const auto& s : shapes) in.push_back(random_tensor(s, rng, scale));
                return gradcheck(f, in, nullptr, seed);
            }};
}

/// A layer with its own parameters: checks inputs and every parameter entry.
template <typename Make>
GradCase layer_case(std::string name, std::vector<Shape> shapes, Make make) {
    return {name, kLayerTol, [shapes, make](std::uint64_t seed) {
                Rng rng(seed);
                nn::ParameterStore store;
                GraphFn f = make(store, rng);
                for (std::size_t i = 0; i < store.size(); ++i)
                    for (double& v : store[i].value.data) v += 0.1 * rng.normal();
                std::vector<Tensor> in;
                for (const auto& s : shapes) in.push_back(random_tensor(s, rng));
                return gradcheck(f, in, &store, seed);
            }};
}

struct ModelFixture {
    std::vector<Preset> presets;
    std::vector<Spectrogram> specs;
};

const ModelFixture& model_fixture() {
    static const ModelFixture fx = [] {
        ModelFixture m;
        const auto& d = builtin_descriptor();
        for (int i = 0; i < 2; ++i) {
            m.presets.push_back(sample_random_preset(d, 4242 + i));
            m.specs.push_back(mel_spectrogram(render(d, m.presets.back())));
        }
        return m;
    }();
    return fx;
}

Batch fixture_batch() {
    const auto& fx = model_fixture();
    Batch b;
    for (std::size_t i = 0; i < fx.presets.size(); ++i) {
        b.u.push_back(&fx.presets[i]);
        b.x.push_back(&fx.specs[i]);
    }
    return b;
}

ModelConfig tiny_config() {
    ModelConfig c;
    c.latent_dim = 4;
    c.attention = {8, 2, 1, 16};
    c.decoder_layers = 1;
    c.mode = EncoderMode::PresetOnly;
    return c;
}

/// Checks the inputs, then every entry of the parameters whose names start
/// with one of the prefixes.
GradCheck prefixed_params(const GraphFn& f, const std::vector<Tensor>& inputs, nn::ParameterStore& store,
                          const std::vector<std::string>& prefixes, std::uint64_t seed) {
    GradCheck res;
    if (!inputs.empty()) res = gradcheck(f, inputs, nullptr, seed);
    std::vector<nn::Parameter*> params;
    for (std::size_t i = 0; i < store.size(); ++i)
        for (const auto& p : prefixes)
            if (store[i].name.rfind(p, 0) == 0) {
                params.push_back(&store[i]);
                break;
            }
    Rng prng(mix_seed(seed, 78));
    Tensor projection;
    auto eval = [&](bool grad) {
        Graph g;
        std::vector<Var> vars;
        for (const auto& t : inputs) vars.push_back(g.input(t));
        Var out = f(g, vars);
        if (g.value(out).size() != 1) {
            if (projection.shape != g.shape(out)) projection = random_tensor(g.shape(out), prng);
            out = g.sum(g.mul(out, g.input(projection)));
        }
        if (grad) {
            store.zero_grad();
            g.backward(out);
        }
        return g.value(out)[0];
    };
    eval(true);
    std::vector<Tensor> analytic;
    for (auto* p : params) analytic.push_back(p->grad);
    double global = 1e-8;
    std::vector<double> gmax(params.size(), 0), gerr(params.size(), 0);
    for (std::size_t li = 0; li < params.size(); ++li) {
        auto& p = *params[li];
        for (std::size_t j = 0; j < p.value.size(); ++j) {
            const double x0 = p.value.data[j];
            const double step = 1e-6 * std::max(1.0, std::fabs(x0));
            p.value.data[j] = x0 + step;
            const double fp = eval(false);
            p.value.data[j] = x0 - step;
            const double fm = eval(false);
            p.value.data[j] = x0;
            const double num = (fp - fm) / (2 * step);
            global = std::max(global, std::fabs(num));
            gmax[li] = std::max(gmax[li], std::fabs(num));
            gerr[li] = std::max(gerr[li], std::fabs(num - analytic[li].data[j]));
            ++res.checked;
        }
    }
    for (std::size_t li = 0; li < params.size(); ++li)
        res.rel_error = std::max(res.rel_error, gerr[li] / std::max(gmax[li], 1e-3 * global));
    return res;
}

}  // namespace

std::vector<GradCase> gradient_suite() {
    std::vector<GradCase> cases;
    using V = std::vector<Var>;
    cases.push_back(input_case("add", {{3, 4}, {3, 4}}, [](Graph& g, const V& v) { return g.add(v[0], v[1]); }));
    cases.push_back(input_case("sub", {{3, 4}, {3, 4}}, [](Graph& g, const V& v) { return g.sub(v[0], v[1]); }));
    cases.push_back(input_case("mul", {{3, 4}, {3, 4}}, [](Graph& g, const V& v) { return g.mul(v[0], v[1]); }));
    cases.push_back(input_case("scale", {{5}}, [](Graph& g, const V& v) { return g.scale(v[0], -1.7); }));
    cases.push_back(input_case("add_row", {{3, 4}, {4}}, [](Graph& g, const V& v) { return g.add_row(v[0], v[1]); }));
    cases.push_back(input_case("exp", {{3, 4}}, [](Graph& g, const V& v) { return g.exp(v[0]); }));
    cases.push_back(input_case("gelu", {{4, 5}}, [](Graph& g, const V& v) { return g.gelu(v[0]); }, 2.0));
    cases.push_back(input_case("reshape", {{3, 4}}, [](Graph& g, const V& v) { return g.reshape(v[0], {2, 6}); }));
    cases.push_back(input_case("sum", {{3, 4}}, [](Graph& g, const V& v) { return g.sum(g.mul(v[0], v[0])); }));
    cases.push_back(input_case("matmul", {{3, 5}, {5, 4}}, [](Graph& g, const V& v) { return g.matmul(v[0], v[1]); }));
    cases.push_back(input_case("matmul_trans_b", {{3, 5}, {4, 5}}, [](Graph& g, const V& v) { return g.matmul(v[0], v[1], true); }));
    cases.push_back(input_case("linear", {{3, 5}, {5, 4}, {4}}, [](Graph& g, const V& v) { return g.linear(v[0], v[1], v[2]); }));
    cases.push_back(input_case("bmm", {{2, 3, 4}, {2, 4, 5}}, [](Graph& g, const V& v) { return g.bmm(v[0], v[1]); }));
    cases.push_back(input_case("bmm_trans_b", {{2, 3, 4}, {2, 5, 4}}, [](Graph& g, const V& v) { return g.bmm(v[0], v[1], true); }));
    cases.push_back(input_case("softmax_lastdim", {{3, 6}}, [](Graph& g, const V& v) { return g.softmax_lastdim(v[0]); }));
    cases.push_back(input_case("layer_norm", {{3, 6}, {6}, {6}}, [](Graph& g, const V& v) { return g.layer_norm(v[0], v[1], v[2]); }));
    cases.push_back(input_case("split_heads", {{6, 4}}, [](Graph& g, const V& v) { return g.split_heads(v[0], 2, 3, 2); }));
    cases.push_back(input_case("merge_heads", {{4, 3, 2}}, [](Graph& g, const V& v) { return g.merge_heads(v[0], 2, 3, 2); }));
    cases.push_back(input_case("gather_rows", {{4, 3}}, [](Graph& g, const V& v) { return g.gather_rows(v[0], {3, 0, 3, 1}); }));
    cases.push_back(input_case("slice_cols", {{3, 6}}, [](Graph& g, const V& v) { return g.slice_cols(v[0], 1, 4); }));
    cases.push_back(input_case("repeat_rows", {{2, 3}}, [](Graph& g, const V& v) { return g.repeat_rows(v[0], 3); }));
    cases.push_back(input_case("conv2d_stride1", {{2, 3, 5, 5}, {4, 3, 3, 3}, {4}},
                               [](Graph& g, const V& v) { return g.conv2d(v[0], v[1], v[2], 1, 1); }));
    cases.push_back(input_case("conv2d_stride2", {{2, 3, 6, 6}, {4, 3, 3, 3}, {4}},
                               [](Graph& g, const V& v) { return g.conv2d(v[0], v[1], v[2], 2, 1); }));
    cases.push_back(input_case("upsample2x", {{2, 3, 3, 4}}, [](Graph& g, const V& v) { return g.upsample2x(v[0]); }));
    cases.push_back(input_case("channel_norm", {{2, 3, 4, 4}, {3}, {3}},
                               [](Graph& g, const V& v) { return g.channel_norm(v[0], v[1], v[2]); }));
    cases.push_back(input_case("softmax_cross_entropy", {{4, 5}},
                               [](Graph& g, const V& v) { return g.softmax_cross_entropy(v[0], {0, 4, 2, 2}); }));
    cases.push_back({"gaussian_nll", kLayerTol, [](std::uint64_t seed) {
                         Rng rng(seed);
                         const Tensor target = random_tensor({2, 1, 3, 3}, rng);
                         return gradcheck([target](Graph& g, const V& v) { return g.gaussian_nll(v[0], target); },
                                          {random_tensor({2, 1, 3, 3}, rng)}, nullptr, seed);
                     }});
    cases.push_back(input_case("kl_divergence", {{3, 4}, {3, 4}}, [](Graph& g, const V& v) { return g.kl_divergence(v[0], v[1]); }));
    for (int q : {8, 15, 100}) {
        cases.push_back({"dlm_nll_Q" + std::to_string(q), kLayerTol, [q](std::uint64_t seed) {
                             Rng rng(seed);
                             std::vector<int> bins;
                             for (int i = 0; i < 4; ++i) bins.push_back(static_cast<int>(rng.below(q)));
                             bins[0] = 0;
                             bins[1] = q - 1;
                             const QuantGrid grid(q);
                             return gradcheck([bins, grid](Graph& g, const V& v) { return g.dlm_nll(v[0], 3, grid, bins); },
                                              {random_tensor({4, 9}, rng)}, nullptr, seed);
                         }});
    }

    cases.push_back(layer_case("Linear", {{3, 5}}, [](nn::ParameterStore& s, Rng& rng) -> GraphFn {
        auto l = nn::Linear::create(s, "l", 5, 4, rng);
        return [l](Graph& g, const V& v) { return l(g, v[0]); };
    }));
    cases.push_back(layer_case("LayerNorm", {{3, 6}}, [](nn::ParameterStore& s, Rng&) -> GraphFn {
        auto l = nn::LayerNorm::create(s, "ln", 6);
        return [l](Graph& g, const V& v) { return l(g, v[0]); };
    }));
    cases.push_back(layer_case("MultiHeadAttention", {{6, 4}, {4, 4}}, [](nn::ParameterStore& s, Rng& rng) -> GraphFn {
        auto a = nn::MultiHeadAttention::create(s, "a", 4, 2, rng);
        return [a](Graph& g, const V& v) { return a(g, v[0], v[1], 2, 3, 2).output; };
    }));
    cases.push_back(layer_case("FeedForward", {{3, 4}}, [](nn::ParameterStore& s, Rng& rng) -> GraphFn {
        auto f = nn::FeedForward::create(s, "f", 4, 6, rng);
        return [f](Graph& g, const V& v) { return f(g, v[0]); };
    }));
    cases.push_back(layer_case("EncoderLayer", {{6, 4}}, [](nn::ParameterStore& s, Rng& rng) -> GraphFn {
        auto l = nn::EncoderLayer::create(s, "e", {4, 2, 1, 6}, rng);
        return [l](Graph& g, const V& v) { return l(g, v[0], 2, 3); };
    }));
    cases.push_back(layer_case("DecoderLayer", {{6, 4}, {4, 4}}, [](nn::ParameterStore& s, Rng& rng) -> GraphFn {
        auto l = nn::DecoderLayer::create(s, "d", {4, 2, 1, 6}, rng);
        return [l](Graph& g, const V& v) { return l(g, v[0], v[1], 2, 3, 2); };
    }));
    cases.push_back(layer_case("ConvBlock_stride2", {{2, 2, 6, 6}}, [](nn::ParameterStore& s, Rng& rng) -> GraphFn {
        auto c = nn::ConvBlock::create(s, "c", 2, 3, 2, rng);
        return [c](Graph& g, const V& v) { return c(g, v[0]); };
    }));
    cases.push_back(layer_case("ConvBlock_residual", {{2, 3, 4, 4}}, [](nn::ParameterStore& s, Rng& rng) -> GraphFn {
        auto c = nn::ConvBlock::create(s, "c", 3, 3, 1, rng);
        return [c](Graph& g, const V& v) { return c(g, v[0]); };
    }));

    // Model-specific fused ops on a tiny preset model.
    cases.push_back({"embed_preset", kLayerTol, [](std::uint64_t seed) {
                         auto model = std::make_shared<SpinVae>(builtin_descriptor(), tiny_config(), seed);
                         const auto b = fixture_batch();
                         return prefixed_params([model, b](Graph& g, const V&) { return model->embed_preset(g, b.u); }, {},
                                                model->parameters(), {"embed."}, seed);
                     }});
    cases.push_back({"param_heads", kLayerTol, [](std::uint64_t seed) {
                         auto model = std::make_shared<SpinVae>(builtin_descriptor(), tiny_config(), seed);
                         Rng rng(seed);
                         return prefixed_params([model](Graph& g, const V& v) { return model->decode_preset(g, v[0]); },
                                                {random_tensor({2, 4}, rng)}, model->parameters(), {"pdec.head"}, seed);
                     }});
    for (auto head : {NumericalHead::Dlm, NumericalHead::Softmax}) {
        cases.push_back({"preset_nll_" + to_string(head), kLayerTol, [head](std::uint64_t seed) {
                             ModelConfig c = tiny_config();
                             c.numerical_head = head;
                             auto model = std::make_shared<SpinVae>(builtin_descriptor(), c, seed);
                             Rng rng(seed);
                             const auto b = fixture_batch();
                             return gradcheck([model, b](Graph& g, const V& v) { return model->preset_nll(g, v[0], b.u); },
                                              {random_tensor({2, model->head_total()}, rng)}, nullptr, seed);
                         }});
    }

    // Full training objective of the desk model, sampled parameter entries.
    struct LossVariant {
        std::string name;
        EncoderMode mode;
        NumericalHead head;
    };
    for (const auto& lv : {LossVariant{"loss_bimodal_dlm", EncoderMode::Bimodal, NumericalHead::Dlm},
                           LossVariant{"loss_preset_only", EncoderMode::PresetOnly, NumericalHead::Dlm},
                           LossVariant{"loss_sound_matching", EncoderMode::SoundMatching, NumericalHead::Dlm},
                           LossVariant{"loss_bimodal_softmax", EncoderMode::Bimodal, NumericalHead::Softmax}}) {
        cases.push_back({lv.name, kLossTol, [lv](std::uint64_t seed) {
                             ModelConfig c;
                             c.mode = lv.mode;
                             c.numerical_head = lv.head;
                             auto model = std::make_shared<SpinVae>(builtin_descriptor(), c, seed);
                             Rng rng(seed);
                             const Tensor eps = random_tensor({2, c.latent_dim}, rng);
                             const auto b = fixture_batch();
                             return gradcheck([model, b, eps](Graph& g, const V&) { return model->loss(g, b, eps, 2e-3).total; }, {},
                                              &model->parameters(), seed, 1e-5, 50);
                         }});
    }
    return cases;
}

}  // namespace spinterp::testing
