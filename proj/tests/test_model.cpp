#include <catch_amalgamated.hpp>

#include <cmath>

#include "gradcheck.hpp"
#include "spinterp/corpus.hpp"
#include "spinterp/model.hpp"
#include "spinterp/nn/checkpoint.hpp"

using namespace spinterp;
using Catch::Approx;

namespace {

struct Fixture {
    std::vector<Preset> presets;
    std::vector<Spectrogram> specs;
    Batch batch;

    explicit Fixture(int n) {
        const auto& d = builtin_descriptor();
        for (int i = 0; i < n; ++i) {
            presets.push_back(sample_random_preset(d, 50 + i));
            specs.push_back(mel_spectrogram(render(d, presets.back())));
        }
        for (int i = 0; i < n; ++i) {
            batch.u.push_back(&presets[i]);
            batch.x.push_back(&specs[i]);
        }
    }
};

}  // namespace

TEST_CASE("config JSON round trip and validation") {
    ModelConfig c;
    c.latent_dim = 8;
    c.numerical_head = NumericalHead::Softmax;
    c.mode = EncoderMode::SoundMatching;
    c.memory_tokens = 4;
    const auto back = ModelConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    ModelConfig bad;
    bad.latent_dim = 0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    CHECK_THROWS(parse_encoder_mode("trimodal"));
}

TEST_CASE("shapes of encoder and decoder outputs") {
    Fixture f(3);
    SpinVae m(builtin_descriptor(), ModelConfig{}, 1);
    nn::Graph g;
    const auto post = m.encode(g, f.batch);
    CHECK(g.shape(post.mu) == nn::Shape{3, 32});
    CHECK(g.shape(post.logvar) == nn::Shape{3, 32});
    const auto z = m.reparameterize(g, post, nn::Tensor({3, 32}));
    CHECK(g.value(z) == g.value(post.mu));
    CHECK(g.shape(m.decode_audio(g, z)) == nn::Shape{3, 1, 64, 64});
    CHECK(g.shape(m.decode_preset(g, z)) == nn::Shape{3, m.head_total()});
    // algorithm (8 classes) + 28 DLM heads of 3 x 3.
    CHECK(m.head_total() == 8 + 28 * 9);
}

TEST_CASE("bimodal posterior is the sum of the single-modality posteriors") {
    Fixture f(2);
    SpinVae m(builtin_descriptor(), ModelConfig{}, 2);
    nn::Graph g;
    const auto bi = m.encode(g, f.batch, EncoderMode::Bimodal);
    const auto po = m.encode(g, f.batch, EncoderMode::PresetOnly);
    const auto sm = m.encode(g, f.batch, EncoderMode::SoundMatching);
    for (std::size_t i = 0; i < g.value(bi.mu).size(); ++i) {
        CHECK(g.value(bi.mu)[i] == Approx(g.value(po.mu)[i] + g.value(sm.mu)[i]).margin(1e-12));
        CHECK(g.value(bi.logvar)[i] == Approx(g.value(po.logvar)[i] + g.value(sm.logvar)[i]).margin(1e-12));
    }
}

TEST_CASE("decoded presets are valid and deterministic") {
    Fixture f(4);
    SpinVae m(builtin_descriptor(), ModelConfig{}, 3);
    const auto zs = m.encode_means(f.batch);
    const auto a = m.decode(zs), b = m.decode(zs);
    CHECK(a == b);
    for (const auto& p : a) CHECK(validate_preset(builtin_descriptor(), p).empty());
}

TEST_CASE("loss terms are finite and consistent") {
    Fixture f(2);
    SpinVae m(builtin_descriptor(), ModelConfig{}, 4);
    nn::Graph g;
    const auto v = m.loss(g, f.batch, nn::Tensor({2, 32}), 0.5);
    const double total = g.value(v.total)[0], kl = g.value(v.kl)[0];
    const double audio = g.value(v.audio_nll)[0], preset = g.value(v.preset_nll)[0];
    CHECK(std::isfinite(total));
    CHECK(kl >= 0);
    CHECK(total == Approx(audio + preset + 0.5 * kl));
}

TEST_CASE("preset-only mode does not need spectrograms") {
    Fixture f(2);
    ModelConfig c;
    c.mode = EncoderMode::PresetOnly;
    SpinVae m(builtin_descriptor(), c, 5);
    Batch b = f.batch;
    b.x = {nullptr, nullptr};
    CHECK_NOTHROW(m.encode_means(b));
}

TEST_CASE("checkpoint round trip reproduces the model") {
    Fixture f(2);
    ModelConfig c;
    c.latent_dim = 16;
    SpinVae m(builtin_descriptor(), c, 6);
    const auto bytes = nn::encode_checkpoint(m.to_checkpoint());
    const auto ck = nn::decode_checkpoint(bytes);
    CHECK(ck == m.to_checkpoint());
    const SpinVae back = SpinVae::from_checkpoint(ck, builtin_descriptor());
    CHECK(back.encode_means(f.batch) == m.encode_means(f.batch));
    CHECK_THROWS_AS(nn::decode_checkpoint(bytes.substr(0, bytes.size() / 2)), ParseError);
    auto other = ck;
    other.descriptor_hash ^= 1;
    CHECK_THROWS_AS(SpinVae::from_checkpoint(other, builtin_descriptor()), DescriptorMismatch);
}

TEST_CASE("full loss passes the gradient check in every variant") {
    for (const auto& c : testing::gradient_suite()) {
        if (c.tolerance <= 1e-5) continue;
        const auto r = c.trial(mix_seed(5, 1));
        INFO(c.name << " rel error " << r.rel_error);
        CHECK(r.checked >= 50);
        CHECK(r.rel_error <= c.tolerance);
    }
}
