#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <set>

#include "spinterp/corpus.hpp"
#include "spinterp/interp_engine.hpp"

using namespace spinterp;
using Catch::Approx;
namespace fs = std::filesystem;

namespace {

SpinVae small_model(EncoderMode mode) {
    ModelConfig c;
    c.latent_dim = 8;
    c.attention = {16, 2, 1, 32};
    c.decoder_layers = 1;
    c.mode = mode;
    return SpinVae(builtin_descriptor(), c, 3);
}

}  // namespace

TEST_CASE("path coefficients and extrapolation guard") {
    PathOptions o;
    CHECK(o.coefficient(1, 9) == 0.0);
    CHECK(o.coefficient(5, 9) == 0.5);
    CHECK(o.coefficient(9, 9) == 1.0);
    o.from = -0.5;
    CHECK_THROWS_AS(o.validate(), ValidationError);
    o.extrapolate = true;
    CHECK_NOTHROW(o.validate());
    CHECK(o.coefficient(1, 3) == -0.5);
    CHECK(o.coefficient(2, 3) == 0.25);
}

TEST_CASE("latent path endpoints are exact and the path is linear") {
    Rng rng(1);
    std::vector<double> a(16), b(16);
    for (int i = 0; i < 16; ++i) a[i] = rng.normal(), b[i] = rng.normal();
    for (int T : {3, 7, 9, 10}) {
        const auto p = latent_path(a, b, T);
        REQUIRE(static_cast<int>(p.size()) == T);
        CHECK(p.front() == a);
        CHECK(p.back() == b);
        for (int t = 1; t + 1 < T; ++t)
            for (int i = 0; i < 16; ++i) CHECK(p[t + 1][i] - 2 * p[t][i] + p[t - 1][i] == Approx(0).margin(1e-12));
    }
    CHECK_THROWS_AS(latent_path(a, b, 2), ValidationError);
    CHECK_THROWS_AS(latent_path(a, std::vector<double>(3), 5), ValidationError);
}

TEST_CASE("reference interpolation switches categories at the midpoint") {
    const auto& d = builtin_descriptor();
    Preset a = sample_random_preset(d, 1), b = sample_random_preset(d, 2);
    a.values[d.algorithm_param] = 1;
    b.values[d.algorithm_param] = 6;
    for (int T : {3, 8, 9}) {
        const auto s = interpolate_reference(d, a, b, T);
        CHECK(s.method == InterpMethod::Reference);
        CHECK(s.steps.front().preset == a);
        CHECK(s.steps.back().preset == b);
        const int switch_at = (T + 1) / 2;  // last step keeping a's class, ceil(T/2)
        for (int t = 1; t <= T; ++t) {
            CHECK(s.steps[t - 1].preset.values[d.algorithm_param] == (t <= switch_at ? 1 : 6));
            CHECK(validate_preset(d, s.steps[t - 1].preset).empty());
        }
    }
}

TEST_CASE("reference numerical values are quantized linear blends") {
    const auto& d = builtin_descriptor();
    const Preset a = sample_random_preset(d, 3), b = sample_random_preset(d, 4);
    const auto s = interpolate_reference(d, a, b, 5);
    const int i = *d.find("op2.level");
    for (int t = 0; t < 5; ++t) {
        const double raw = a.values[i] + 0.25 * t * (b.values[i] - a.values[i]);
        CHECK(s.steps[t].raw[i] == Approx(raw).margin(1e-15));
        CHECK(s.steps[t].preset.values[i] == quantize(raw, d.params[i].grid));
    }
}

TEST_CASE("latent interpolation decodes valid presets") {
    const auto& d = builtin_descriptor();
    const SpinVae m = small_model(EncoderMode::Bimodal);
    const Preset a = sample_random_preset(d, 5), b = sample_random_preset(d, 6);
    const auto s = interpolate_latent(m, RenderConfig{}, {&a, nullptr}, {&b, nullptr}, 6);
    REQUIRE(s.steps.size() == 6u);
    for (const auto& st : s.steps) {
        REQUIRE(st.z);
        CHECK(st.z->size() == 8u);
        CHECK(validate_preset(d, st.preset).empty());
    }
    // Rendering missing spectrograms equals passing them in.
    const auto sa = mel_spectrogram(render(d, a)), sb = mel_spectrogram(render(d, b));
    CHECK(interpolate_latent(m, RenderConfig{}, {&a, &sa}, {&b, &sb}, 6) == s);
}

TEST_CASE("sequence rendering writes WAVs and a parseable manifest") {
    const auto& d = builtin_descriptor();
    const Preset a = sample_random_preset(d, 7), b = sample_random_preset(d, 8);
    auto seq = interpolate_reference(d, a, b, 4);
    seq.pair_id = "pair007";
    const fs::path dir = fs::temp_directory_path() / "spinterp_test_interp";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const auto r = render_sequence(d, seq, RenderConfig{}, dir.string());
    REQUIRE(r.files.size() == 4u);
    CHECK(r.files[0] == wav_file_name("pair007", InterpMethod::Reference, 1));
    CHECK(wav_file_name("p", InterpMethod::Latent, 3) == "p_latent_3.wav");
    for (const auto& f : r.files) CHECK(fs::exists(dir / f));
    CHECK(decode_wav(read_file((dir / r.files[2]).string())).samples.size() == r.audio[2].samples.size());
    const auto parsed = parse_sequence_manifest(d, read_file((dir / "pair007_reference.json").string()));
    CHECK(parsed.sequence == seq);
    CHECK(parsed.files == r.files);
    CHECK_THROWS_AS(parse_sequence_manifest(d, "{}"), ParseError);
    fs::remove_all(dir);
}

TEST_CASE("pair set is deterministic, disjoint and drawn from the test split") {
    const Corpus c = build_corpus(builtin_descriptor(), 60, 2);
    const auto pairs = build_pair_set(c, 3, 9);
    CHECK(pairs == build_pair_set(c, 3, 9));
    std::set<int> used;
    for (auto [x, y] : pairs) {
        CHECK(c.items[x].split == Split::Test);
        CHECK(c.items[y].split == Split::Test);
        CHECK(used.insert(x).second);
        CHECK(used.insert(y).second);
    }
    CHECK_THROWS_AS(build_pair_set(c, 4, 9), ValidationError);
}
