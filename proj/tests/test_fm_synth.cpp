#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "spinterp/dsp.hpp"
#include "spinterp/fm_synth.hpp"

using namespace spinterp;
using Catch::Approx;

namespace {

Preset single_carrier(int algorithm, double level) {
    const auto& d = builtin_descriptor();
    Preset p;
    p.values.assign(d.size(), 0.0);
    p.values[d.algorithm_param] = algorithm;
    p.values[*d.find("op1.ratio")] = 1.0 / 14.0;
    p.values[*d.find("op1.level")] = level;
    p.values[*d.find("op1.sustain")] = 1.0;
    return p;
}

}  // namespace

TEST_CASE("every algorithm has an acyclic routing") {
    for (int a = 0; a < kNumAlgorithms; ++a) {
        const auto g = algorithm_graph(a);
        const auto order = g.topological_order();
        REQUIRE(order.size() == 4u);
        std::vector<int> pos(4);
        for (int i = 0; i < 4; ++i) pos[order[i]] = i;
        for (int k = 0; k < 4; ++k)
            for (int m : g.modulators[k]) CHECK(pos[m] < pos[k]);
        CHECK_FALSE(g.carriers.empty());
    }
    CHECK(algorithm_graph(0).modulation_depth() == 0);
    CHECK(algorithm_graph(1).modulation_depth() == 3);
    CHECK(algorithm_graph(7).modulation_depth() == 1);
    CHECK_THROWS(algorithm_graph(8));
}

TEST_CASE("parameter mappings") {
    CHECK(fm_map::ratio(0.0) == 0.5);
    CHECK(fm_map::ratio(1.0 / 14.0) == 1.0);
    CHECK(fm_map::ratio(1.0) == 8.0);
    CHECK(fm_map::mod_index(1.0 / 7.0) == Approx(1.0));
    CHECK(fm_map::level_amplitude(0.0) == 0.0);
    CHECK(fm_map::level_amplitude(1.0) == 1.0);
    CHECK(20 * std::log10(fm_map::level_amplitude(0.5)) == Approx(-24.0));
    CHECK(fm_map::envelope_time(0.0) == Approx(0.001));
    CHECK(fm_map::envelope_time(1.0) == Approx(0.5));
}

TEST_CASE("ADSR envelope") {
    OperatorParams op;
    op.attack = 0.1;
    op.decay = 0.2;
    op.sustain = 0.5;
    op.release = 0.1;
    CHECK(adsr(op, 0.0, 1.0) == Approx(0.0).margin(1e-12));
    CHECK(adsr(op, 0.05, 1.0) == Approx(0.5));
    CHECK(adsr(op, 0.1, 1.0) == Approx(1.0));
    CHECK(adsr(op, 0.5, 1.0) == Approx(0.5));
    CHECK(adsr(op, 1.05, 1.0) == Approx(0.25));
    CHECK(adsr(op, 1.2, 1.0) == Approx(0.0).margin(1e-12));
}

TEST_CASE("rendering is deterministic and bounded") {
    const auto& d = builtin_descriptor();
    for (std::uint64_t s = 0; s < 20; ++s) {
        const Preset p = sample_random_preset(d, s);
        const Waveform a = render(d, p), b = render(d, p);
        CHECK(a == b);
        CHECK(static_cast<int>(a.samples.size()) == RenderConfig{}.num_samples());
        for (double v : a.samples) REQUIRE(std::fabs(v) <= 1.0);
    }
}

TEST_CASE("silent preset renders zeros") {
    const Waveform w = render(builtin_descriptor(), single_carrier(0, 0.0));
    CHECK(std::all_of(w.samples.begin(), w.samples.end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("unmodulated carrier is a sine at f0") {
    RenderConfig rc;
    rc.f0 = 500.0;
    const Waveform w = render(builtin_descriptor(), single_carrier(0, 1.0), rc);
    // Steady state, before note-off at 0.75 duration.
    for (int i = 1000; i < 1100; ++i)
        CHECK(w.samples[i] == Approx(std::sin(2 * std::numbers::pi * 500.0 * i / 16000.0)).margin(1e-9));
}

TEST_CASE("WAV round trip") {
    const Waveform w = render(builtin_descriptor(), sample_random_preset(builtin_descriptor(), 5));
    const std::string bytes = encode_wav(w);
    CHECK(bytes.substr(0, 4) == "RIFF");
    CHECK(bytes.size() == 44 + 2 * w.samples.size());
    const Waveform back = decode_wav(bytes);
    REQUIRE(back.samples.size() == w.samples.size());
    for (std::size_t i = 0; i < w.samples.size(); ++i) REQUIRE(back.samples[i] == Approx(w.samples[i]).margin(1.0 / 32767));
    CHECK_THROWS(decode_wav("RIFF"));
}

TEST_CASE("mel spectrogram shape and peak location") {
    RenderConfig rc;
    rc.f0 = 1000.0;
    const Spectrogram s = mel_spectrogram(render(builtin_descriptor(), single_carrier(0, 1.0), rc));
    CHECK(s.mel_bins == 64);
    CHECK(s.frames == 64);
    const auto centers = dsp::mel_centers(64, 40.0, 8000.0);
    int best = 0;
    for (int m = 0; m < 64; ++m)
        if (s.at(m, 20) > s.at(best, 20)) best = m;
    CHECK(std::fabs(centers[best] - 1000.0) < 100.0);
}

TEST_CASE("STFT frame count and normalization") {
    const dsp::StftConfig cfg{1024, 256, 64};
    CHECK(dsp::padded_frame_count(16384, cfg) == 65);
    std::vector<double> x(16384);
    for (int i = 0; i < 16384; ++i) x[i] = std::sin(2 * std::numbers::pi * 64 * i / 1024.0);  // bin 64
    const auto mag = dsp::stft_magnitude(x, cfg);
    REQUIRE(mag.size() == 64u * 513u);
    CHECK(mag[10 * 513 + 64] == Approx(0.5).epsilon(1e-6));
}
