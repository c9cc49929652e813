#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "spinterp/dsp.hpp"
#include "spinterp/preset_schema.hpp"

namespace spinterp {

inline constexpr int kNumOperators = 4;
inline constexpr int kNumAlgorithms = 8;

struct RenderConfig {
    double sample_rate = 16000.0;
    double duration = 1.024;
    double f0 = 261.63;

    int num_samples() const;
    void validate() const;
};

struct Waveform {
    std::vector<double> samples;
    double sample_rate = 16000.0;

    friend bool operator==(const Waveform&, const Waveform&) = default;
};

/// Operator routing of one algorithm. Operators are numbered 0..3 (op1..op4).
struct AlgorithmGraph {
    std::array<std::vector<int>, kNumOperators> modulators;  // modulators[k] = ops feeding op k
    std::vector<int> carriers;

    /// Operators ordered so every modulator precedes the operators it feeds.
    /// Throws if the routing contains a cycle.
    std::vector<int> topological_order() const;
    /// Longest modulation path ending at a carrier (0 for a pure additive graph).
    int modulation_depth() const;

    friend bool operator==(const AlgorithmGraph&, const AlgorithmGraph&) = default;
};

AlgorithmGraph algorithm_graph(int algorithm_id);

/// Physical-unit mappings from normalized parameter values.
namespace fm_map {
double ratio(double v);          // table lookup over the 15-step grid, 0.5 .. 8
double level_amplitude(double v);  // 0 -> silence, otherwise a 48 dB range
double envelope_time(double v);  // exponential, 1 ms .. 0.5 s
double mod_index(double v);      // 0 .. 7, integer on the 8-step grid
}  // namespace fm_map

struct OperatorParams {
    double ratio = 1.0;
    double amplitude = 0.0;
    double attack = 0.001;
    double decay = 0.001;
    double sustain = 1.0;
    double release = 0.001;
    double mod_index = 0.0;
};

/// Resolves the descriptor's parameter indices for the synth ("algorithm",
/// "opK.ratio", ...). Throws if the descriptor does not carry them.
class FmVoiceLayout {
public:
    explicit FmVoiceLayout(const SynthDescriptor& descriptor);

    int algorithm(const Preset& preset) const;
    OperatorParams op(const Preset& preset, int k) const;

    /// Parameter indices belonging to operator k, in field order.
    std::array<int, 7> operator_params(int k) const { return ops_[k]; }
    int algorithm_index() const { return algorithm_; }

private:
    int algorithm_;
    std::array<std::array<int, 7>, kNumOperators> ops_{};
};

/// ADSR envelope value at time t with note-off at t_off.
double adsr(const OperatorParams& op, double t, double t_off);

Waveform render(const SynthDescriptor& descriptor, const Preset& preset, const RenderConfig& cfg = {});

struct SpecConfig {
    dsp::StftConfig stft{};
    int mel_bins = 64;
    double fmin = 40.0;
    double fmax = 8000.0;
    double log_scale = 1000.0;
    int num_samples = 16384;  // expected waveform length
};

struct Spectrogram {
    int mel_bins = 0;
    int frames = 0;
    std::vector<double> data;  // mel-major: data[m * frames + f]

    double at(int m, int f) const { return data[static_cast<std::size_t>(m) * frames + f]; }
    friend bool operator==(const Spectrogram&, const Spectrogram&) = default;
};

Spectrogram mel_spectrogram(const Waveform& waveform, const SpecConfig& cfg = {});

/// RIFF/WAVE, 16-bit PCM mono, little-endian.
std::string encode_wav(const Waveform& waveform);
Waveform decode_wav(std::string_view bytes);

}  // namespace spinterp
