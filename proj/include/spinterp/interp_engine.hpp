#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "spinterp/corpus.hpp"
#include "spinterp/fm_synth.hpp"
#include "spinterp/model.hpp"

namespace spinterp {

enum class InterpMethod { Latent, Reference };

std::string to_string(InterpMethod m);
InterpMethod parse_interp_method(std::string_view s);

/// Interpolation coefficients run from `from` to `to` over the T steps. Values
/// outside [0, 1] extrapolate and are rejected unless `extrapolate` is set.
struct PathOptions {
    double from = 0.0;
    double to = 1.0;
    bool extrapolate = false;

    void validate() const;
    /// Coefficient of step t (1-based).
    double coefficient(int t, int T) const;
};

struct InterpStep {
    std::optional<std::vector<double>> z;  // latent method only
    std::vector<double> raw;               // reference method: values before quantization
    Preset preset;
    friend bool operator==(const InterpStep&, const InterpStep&) = default;
};

struct InterpSequence {
    InterpMethod method = InterpMethod::Reference;
    std::string pair_id;
    Preset a, b;
    int T = 0;
    std::vector<InterpStep> steps;
    friend bool operator==(const InterpSequence&, const InterpSequence&) = default;
};

/// z_t = z_n + c_t (z_m - z_n); the end points are copied, so the default path
/// reproduces z_n and z_m bit-exactly.
std::vector<std::vector<double>> latent_path(const std::vector<double>& z_n, const std::vector<double>& z_m, int T,
                                             const PathOptions& opts = {});

/// An interpolation end point. The spectrogram is only read when the model's
/// encoder uses audio; pass nullptr to have it rendered.
struct Endpoint {
    const Preset* preset = nullptr;
    const Spectrogram* spectrogram = nullptr;
};

InterpSequence interpolate_latent(const SpinVae& model, const RenderConfig& render, Endpoint a, Endpoint b, int T,
                                  const PathOptions& opts = {});

/// Per-parameter linear interpolation; categorical parameters keep a's class
/// while the coefficient is <= 1/2 (steps 1..ceil(T/2) on the default path).
InterpSequence interpolate_reference(const SynthDescriptor& descriptor, const Preset& a, const Preset& b, int T,
                                     const PathOptions& opts = {});

std::string wav_file_name(const std::string& pair_id, InterpMethod method, int t);

struct RenderedSequence {
    std::vector<Waveform> audio;
    std::vector<std::string> files;  // empty when nothing was written
    std::string manifest;
};

/// Renders every step. When out_dir is non-empty, writes the WAVs and
/// "{pair_id}_{method}.json" there.
RenderedSequence render_sequence(const SynthDescriptor& descriptor, const InterpSequence& seq, const RenderConfig& render,
                                 const std::string& out_dir = {});

/// "spinterp-seq/1" manifest.
std::string sequence_manifest(const SynthDescriptor& descriptor, const InterpSequence& seq, const std::vector<std::string>& files);
struct SequenceManifest {
    InterpSequence sequence;
    std::vector<std::string> files;
};
SequenceManifest parse_sequence_manifest(const SynthDescriptor& descriptor, std::string_view text);

/// Shuffles the test split with the seed and pairs consecutive items. Returns
/// corpus item indices. Throws ValidationError when the split is too small.
std::vector<std::pair<int, int>> build_pair_set(const Corpus& corpus, int count, std::uint64_t seed);

}  // namespace spinterp
