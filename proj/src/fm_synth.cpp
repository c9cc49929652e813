#include "spinterp/fm_synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <numbers>
#include <tuple>

namespace spinterp {

int RenderConfig::num_samples() const { return static_cast<int>(std::lround(sample_rate * duration)); }

void RenderConfig::validate() const {
    if (!(sample_rate > 0) || !(duration > 0) || !(f0 > 0))
        throw ValidationError("render config: sample_rate, duration and f0 must be positive");
    if (num_samples() < 1) throw ValidationError("render config: fewer than one sample");
}

// ---------------------------------------------------------------------------
// Routing table
// ---------------------------------------------------------------------------

namespace {

struct Route {
    std::vector<std::pair<int, int>> edges;  // (modulator, target), 1-based like DX7 docs
    std::vector<int> carriers;
};

const std::array<Route, kNumAlgorithms>& routing_table() {
    static const std::array<Route, kNumAlgorithms> table{{
        {{}, {1, 2, 3, 4}},                    // 0: additive
        {{{4, 3}, {3, 2}, {2, 1}}, {1}},       // 1: 4 -> 3 -> 2 -> 1
        {{{2, 1}, {4, 3}}, {1, 3}},            // 2: two pairs
        {{{3, 2}, {4, 2}, {2, 1}}, {1}},       // 3: (3 + 4) -> 2 -> 1
        {{{2, 1}, {3, 1}, {4, 1}}, {1}},       // 4: three modulators on one carrier
        {{{4, 1}, {4, 2}, {4, 3}}, {1, 2, 3}}, // 5: one modulator on three carriers
        {{{3, 2}, {2, 1}}, {1, 4}},            // 6: 3 -> 2 -> 1, plus 4
        {{{2, 1}}, {1, 3, 4}},                 // 7: 2 -> 1, plus 3 and 4
    }};
    return table;
}

}  // namespace

AlgorithmGraph algorithm_graph(int algorithm_id) {
    if (algorithm_id < 0 || algorithm_id >= kNumAlgorithms)
        throw std::out_of_range("algorithm id " + std::to_string(algorithm_id) + " outside [0, " +
                                std::to_string(kNumAlgorithms) + ")");
    const auto& route = routing_table()[algorithm_id];
    AlgorithmGraph g;
    for (auto [mod, target] : route.edges) g.modulators[target - 1].push_back(mod - 1);
    for (int c : route.carriers) g.carriers.push_back(c - 1);
    return g;
}

std::vector<int> AlgorithmGraph::topological_order() const {
    // Kahn's algorithm over edges modulator -> target.
    std::array<int, kNumOperators> pending{};
    for (int k = 0; k < kNumOperators; ++k) pending[k] = static_cast<int>(modulators[k].size());
    std::vector<int> order;
    std::vector<bool> done(kNumOperators, false);
    while (static_cast<int>(order.size()) < kNumOperators) {
        int next = -1;
        for (int k = 0; k < kNumOperators; ++k)
            if (!done[k] && pending[k] == 0) {
                next = k;
                break;
            }
        if (next < 0) throw ValidationError("algorithm routing contains a cycle");
        done[next] = true;
        order.push_back(next);
        for (int k = 0; k < kNumOperators; ++k)
            for (int m : modulators[k])
                if (m == next) --pending[k];
    }
    return order;
}

int AlgorithmGraph::modulation_depth() const {
    std::array<int, kNumOperators> depth{};
    for (int k : topological_order())
        for (int m : modulators[k]) depth[k] = std::max(depth[k], depth[m] + 1);
    int best = 0;
    for (int c : carriers) best = std::max(best, depth[c]);
    return best;
}

// ---------------------------------------------------------------------------
// Parameter mappings
// ---------------------------------------------------------------------------

namespace fm_map {

double ratio(double v) {
    static constexpr std::array<double, 15> table{0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0,
                                                  4.5, 5.0, 5.5, 6.0, 6.5, 7.0, 8.0};
    return table[static_cast<std::size_t>(QuantGrid(15).nearest_index(std::clamp(v, 0.0, 1.0)))];
}

double level_amplitude(double v) {
    if (v <= 0.0) return 0.0;
    return std::pow(10.0, (v - 1.0) * 48.0 / 20.0);
}

double envelope_time(double v) { return 0.001 * std::pow(500.0, v); }

double mod_index(double v) { return 7.0 * v; }

}  // namespace fm_map

FmVoiceLayout::FmVoiceLayout(const SynthDescriptor& descriptor) {
    static constexpr std::array<const char*, 7> fields{"ratio", "level", "attack", "decay",
                                                       "sustain", "release", "mod_index"};
    auto need = [&](const std::string& name, bool categorical) {
        const auto idx = descriptor.find(name);
        if (!idx) throw ValidationError("descriptor lacks synth parameter '" + name + "'");
        if (descriptor.params[*idx].categorical() != categorical)
            throw ValidationError("synth parameter '" + name + "' has the wrong kind");
        return *idx;
    };
    algorithm_ = need("algorithm", true);
    if (descriptor.params[algorithm_].num_classes != kNumAlgorithms)
        throw ValidationError("synth expects " + std::to_string(kNumAlgorithms) + " algorithms");
    for (int k = 0; k < kNumOperators; ++k)
        for (std::size_t f = 0; f < fields.size(); ++f)
            ops_[k][f] = need("op" + std::to_string(k + 1) + "." + fields[f], false);
}

int FmVoiceLayout::algorithm(const Preset& preset) const { return static_cast<int>(preset.values.at(algorithm_)); }

OperatorParams FmVoiceLayout::op(const Preset& preset, int k) const {
    const auto& idx = ops_.at(k);
    const auto& v = preset.values;
    OperatorParams p;
    p.ratio = fm_map::ratio(v.at(idx[0]));
    p.amplitude = fm_map::level_amplitude(v.at(idx[1]));
    p.attack = fm_map::envelope_time(v.at(idx[2]));
    p.decay = fm_map::envelope_time(v.at(idx[3]));
    p.sustain = v.at(idx[4]);
    p.release = fm_map::envelope_time(v.at(idx[5]));
    p.mod_index = fm_map::mod_index(v.at(idx[6]));
    return p;
}

namespace {

double envelope_before_release(const OperatorParams& op, double t) {
    if (t < op.attack) return t / op.attack;
    if (t < op.attack + op.decay) return 1.0 + (op.sustain - 1.0) * (t - op.attack) / op.decay;
    return op.sustain;
}

}  // namespace

double adsr(const OperatorParams& op, double t, double t_off) {
    if (t < t_off) return envelope_before_release(op, t);
    const double from = envelope_before_release(op, t_off);
    return std::max(0.0, from * (1.0 - (t - t_off) / op.release));
}

Waveform render(const SynthDescriptor& descriptor, const Preset& preset, const RenderConfig& cfg) {
    cfg.validate();
    require_valid(descriptor, preset);
    const FmVoiceLayout layout(descriptor);
    const AlgorithmGraph graph = algorithm_graph(layout.algorithm(preset));
    const auto order = graph.topological_order();

    std::array<OperatorParams, kNumOperators> ops;
    for (int k = 0; k < kNumOperators; ++k) ops[k] = layout.op(preset, k);

    const int n = cfg.num_samples();
    const double t_off = 0.75 * cfg.duration;
    Waveform out;
    out.sample_rate = cfg.sample_rate;
    out.samples.assign(static_cast<std::size_t>(n), 0.0);

    std::array<bool, kNumOperators> is_carrier{};
    for (int c : graph.carriers) is_carrier[c] = true;

    std::array<double, kNumOperators> omega{};
    for (int k = 0; k < kNumOperators; ++k) omega[k] = 2.0 * std::numbers::pi * ops[k].ratio * cfg.f0 / cfg.sample_rate;

    std::array<double, kNumOperators> value{};
    for (int i = 0; i < n; ++i) {
        const double t = i / cfg.sample_rate;
        for (int k : order) {
            const double amp = ops[k].amplitude * adsr(ops[k], t, t_off);
            if (amp == 0.0) {
                value[k] = 0.0;
                continue;
            }
            double mod = 0.0;
            for (int j : graph.modulators[k]) mod += value[j];
            value[k] = amp * std::sin(omega[k] * i + ops[k].mod_index * mod);
        }
        double sum = 0.0;
        for (int c : graph.carriers) sum += value[c];
        out.samples[i] = sum;
    }

    double peak = 0.0;
    for (double s : out.samples) peak = std::max(peak, std::abs(s));
    if (peak > 1.0)
        for (double& s : out.samples) s /= peak;
    return out;
}

// ---------------------------------------------------------------------------
// Spectrogram
// ---------------------------------------------------------------------------

namespace {

const std::vector<double>& cached_filterbank(int mel_bins, int fft, double sr, double fmin, double fmax) {
    using Key = std::tuple<int, int, double, double, double>;
    static std::map<Key, std::vector<double>> cache;
    static std::mutex m;
    std::lock_guard lock(m);
    const Key key{mel_bins, fft, sr, fmin, fmax};
    auto it = cache.find(key);
    if (it == cache.end()) it = cache.emplace(key, dsp::mel_filterbank(mel_bins, fft, sr, fmin, fmax)).first;
    return it->second;
}

}  // namespace

Spectrogram mel_spectrogram(const Waveform& waveform, const SpecConfig& cfg) {
    if (static_cast<int>(waveform.samples.size()) != cfg.num_samples)
        throw ValidationError("mel_spectrogram: waveform has " + std::to_string(waveform.samples.size()) +
                              " samples, expected " + std::to_string(cfg.num_samples));
    const auto mags = dsp::stft_magnitude(waveform.samples, cfg.stft);
    const int bins = cfg.stft.window / 2 + 1;
    const auto& fb = cached_filterbank(cfg.mel_bins, cfg.stft.window, waveform.sample_rate, cfg.fmin, cfg.fmax);

    Spectrogram s;
    s.mel_bins = cfg.mel_bins;
    s.frames = cfg.stft.frames;
    s.data.assign(static_cast<std::size_t>(s.mel_bins) * s.frames, 0.0);
    for (int f = 0; f < s.frames; ++f) {
        const double* mag = mags.data() + static_cast<std::ptrdiff_t>(f) * bins;
        for (int m = 0; m < s.mel_bins; ++m) {
            const double* w = fb.data() + static_cast<std::ptrdiff_t>(m) * bins;
            double acc = 0.0;
            for (int k = 0; k < bins; ++k) acc += w[k] * mag[k];
            s.data[static_cast<std::size_t>(m) * s.frames + f] = std::log1p(cfg.log_scale * acc);
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// WAV
// ---------------------------------------------------------------------------

namespace {

template <class T>
void put_le(std::string& out, T v) {
    static_assert(std::is_integral_v<T>);
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
}

template <class T>
T get_le(std::string_view in, std::size_t pos) {
    if (pos + sizeof(T) > in.size()) throw ParseError("wav: truncated header");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
    return static_cast<T>(v);
}

}  // namespace

std::string encode_wav(const Waveform& waveform) {
    const auto n = static_cast<std::uint32_t>(waveform.samples.size());
    const auto rate = static_cast<std::uint32_t>(std::lround(waveform.sample_rate));
    std::string out;
    out.reserve(44 + 2 * static_cast<std::size_t>(n));
    out += "RIFF";
    put_le<std::uint32_t>(out, 36 + 2 * n);
    out += "WAVEfmt ";
    put_le<std::uint32_t>(out, 16);
    put_le<std::uint16_t>(out, 1);  // PCM
    put_le<std::uint16_t>(out, 1);  // mono
    put_le<std::uint32_t>(out, rate);
    put_le<std::uint32_t>(out, rate * 2);
    put_le<std::uint16_t>(out, 2);
    put_le<std::uint16_t>(out, 16);
    out += "data";
    put_le<std::uint32_t>(out, 2 * n);
    for (double s : waveform.samples) {
        const double c = std::clamp(s, -1.0, 1.0);
        put_le<std::int16_t>(out, static_cast<std::int16_t>(std::lround(c * 32767.0)));
    }
    return out;
}

Waveform decode_wav(std::string_view bytes) {
    if (bytes.size() < 44 || bytes.substr(0, 4) != "RIFF" || bytes.substr(8, 8) != "WAVEfmt ")
        throw ParseError("wav: not a RIFF/WAVE file");
    if (get_le<std::uint16_t>(bytes, 20) != 1 || get_le<std::uint16_t>(bytes, 22) != 1 ||
        get_le<std::uint16_t>(bytes, 34) != 16)
        throw ParseError("wav: only 16-bit PCM mono is supported");
    if (bytes.substr(36, 4) != "data") throw ParseError("wav: missing data chunk");
    const auto size = get_le<std::uint32_t>(bytes, 40);
    if (44 + static_cast<std::size_t>(size) > bytes.size()) throw ParseError("wav: truncated data chunk");
    Waveform w;
    w.sample_rate = get_le<std::uint32_t>(bytes, 24);
    w.samples.resize(size / 2);
    for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] = get_le<std::int16_t>(bytes, 44 + 2 * i) / 32767.0;
    return w;
}

}  // namespace spinterp
