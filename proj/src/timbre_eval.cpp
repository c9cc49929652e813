#include "spinterp/timbre_eval.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <map>
#include <sstream>

namespace spinterp {

const std::array<std::string, kNumDescriptors>& descriptor_names() {
    static const std::array<std::string, kNumDescriptors> names = {
        "spectral_centroid", "spectral_spread", "spectral_skewness", "spectral_kurtosis", "spectral_rolloff",
        "spectral_flatness", "spectral_crest",  "spectral_flux",     "frame_rms",         "attack_time",
        "temporal_centroid", "effective_duration"};
    return names;
}

const std::array<std::string, kNumFeatures>& feature_names() {
    static const std::array<std::string, kNumFeatures> names = [] {
        std::array<std::string, kNumFeatures> n;
        for (int k = 0; k < kNumDescriptors; ++k) {
            n[2 * k] = descriptor_names()[k] + "_median";
            n[2 * k + 1] = descriptor_names()[k] + "_iqr";
        }
        return n;
    }();
    return names;
}

namespace {

enum Desc { Centroid, Spread, Skewness, Kurtosis, Rolloff, Flatness, Crest, Flux, Rms, Attack, TempCentroid, EffDuration };

double quantile(std::vector<double>& v, double q) {
    std::sort(v.begin(), v.end());
    const double h = (static_cast<double>(v.size()) - 1) * q;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double log2_floor(double hz, double floor_hz) { return std::log2(std::max(hz, floor_hz)); }

}  // namespace

double median(std::vector<double> v) {
    if (v.empty()) throw ValidationError("median of an empty series");
    return quantile(v, 0.5);
}

double iqr(std::vector<double> v) {
    if (v.empty()) throw ValidationError("IQR of an empty series");
    return quantile(v, 0.75) - quantile(v, 0.25);
}

FeatureVector extract_features(const Waveform& waveform, const FeatureConfig& cfg) {
    if (waveform.samples.empty()) throw ValidationError("extract_features: empty waveform");
    if (!(waveform.sample_rate > 0)) throw ValidationError("extract_features: sample rate must be positive");
    const int half = cfg.stft.window / 2;
    std::vector<double> x = waveform.samples;
    if (static_cast<int>(x.size()) <= half) x.resize(static_cast<std::size_t>(half) + 1, 0.0);
    const int n = static_cast<int>(x.size());
    dsp::StftConfig stft = cfg.stft;
    stft.frames = dsp::padded_frame_count(n, stft);
    const int F = stft.frames;
    const int bins = stft.window / 2 + 1;
    const auto mag = dsp::stft_magnitude(x, stft);
    const double sr = waveform.sample_rate;
    std::vector<double> freq(bins);
    for (int k = 0; k < bins; ++k) freq[k] = k * sr / stft.window;

    std::array<std::vector<double>, 9> frame_desc;
    std::vector<double> prev_p, p(bins), env(F);
    for (int f = 0; f < F; ++f) {
        const double* a = mag.data() + static_cast<std::size_t>(f) * bins;
        double sum = 0, esum = 0, amax = 0;
        for (int k = 0; k < bins; ++k) {
            sum += a[k];
            esum += a[k] * a[k];
            amax = std::max(amax, a[k]);
        }
        double rms = 0;
        for (int i = 0; i < stft.window; ++i) {
            int j = f * stft.hop + i - half;
            if (j < 0) j = -j;
            if (j >= n) j = 2 * (n - 1) - j;
            rms += x[j] * x[j];
        }
        rms = std::sqrt(rms / stft.window);
        env[f] = rms;
        frame_desc[Rms].push_back(rms);
        if (sum == 0.0) {
            frame_desc[Centroid].push_back(std::log2(cfg.floor_hz));
            frame_desc[Spread].push_back(std::log2(cfg.spread_floor_hz));
            frame_desc[Skewness].push_back(0.0);
            frame_desc[Kurtosis].push_back(0.0);
            frame_desc[Rolloff].push_back(std::log2(cfg.floor_hz));
            frame_desc[Flatness].push_back(1.0);
            frame_desc[Crest].push_back(1.0);
            if (f > 0) frame_desc[Flux].push_back(0.0);
            prev_p.clear();
            continue;
        }
        double mu = 0;
        for (int k = 0; k < bins; ++k) {
            p[k] = a[k] / sum;
            mu += freq[k] * p[k];
        }
        double m2 = 0, m3 = 0, m4 = 0;
        for (int k = 0; k < bins; ++k) {
            const double d = freq[k] - mu;
            m2 += d * d * p[k];
            m3 += d * d * d * p[k];
            m4 += d * d * d * d * p[k];
        }
        const double sigma = std::sqrt(m2);
        double cum = 0, rolloff = freq[bins - 1];
        for (int k = 0; k < bins; ++k) {
            cum += a[k] * a[k];
            if (cum >= 0.95 * esum) {
                rolloff = freq[k];
                break;
            }
        }
        double log_sum = 0;
        for (int k = 0; k < bins; ++k) log_sum += std::log(std::max(a[k] * a[k], DBL_MIN));
        const double flatness = std::exp(log_sum / bins) / (esum / bins);
        frame_desc[Centroid].push_back(log2_floor(mu, cfg.floor_hz));
        frame_desc[Spread].push_back(log2_floor(sigma, cfg.spread_floor_hz));
        frame_desc[Skewness].push_back(sigma > 0 ? m3 / (sigma * sigma * sigma) : 0.0);
        frame_desc[Kurtosis].push_back(sigma > 0 ? m4 / (m2 * m2) : 0.0);
        frame_desc[Rolloff].push_back(log2_floor(rolloff, cfg.floor_hz));
        frame_desc[Flatness].push_back(std::min(1.0, flatness));
        frame_desc[Crest].push_back(amax / (sum / bins));
        if (f > 0) {
            double flux = 0;
            if (!prev_p.empty())
                for (int k = 0; k < bins; ++k) flux += (p[k] - prev_p[k]) * (p[k] - prev_p[k]);
            frame_desc[Flux].push_back(std::sqrt(flux));
        }
        prev_p = p;
    }
    if (frame_desc[Flux].empty()) frame_desc[Flux].push_back(0.0);

    FeatureVector fv;
    for (int d = 0; d <= Rms; ++d) {
        fv.values[2 * d] = median(frame_desc[d]);
        fv.values[2 * d + 1] = iqr(frame_desc[d]);
    }
    const double emax = *std::max_element(env.begin(), env.end());
    const double frame_dt = stft.hop / sr;
    double attack = 0, tc = 0, eff = 0;
    if (emax > 0) {
        int f10 = 0, f90 = 0;
        while (env[f10] < 0.1 * emax) ++f10;
        while (env[f90] < 0.9 * emax) ++f90;
        attack = (f90 - f10) * frame_dt;
        double num = 0, den = 0;
        int above = 0;
        for (int f = 0; f < F; ++f) {
            num += f * frame_dt * env[f];
            den += env[f];
            if (env[f] >= 0.4 * emax) ++above;
        }
        tc = num / den;
        eff = above * frame_dt;
    }
    fv.values[2 * Attack] = attack;
    fv.values[2 * TempCentroid] = tc;
    fv.values[2 * EffDuration] = eff;
    return fv;
}

double smoothness(std::span<const double> v) {
    const int T = static_cast<int>(v.size());
    if (T < 3) throw ValidationError("smoothness needs T >= 3 (got " + std::to_string(T) + ")");
    double acc = 0;
    for (int t = 1; t + 1 < T; ++t) {
        const double d2 = v[t + 1] - 2 * v[t] + v[t - 1];
        acc += d2 * d2;
    }
    return std::sqrt(acc / (T - 2));
}

double nonlinearity(std::span<const double> v) {
    const int T = static_cast<int>(v.size());
    if (T < 2) throw ValidationError("nonlinearity needs T >= 2 (got " + std::to_string(T) + ")");
    double acc = 0;
    for (int t = 0; t < T; ++t) {
        const double line = v[0] + (v[T - 1] - v[0]) * static_cast<double>(t) / static_cast<double>(T - 1);
        const double d = v[t] - line;
        acc += d * d;
    }
    return std::sqrt(acc / T);
}

SequenceMetrics sequence_metrics(const std::vector<FeatureVector>& steps) {
    SequenceMetrics m;
    std::vector<double> series(steps.size());
    for (int k = 0; k < kNumFeatures; ++k) {
        for (std::size_t t = 0; t < steps.size(); ++t) series[t] = steps[t].values[k];
        m.smoothness[k] = smoothness(series);
        m.nonlinearity[k] = nonlinearity(series);
    }
    return m;
}

namespace {

void compare(const std::vector<SequenceMetrics>& cand, const std::vector<SequenceMetrics>& ref,
             std::array<double, kNumFeatures> SequenceMetrics::*field, std::array<FeatureStat, kNumFeatures>& stats,
             MetricSummary& summary) {
    const double n = static_cast<double>(ref.size());
    double var_sum = 0;
    for (int k = 0; k < kNumFeatures; ++k) {
        auto& st = stats[k];
        double cm = 0, rm = 0;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            cm += (cand[i].*field)[k];
            rm += (ref[i].*field)[k];
        }
        cm /= n;
        rm /= n;
        st.raw_reference_mean = rm;
        if (rm == 0.0) {
            st.excluded = true;
            st.candidate_mean = cm;
            st.reference_mean = 0;
            continue;
        }
        st.candidate_mean = cm / rm;
        st.reference_mean = 1.0;
        st.variation_pct = 100.0 * (st.candidate_mean - 1.0);
        std::vector<double> diffs(ref.size());
        int nonzero = 0;
        for (std::size_t i = 0; i < ref.size(); ++i) {
            diffs[i] = (cand[i].*field)[k] / rm - (ref[i].*field)[k] / rm;
            nonzero += diffs[i] != 0.0;
        }
        st.p = nonzero >= kMinWilcoxonN ? wilcoxon_one_sided(diffs).p : 1.0;
        st.significant = st.p < kSignificance;
        ++summary.compared;
        summary.improved += st.significant;
        var_sum += st.variation_pct;
    }
    summary.average_variation_pct = summary.compared > 0 ? var_sum / summary.compared : 0.0;
}

}  // namespace

InterpReport aggregate_report(const std::vector<SequenceMetrics>& candidate, const std::vector<SequenceMetrics>& reference) {
    if (candidate.size() != reference.size())
        throw ValidationError("candidate has " + std::to_string(candidate.size()) + " sequences, reference " +
                              std::to_string(reference.size()));
    if (reference.empty()) throw ValidationError("no sequences to compare");
    InterpReport r;
    r.sequences = static_cast<int>(reference.size());
    compare(candidate, reference, &SequenceMetrics::smoothness, r.smoothness, r.smoothness_summary);
    compare(candidate, reference, &SequenceMetrics::nonlinearity, r.nonlinearity, r.nonlinearity_summary);
    return r;
}

namespace {

std::string num(double v) { return format_sig(v, 9); }

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%+.1f%%", v);
    return buf;
}

}  // namespace

std::string report_csv(const InterpReport& r) {
    std::string out = "metric,feature,candidate_mean,reference_mean,reference_raw_mean,variation_pct,p_value,significant,excluded\n";
    auto rows = [&](const char* metric, const std::array<FeatureStat, kNumFeatures>& stats) {
        for (int k = 0; k < kNumFeatures; ++k) {
            const auto& s = stats[k];
            out += std::string(metric) + "," + feature_names()[k] + "," + num(s.candidate_mean) + "," + num(s.reference_mean) + "," +
                   num(s.raw_reference_mean) + "," + num(s.variation_pct) + "," + num(s.p) + "," + (s.significant ? "1" : "0") +
                   "," + (s.excluded ? "1" : "0") + "\n";
        }
    };
    rows("smoothness", r.smoothness);
    rows("nonlinearity", r.nonlinearity);
    out += "summary,candidate,method,improved,compared,average_variation_pct,sequences\n";
    auto summary = [&](const char* metric, const MetricSummary& s) {
        out += std::string("summary,") + r.candidate + "," + metric + "," + std::to_string(s.improved) + "," +
               std::to_string(s.compared) + "," + num(s.average_variation_pct) + "," + std::to_string(r.sequences) + "\n";
    };
    summary("smoothness", r.smoothness_summary);
    summary("nonlinearity", r.nonlinearity_summary);
    return out;
}

std::string report_table(const InterpReport& r) {
    std::ostringstream os;
    char line[256];
    os << "Interpolation versus " << r.reference << " per-parameter interpolation (" << r.sequences << " sequences, "
       << kNumFeatures << " features)\n\n";
    std::snprintf(line, sizeof line, "%-12s | %-30s | %-30s\n", "model", "smoothness", "nonlinearity");
    os << line;
    std::snprintf(line, sizeof line, "%-12s | %-14s %-15s | %-14s %-15s\n", "", "improved", "avg. variation", "improved",
                  "avg. variation");
    os << line;
    os << std::string(79, '-') << "\n";
    std::snprintf(line, sizeof line, "%-12s | %-14s %-15s | %-14s %-15s\n", r.reference.c_str(), "-", "-", "-", "-");
    os << line;
    const auto frac = [](const MetricSummary& s) { return std::to_string(s.improved) + "/" + std::to_string(s.compared); };
    std::snprintf(line, sizeof line, "%-12s | %-14s %-15s | %-14s %-15s\n", r.candidate.c_str(), frac(r.smoothness_summary).c_str(),
                  pct(r.smoothness_summary.average_variation_pct).c_str(), frac(r.nonlinearity_summary).c_str(),
                  pct(r.nonlinearity_summary.average_variation_pct).c_str());
    os << line << "\n";
    std::snprintf(line, sizeof line, "%-30s %-10s %10s %10s %9s %10s %4s\n", "feature", "metric", "candidate", "reference",
                  "variation", "p", "sig");
    os << line;
    auto rows = [&](const char* metric, const std::array<FeatureStat, kNumFeatures>& stats) {
        for (int k = 0; k < kNumFeatures; ++k) {
            const auto& s = stats[k];
            if (s.excluded) {
                std::snprintf(line, sizeof line, "%-30s %-10s %10s %10s %9s %10s %4s\n", feature_names()[k].c_str(), metric, "n/a",
                              "0", "n/a", "n/a", "");
            } else {
                std::snprintf(line, sizeof line, "%-30s %-10s %10.4f %10.4f %9s %10.3g %4s\n", feature_names()[k].c_str(), metric,
                              s.candidate_mean, s.reference_mean, pct(s.variation_pct).c_str(), s.p, s.significant ? "*" : "");
            }
            os << line;
        }
    };
    rows("smooth", r.smoothness);
    rows("nonlinear", r.nonlinearity);
    os << "\nValues are normalized by the reference mean of each feature; * marks one-sided p < 0.05.\n";
    return os.str();
}

std::string features_csv(const std::vector<FeatureRow>& rows) {
    std::string out = "pair,method,t";
    for (const auto& n : feature_names()) out += "," + n;
    out += "\n";
    for (const auto& r : rows) {
        out += r.pair_id + "," + r.method + "," + std::to_string(r.t);
        for (double v : r.features.values) out += "," + format_sig(v, 17);
        out += "\n";
    }
    return out;
}

std::vector<FeatureRow> parse_features_csv(std::string_view text) {
    std::vector<FeatureRow> rows;
    std::istringstream in{std::string(text)};
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (lineno == 1) {
            if (line.rfind("pair,method,t,", 0) != 0) throw ParseError("features CSV: bad header");
            continue;
        }
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (;;) {
            const auto comma = line.find(',', start);
            cells.push_back(line.substr(start, comma - start));
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        if (cells.size() != 3 + kNumFeatures)
            throw ParseError("features CSV line " + std::to_string(lineno) + ": expected " + std::to_string(3 + kNumFeatures) +
                             " fields, got " + std::to_string(cells.size()));
        FeatureRow r;
        r.pair_id = cells[0];
        r.method = cells[1];
        try {
            r.t = std::stoi(cells[2]);
            for (int k = 0; k < kNumFeatures; ++k) r.features.values[k] = std::stod(cells[3 + k]);
        } catch (const std::exception&) {
            throw ParseError("features CSV line " + std::to_string(lineno) + ": bad number");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

InterpReport report_from_features(const std::vector<FeatureRow>& rows, const std::string& candidate, const std::string& reference) {
    std::map<std::string, std::map<std::string, std::map<int, FeatureVector>>> by_pair;
    for (const auto& r : rows) {
        if (r.method != candidate && r.method != reference) continue;
        if (!by_pair[r.pair_id][r.method].emplace(r.t, r.features).second)
            throw ValidationError("duplicate feature row for " + r.pair_id + "/" + r.method + "/" + std::to_string(r.t));
    }
    std::vector<SequenceMetrics> cand, ref;
    for (const auto& [pair, methods] : by_pair) {
        auto series = [&](const std::string& m) {
            const auto it = methods.find(m);
            if (it == methods.end()) throw ValidationError("pair " + pair + " has no '" + m + "' sequence");
            std::vector<FeatureVector> out;
            int expect = 1;
            for (const auto& [t, fv] : it->second) {
                if (t != expect++) throw ValidationError("pair " + pair + "/" + m + ": steps are not 1..T");
                out.push_back(fv);
            }
            return out;
        };
        const auto c = series(candidate), r = series(reference);
        if (c.size() != r.size()) throw ValidationError("pair " + pair + ": sequence lengths differ");
        cand.push_back(sequence_metrics(c));
        ref.push_back(sequence_metrics(r));
    }
    InterpReport rep = aggregate_report(cand, ref);
    rep.candidate = candidate;
    rep.reference = reference;
    return rep;
}

}  // namespace spinterp
