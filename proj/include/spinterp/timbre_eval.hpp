#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "spinterp/dsp.hpp"
#include "spinterp/fm_synth.hpp"
#include "spinterp/interp_engine.hpp"
#include "spinterp/wilcoxon.hpp"

namespace spinterp {

inline constexpr int kNumDescriptors = 12;
inline constexpr int kNumFeatures = 2 * kNumDescriptors;

/// Descriptor names in feature order. Feature 2k is the median of descriptor k
/// over frames, 2k + 1 its IQR.
const std::array<std::string, kNumDescriptors>& descriptor_names();
const std::array<std::string, kNumFeatures>& feature_names();

struct FeatureVector {
    std::array<double, kNumFeatures> values{};
    friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct FeatureConfig {
    dsp::StftConfig stft{};  // frames is ignored: every frame of the signal is used
    double floor_hz = 40.0;        // centroid/rolloff of a silent frame and their lower bound
    double spread_floor_hz = 1.0;  // lower bound for the spread
};

/// Framewise: centroid, spread, skewness, kurtosis, rolloff-95, flatness,
/// crest, flux, frame RMS. Global: attack time, temporal centroid, effective
/// duration (IQR 0). Centroid, spread and rolloff are stored as log2(Hz).
FeatureVector extract_features(const Waveform& waveform, const FeatureConfig& cfg = {});

/// RMS of the unit-step second difference over interior steps. T >= 3.
double smoothness(std::span<const double> values);
/// RMS distance to the chord through the first and last values. T >= 2.
double nonlinearity(std::span<const double> values);

struct SequenceMetrics {
    std::array<double, kNumFeatures> smoothness{};
    std::array<double, kNumFeatures> nonlinearity{};
};

SequenceMetrics sequence_metrics(const std::vector<FeatureVector>& steps);

/// Median and IQR (linear-interpolated quartiles).
double median(std::vector<double> v);
double iqr(std::vector<double> v);

struct FeatureStat {
    double candidate_mean = 0;   // normalized by the reference mean
    double reference_mean = 0;   // 1 unless excluded
    double raw_reference_mean = 0;
    double variation_pct = 0;
    double p = 1;
    bool significant = false;
    bool excluded = false;       // reference mean is 0: the feature cannot be normalized
};

struct MetricSummary {
    int improved = 0;            // p < 0.05
    int compared = 0;            // features not excluded
    double average_variation_pct = 0;
};

struct InterpReport {
    std::string candidate = "latent";
    std::string reference = "reference";
    int sequences = 0;
    std::array<FeatureStat, kNumFeatures> smoothness{};
    std::array<FeatureStat, kNumFeatures> nonlinearity{};
    MetricSummary smoothness_summary, nonlinearity_summary;
};

inline constexpr double kSignificance = 0.05;
/// Below this many non-zero differences a feature is reported with p = 1.
inline constexpr int kMinWilcoxonN = 5;

/// Sequences are matched by position. Throws ValidationError on size mismatch.
InterpReport aggregate_report(const std::vector<SequenceMetrics>& candidate, const std::vector<SequenceMetrics>& reference);

std::string report_csv(const InterpReport& r);
std::string report_table(const InterpReport& r);

struct FeatureRow {
    std::string pair_id;
    std::string method;
    int t = 0;
    FeatureVector features;
};

/// Header: pair,method,t,<feature names>. Values round-trip exactly.
std::string features_csv(const std::vector<FeatureRow>& rows);
std::vector<FeatureRow> parse_features_csv(std::string_view text);

/// Groups rows into matched sequences for the two methods and aggregates.
InterpReport report_from_features(const std::vector<FeatureRow>& rows, const std::string& candidate = "latent",
                                  const std::string& reference = "reference");

}  // namespace spinterp
