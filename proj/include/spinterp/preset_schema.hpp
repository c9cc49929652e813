#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "spinterp/common.hpp"

namespace spinterp {

inline constexpr std::string_view kDescriptorFormat = "spinterp-descriptor/1";

/// Uniform grid of Q points i/(Q-1) on [0, 1].
class QuantGrid {
public:
    explicit QuantGrid(int steps);

    int steps() const { return steps_; }
    double bin_width() const { return 1.0 / static_cast<double>(steps_ - 1); }
    double value(int i) const { return static_cast<double>(i) / static_cast<double>(steps_ - 1); }

    /// Index of the nearest grid point; ties go to the higher index.
    int nearest_index(double v) const;
    bool on_grid(double v, double tol = 1e-9) const;

private:
    int steps_;
};

/// Nearest grid value to v in [0, 1], ties rounding up. Throws on out-of-range input.
double quantize(double v, const QuantGrid& grid);

enum class ParamKind { Categorical, Numerical };

struct ParamSpec {
    std::string name;
    ParamKind kind = ParamKind::Numerical;
    int index = 0;
    int num_classes = 0;          // categorical only
    QuantGrid grid{2};            // numerical only

    bool categorical() const { return kind == ParamKind::Categorical; }
    /// Number of distinct values the parameter can take.
    int cardinality() const { return categorical() ? num_classes : grid.steps(); }
};

struct SynthDescriptor {
    std::string name;
    std::string version;
    std::vector<ParamSpec> params;   // ordered by index
    int algorithm_param = 0;
    int num_algorithms = 0;

    int size() const { return static_cast<int>(params.size()); }
    int num_categorical() const;
    int num_numerical() const;
    std::optional<int> find(std::string_view param_name) const;

    /// Canonical document text; load_descriptor(to_document()) reproduces *this.
    std::string to_document() const;
    /// FNV-1a of the canonical document; stored in corpus and checkpoint files.
    std::uint64_t hash() const;
};

SynthDescriptor load_descriptor(std::string_view text);
SynthDescriptor load_descriptor_file(const std::string& path);

/// The shipped 29-parameter mini-FM descriptor (identical to data/mini_fm.json).
const std::string& builtin_descriptor_document();
const SynthDescriptor& builtin_descriptor();

struct Preset {
    // Categorical entries hold class indices; numerical entries hold grid values.
    std::vector<double> values;

    friend bool operator==(const Preset&, const Preset&) = default;
};

struct PresetRecord {
    std::uint64_t id = 0;
    std::uint64_t seed = 0;
    Preset preset;

    friend bool operator==(const PresetRecord&, const PresetRecord&) = default;
};

Preset sample_random_preset(const SynthDescriptor& descriptor, std::uint64_t seed);

/// Empty iff the preset satisfies every descriptor invariant.
std::vector<std::string> validate_preset(const SynthDescriptor& descriptor, const Preset& preset);
void require_valid(const SynthDescriptor& descriptor, const Preset& preset);

/// Bin index of every parameter (class index or grid index).
std::vector<int> preset_bins(const SynthDescriptor& descriptor, const Preset& preset);

std::string serialize_presets(const SynthDescriptor& descriptor, const std::vector<PresetRecord>& records);
std::vector<PresetRecord> parse_presets(const SynthDescriptor& descriptor, std::string_view document);

}  // namespace spinterp
