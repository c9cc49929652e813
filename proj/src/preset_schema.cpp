#include "spinterp/preset_schema.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

namespace spinterp {

using nlohmann::json;

QuantGrid::QuantGrid(int steps) : steps_(steps) {
    if (steps < 2) throw ValidationError("quantization grid cardinality < 2 (got " + std::to_string(steps) + ")");
}

int QuantGrid::nearest_index(double v) const {
    const int last = steps_ - 1;
    const int guess = std::clamp(static_cast<int>(std::floor(v * last)), 0, last);
    int best = guess;
    double best_dist = std::abs(v - value(guess));
    for (int i = std::max(0, guess - 1); i <= std::min(last, guess + 2); ++i) {
        const double d = std::abs(v - value(i));
        if (d < best_dist || (d == best_dist && i > best)) {
            best = i;
            best_dist = d;
        }
    }
    return best;
}

bool QuantGrid::on_grid(double v, double tol) const {
    if (!(v >= -tol && v <= 1.0 + tol)) return false;
    return std::abs(v - value(nearest_index(v))) < tol;
}

double quantize(double v, const QuantGrid& grid) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::out_of_range("quantize: value " + format_sig(v, 17) + " outside [0, 1]");
    return grid.value(grid.nearest_index(v));
}

int SynthDescriptor::num_categorical() const {
    return static_cast<int>(std::count_if(params.begin(), params.end(), [](const ParamSpec& p) { return p.categorical(); }));
}

int SynthDescriptor::num_numerical() const { return size() - num_categorical(); }

std::optional<int> SynthDescriptor::find(std::string_view param_name) const {
    for (const auto& p : params)
        if (p.name == param_name) return p.index;
    return std::nullopt;
}

std::string SynthDescriptor::to_document() const {
    std::ostringstream out;
    out << "{\n"
        << "  \"format\": \"" << kDescriptorFormat << "\",\n"
        << "  \"name\": " << json(name).dump() << ",\n"
        << "  \"version\": " << json(version).dump() << ",\n"
        << "  \"algorithm_param\": " << json(params.at(algorithm_param).name).dump() << ",\n"
        << "  \"params\": [\n";
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto& p = params[i];
        out << "    {\"name\": " << json(p.name).dump() << ", \"index\": " << p.index << ", \"kind\": ";
        if (p.categorical())
            out << "\"categorical\", \"num_classes\": " << p.num_classes << "}";
        else
            out << "\"numerical\", \"steps\": " << p.grid.steps() << "}";
        out << (i + 1 < params.size() ? ",\n" : "\n");
    }
    out << "  ]\n}\n";
    return out.str();
}

std::uint64_t SynthDescriptor::hash() const { return fnv1a64(to_document()); }

namespace {

template <class T>
T require_field(const json& obj, const char* key, const std::string& context) {
    if (!obj.contains(key)) throw ParseError(context + ": missing field '" + key + "'");
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ParseError(context + "." + key + ": " + e.what());
    }
}

}  // namespace

SynthDescriptor load_descriptor(std::string_view text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        // nlohmann reports "at line L, column C" in the message.
        throw ParseError(std::string("descriptor: ") + e.what());
    }
    if (!doc.is_object()) throw ParseError("descriptor: top level must be an object");
    const auto format = require_field<std::string>(doc, "format", "descriptor");
    if (format != kDescriptorFormat)
        throw ParseError("descriptor.format: expected '" + std::string(kDescriptorFormat) + "', got '" + format + "'");

    SynthDescriptor d;
    d.name = require_field<std::string>(doc, "name", "descriptor");
    d.version = require_field<std::string>(doc, "version", "descriptor");
    const auto algorithm_name = require_field<std::string>(doc, "algorithm_param", "descriptor");
    if (!doc.contains("params") || !doc["params"].is_array()) throw ParseError("descriptor: 'params' must be an array");

    std::vector<ParamSpec> specs;
    const auto& list = doc["params"];
    for (std::size_t i = 0; i < list.size(); ++i) {
        const std::string ctx = "params[" + std::to_string(i) + "]";
        const auto& item = list[i];
        if (!item.is_object()) throw ParseError(ctx + ": must be an object");
        ParamSpec spec;
        spec.name = require_field<std::string>(item, "name", ctx);
        spec.index = require_field<int>(item, "index", ctx);
        const auto kind = require_field<std::string>(item, "kind", ctx);
        if (kind == "categorical") {
            spec.kind = ParamKind::Categorical;
            spec.num_classes = require_field<int>(item, "num_classes", ctx);
            if (spec.num_classes < 2)
                throw ValidationError("parameter '" + spec.name + "': categorical cardinality < 2");
        } else if (kind == "numerical") {
            spec.kind = ParamKind::Numerical;
            const int steps = require_field<int>(item, "steps", ctx);
            if (steps < 2) throw ValidationError("parameter '" + spec.name + "': grid cardinality < 2");
            spec.grid = QuantGrid(steps);
        } else {
            throw ParseError(ctx + ".kind: expected 'categorical' or 'numerical', got '" + kind + "'");
        }
        specs.push_back(std::move(spec));
    }
    if (specs.empty()) throw ValidationError("descriptor has no parameters");

    const int count = static_cast<int>(specs.size());
    std::map<int, std::string> by_index;
    std::map<std::string, int> by_name;
    for (const auto& s : specs) {
        if (s.index < 0 || s.index >= count)
            throw ValidationError("parameter '" + s.name + "': index " + std::to_string(s.index) + " outside [0, " +
                                  std::to_string(count) + ")");
        if (auto [it, inserted] = by_index.emplace(s.index, s.name); !inserted)
            throw ValidationError("duplicate index " + std::to_string(s.index) + " for parameters '" + it->second +
                                  "' and '" + s.name + "'");
        if (auto [it, inserted] = by_name.emplace(s.name, s.index); !inserted)
            throw ValidationError("duplicate parameter name '" + s.name + "'");
    }
    std::sort(specs.begin(), specs.end(), [](const ParamSpec& a, const ParamSpec& b) { return a.index < b.index; });
    d.params = std::move(specs);

    const auto algo = d.find(algorithm_name);
    if (!algo) throw ValidationError("algorithm_param '" + algorithm_name + "' is not a declared parameter");
    const auto& algo_spec = d.params[*algo];
    if (!algo_spec.categorical()) throw ValidationError("algorithm_param '" + algorithm_name + "' must be categorical");
    d.algorithm_param = *algo;
    d.num_algorithms = algo_spec.num_classes;
    return d;
}

SynthDescriptor load_descriptor_file(const std::string& path) { return load_descriptor(read_file(path)); }

const SynthDescriptor& builtin_descriptor() {
    static const SynthDescriptor d = load_descriptor(builtin_descriptor_document());
    return d;
}

namespace {

std::string field_of(const std::string& name) {
    const auto dot = name.rfind('.');
    return dot == std::string::npos ? name : name.substr(dot + 1);
}

}  // namespace

Preset sample_random_preset(const SynthDescriptor& descriptor, std::uint64_t seed) {
    Rng rng(seed);
    Preset preset;
    preset.values.resize(descriptor.params.size());
    for (const auto& p : descriptor.params) {
        double v;
        if (p.categorical()) {
            v = static_cast<double>(rng.below(static_cast<std::uint64_t>(p.num_classes)));
        } else if (field_of(p.name) == "level") {
            // Operators are off, mid or high so the corpus carries on/off structure.
            const double u = rng.uniform();
            if (u < 0.2)
                v = 0.0;
            else if (u < 0.5)
                v = quantize(rng.uniform(0.35, 0.65), p.grid);
            else
                v = quantize(rng.uniform(0.8, 1.0), p.grid);
        } else {
            v = p.grid.value(static_cast<int>(rng.below(static_cast<std::uint64_t>(p.grid.steps()))));
        }
        preset.values[p.index] = v;
    }
    return preset;
}

std::vector<std::string> validate_preset(const SynthDescriptor& descriptor, const Preset& preset) {
    std::vector<std::string> violations;
    if (preset.values.size() != descriptor.params.size()) {
        violations.push_back("length " + std::to_string(preset.values.size()) + " != " + std::to_string(descriptor.size()));
        return violations;
    }
    for (const auto& p : descriptor.params) {
        const double v = preset.values[p.index];
        const std::string where = " at param " + std::to_string(p.index) + " (" + p.name + ")";
        if (!std::isfinite(v)) {
            violations.push_back("non-finite value" + where);
        } else if (p.categorical()) {
            if (v != std::floor(v))
                violations.push_back("non-integer class" + where);
            else if (v < 0 || v >= p.num_classes)
                violations.push_back("class out of range" + where);
        } else if (!p.grid.on_grid(v)) {
            violations.push_back("off-grid" + where);
        }
    }
    return violations;
}

void require_valid(const SynthDescriptor& descriptor, const Preset& preset) {
    const auto violations = validate_preset(descriptor, preset);
    if (violations.empty()) return;
    std::string msg = "invalid preset: " + violations.front();
    if (violations.size() > 1) msg += " (+" + std::to_string(violations.size() - 1) + " more)";
    throw ValidationError(msg);
}

std::vector<int> preset_bins(const SynthDescriptor& descriptor, const Preset& preset) {
    std::vector<int> bins(descriptor.params.size());
    for (const auto& p : descriptor.params) {
        const double v = preset.values.at(p.index);
        bins[p.index] = p.categorical() ? static_cast<int>(v) : p.grid.nearest_index(v);
    }
    return bins;
}

std::string serialize_presets(const SynthDescriptor& descriptor, const std::vector<PresetRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        if (r.preset.values.size() != descriptor.params.size())
            throw ValidationError("preset " + std::to_string(r.id) + " has wrong length");
        out += std::to_string(r.id);
        out += ' ';
        out += std::to_string(r.seed);
        for (const auto& p : descriptor.params) {
            const double v = r.preset.values[p.index];
            out += ' ';
            out += p.categorical() ? std::to_string(static_cast<long long>(v)) : format_sig(v, 9);
        }
        out += '\n';
    }
    return out;
}

std::vector<PresetRecord> parse_presets(const SynthDescriptor& descriptor, std::string_view document) {
    std::vector<PresetRecord> records;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    const auto P = descriptor.params.size();
    while (pos < document.size()) {
        const auto end = std::min(document.find('\n', pos), document.size());
        const std::string line(document.substr(pos, end - pos));
        pos = end + 1;
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "preset line " + std::to_string(line_no);

        std::istringstream fields(line);
        std::vector<std::string> tokens;
        for (std::string tok; fields >> tok;) tokens.push_back(tok);
        if (tokens.size() != P + 2)
            throw ParseError(where + ": expected id, seed and " + std::to_string(P) + " values, got " +
                             std::to_string(tokens.size() < 2 ? 0 : tokens.size() - 2) + " values");

        auto parse_u64 = [&](const std::string& tok, const char* what) {
            std::uint64_t v = 0;
            auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
            if (ec != std::errc() || ptr != tok.data() + tok.size())
                throw ParseError(where + ": malformed " + what + " '" + tok + "'");
            return v;
        };
        PresetRecord rec;
        rec.id = parse_u64(tokens[0], "id");
        rec.seed = parse_u64(tokens[1], "seed");
        rec.preset.values.resize(P);
        for (const auto& p : descriptor.params) {
            const std::string& tok = tokens[p.index + 2];
            std::size_t used = 0;
            double v = 0;
            try {
                v = std::stod(tok, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used != tok.size()) throw ParseError(where + ": malformed value '" + tok + "' for " + p.name);
            if (p.categorical()) {
                if (v != std::floor(v) || v < 0 || v >= p.num_classes)
                    throw ParseError(where + ": class '" + tok + "' out of range for " + p.name);
            } else {
                // Values are written with 9 significant digits; snap back onto the exact grid point.
                if (!p.grid.on_grid(v, 1e-7)) throw ParseError(where + ": off-grid value '" + tok + "' for " + p.name);
                v = p.grid.value(p.grid.nearest_index(v));
            }
            rec.preset.values[p.index] = v;
        }
        records.push_back(std::move(rec));
    }
    return records;
}

}  // namespace spinterp
