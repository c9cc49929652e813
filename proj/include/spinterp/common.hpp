#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace spinterp {

// Error hierarchy. The CLI maps these onto exit codes.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ParseError : Error {
    using Error::Error;
};

struct ValidationError : Error {
    using Error::Error;
};

// A non-finite value appeared during a forward/backward pass or in a loss term.
struct NumericalError : Error {
    using Error::Error;
};

struct DescriptorMismatch : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

/// Seeded generator with platform-independent conversions (std distributions
/// are implementation-defined, so they are avoided wherever output must be
/// reproducible from a seed).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform in [0, 1).
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

    /// Uniform in the open interval (0, 1).
    double uniform_open() {
        double u;
        do {
            u = uniform();
        } while (u == 0.0);
        return u;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n) by rejection (no modulo bias).
    std::uint64_t below(std::uint64_t n);

    /// Standard normal (Box-Muller, one variate per call).
    double normal();

private:
    std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; derives independent child seeds from (seed, index).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

/// FNV-1a 64-bit hash, used for descriptor hashes and artifact checksums.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);
std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

std::string hex64(std::uint64_t v);

/// Shortest decimal with the given number of significant digits ("%.*g").
std::string format_sig(double v, int digits);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

}  // namespace spinterp
