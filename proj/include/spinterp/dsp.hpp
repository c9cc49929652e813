#pragma once

#include <span>
#include <vector>

namespace spinterp::dsp {

/// Magnitude spectrum of a real frame, bins 0..n/2. Thread-safe: plans are
/// shared, buffers are per call.
class RealFft {
public:
    explicit RealFft(int n);

    int size() const { return n_; }
    int num_bins() const { return n_ / 2 + 1; }
    void magnitude(std::span<const double> frame, std::span<double> out) const;

private:
    int n_;
    void* plan_;
};

/// Periodic Hann window.
std::vector<double> hann_window(int n);

struct StftConfig {
    int window = 1024;
    int hop = 256;
    int frames = 64;
};

/// Reflect-pads window/2 samples at both ends, frames with a Hann window and
/// returns |X| / sum(w) per frame (frames x bins, row-major). Truncates or
/// zero-fills to exactly cfg.frames frames.
std::vector<double> stft_magnitude(std::span<const double> signal, const StftConfig& cfg);

/// Frame start offsets into the reflect-padded signal.
int padded_frame_count(int signal_length, const StftConfig& cfg);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Triangular mel filterbank (HTK mel scale, unit peak), mel_bins x fft_bins, row-major.
std::vector<double> mel_filterbank(int mel_bins, int fft_size, double sample_rate, double fmin, double fmax);

/// Center frequency (Hz) of each mel filter.
std::vector<double> mel_centers(int mel_bins, double fmin, double fmax);

}  // namespace spinterp::dsp
