#include "spinterp/dsp.hpp"

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <stdexcept>

#include <fftw3.h>

namespace spinterp::dsp {

namespace {

// fftw planning is not thread-safe; execution with fresh buffers is.
std::mutex& plan_mutex() {
    static std::mutex m;
    return m;
}

fftw_plan plan_for(int n) {
    static std::map<int, fftw_plan> plans;
    std::lock_guard lock(plan_mutex());
    auto it = plans.find(n);
    if (it != plans.end()) return it->second;
    double* in = fftw_alloc_real(static_cast<std::size_t>(n));
    fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    fftw_plan p = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    if (!p) throw std::runtime_error("fftw: failed to plan size " + std::to_string(n));
    plans.emplace(n, p);
    return p;
}

struct FftwDeleter {
    void operator()(void* p) const { fftw_free(p); }
};

}  // namespace

RealFft::RealFft(int n) : n_(n), plan_(nullptr) {
    if (n < 2 || n % 2 != 0) throw std::invalid_argument("RealFft: size must be even and >= 2");
    plan_ = plan_for(n);
}

void RealFft::magnitude(std::span<const double> frame, std::span<double> out) const {
    if (static_cast<int>(frame.size()) != n_ || static_cast<int>(out.size()) != num_bins())
        throw std::invalid_argument("RealFft::magnitude: buffer size mismatch");
    std::unique_ptr<double, FftwDeleter> in(fftw_alloc_real(static_cast<std::size_t>(n_)));
    std::unique_ptr<fftw_complex, FftwDeleter> spec(fftw_alloc_complex(static_cast<std::size_t>(num_bins())));
    std::copy(frame.begin(), frame.end(), in.get());
    fftw_execute_dft_r2c(static_cast<fftw_plan>(plan_), in.get(), spec.get());
    for (int k = 0; k < num_bins(); ++k) out[k] = std::hypot(spec.get()[k][0], spec.get()[k][1]);
}

std::vector<double> hann_window(int n) {
    std::vector<double> w(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
    return w;
}

int padded_frame_count(int signal_length, const StftConfig& cfg) {
    const int padded = signal_length + 2 * (cfg.window / 2);
    return padded < cfg.window ? 0 : 1 + (padded - cfg.window) / cfg.hop;
}

std::vector<double> stft_magnitude(std::span<const double> signal, const StftConfig& cfg) {
    const int n = static_cast<int>(signal.size());
    const int half = cfg.window / 2;
    if (n <= half) throw std::invalid_argument("stft: signal shorter than half a window");

    std::vector<double> padded(static_cast<std::size_t>(n + 2 * half));
    for (int i = 0; i < static_cast<int>(padded.size()); ++i) {
        int src = i - half;
        if (src < 0) src = -src;
        if (src >= n) src = 2 * (n - 1) - src;
        padded[i] = signal[src];
    }

    const auto window = hann_window(cfg.window);
    double wsum = 0;
    for (double w : window) wsum += w;

    RealFft fft(cfg.window);
    const int bins = fft.num_bins();
    const int available = padded_frame_count(n, cfg);
    std::vector<double> out(static_cast<std::size_t>(cfg.frames) * bins, 0.0);
    std::vector<double> frame(static_cast<std::size_t>(cfg.window));
    for (int f = 0; f < std::min(cfg.frames, available); ++f) {
        const double* src = padded.data() + static_cast<std::ptrdiff_t>(f) * cfg.hop;
        for (int i = 0; i < cfg.window; ++i) frame[i] = src[i] * window[i];
        std::span<double> dst(out.data() + static_cast<std::ptrdiff_t>(f) * bins, static_cast<std::size_t>(bins));
        fft.magnitude(frame, dst);
        for (double& v : dst) v /= wsum;
    }
    return out;
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_edges(int mel_bins, double fmin, double fmax) {
    const double lo = hz_to_mel(fmin), hi = hz_to_mel(fmax);
    std::vector<double> edges(static_cast<std::size_t>(mel_bins + 2));
    for (int i = 0; i < mel_bins + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (mel_bins + 1));
    return edges;
}

}  // namespace

std::vector<double> mel_centers(int mel_bins, double fmin, double fmax) {
    const auto edges = mel_edges(mel_bins, fmin, fmax);
    return {edges.begin() + 1, edges.end() - 1};
}

std::vector<double> mel_filterbank(int mel_bins, int fft_size, double sample_rate, double fmin, double fmax) {
    const int bins = fft_size / 2 + 1;
    const auto edges = mel_edges(mel_bins, fmin, fmax);
    std::vector<double> fb(static_cast<std::size_t>(mel_bins) * bins, 0.0);
    for (int m = 0; m < mel_bins; ++m) {
        const double lo = edges[m], center = edges[m + 1], hi = edges[m + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = k * sample_rate / fft_size;
            double w = 0;
            if (f > lo && f <= center)
                w = (f - lo) / (center - lo);
            else if (f > center && f < hi)
                w = (hi - f) / (hi - center);
            fb[static_cast<std::size_t>(m) * bins + k] = w;
        }
    }
    return fb;
}

}  // namespace spinterp::dsp
