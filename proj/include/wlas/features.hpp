#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <vector>

#include "wlas/ndarray.hpp"

namespace wlas {

// Input featurization: MFCC extraction, sliding-window frame stacking, and
// SNR-controlled additive white Gaussian noise. All functions are pure; RNG
// state is per-call and seeded explicitly.

struct MfccConfig {
    double window_s = 0.025;
    double hop_s = 0.010;
    int fft_size = 512;
    int mel_filters = 26;
    int coefficients = 13;
    double preemphasis = 0.97;
    double log_floor = 1e-10;
};

template <typename Real>
struct AudioFeatures {
    NDArray<Real> frames;  // (T, coefficients)
    int frame_rate_hz = 100;
};

template <typename Real>
struct VideoWindows {
    NDArray<Real> windows;  // (T-4, 5*H*W), window i stacks raw frames i..i+4
    int height = 0;
    int width = 0;
    int frame_rate_hz = 25;
};

struct NoiseConfig {
    bool clean = true;
    double snr_db = 0.0;
    std::uint64_t seed = 0;

    static NoiseConfig clean_config() { return {}; }
    static NoiseConfig at_snr(double db, std::uint64_t seed) { return {false, db, seed}; }
};

namespace dsp {

// Iterative radix-2 FFT, in place. Length must be a power of two.
inline void fft(std::vector<std::complex<double>>& a) {
    const std::size_t n = a.size();
    check(n > 0 && (n & (n - 1)) == 0, "fft: length must be a power of two");
    for (std::size_t i = 1, j = 0; i < n; ++i) {
        std::size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * 3.14159265358979323846 / static_cast<double>(len);
        const std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (std::size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0);
            for (std::size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = a[i + k];
                const std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular mel filterbank evaluated at exact bin frequencies.
// Returns (mel_filters, fft_size/2 + 1) weights.
inline std::vector<std::vector<double>> mel_filterbank(int mel_filters, int fft_size, int sample_rate_hz) {
    const int bins = fft_size / 2 + 1;
    const double mel_lo = hz_to_mel(0.0);
    const double mel_hi = hz_to_mel(sample_rate_hz / 2.0);
    std::vector<double> centers(static_cast<std::size_t>(mel_filters) + 2);
    for (int i = 0; i < mel_filters + 2; ++i)
        centers[static_cast<std::size_t>(i)] =
            mel_to_hz(mel_lo + (mel_hi - mel_lo) * i / (mel_filters + 1));
    std::vector<std::vector<double>> weights(static_cast<std::size_t>(mel_filters),
                                             std::vector<double>(static_cast<std::size_t>(bins), 0.0));
    for (int j = 0; j < mel_filters; ++j) {
        const double lo = centers[static_cast<std::size_t>(j)];
        const double mid = centers[static_cast<std::size_t>(j) + 1];
        const double hi = centers[static_cast<std::size_t>(j) + 2];
        for (int k = 0; k < bins; ++k) {
            const double f = static_cast<double>(k) * sample_rate_hz / fft_size;
            double w = 0.0;
            if (f > lo && f < mid)
                w = (f - lo) / (mid - lo);
            else if (f >= mid && f < hi)
                w = (hi - f) / (hi - mid);
            weights[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] = w;
        }
    }
    return weights;
}

}  // namespace dsp

inline int mfcc_frame_count(std::int64_t samples, int sample_rate_hz, const MfccConfig& cfg) {
    const auto win = static_cast<std::int64_t>(std::lround(cfg.window_s * sample_rate_hz));
    const auto hop = static_cast<std::int64_t>(std::lround(cfg.hop_s * sample_rate_hz));
    if (samples < win) return 0;
    return static_cast<int>((samples - win) / hop) + 1;
}

template <typename Real>
AudioFeatures<Real> compute_mfcc(const std::vector<double>& waveform, int sample_rate_hz,
                                 const MfccConfig& cfg = {}) {
    check(sample_rate_hz >= 8000, "compute_mfcc: sample rate must be at least 8000 Hz");
    const int win = static_cast<int>(std::lround(cfg.window_s * sample_rate_hz));
    const int hop = static_cast<int>(std::lround(cfg.hop_s * sample_rate_hz));
    check(static_cast<std::int64_t>(waveform.size()) >= win,
          "compute_mfcc: waveform shorter than one analysis window");
    check(win <= cfg.fft_size, "compute_mfcc: analysis window exceeds fft_size");
    const int frames = mfcc_frame_count(static_cast<std::int64_t>(waveform.size()), sample_rate_hz, cfg);

    std::vector<double> emphasized(waveform.size());
    emphasized[0] = waveform[0];
    for (std::size_t i = 1; i < waveform.size(); ++i)
        emphasized[i] = waveform[i] - cfg.preemphasis * waveform[i - 1];

    std::vector<double> hamming(static_cast<std::size_t>(win));
    for (int i = 0; i < win; ++i)
        hamming[static_cast<std::size_t>(i)] =
            0.54 - 0.46 * std::cos(2.0 * 3.14159265358979323846 * i / (win - 1));

    const auto bank = dsp::mel_filterbank(cfg.mel_filters, cfg.fft_size, sample_rate_hz);
    const int bins = cfg.fft_size / 2 + 1;

    NDArray<Real> out({frames, cfg.coefficients});
    std::vector<std::complex<double>> buf(static_cast<std::size_t>(cfg.fft_size));
    std::vector<double> logmel(static_cast<std::size_t>(cfg.mel_filters));
    for (int t = 0; t < frames; ++t) {
        std::fill(buf.begin(), buf.end(), std::complex<double>(0.0));
        const std::int64_t off = static_cast<std::int64_t>(t) * hop;
        for (int i = 0; i < win; ++i)
            buf[static_cast<std::size_t>(i)] =
                emphasized[static_cast<std::size_t>(off + i)] * hamming[static_cast<std::size_t>(i)];
        dsp::fft(buf);
        for (int j = 0; j < cfg.mel_filters; ++j) {
            double e = 0.0;
            for (int k = 0; k < bins; ++k)
                e += bank[static_cast<std::size_t>(j)][static_cast<std::size_t>(k)] *
                     std::norm(buf[static_cast<std::size_t>(k)]);
            logmel[static_cast<std::size_t>(j)] = std::log(std::max(e, cfg.log_floor));
        }
        // orthonormal DCT-II, first `coefficients` terms
        const int n = cfg.mel_filters;
        for (int i = 0; i < cfg.coefficients; ++i) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j)
                acc += logmel[static_cast<std::size_t>(j)] *
                       std::cos(3.14159265358979323846 * i * (j + 0.5) / n);
            const double scale = (i == 0) ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
            out.at(t, i) = static_cast<Real>(scale * acc);
        }
    }
    check(out.all_finite(), "compute_mfcc: produced non-finite features");
    return {std::move(out), 100};
}

// Early-fusion stacking: window i holds raw frames i..i+4 in temporal order.
template <typename Real>
VideoWindows<Real> window_frames(const NDArray<Real>& video) {
    check(video.rank() == 3, "window_frames: expected video of shape (T,H,W)");
    const int t = video.dim(0), h = video.dim(1), w = video.dim(2);
    check(t >= 5, "window_frames: need at least 5 frames, got " + std::to_string(t));
    const int plane = h * w;
    NDArray<Real> out({t - 4, 5 * plane});
    for (int i = 0; i < t - 4; ++i)
        std::copy(video.data() + static_cast<std::int64_t>(i) * plane,
                  video.data() + static_cast<std::int64_t>(i + 5) * plane,
                  out.data() + static_cast<std::int64_t>(i) * 5 * plane);
    return {std::move(out), h, w, 25};
}

namespace detail {

template <typename Real>
void add_awgn_span(Real* data, std::int64_t n, const NoiseConfig& cfg) {
    if (cfg.clean) return;
    check(std::isfinite(cfg.snr_db), "add_awgn: snr_db must be finite");
    check(n > 0, "add_awgn: empty signal");
    double power = 0.0;
    for (std::int64_t i = 0; i < n; ++i) power += static_cast<double>(data[i]) * data[i];
    power /= static_cast<double>(n);
    check(power > 0.0, "add_awgn: zero-power signal cannot meet a finite SNR target");
    const double sd = std::sqrt(power / std::pow(10.0, cfg.snr_db / 10.0));
    Rng rng(cfg.seed);
    for (std::int64_t i = 0; i < n; ++i) data[i] += static_cast<Real>(sd * rng.gaussian());
}

}  // namespace detail

inline std::vector<double> add_awgn(std::vector<double> signal, const NoiseConfig& cfg) {
    detail::add_awgn_span(signal.data(), static_cast<std::int64_t>(signal.size()), cfg);
    return signal;
}

// Feature-space variant: the same SNR definition applied over feature energy.
template <typename Real>
NDArray<Real> add_awgn(NDArray<Real> features, const NoiseConfig& cfg) {
    detail::add_awgn_span(features.data(), features.size(), cfg);
    return features;
}

inline double empirical_snr_db(const std::vector<double>& clean, const std::vector<double>& noisy) {
    check(clean.size() == noisy.size() && !clean.empty(), "empirical_snr_db: length mismatch");
    double ps = 0.0, pn = 0.0;
    for (std::size_t i = 0; i < clean.size(); ++i) {
        ps += clean[i] * clean[i];
        const double d = noisy[i] - clean[i];
        pn += d * d;
    }
    check(pn > 0.0, "empirical_snr_db: signals are identical");
    return 10.0 * std::log10(ps / pn);
}

}  // namespace wlas
