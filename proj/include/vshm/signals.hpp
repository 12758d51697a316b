#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "vshm/detail/fft.hpp"
#include "vshm/error.hpp"
#include "vshm/rng.hpp"
#include "vshm/time_series.hpp"

namespace vshm {

//! Linear frequency sweep, f0_hz -> f1_hz over duration_s.
struct ChirpSpec {
    double amplitude_n = 1.0;
    double f0_hz = 15.0;
    double f1_hz = 30.0;
    double duration_s = 4.0;

    void validate() const {
        require(f0_hz > 0.0, "ChirpSpec: f0_hz must be > 0");
        require(f1_hz > f0_hz, "ChirpSpec: f1_hz must exceed f0_hz");
        require(duration_s > 0.0, "ChirpSpec: duration_s must be > 0");
        require(std::isfinite(amplitude_n), "ChirpSpec: amplitude must be finite");
    }
};

inline TimeSeries generate_chirp(const ChirpSpec& spec, double sample_rate_hz) {
    spec.validate();
    require(sample_rate_hz > 0.0, "generate_chirp: sample_rate_hz must be > 0");
    require(sample_rate_hz * spec.duration_s >= 2.0, "generate_chirp: record too short");
    const auto n = static_cast<std::size_t>(std::llround(spec.duration_s * sample_rate_hz));
    TimeSeries ts;
    ts.sample_rate_hz = sample_rate_hz;
    ts.samples.resize(n);
    const double rate = (spec.f1_hz - spec.f0_hz) / (2.0 * spec.duration_s);
    for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) / sample_rate_hz;
        ts.samples[k] = spec.amplitude_n * std::sin(2.0 * std::numbers::pi * (spec.f0_hz * t + rate * t * t));
    }
    return ts;
}

inline TimeSeries generate_sine(double amplitude_n, double freq_hz, double duration_s, double sample_rate_hz) {
    require(sample_rate_hz > 0.0 && duration_s > 0.0 && freq_hz > 0.0, "generate_sine: invalid arguments");
    require(freq_hz < sample_rate_hz / 2.0, "generate_sine: frequency violates Nyquist limit");
    const auto n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
    require(n >= 2, "generate_sine: record too short");
    TimeSeries ts;
    ts.sample_rate_hz = sample_rate_hz;
    ts.samples.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double t = static_cast<double>(k) / sample_rate_hz;
        ts.samples[k] = amplitude_n * std::sin(2.0 * std::numbers::pi * freq_hz * t);
    }
    return ts;
}

//! Add iid Gaussian noise sized so that 10*log10(P_signal/P_noise) = snr_db.
//! The reference power is the clean signal's mean square over the whole record.
inline TimeSeries add_noise_snr(const TimeSeries& signal, double snr_db, std::uint64_t rng_seed) {
    signal.validate();
    const double power = signal.mean_square();
    require(power > 0.0, "add_noise_snr: SNR undefined for zero-power signal");
    const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
    auto engine = make_engine(rng_seed);
    std::normal_distribution<double> dist(0.0, sigma);
    TimeSeries out = signal;
    for (double& v : out.samples) v += dist(engine);
    return out;
}

struct PsdResult {
    std::vector<double> freq_hz;
    std::vector<double> psd; // one-sided density, units^2 / Hz
};

//! Welch-averaged one-sided PSD with a Hann window.
//! Scaled so that sum(psd) * df equals the signal's mean square.
inline PsdResult power_spectral_density(const TimeSeries& signal, std::size_t segment_len,
                                        double overlap_fraction) {
    signal.validate();
    require(segment_len >= 4, "power_spectral_density: segment_len must be >= 4");
    require(segment_len <= signal.size(), "power_spectral_density: segment longer than signal");
    require(overlap_fraction >= 0.0 && overlap_fraction < 1.0,
            "power_spectral_density: overlap_fraction must be in [0,1)");

    const double fs = signal.sample_rate_hz;
    std::vector<double> window(segment_len);
    double wssq = 0.0;
    for (std::size_t i = 0; i < segment_len; ++i) {
        window[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                         static_cast<double>(segment_len));
        wssq += window[i] * window[i];
    }

    auto hop = static_cast<std::size_t>(std::llround(static_cast<double>(segment_len) * (1.0 - overlap_fraction)));
    if (hop == 0) hop = 1;

    const std::size_t n_bins = segment_len / 2 + 1;
    std::vector<double> acc(n_bins, 0.0);
    std::size_t n_segments = 0;
    std::vector<double> seg(segment_len);
    for (std::size_t start = 0; start + segment_len <= signal.size(); start += hop) {
        for (std::size_t i = 0; i < segment_len; ++i)
            seg[i] = signal.samples[start + i] * window[i];
        const auto spec = detail::rfft(seg, segment_len);
        for (std::size_t k = 0; k < n_bins; ++k)
            acc[k] += std::norm(spec[k]);
        ++n_segments;
    }

    PsdResult result;
    result.freq_hz.resize(n_bins);
    result.psd.resize(n_bins);
    const double scale = 1.0 / (fs * wssq * static_cast<double>(n_segments));
    for (std::size_t k = 0; k < n_bins; ++k) {
        result.freq_hz[k] = fs * static_cast<double>(k) / static_cast<double>(segment_len);
        const bool interior = k > 0 && (segment_len % 2 != 0 || k < n_bins - 1);
        result.psd[k] = acc[k] * scale * (interior ? 2.0 : 1.0);
    }
    return result;
}

//! Integrated PSD mass between two frequencies (inclusive), trapezoid-free
//! bin sum: sum(psd) * df over bins inside the band.
inline double band_power(const PsdResult& psd, double f_lo, double f_hi) {
    if (psd.freq_hz.size() < 2) return 0.0;
    const double df = psd.freq_hz[1] - psd.freq_hz[0];
    double acc = 0.0;
    for (std::size_t k = 0; k < psd.freq_hz.size(); ++k)
        if (psd.freq_hz[k] >= f_lo && psd.freq_hz[k] <= f_hi) acc += psd.psd[k];
    return acc * df;
}

} // namespace vshm
