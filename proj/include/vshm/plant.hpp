#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <vector>

#include <json.hpp>

#include "vshm/detail/fft.hpp"
#include "vshm/error.hpp"
#include "vshm/rng.hpp"
#include "vshm/time_series.hpp"

namespace vshm {

//! Single-degree-of-freedom oscillator with quadratic + cubic stiffness and a
//! bilinear linear-stiffness term controlled by the crack severity alpha.
//! alpha = 1 is the healthy reference condition.
struct PlantParams {
    double m_kg = 0.26;
    double c_ns_per_m = 1.36;
    double k1_n_per_m = 5.49e3;
    double k2_n_per_m2 = 3.24e4;
    double k3_n_per_m3 = 4.68e7;
    double alpha = 1.0;

    void validate() const {
        require(m_kg > 0.0, "PlantParams: m_kg must be > 0");
        require(c_ns_per_m >= 0.0, "PlantParams: c_ns_per_m must be >= 0");
        require(k1_n_per_m > 0.0, "PlantParams: k1_n_per_m must be > 0");
        require(alpha > 0.0 && alpha <= 1.0, "PlantParams: alpha must be in (0,1]");
    }

    double natural_frequency_rad_s() const { return std::sqrt(k1_n_per_m / m_kg); }
    double damping_ratio() const { return c_ns_per_m / (2.0 * std::sqrt(k1_n_per_m * m_kg)); }
};

//! Gamma prior parameterized by its mean and coefficient of variation
//! (dispersion), i.e. shape = 1/dispersion^2, scale = mean*dispersion^2.
struct GammaParams {
    double mean = 1.0;
    double dispersion = 0.01;

    double shape() const { return 1.0 / (dispersion * dispersion); }
    double scale() const { return mean * dispersion * dispersion; }

    void validate() const {
        require(mean > 0.0, "GammaParams: mean must be > 0");
        require(dispersion > 0.0, "GammaParams: dispersion must be > 0");
    }
};

//! Nominal plant plus independent gamma priors on linear stiffness and damping.
struct StochasticPlantSpec {
    PlantParams nominal;
    GammaParams k1_prior{5.49e3, 0.01};
    GammaParams c_prior{1.36, 0.01};

    void validate() const {
        nominal.validate();
        k1_prior.validate();
        c_prior.validate();
    }
};

struct SimConfig {
    double sample_rate_hz = 512.0;
    std::size_t n_samples = 2048;
    int oversample = 16; // RK4 substeps per output sample
    double x0_m = 0.0;
    double v0_m_per_s = 0.0;

    void validate() const {
        require(sample_rate_hz > 0.0, "SimConfig: sample_rate_hz must be > 0");
        require(n_samples >= 2, "SimConfig: n_samples must be >= 2");
        require(oversample >= 1, "SimConfig: oversample must be >= 1");
    }
};

//! Bilinear restoring force: k1*x when the crack is closed (x >= 0),
//! alpha*k1*x when open (x < 0). Continuous at the origin.
inline double restoring_force(const PlantParams& p, double x_m) {
    return (x_m >= 0.0) ? p.k1_n_per_m * x_m : p.alpha * p.k1_n_per_m * x_m;
}

//! Integrate m x'' + c x' + F(x) + k2 x^2 + k3 x^3 = u(t) with fixed-step RK4
//! at dt = 1/(Fs*oversample); the force record is interpolated linearly
//! between samples. Returns the velocity sampled at Fs (same length as input).
inline TimeSeries simulate(const PlantParams& params, const TimeSeries& input, const SimConfig& cfg) {
    params.validate();
    cfg.validate();
    input.validate();
    require(input.sample_rate_hz == cfg.sample_rate_hz, "simulate: input rate must match SimConfig");
    require(input.size() == cfg.n_samples, "simulate: input length must match SimConfig");

    const double m = params.m_kg;
    const double c = params.c_ns_per_m;
    const double k2 = params.k2_n_per_m2;
    const double k3 = params.k3_n_per_m3;
    const int ov = cfg.oversample;
    const double h = 1.0 / (cfg.sample_rate_hz * ov);

    auto accel = [&](double x, double v, double u) {
        return (u - c * v - restoring_force(params, x) - k2 * x * x - k3 * x * x * x) / m;
    };

    TimeSeries out;
    out.sample_rate_hz = cfg.sample_rate_hz;
    out.start_time_s = input.start_time_s;
    out.samples.resize(input.size());

    double x = cfg.x0_m;
    double v = cfg.v0_m_per_s;
    out.samples[0] = v;
    for (std::size_t k = 0; k + 1 < input.size(); ++k) {
        const double u0 = input.samples[k];
        const double du = input.samples[k + 1] - u0;
        for (int s = 0; s < ov; ++s) {
            const double ua = u0 + du * (static_cast<double>(s) / ov);
            const double um = u0 + du * ((static_cast<double>(s) + 0.5) / ov);
            const double ub = u0 + du * (static_cast<double>(s + 1) / ov);
            const double k1x = v, k1v = accel(x, v, ua);
            const double k2x = v + 0.5 * h * k1v, k2v = accel(x + 0.5 * h * k1x, v + 0.5 * h * k1v, um);
            const double k3x = v + 0.5 * h * k2v, k3v = accel(x + 0.5 * h * k2x, v + 0.5 * h * k2v, um);
            const double k4x = v + h * k3v, k4v = accel(x + h * k3x, v + h * k3v, ub);
            x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        }
        if (!std::isfinite(x) || !std::isfinite(v))
            throw DivergenceError("simulate: state became non-finite", k + 1);
        out.samples[k + 1] = v;
    }
    return out;
}

//! n iid draws from the gamma prior; deterministic for a given seed.
inline std::vector<double> sample_gamma(const GammaParams& prior, std::uint64_t rng_seed, std::size_t n) {
    prior.validate();
    require(n >= 1, "sample_gamma: n must be >= 1");
    auto engine = make_engine(rng_seed);
    std::gamma_distribution<double> dist(prior.shape(), prior.scale());
    std::vector<double> draws(n);
    for (double& d : draws) d = dist(engine);
    return draws;
}

//! n joint parameter realizations; k1 and c drawn independently, everything
//! else copied from the nominal plant. Realization i is seeded with
//! rng_seed + i so dropping or reordering realizations never perturbs others.
inline std::vector<PlantParams> sample_realizations(const StochasticPlantSpec& spec, std::size_t n,
                                                    std::uint64_t rng_seed) {
    spec.validate();
    require(n >= 1, "sample_realizations: n must be >= 1");
    std::vector<PlantParams> out(n, spec.nominal);
    for (std::size_t i = 0; i < n; ++i) {
        auto engine = make_engine(rng_seed + i, rng_stream::parameters);
        std::gamma_distribution<double> k1_dist(spec.k1_prior.shape(), spec.k1_prior.scale());
        std::gamma_distribution<double> c_dist(spec.c_prior.shape(), spec.c_prior.scale());
        out[i].k1_n_per_m = k1_dist(engine);
        out[i].c_ns_per_m = c_dist(engine);
    }
    return out;
}

struct ModalEstimate {
    double omega_n_rad_s = 0.0;
    double zeta = 0.0;
};

//! Estimate the equivalent linear oscillator from low-amplitude data.
//!
//! H(f) = CSD(u,y)/PSD(u) on the zero-padded full records; the peak is
//! searched in 5-100 Hz over bins where the input carries real energy
//! (within 20 dB of its strongest bin), then refined parabolically. Since
//! the measured output is a velocity, the mobility peak sits exactly at the
//! undamped natural frequency. zeta comes from the half-power bandwidth.
//!
//! Both records are weighted by exp(-sigma t) before the transform. The
//! window shifts every pole left by exactly sigma, which kills the leakage
//! bias from the truncated ring-down; the added damping is subtracted from
//! the bandwidth estimate afterwards.
inline ModalEstimate estimate_modal(const TimeSeries& low_amp_response, const TimeSeries& low_amp_input) {
    low_amp_response.validate();
    low_amp_input.validate();
    require(low_amp_response.size() == low_amp_input.size() &&
                low_amp_response.sample_rate_hz == low_amp_input.sample_rate_hz,
            "estimate_modal: input/response must share rate and length");
    require(low_amp_response.mean_square() > 0.0, "estimate_modal: response is identically zero");

    constexpr double f_min = 5.0, f_max = 100.0;
    constexpr double input_floor_db = 20.0;
    constexpr std::size_t pad_factor = 16;
    constexpr double window_decay_constants = 4.0; // e^-4 tail suppression at the record end

    const double fs = low_amp_input.sample_rate_hz;
    const std::size_t n = low_amp_input.size();
    const double sigma = window_decay_constants * fs / static_cast<double>(n);
    std::vector<double> wu(n), wy(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double w = std::exp(-sigma * static_cast<double>(k) / fs);
        wu[k] = w * low_amp_input.samples[k];
        wy[k] = w * low_amp_response.samples[k];
    }

    const std::size_t nfft = detail::next_pow2(n * pad_factor);
    const auto spec_u = detail::rfft(wu, nfft);
    const auto spec_y = detail::rfft(wy, nfft);
    const double df = fs / static_cast<double>(nfft);

    const std::size_t n_bins = spec_u.size();
    std::vector<double> mag(n_bins, 0.0);
    std::vector<double> pu(n_bins, 0.0);
    double pu_max = 0.0;
    for (std::size_t k = 0; k < n_bins; ++k) {
        pu[k] = std::norm(spec_u[k]);
        pu_max = std::max(pu_max, pu[k]);
        mag[k] = pu[k] > 0.0 ? std::abs(spec_y[k] * std::conj(spec_u[k])) / pu[k] : 0.0;
    }

    const double floor = pu_max * std::pow(10.0, -input_floor_db / 10.0);
    std::size_t lo = n_bins, hi = 0, peak = n_bins;
    double peak_mag = 0.0;
    for (std::size_t k = 1; k + 1 < n_bins; ++k) {
        const double f = df * static_cast<double>(k);
        if (f < f_min || f > f_max || pu[k] < floor) continue;
        lo = std::min(lo, k);
        hi = std::max(hi, k);
        if (mag[k] > peak_mag) {
            peak_mag = mag[k];
            peak = k;
        }
    }
    if (peak >= n_bins || peak_mag <= 0.0)
        throw EstimationError("estimate_modal: no identifiable peak in 5-100 Hz");

    // parabolic refinement of peak position and height
    const double ym1 = mag[peak - 1], y0 = mag[peak], yp1 = mag[peak + 1];
    const double den = ym1 - 2.0 * y0 + yp1;
    const double delta = den != 0.0 ? 0.5 * (ym1 - yp1) / den : 0.0;
    const double f_peak = df * (static_cast<double>(peak) + delta);
    const double refined_peak = y0 - 0.25 * (ym1 - yp1) * delta;

    const double target = refined_peak / std::numbers::sqrt2;
    std::size_t i1 = peak;
    while (i1 > lo && mag[i1] > target) --i1;
    if (mag[i1] > target) throw EstimationError("estimate_modal: no left half-power crossing in band");
    const double f1 = df * (static_cast<double>(i1) +
                            (target - mag[i1]) / (mag[i1 + 1] - mag[i1]));
    std::size_t i2 = peak;
    while (i2 < hi && mag[i2] > target) ++i2;
    if (mag[i2] > target) throw EstimationError("estimate_modal: no right half-power crossing in band");
    const double f2 = df * (static_cast<double>(i2) -
                            (target - mag[i2]) / (mag[i2 - 1] - mag[i2]));

    ModalEstimate est;
    est.omega_n_rad_s = 2.0 * std::numbers::pi * f_peak;
    est.zeta = (f2 - f1) / (2.0 * f_peak) - sigma / est.omega_n_rad_s;
    if (!(est.zeta > 0.0 && est.zeta < 1.0) || !std::isfinite(est.omega_n_rad_s))
        throw EstimationError("estimate_modal: degenerate modal estimate");
    return est;
}

// ---- JSON (de)serialization, keys match the field names above ----

inline void to_json(nlohmann::json& j, const PlantParams& p) {
    j = nlohmann::json{{"m_kg", p.m_kg},
                       {"c_ns_per_m", p.c_ns_per_m},
                       {"k1_n_per_m", p.k1_n_per_m},
                       {"k2_n_per_m2", p.k2_n_per_m2},
                       {"k3_n_per_m3", p.k3_n_per_m3},
                       {"alpha", p.alpha}};
}

inline void from_json(const nlohmann::json& j, PlantParams& p) {
    j.at("m_kg").get_to(p.m_kg);
    j.at("c_ns_per_m").get_to(p.c_ns_per_m);
    j.at("k1_n_per_m").get_to(p.k1_n_per_m);
    j.at("k2_n_per_m2").get_to(p.k2_n_per_m2);
    j.at("k3_n_per_m3").get_to(p.k3_n_per_m3);
    p.alpha = j.value("alpha", 1.0);
}

inline void to_json(nlohmann::json& j, const GammaParams& g) {
    j = nlohmann::json{{"mean", g.mean}, {"dispersion", g.dispersion}};
}

inline void from_json(const nlohmann::json& j, GammaParams& g) {
    j.at("mean").get_to(g.mean);
    j.at("dispersion").get_to(g.dispersion);
}

inline void to_json(nlohmann::json& j, const StochasticPlantSpec& s) {
    j = nlohmann::json{{"nominal", s.nominal}, {"k1_prior", s.k1_prior}, {"c_prior", s.c_prior}};
}

inline void from_json(const nlohmann::json& j, StochasticPlantSpec& s) {
    j.at("nominal").get_to(s.nominal);
    j.at("k1_prior").get_to(s.k1_prior);
    j.at("c_prior").get_to(s.c_prior);
}

inline void to_json(nlohmann::json& j, const SimConfig& c) {
    j = nlohmann::json{{"sample_rate_hz", c.sample_rate_hz},
                       {"n_samples", c.n_samples},
                       {"oversample", c.oversample},
                       {"initial_state", {c.x0_m, c.v0_m_per_s}}};
}

inline void from_json(const nlohmann::json& j, SimConfig& c) {
    c.sample_rate_hz = j.value("sample_rate_hz", 512.0);
    c.n_samples = j.value("n_samples", std::size_t{2048});
    c.oversample = j.value("oversample", 16);
    if (j.contains("initial_state")) {
        c.x0_m = j["initial_state"][0].get<double>();
        c.v0_m_per_s = j["initial_state"][1].get<double>();
    }
}

} // namespace vshm
