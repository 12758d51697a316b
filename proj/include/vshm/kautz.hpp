#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <utility>
#include <vector>

#include <json.hpp>

#include "vshm/error.hpp"
#include "vshm/time_series.hpp"

namespace vshm {

//! Continuous-domain pole parameters of one orthonormal filter bank.
//! The underdamped pole pair S = -xi*omega +- j*omega*sqrt(1-xi^2) is mapped
//! to the unit disc via Z = exp(S/Fs).
struct KautzPoleSpec {
    double omega_rad_s = 0.0;
    double xi = 0.0;
    double sample_rate_hz = 0.0;

    void validate() const {
        require(omega_rad_s > 0.0, "KautzPoleSpec: omega_rad_s must be > 0");
        require(xi > 0.0 && xi < 1.0, "KautzPoleSpec: xi must be in (0,1)");
        require(sample_rate_hz > 0.0, "KautzPoleSpec: sample_rate_hz must be > 0");
    }

    std::complex<double> discrete_pole() const {
        const std::complex<double> s(-xi * omega_rad_s,
                                     omega_rad_s * std::sqrt(1.0 - xi * xi));
        return std::exp(s / sample_rate_hz);
    }
};

//! Real second-order-section parameters (b, c) of the two-parameter Kautz
//! construction: b = 2 Re(Z)/(1+|Z|^2), c = -|Z|^2.
inline std::pair<double, double> poles_from_spec(const KautzPoleSpec& spec) {
    spec.validate();
    const std::complex<double> z = spec.discrete_pole();
    const double zsq = std::norm(z);
    const double b = 2.0 * z.real() / (1.0 + zsq);
    const double c = -zsq;
    if (!(std::abs(b) < 1.0 && std::abs(c) < 1.0))
        throw ValidationError("poles_from_spec: derived (b,c) outside the unit interval");
    return {b, c};
}

//! A realized bank of J orthonormal filters sharing one pole pair.
//!
//! Filter i is a cascade of second-order sections over the common
//! denominator D(z) = z^2 + b(c-1)z - c:
//!   odd  i:  G1(z) = z*sqrt((1-b^2)(1-c^2)) / D(z)     times A(z)^((i-1)/2)
//!   even i:  G2(z) = sqrt(1-c^2)*(z^2 - b z) / D(z)    times A(z)^((i-2)/2)
//! with the all-pass A(z) = (-c z^2 + b(c-1) z + 1) / D(z).
struct KautzBank {
    KautzPoleSpec spec;
    int n_functions = 0;
    double b = 0.0;
    double c = 0.0;
    std::vector<std::vector<double>> impulse_responses; // n_functions x memory_len

    std::size_t memory_len() const {
        return impulse_responses.empty() ? 0 : impulse_responses.front().size();
    }
};

namespace detail {

// y = G1 u (strictly proper base section)
inline void kautz_section_odd(double b, double c, const std::vector<double>& u, std::vector<double>& y) {
    const double a1 = b * (c - 1.0), a2 = -c;
    const double g = std::sqrt((1.0 - b * b) * (1.0 - c * c));
    const std::size_t n = u.size();
    y.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double v = k >= 1 ? g * u[k - 1] - a1 * y[k - 1] : 0.0;
        if (k >= 2) v -= a2 * y[k - 2];
        y[k] = v;
    }
}

// y = G2 u (biproper base section)
inline void kautz_section_even(double b, double c, const std::vector<double>& u, std::vector<double>& y) {
    const double a1 = b * (c - 1.0), a2 = -c;
    const double g = std::sqrt(1.0 - c * c);
    const std::size_t n = u.size();
    y.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double v = g * u[k];
        if (k >= 1) v += -g * b * u[k - 1] - a1 * y[k - 1];
        if (k >= 2) v -= a2 * y[k - 2];
        y[k] = v;
    }
}

// y = A u (all-pass section)
inline void kautz_section_allpass(double b, double c, const std::vector<double>& u, std::vector<double>& y) {
    const double a1 = b * (c - 1.0), a2 = -c;
    const std::size_t n = u.size();
    y.assign(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
        double v = -c * u[k];
        if (k >= 1) v += a1 * u[k - 1] - a1 * y[k - 1];
        if (k >= 2) v += u[k - 2] - a2 * y[k - 2];
        y[k] = v;
    }
}

// Run filter number i (1-based) of the bank over u.
inline std::vector<double> kautz_filter_run(double b, double c, int i, const std::vector<double>& u) {
    std::vector<double> y, tmp;
    if (i % 2 == 1)
        kautz_section_odd(b, c, u, y);
    else
        kautz_section_even(b, c, u, y);
    // odd i = 2j-1 carries j-1 = (i-1)/2 all-pass stages; even i = 2j carries i/2-1
    const int stages = (i % 2 == 1) ? (i - 1) / 2 : i / 2 - 1;
    for (int s = 0; s < stages; ++s) {
        kautz_section_allpass(b, c, y, tmp);
        y.swap(tmp);
    }
    return y;
}

} // namespace detail

//! Realize the first n_functions Kautz filters as impulse responses of
//! length memory_len (used for diagnostics, oracle tests and kernel
//! reconstruction; run-time filtering uses the recursive sections directly).
inline KautzBank build_bank(const KautzPoleSpec& spec, int n_functions, std::size_t memory_len) {
    require(n_functions >= 2 && n_functions % 2 == 0, "build_bank: n_functions must be even and >= 2");
    require(memory_len >= 4, "build_bank: memory_len must be >= 4");
    KautzBank bank;
    bank.spec = spec;
    bank.n_functions = n_functions;
    std::tie(bank.b, bank.c) = poles_from_spec(spec);
    if (!(std::abs(bank.b) < 1.0 && std::abs(bank.c) < 1.0))
        throw ValidationError("build_bank: unstable section parameters");

    std::vector<double> impulse(memory_len, 0.0);
    impulse[0] = 1.0;
    bank.impulse_responses.reserve(n_functions);
    for (int i = 1; i <= n_functions; ++i)
        bank.impulse_responses.push_back(detail::kautz_filter_run(bank.b, bank.c, i, impulse));
    return bank;
}

//! Filter the input through every function of the bank (exact causal IIR
//! filtering, mathematically the convolution with the full-length impulse
//! responses truncated to the input length).
inline std::vector<std::vector<double>> filter_input(const KautzBank& bank, const TimeSeries& input) {
    require(!input.samples.empty(), "filter_input: empty input");
    std::vector<std::vector<double>> out;
    out.reserve(static_cast<std::size_t>(bank.n_functions));
    for (int i = 1; i <= bank.n_functions; ++i)
        out.push_back(detail::kautz_filter_run(bank.b, bank.c, i, input.samples));
    return out;
}

//! One bank per kernel order (1, 2, 3).
struct KautzBasis {
    std::array<KautzBank, 3> banks;

    double sample_rate_hz() const { return banks[0].spec.sample_rate_hz; }
    int functions(int order) const { return banks[static_cast<std::size_t>(order - 1)].n_functions; }
    const KautzBank& bank(int order) const { return banks[static_cast<std::size_t>(order - 1)]; }
};

inline KautzBasis build_basis(const std::array<KautzPoleSpec, 3>& specs,
                              const std::array<int, 3>& n_functions, std::size_t memory_len) {
    KautzBasis basis;
    for (std::size_t i = 0; i < 3; ++i)
        basis.banks[i] = build_bank(specs[i], n_functions[i], memory_len);
    return basis;
}

// Basis JSON stores only pole parameters and sizes; impulse responses are
// recomputed on load.
inline void to_json(nlohmann::json& j, const KautzBasis& basis) {
    j = nlohmann::json::array();
    for (const auto& bank : basis.banks)
        j.push_back({{"omega_rad_s", bank.spec.omega_rad_s},
                     {"xi", bank.spec.xi},
                     {"sample_rate_hz", bank.spec.sample_rate_hz},
                     {"n_functions", bank.n_functions},
                     {"memory_len", bank.memory_len()}});
}

inline KautzBasis kautz_basis_from_json(const nlohmann::json& j) {
    require(j.is_array() && j.size() == 3, "KautzBasis JSON must list three banks");
    KautzBasis basis;
    for (std::size_t i = 0; i < 3; ++i) {
        KautzPoleSpec spec;
        spec.omega_rad_s = j[i].at("omega_rad_s").get<double>();
        spec.xi = j[i].at("xi").get<double>();
        spec.sample_rate_hz = j[i].at("sample_rate_hz").get<double>();
        basis.banks[i] = build_bank(spec, j[i].at("n_functions").get<int>(),
                                    j[i].at("memory_len").get<std::size_t>());
    }
    return basis;
}

} // namespace vshm
