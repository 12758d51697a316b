#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "vshm/error.hpp"
#include "vshm/parallel.hpp"
#include "vshm/plant.hpp"
#include "vshm/signals.hpp"
#include "vshm/volterra.hpp"

namespace vshm {

//! Everything one Monte Carlo identification run needs. Realization i draws
//! its randomness from seed base_seed + i (parameter, low-noise and
//! high-noise streams are split off that one seed), so any subset of
//! realizations reproduces bit-identically.
struct EnsembleConfig {
    std::size_t n_realizations = 2048;
    std::uint64_t base_seed = 0;
    PoleRelations relations;
    SimConfig sim;
    ChirpSpec chirp{1.0, 15.0, 30.0, 4.0}; // band/duration only; amplitudes come from the two fields below
    double low_amplitude_n = 0.1;
    double high_amplitude_n = 1.0;
    double snr_db = 30.0;
    std::array<int, 3> n_functions{2, 4, 6};
    int jobs = 0;

    void validate() const {
        require(n_realizations >= 2, "EnsembleConfig: n_realizations must be >= 2");
        relations.validate();
        sim.validate();
        chirp.validate();
        require(low_amplitude_n > 0.0 && high_amplitude_n > 0.0,
                "EnsembleConfig: amplitudes must be positive");
        require(snr_db > 0.0, "EnsembleConfig: snr_db must be positive");
    }
};

struct RealizationFailure {
    std::size_t index;
    std::string message;
};

//! The set of reference (or unknown-condition) models with their modal
//! estimates and drawn plant parameters, aligned by realization index.
//! Failed realizations are dropped from the aligned arrays and listed in
//! `failures`.
struct ModelEnsemble {
    std::vector<VolterraModel> models;
    std::vector<ModalEstimate> modal;
    std::vector<PlantParams> params;
    EnsembleConfig config;
    double severity_alpha = 1.0;
    std::vector<RealizationFailure> failures;
};

//! Per-realization low/high records, shared by the ensemble runner and the
//! `simulate` command so disk-based and inline identification agree.
struct RealizationSignals {
    TimeSeries u_low, y_low, u_high, y_high;
};

inline RealizationSignals simulate_realization(const PlantParams& params, const EnsembleConfig& cfg,
                                               std::uint64_t realization_seed) {
    RealizationSignals sig;
    ChirpSpec low = cfg.chirp, high = cfg.chirp;
    low.amplitude_n = cfg.low_amplitude_n;
    high.amplitude_n = cfg.high_amplitude_n;
    sig.u_low = generate_chirp(low, cfg.sim.sample_rate_hz);
    sig.u_high = generate_chirp(high, cfg.sim.sample_rate_hz);
    sig.y_low = add_noise_snr(simulate(params, sig.u_low, cfg.sim), cfg.snr_db,
                              seed_mix(realization_seed, rng_stream::noise_low));
    sig.y_high = add_noise_snr(simulate(params, sig.u_high, cfg.sim), cfg.snr_db,
                               seed_mix(realization_seed, rng_stream::noise_high));
    return sig;
}

//! Identify one Volterra model from a simulated (or measured) record set:
//! modal estimate from the low-amplitude pair, pole mapping through the
//! relations, then the two-step kernel fit.
inline std::pair<VolterraModel, ModalEstimate> identify_realization(const RealizationSignals& sig,
                                                                    const EnsembleConfig& cfg) {
    const ModalEstimate modal = estimate_modal(sig.y_low, sig.u_low);
    const auto basis = build_basis(pole_specs_from_modal(modal, cfg.relations, cfg.sim.sample_rate_hz),
                                   cfg.n_functions, cfg.sim.n_samples);
    return {identify_two_step(basis, sig.u_low, sig.y_low, sig.u_high, sig.y_high), modal};
}

//! Full Monte Carlo identification: draw -> simulate -> estimate -> identify
//! for every realization, in parallel. Per-realization failures are recorded
//! and skipped; more than 5% failures aborts.
inline ModelEnsemble run_ensemble(const StochasticPlantSpec& spec, const EnsembleConfig& cfg) {
    spec.validate();
    cfg.validate();

    const std::size_t n = cfg.n_realizations;
    const auto params = sample_realizations(spec, n, cfg.base_seed);

    std::vector<std::optional<VolterraModel>> models(n);
    std::vector<ModalEstimate> modal(n);
    const auto errors = parallel_for_indexed(n, cfg.jobs, [&](std::size_t i) {
        const std::uint64_t seed = cfg.base_seed + i;
        const auto sig = simulate_realization(params[i], cfg, seed);
        auto [model, est] = identify_realization(sig, cfg);
        models[i] = std::move(model);
        modal[i] = est;
    });

    ModelEnsemble ensemble;
    ensemble.config = cfg;
    ensemble.severity_alpha = spec.nominal.alpha;
    for (std::size_t i = 0; i < n; ++i) {
        if (!errors[i].empty()) {
            ensemble.failures.push_back({i, errors[i]});
            continue;
        }
        ensemble.models.push_back(std::move(*models[i]));
        ensemble.modal.push_back(modal[i]);
        ensemble.params.push_back(params[i]);
    }
    if (ensemble.failures.size() * 20 > n) {
        std::ostringstream msg;
        msg << "run_ensemble: " << ensemble.failures.size() << "/" << n
            << " realizations failed; first failure [" << ensemble.failures.front().index
            << "]: " << ensemble.failures.front().message;
        throw EstimationError(msg.str());
    }
    return ensemble;
}

//! First kernel as a time function: h1(n) = sum_i b1(i) psi_1i(n).
inline std::vector<double> first_kernel_time(const VolterraModel& model) {
    const auto& bank = model.basis.bank(1);
    std::vector<double> h(bank.memory_len(), 0.0);
    for (int i = 0; i < model.j1(); ++i)
        for (std::size_t k = 0; k < h.size(); ++k)
            h[k] += model.b1(i) * bank.impulse_responses[static_cast<std::size_t>(i)][k];
    return h;
}

//! Main diagonal of a high-order kernel as a time function, reconstructed
//! from the orthonormal expansion: H2(n,n) or H3(n,n,n).
inline std::vector<double> kernel_diagonal_time(const VolterraModel& model, int order) {
    require(order == 2 || order == 3, "kernel_diagonal_time: order must be 2 or 3");
    const auto& bank = model.basis.bank(order);
    const auto& psi = bank.impulse_responses;
    std::vector<double> h(bank.memory_len(), 0.0);
    if (order == 2) {
        for (int i = 0; i < model.j2(); ++i)
            for (int j = 0; j < model.j2(); ++j) {
                const double bij = model.b2(i, j);
                for (std::size_t k = 0; k < h.size(); ++k)
                    h[k] += bij * psi[static_cast<std::size_t>(i)][k] * psi[static_cast<std::size_t>(j)][k];
            }
    } else {
        const int J = model.j3();
        for (int i = 0; i < J; ++i)
            for (int j = 0; j < J; ++j)
                for (int m = 0; m < J; ++m) {
                    const double bijm = model.b3_at(i, j, m);
                    if (bijm == 0.0) continue;
                    for (std::size_t k = 0; k < h.size(); ++k)
                        h[k] += bijm * psi[static_cast<std::size_t>(i)][k] * psi[static_cast<std::size_t>(j)][k] *
                                psi[static_cast<std::size_t>(m)][k];
                }
    }
    return h;
}

//! Monte Carlo convergence metric over a sequence of kernel time functions:
//! conv(N) = sqrt( (1/N) * sum_{n<=N} sum_t h(theta_n,t)^2 * dt ).
//! Returns the whole curve conv(1..N).
inline std::vector<double> convergence_metric(const std::vector<std::vector<double>>& kernel_time_functions,
                                              double dt) {
    require(!kernel_time_functions.empty(), "convergence_metric: empty sequence");
    require(dt > 0.0, "convergence_metric: dt must be positive");
    const std::size_t len = kernel_time_functions.front().size();
    for (const auto& h : kernel_time_functions)
        require(h.size() == len, "convergence_metric: members must share length");

    std::vector<double> conv(kernel_time_functions.size());
    double acc = 0.0;
    for (std::size_t n = 0; n < kernel_time_functions.size(); ++n) {
        double energy = 0.0;
        for (double v : kernel_time_functions[n]) energy += v * v;
        acc += energy * dt;
        conv[n] = std::sqrt(acc / static_cast<double>(n + 1));
    }
    return conv;
}

// ---- persistence: a directory with ensemble.json + model_<i>.json ----

inline void to_json(nlohmann::json& j, const PoleRelations& r) {
    j = nlohmann::json{{"p1", r.p1}, {"p2", r.p2}, {"p3", r.p3}, {"p4", r.p4}};
}

inline void from_json(const nlohmann::json& j, PoleRelations& r) {
    j.at("p1").get_to(r.p1);
    j.at("p2").get_to(r.p2);
    j.at("p3").get_to(r.p3);
    j.at("p4").get_to(r.p4);
}

inline void to_json(nlohmann::json& j, const ChirpSpec& c) {
    j = nlohmann::json{{"amplitude_n", c.amplitude_n},
                       {"f0_hz", c.f0_hz},
                       {"f1_hz", c.f1_hz},
                       {"duration_s", c.duration_s}};
}

inline void from_json(const nlohmann::json& j, ChirpSpec& c) {
    c.amplitude_n = j.value("amplitude_n", 1.0);
    j.at("f0_hz").get_to(c.f0_hz);
    j.at("f1_hz").get_to(c.f1_hz);
    j.at("duration_s").get_to(c.duration_s);
}

inline void to_json(nlohmann::json& j, const EnsembleConfig& c) {
    j = nlohmann::json{{"n_realizations", c.n_realizations},
                       {"base_seed", c.base_seed},
                       {"relations", c.relations},
                       {"sim", c.sim},
                       {"chirp", c.chirp},
                       {"low_amplitude_n", c.low_amplitude_n},
                       {"high_amplitude_n", c.high_amplitude_n},
                       {"snr_db", c.snr_db},
                       {"n_functions", c.n_functions},
                       {"jobs", c.jobs}};
}

inline void from_json(const nlohmann::json& j, EnsembleConfig& c) {
    c.n_realizations = j.value("n_realizations", std::size_t{2048});
    c.base_seed = j.value("base_seed", std::uint64_t{0});
    if (j.contains("relations")) j.at("relations").get_to(c.relations);
    if (j.contains("sim")) j.at("sim").get_to(c.sim);
    if (j.contains("chirp")) j.at("chirp").get_to(c.chirp);
    c.low_amplitude_n = j.value("low_amplitude_n", 0.1);
    c.high_amplitude_n = j.value("high_amplitude_n", 1.0);
    c.snr_db = j.value("snr_db", 30.0);
    if (j.contains("n_functions")) j.at("n_functions").get_to(c.n_functions);
    c.jobs = j.value("jobs", 0);
}

inline std::string model_file_name(std::size_t i) {
    std::ostringstream name;
    name << "model_" << std::setw(5) << std::setfill('0') << i << ".json";
    return name.str();
}

inline void save_ensemble(const ModelEnsemble& ensemble, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["config"] = ensemble.config;
    j["severity_alpha"] = ensemble.severity_alpha;
    j["n_models"] = ensemble.models.size();
    j["modal"] = nlohmann::json::array();
    for (const auto& m : ensemble.modal)
        j["modal"].push_back({{"omega_n_rad_s", m.omega_n_rad_s}, {"zeta", m.zeta}});
    j["params"] = ensemble.params;
    j["failures"] = nlohmann::json::array();
    for (const auto& f : ensemble.failures)
        j["failures"].push_back({{"index", f.index}, {"message", f.message}});

    std::ofstream out(dir / "ensemble.json", std::ios::binary);
    if (!out) throw IoError("cannot write " + (dir / "ensemble.json").string());
    out << j.dump(2) << "\n";

    for (std::size_t i = 0; i < ensemble.models.size(); ++i) {
        std::ofstream mf(dir / model_file_name(i), std::ios::binary);
        if (!mf) throw IoError("cannot write " + (dir / model_file_name(i)).string());
        mf << model_to_json(ensemble.models[i]).dump() << "\n";
    }
}

inline ModelEnsemble load_ensemble(const std::filesystem::path& dir) {
    const auto index_path = dir / "ensemble.json";
    std::ifstream in(index_path, std::ios::binary);
    if (!in) throw IoError("missing ensemble index: " + index_path.string());
    nlohmann::json j;
    in >> j;

    ModelEnsemble ensemble;
    j.at("config").get_to(ensemble.config);
    ensemble.severity_alpha = j.value("severity_alpha", 1.0);
    for (const auto& m : j.at("modal"))
        ensemble.modal.push_back({m.at("omega_n_rad_s").get<double>(), m.at("zeta").get<double>()});
    j.at("params").get_to(ensemble.params);
    for (const auto& f : j.value("failures", nlohmann::json::array()))
        ensemble.failures.push_back({f.at("index").get<std::size_t>(), f.at("message").get<std::string>()});

    const auto n = j.at("n_models").get<std::size_t>();
    ensemble.models.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        const auto path = dir / model_file_name(i);
        std::ifstream mf(path, std::ios::binary);
        if (!mf) throw IoError("missing model file: " + path.string());
        nlohmann::json mj;
        mf >> mj;
        ensemble.models.push_back(model_from_json(mj));
    }
    require(ensemble.models.size() == ensemble.modal.size() &&
                ensemble.models.size() == ensemble.params.size(),
            "load_ensemble: inconsistent table sizes");
    return ensemble;
}

} // namespace vshm
