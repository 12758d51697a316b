// Command-line pipeline driver: simulate ensembles, identify stochastic
// Volterra models, run the damage detection study, emit CSV/JSON reports.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vshm/vshm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct PipelineConfig {
    vshm::StochasticPlantSpec plant;
    vshm::EnsembleConfig ensemble;
    std::vector<double> severities{0.98, 0.96, 0.94, 0.92, 0.90, 0.88, 0.86};
    std::vector<std::string> feature_kinds; // empty = all kinds
    std::vector<double> betas{0.005, 0.01, 0.02};
    bool fit_relations = true;

    void validate() const {
        plant.validate();
        ensemble.validate();
        for (double a : severities)
            vshm::require(a > 0.0 && a <= 1.0, "config: severities must lie in (0,1]");
        for (double b : betas) vshm::require(b > 0.0 && b < 0.5, "config: betas must lie in (0,0.5)");
    }

    std::vector<vshm::FeatureKind> kinds() const {
        if (feature_kinds.empty()) return vshm::all_feature_kinds();
        std::vector<vshm::FeatureKind> out;
        for (const auto& name : feature_kinds) out.push_back(vshm::feature_kind_from_name(name));
        return out;
    }
};

PipelineConfig load_config(const std::string& config_path, const std::string& plant_path,
                           std::uint64_t seed, int jobs, bool full) {
    PipelineConfig cfg;
    cfg.ensemble.n_realizations = 256; // desk scale
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw vshm::IoError("cannot read config: " + config_path);
        json j;
        in >> j;
        if (j.contains("plant") && j["plant"].is_string()) {
            std::ifstream pin(j["plant"].get<std::string>());
            if (!pin) throw vshm::IoError("cannot read plant spec: " + j["plant"].get<std::string>());
            json pj;
            pin >> pj;
            pj.get_to(cfg.plant);
        }
        if (j.contains("plant_spec")) j["plant_spec"].get_to(cfg.plant);
        if (j.contains("ensemble")) j["ensemble"].get_to(cfg.ensemble);
        if (j.contains("severities")) j["severities"].get_to(cfg.severities);
        if (j.contains("feature_kinds")) j["feature_kinds"].get_to(cfg.feature_kinds);
        if (j.contains("betas")) j["betas"].get_to(cfg.betas);
        cfg.fit_relations = j.value("fit_relations", true);
    }
    if (!plant_path.empty()) {
        std::ifstream pin(plant_path);
        if (!pin) throw vshm::IoError("cannot read plant spec: " + plant_path);
        json pj;
        pin >> pj;
        pj.get_to(cfg.plant);
    }
    cfg.ensemble.base_seed = seed;
    cfg.ensemble.jobs = jobs;
    if (full) cfg.ensemble.n_realizations = 2048;
    // the reference condition is always run (at double size, for the
    // train/test split); listing it among the damage severities is redundant
    std::erase(cfg.severities, 1.0);
    cfg.validate();
    return cfg;
}

std::string severity_label(double alpha) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%.2f", alpha);
    return std::string("sev_") + buf;
}

// All randomness flows from --seed: the reference block takes seeds
// [seed, seed + 2n), damage condition j takes [seed + 2n + j*n, ...).
std::uint64_t severity_seed(const PipelineConfig& cfg, std::size_t severity_index) {
    const std::uint64_t n = cfg.ensemble.n_realizations;
    return cfg.ensemble.base_seed + 2 * n + severity_index * n;
}

vshm::StochasticPlantSpec with_alpha(vshm::StochasticPlantSpec spec, double alpha) {
    spec.nominal.alpha = alpha;
    return spec;
}

void write_json_file(const json& j, const fs::path& path, int indent = 2) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw vshm::IoError("cannot write " + path.string());
    out << j.dump(indent) << "\n";
}

json read_json_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw vshm::IoError("cannot read " + path.string());
    json j;
    in >> j;
    return j;
}

// Stage outputs land in a temp directory first and are renamed into place
// once complete, so an interrupted run never leaves a partial stage behind.
class StageDir {
public:
    StageDir(const fs::path& final_path) : final_(final_path), tmp_(final_path.string() + ".tmp") {
        fs::remove_all(tmp_);
        fs::create_directories(tmp_);
    }
    const fs::path& path() const { return tmp_; }
    void commit() {
        fs::remove_all(final_);
        fs::create_directories(final_.parent_path());
        fs::rename(tmp_, final_);
        committed_ = true;
    }
    ~StageDir() {
        if (!committed_) fs::remove_all(tmp_);
    }

private:
    fs::path final_, tmp_;
    bool committed_ = false;
};

std::string timestamp_utc() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

json manifest_header(const PipelineConfig& cfg, const std::string& command) {
    json m;
    m["command"] = command;
    m["timestamp_utc"] = timestamp_utc(); // timestamps live only in manifests
    m["config"] = json{{"plant_spec", cfg.plant},
                       {"ensemble", cfg.ensemble},
                       {"severities", cfg.severities},
                       {"betas", cfg.betas},
                       {"fit_relations", cfg.fit_relations}};
    return m;
}

// Alphas in pipeline order: reference first (double-size block), then the
// configured damage severities.
std::vector<std::pair<double, std::uint64_t>> condition_plan(const PipelineConfig& cfg) {
    std::vector<std::pair<double, std::uint64_t>> plan;
    plan.emplace_back(1.0, cfg.ensemble.base_seed);
    for (std::size_t j = 0; j < cfg.severities.size(); ++j)
        plan.emplace_back(cfg.severities[j], severity_seed(cfg, j));
    return plan;
}

vshm::EnsembleConfig condition_config(const PipelineConfig& cfg, double alpha, std::uint64_t seed) {
    vshm::EnsembleConfig ec = cfg.ensemble;
    ec.base_seed = seed;
    if (alpha == 1.0) ec.n_realizations = 2 * cfg.ensemble.n_realizations; // train + test halves
    return ec;
}

int cmd_simulate(const PipelineConfig& cfg, const fs::path& out_dir) {
    StageDir stage(out_dir / "signals");
    std::size_t files = 0;
    for (const auto& [alpha, seed] : condition_plan(cfg)) {
        const auto ec = condition_config(cfg, alpha, seed);
        const auto spec = with_alpha(cfg.plant, alpha);
        const auto params = vshm::sample_realizations(spec, ec.n_realizations, ec.base_seed);
        const fs::path sev_dir = stage.path() / severity_label(alpha);
        fs::create_directories(sev_dir);
        write_json_file(json(params), sev_dir / "params.json");

        std::vector<int> done(ec.n_realizations, 0);
        const auto errors = vshm::parallel_for_indexed(ec.n_realizations, ec.jobs, [&](std::size_t i) {
            const auto sig = vshm::simulate_realization(params[i], ec, ec.base_seed + i);
            char name[32];
            std::snprintf(name, sizeof(name), "real_%05zu", i);
            const fs::path rdir = sev_dir / name;
            fs::create_directories(rdir);
            vshm::write_csv(sig.u_low, rdir / "u_low.csv");
            vshm::write_csv(sig.y_low, rdir / "y_low.csv");
            vshm::write_csv(sig.u_high, rdir / "u_high.csv");
            vshm::write_csv(sig.y_high, rdir / "y_high.csv");
        });
        for (const auto& e : errors)
            if (!e.empty()) throw vshm::Error("simulate " + severity_label(alpha) + ": " + e);
        files += 4 * ec.n_realizations;
    }
    json m = manifest_header(cfg, "simulate");
    m["n_signal_files"] = files;
    write_json_file(m, stage.path() / "manifest.json");
    stage.commit();
    std::cout << "simulate: wrote " << files << " signal files under " << (out_dir / "signals").string()
              << "\n";
    return 0;
}

vshm::PoleRelations resolve_relations(const PipelineConfig& cfg) {
    if (!cfg.fit_relations) return cfg.ensemble.relations;
    const auto fit = vshm::fit_pole_relations(cfg.plant.nominal, cfg.ensemble.sim,
                                              cfg.ensemble.relations, cfg.ensemble.chirp,
                                              cfg.ensemble.low_amplitude_n, cfg.ensemble.high_amplitude_n);
    std::cout << "fit-relations: p = (" << fit.relations.p1 << ", " << fit.relations.p2 << ", "
              << fit.relations.p3 << ", " << fit.relations.p4 << "), objective " << fit.objective
              << " (from " << fit.initial_objective << ", " << fit.evaluations << " evals)\n";
    return fit.relations;
}

vshm::ModelEnsemble identify_from_signals(const fs::path& sev_dir, const vshm::EnsembleConfig& ec,
                                          double alpha) {
    const auto params = read_json_file(sev_dir / "params.json").get<std::vector<vshm::PlantParams>>();
    vshm::require(params.size() == ec.n_realizations,
                  "identify: params table size does not match n_realizations");

    std::vector<std::optional<vshm::VolterraModel>> models(params.size());
    std::vector<vshm::ModalEstimate> modal(params.size());
    const auto errors = vshm::parallel_for_indexed(params.size(), ec.jobs, [&](std::size_t i) {
        char name[32];
        std::snprintf(name, sizeof(name), "real_%05zu", i);
        const fs::path rdir = sev_dir / name;
        vshm::RealizationSignals sig;
        sig.u_low = vshm::read_csv(rdir / "u_low.csv");
        sig.y_low = vshm::read_csv(rdir / "y_low.csv");
        sig.u_high = vshm::read_csv(rdir / "u_high.csv");
        sig.y_high = vshm::read_csv(rdir / "y_high.csv");
        auto [model, est] = vshm::identify_realization(sig, ec);
        models[i] = std::move(model);
        modal[i] = est;
    });

    vshm::ModelEnsemble ensemble;
    ensemble.config = ec;
    ensemble.severity_alpha = alpha;
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (!errors[i].empty()) {
            ensemble.failures.push_back({i, errors[i]});
            continue;
        }
        ensemble.models.push_back(std::move(*models[i]));
        ensemble.modal.push_back(modal[i]);
        ensemble.params.push_back(params[i]);
    }
    if (ensemble.failures.size() * 20 > params.size())
        throw vshm::EstimationError("identify: more than 5% of realizations failed for " +
                                    severity_label(alpha));
    return ensemble;
}

void write_convergence_csv(const vshm::ModelEnsemble& ensemble, const fs::path& path) {
    std::vector<std::vector<double>> k1, k2, k3;
    for (const auto& model : ensemble.models) {
        k1.push_back(vshm::first_kernel_time(model));
        k2.push_back(vshm::kernel_diagonal_time(model, 2));
        k3.push_back(vshm::kernel_diagonal_time(model, 3));
    }
    const double dt = 1.0 / ensemble.config.sim.sample_rate_hz;
    const auto c1 = vshm::convergence_metric(k1, dt);
    const auto c2 = vshm::convergence_metric(k2, dt);
    const auto c3 = vshm::convergence_metric(k3, dt);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw vshm::IoError("cannot write " + path.string());
    out << "N,conv_kernel1,conv_kernel2_diag,conv_kernel3_diag\n";
    char buf[128];
    for (std::size_t i = 0; i < c1.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", i + 1, c1[i], c2[i], c3[i]);
        out << buf;
    }
}

int cmd_identify(const PipelineConfig& cfg, const fs::path& out_dir, bool inline_sim) {
    const auto relations = resolve_relations(cfg);
    StageDir stage(out_dir / "ensembles");
    for (const auto& [alpha, seed] : condition_plan(cfg)) {
        auto ec = condition_config(cfg, alpha, seed);
        ec.relations = relations;
        vshm::ModelEnsemble ensemble;
        if (inline_sim) {
            ensemble = vshm::run_ensemble(with_alpha(cfg.plant, alpha), ec);
        } else {
            const fs::path sev_dir = out_dir / "signals" / severity_label(alpha);
            if (!fs::exists(sev_dir))
                throw vshm::IoError("identify: missing simulated signals at " + sev_dir.string() +
                                    " (run `simulate` first or pass --inline)");
            ensemble = identify_from_signals(sev_dir, ec, alpha);
        }
        const fs::path sev_out = stage.path() / severity_label(alpha);
        vshm::save_ensemble(ensemble, sev_out);
        write_convergence_csv(ensemble, sev_out / "convergence.csv");
        std::cout << "identify: " << severity_label(alpha) << " -> " << ensemble.models.size()
                  << " models (" << ensemble.failures.size() << " failures)\n";
    }
    json m = manifest_header(cfg, "identify");
    m["relations_used"] = json(relations);
    write_json_file(m, stage.path() / "manifest.json");
    stage.commit();
    return 0;
}

struct LoadedEnsembles {
    vshm::ModelEnsemble reference;
    std::map<double, vshm::ModelEnsemble> conditions;
};

LoadedEnsembles load_all_ensembles(const PipelineConfig& cfg, const fs::path& out_dir) {
    const fs::path base = out_dir / "ensembles";
    LoadedEnsembles loaded;
    const fs::path ref_dir = base / severity_label(1.0);
    if (!fs::exists(ref_dir / "ensemble.json"))
        throw vshm::IoError("detect: missing reference ensemble at " + ref_dir.string() +
                            " (run `identify` first)");
    loaded.reference = vshm::load_ensemble(ref_dir);
    for (double alpha : cfg.severities) {
        const fs::path dir = base / severity_label(alpha);
        if (!fs::exists(dir / "ensemble.json"))
            throw vshm::IoError("detect: missing ensemble for severity " + severity_label(alpha) +
                                " at " + dir.string());
        loaded.conditions[alpha] = vshm::load_ensemble(dir);
    }
    return loaded;
}

vshm::TimeSeries detection_probe(const PipelineConfig& cfg) {
    vshm::ChirpSpec probe_spec = cfg.ensemble.chirp;
    probe_spec.amplitude_n = cfg.ensemble.high_amplitude_n;
    return vshm::generate_chirp(probe_spec, cfg.ensemble.sim.sample_rate_hz);
}

int cmd_detect(const PipelineConfig& cfg, const fs::path& out_dir) {
    auto loaded = load_all_ensembles(cfg, out_dir);
    const auto report = vshm::detection_experiment(loaded.reference, loaded.conditions, cfg.kinds(),
                                                   cfg.betas, detection_probe(cfg));
    StageDir stage(out_dir / "report");
    vshm::save_report_csvs(report, stage.path());
    write_json_file(vshm::report_to_json(report), stage.path() / "report.json");
    json m = manifest_header(cfg, "detect");
    write_json_file(m, stage.path() / "manifest.json");
    stage.commit();
    std::cout << "detect: report written under " << (out_dir / "report").string() << "\n";
    return 0;
}

int cmd_roc(const PipelineConfig& cfg, const fs::path& out_dir) {
    auto loaded = load_all_ensembles(cfg, out_dir);
    const auto report = vshm::detection_experiment(loaded.reference, loaded.conditions, cfg.kinds(),
                                                   cfg.betas, detection_probe(cfg));
    StageDir stage(out_dir / "roc");
    json summary;
    for (const auto& kr : report.kinds) {
        std::ofstream roc(stage.path() / ("roc_" + vshm::feature_kind_name(kr.kind) + ".csv"),
                          std::ios::binary);
        roc << "fpr,tpr\n";
        for (const auto& pt : kr.roc_pooled.points) {
            char buf[80];
            std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", pt.fpr, pt.tpr);
            roc << buf;
        }
        json k;
        k["kind"] = vshm::feature_kind_name(kr.kind);
        k["auc_pooled"] = kr.roc_pooled.auc;
        for (const auto& [alpha, curve] : kr.roc_per_severity)
            k["auc_per_severity"].push_back({{"severity", alpha}, {"auc", curve.auc}});
        summary["kinds"].push_back(std::move(k));
    }
    write_json_file(summary, stage.path() / "auc.json");
    json m = manifest_header(cfg, "roc");
    write_json_file(m, stage.path() / "manifest.json");
    stage.commit();
    std::cout << "roc: curves written under " << (out_dir / "roc").string() << "\n";
    return 0;
}

int cmd_reproduce(const PipelineConfig& cfg, const fs::path& out_dir) {
    const int rc = cmd_identify(cfg, out_dir, /*inline_sim=*/true);
    if (rc != 0) return rc;
    return cmd_detect(cfg, out_dir);
}

int cmd_fit_relations(const PipelineConfig& cfg, const fs::path& out_dir, double alpha) {
    auto nominal = cfg.plant.nominal;
    nominal.alpha = alpha;
    const auto fit = vshm::fit_pole_relations(nominal, cfg.ensemble.sim, cfg.ensemble.relations,
                                              cfg.ensemble.chirp, cfg.ensemble.low_amplitude_n,
                                              cfg.ensemble.high_amplitude_n);
    json j;
    j["alpha"] = alpha;
    j["relations"] = fit.relations;
    j["objective"] = fit.objective;
    j["initial_objective"] = fit.initial_objective;
    j["evaluations"] = fit.evaluations;
    j["converged"] = fit.converged;
    std::cout << j.dump(2) << "\n";
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_json_file(j, out_dir / ("relations_" + severity_label(alpha) + ".json"));
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic Volterra-series identification and crack detection pipeline"};
    app.require_subcommand(1);
    app.fallthrough(); // global flags may follow the subcommand name

    std::string config_path, plant_path, out_str = "out";
    std::uint64_t seed = 42;
    int jobs = 0;
    bool full = false;
    app.add_option("--config", config_path, "pipeline config JSON");
    app.add_option("--plant", plant_path, "plant spec JSON (overrides config)");
    app.add_option("--seed", seed, "master seed; every random stream derives from it");
    app.add_option("--jobs", jobs, "worker threads (0 = logical cores)");
    app.add_option("--out", out_str, "output directory");
    app.add_flag("--full", full, "full-scale Monte Carlo (2048 realizations per condition)");

    auto* sim = app.add_subcommand("simulate", "write excitation/response records per realization");
    auto* ident = app.add_subcommand("identify", "identify model ensembles per structural condition");
    bool inline_sim = false;
    ident->add_flag("--inline", inline_sim, "simulate in memory instead of reading signal CSVs");
    auto* detect = app.add_subcommand("detect", "run the novelty-detection study on ensembles");
    auto* roc = app.add_subcommand("roc", "emit ROC curves and AUC summaries");
    auto* repro = app.add_subcommand("reproduce-paper",
                                     "full experiment grid: identify (inline) + detect");
    auto* fitrel = app.add_subcommand("fit-relations", "diagnostic: tune pole-relation factors");
    double fit_alpha = 1.0;
    fitrel->add_option("--alpha", fit_alpha, "crack severity of the plant used for the fit");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const auto cfg = load_config(config_path, plant_path, seed, jobs, full);
        const fs::path out_dir(out_str);
        fs::create_directories(out_dir);
        if (sim->parsed()) return cmd_simulate(cfg, out_dir);
        if (ident->parsed()) return cmd_identify(cfg, out_dir, inline_sim);
        if (detect->parsed()) return cmd_detect(cfg, out_dir);
        if (roc->parsed()) return cmd_roc(cfg, out_dir);
        if (repro->parsed()) return cmd_reproduce(cfg, out_dir);
        if (fitrel->parsed()) return cmd_fit_relations(cfg, out_dir, fit_alpha);
        return 2;
    } catch (const vshm::ValidationError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const vshm::IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 2;
    } catch (const vshm::Error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}
