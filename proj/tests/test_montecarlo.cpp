#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>

#include "vshm/montecarlo.hpp"

#include "oracle_utils.hpp"

using namespace vshm;

namespace {

EnsembleConfig small_config(std::size_t n, std::uint64_t seed) {
    EnsembleConfig cfg;
    cfg.n_realizations = n;
    cfg.base_seed = seed;
    cfg.jobs = 2;
    return cfg;
}

} // namespace

TEST_CASE("run_ensemble", "[montecarlo]") {
    StochasticPlantSpec spec;

    SECTION("degenerate priors and no noise give near-identical models") {
        StochasticPlantSpec tight = spec;
        tight.k1_prior.dispersion = 1e-9;
        tight.c_prior.dispersion = 1e-9;
        auto cfg = small_config(4, 100);
        cfg.snr_db = 300.0;
        const auto ensemble = run_ensemble(tight, cfg);
        REQUIRE(ensemble.models.size() == 4);
        const auto ref = extract_indexes(ensemble.models[0]).lambda_nl;
        for (std::size_t i = 1; i < 4; ++i) {
            const auto iv = extract_indexes(ensemble.models[i]).lambda_nl;
            REQUIRE((iv - ref).norm() <= 1e-4 * ref.norm());
        }
    }

    SECTION("fixed seed reproduces the ensemble bit-exactly") {
        const auto a = run_ensemble(spec, small_config(6, 42));
        const auto b = run_ensemble(spec, small_config(6, 42));
        REQUIRE(a.models.size() == b.models.size());
        for (std::size_t i = 0; i < a.models.size(); ++i) {
            REQUIRE(a.models[i].b1 == b.models[i].b1);
            REQUIRE(a.models[i].b2 == b.models[i].b2);
            REQUIRE(a.models[i].b3 == b.models[i].b3);
        }
    }

    SECTION("seed isolation: a realization is unaffected by the batch size") {
        const auto a = run_ensemble(spec, small_config(4, 7));
        const auto b = run_ensemble(spec, small_config(8, 7));
        for (std::size_t i = 0; i < 4; ++i) {
            REQUIRE(a.models[i].b1 == b.models[i].b1);
            REQUIRE(a.models[i].b2 == b.models[i].b2);
        }
    }

    SECTION("worker count does not change the result") {
        auto cfg1 = small_config(4, 11);
        cfg1.jobs = 1;
        auto cfg2 = small_config(4, 11);
        cfg2.jobs = 2;
        const auto a = run_ensemble(spec, cfg1);
        const auto b = run_ensemble(spec, cfg2);
        for (std::size_t i = 0; i < 4; ++i) REQUIRE(a.models[i].b1 == b.models[i].b1);
    }

    SECTION("natural-frequency dispersion tracks the stiffness prior") {
        // omega_n ~ sqrt(k1/m): CV of omega is half the CV of k1
        const auto ensemble = run_ensemble(spec, small_config(64, 21));
        std::vector<double> omegas;
        for (const auto& m : ensemble.modal) omegas.push_back(m.omega_n_rad_s);
        const double cv = std::sqrt(oracle::variance(omegas)) / oracle::mean(omegas);
        REQUIRE(cv > 0.5 * 0.005);
        REQUIRE(cv < 2.0 * 0.005);
    }
}

TEST_CASE("kernel time functions", "[montecarlo]") {
    StochasticPlantSpec spec;
    const auto ensemble = run_ensemble(spec, small_config(2, 5));
    const auto& model = ensemble.models.front();

    SECTION("first kernel equals the linear response to a unit impulse") {
        const auto h1 = first_kernel_time(model);
        TimeSeries impulse;
        impulse.sample_rate_hz = model.basis.sample_rate_hz();
        impulse.samples.assign(h1.size(), 0.0);
        impulse.samples[0] = 1.0;
        const auto pred = predict(model, impulse);
        for (std::size_t k = 0; k < h1.size(); ++k)
            REQUIRE_THAT(h1[k], Catch::Matchers::WithinAbs(pred.y1.samples[k], 1e-12));
    }

    SECTION("high-order diagonals match direct reconstruction at a few lags") {
        const auto h2 = kernel_diagonal_time(model, 2);
        const auto& psi = model.basis.bank(2).impulse_responses;
        for (std::size_t lag : {0UL, 7UL, 100UL}) {
            double expected = 0.0;
            for (int i = 0; i < model.j2(); ++i)
                for (int j = 0; j < model.j2(); ++j)
                    expected += model.b2(i, j) * psi[static_cast<std::size_t>(i)][lag] *
                                psi[static_cast<std::size_t>(j)][lag];
            REQUIRE_THAT(h2[lag], Catch::Matchers::WithinAbs(expected, 1e-14));
        }
        REQUIRE_THROWS_AS(kernel_diagonal_time(model, 1), ValidationError);
    }
}

TEST_CASE("convergence_metric", "[montecarlo]") {
    SECTION("constant sequence gives a constant curve") {
        std::vector<double> h(64);
        for (std::size_t k = 0; k < h.size(); ++k) h[k] = std::sin(0.3 * static_cast<double>(k));
        double energy = 0.0;
        for (double v : h) energy += v * v;
        const double dt = 1.0 / 512.0;
        const std::vector<std::vector<double>> members(10, h);
        const auto conv = convergence_metric(members, dt);
        for (double c : conv) REQUIRE_THAT(c, Catch::Matchers::WithinRel(std::sqrt(energy * dt), 1e-12));
    }

    SECTION("iid members converge to the root-mean energy") {
        auto engine = make_engine(3);
        std::normal_distribution<double> dist(0.0, 1.0);
        std::vector<std::vector<double>> members(1024, std::vector<double>(16));
        for (auto& h : members)
            for (double& v : h) v = dist(engine);
        const auto conv = convergence_metric(members, 1.0);
        // E sum h^2 = 16, so conv -> 4; late-curve fluctuation shrinks like 1/sqrt(N)
        REQUIRE_THAT(conv.back(), Catch::Matchers::WithinRel(4.0, 0.05));
        double lo = conv.back(), hi = conv.back();
        for (std::size_t n = 768; n < conv.size(); ++n) {
            lo = std::min(lo, conv[n]);
            hi = std::max(hi, conv[n]);
        }
        REQUIRE((hi - lo) / conv.back() < 0.05);
    }

    SECTION("scale covariance: scaling members by a scales conv by |a| exactly") {
        std::vector<std::vector<double>> members(5, std::vector<double>{1.0, -2.0, 0.5});
        const auto base = convergence_metric(members, 0.25);
        for (auto& h : members)
            for (double& v : h) v *= -3.0;
        const auto scaled = convergence_metric(members, 0.25);
        for (std::size_t n = 0; n < base.size(); ++n)
            REQUIRE_THAT(scaled[n], Catch::Matchers::WithinRel(3.0 * base[n], 1e-14));
    }

    SECTION("empty sequence rejected") {
        REQUIRE_THROWS_AS(convergence_metric({}, 0.1), ValidationError);
    }
}

TEST_CASE("ensemble persistence round trip", "[montecarlo][io]") {
    StochasticPlantSpec spec;
    spec.nominal.alpha = 0.94;
    const auto ensemble = run_ensemble(spec, small_config(3, 9));
    const auto dir = std::filesystem::temp_directory_path() / "vshm_ensemble_roundtrip";
    std::filesystem::remove_all(dir);
    save_ensemble(ensemble, dir);
    const auto back = load_ensemble(dir);
    REQUIRE(back.models.size() == ensemble.models.size());
    REQUIRE(back.severity_alpha == ensemble.severity_alpha);
    for (std::size_t i = 0; i < back.models.size(); ++i) {
        REQUIRE(back.models[i].b1 == ensemble.models[i].b1);
        REQUIRE(back.models[i].b2 == ensemble.models[i].b2);
        REQUIRE(back.models[i].b3 == ensemble.models[i].b3);
        REQUIRE(back.params[i].k1_n_per_m == ensemble.params[i].k1_n_per_m);
        REQUIRE(back.modal[i].omega_n_rad_s == ensemble.modal[i].omega_n_rad_s);
    }
    std::filesystem::remove_all(dir);
}
