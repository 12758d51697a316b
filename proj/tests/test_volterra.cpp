#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vshm/plant.hpp"
#include "vshm/signals.hpp"
#include "vshm/volterra.hpp"

#include "oracle_utils.hpp"

using namespace vshm;

namespace {

KautzBasis small_basis(std::size_t memory, std::array<int, 3> J = {2, 2, 2}) {
    return build_basis({KautzPoleSpec{145.3, 0.018, 512.0}, KautzPoleSpec{161.0, 0.049, 512.0},
                        KautzPoleSpec{154.0, 0.020, 512.0}},
                       J, memory);
}

KautzBasis standard_basis(std::size_t memory) { return small_basis(memory, {2, 4, 6}); }

TimeSeries random_input(std::size_t n, std::uint64_t seed, double scale = 1.0) {
    TimeSeries u;
    u.sample_rate_hz = 512.0;
    u.samples.resize(n);
    auto engine = make_engine(seed);
    std::normal_distribution<double> dist(0.0, scale);
    for (double& v : u.samples) v = dist(engine);
    return u;
}

VolterraModel random_model(const KautzBasis& basis, std::uint64_t seed) {
    VolterraModel model;
    model.basis = basis;
    auto engine = make_engine(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    model.b1.resize(basis.functions(1));
    for (int i = 0; i < model.b1.size(); ++i) model.b1(i) = dist(engine);
    const int J2 = basis.functions(2);
    model.b2.resize(J2, J2);
    for (int i = 0; i < J2; ++i)
        for (int j = i; j < J2; ++j) model.b2(i, j) = model.b2(j, i) = dist(engine);
    const int J3 = basis.functions(3);
    model.b3.assign(static_cast<std::size_t>(J3) * J3 * J3, 0.0);
    for (int i = 0; i < J3; ++i)
        for (int j = i; j < J3; ++j)
            for (int k = j; k < J3; ++k) {
                const double v = dist(engine);
                int idx[3] = {i, j, k};
                std::sort(idx, idx + 3);
                do {
                    model.b3_at(idx[0], idx[1], idx[2]) = v;
                } while (std::next_permutation(idx, idx + 3));
            }
    return model;
}

} // namespace

TEST_CASE("build_regression column structure", "[volterra]") {
    const auto basis = standard_basis(64);
    const auto u = random_input(64, 1);
    const auto y = random_input(64, 2);

    SECTION("linear-only problem: the two filtered inputs") {
        const auto problem = build_regression(basis, u, y, {1});
        REQUIRE(problem.design_matrix.cols() == 2);
        const auto filtered = filter_input(basis.bank(1), u);
        for (Eigen::Index k = 0; k < 64; ++k) {
            REQUIRE(problem.design_matrix(k, 0) == filtered[0][static_cast<std::size_t>(k)]);
            REQUIRE(problem.design_matrix(k, 1) == filtered[1][static_cast<std::size_t>(k)]);
        }
    }

    SECTION("full problem has 2 + 10 + 56 = 68 symmetric-reduced columns") {
        const auto problem = build_regression(basis, u, y, {1, 2, 3});
        REQUIRE(problem.design_matrix.cols() == 68);
        REQUIRE(problem.column_index.size() == 68);
    }

    SECTION("constant input: quadratic columns settle at products of DC gains") {
        TimeSeries ones;
        ones.sample_rate_hz = 512.0;
        ones.samples.assign(2048, 1.0);
        const auto basis22 = small_basis(2048);
        const auto problem = build_regression(basis22, ones, ones, {2});
        // steady-state value of each filter = sum of its impulse response
        const auto& psi = basis22.bank(2).impulse_responses;
        std::array<double, 2> dc{0.0, 0.0};
        for (int i = 0; i < 2; ++i)
            for (double v : psi[static_cast<std::size_t>(i)]) dc[static_cast<std::size_t>(i)] += v;
        const Eigen::Index last = problem.design_matrix.rows() - 1;
        // columns ordered (0,0), (0,1), (1,1) with weights 1, 2, 1
        REQUIRE_THAT(problem.design_matrix(last, 0), Catch::Matchers::WithinAbs(dc[0] * dc[0], 1e-6));
        REQUIRE_THAT(problem.design_matrix(last, 1), Catch::Matchers::WithinAbs(2.0 * dc[0] * dc[1], 1e-6));
        REQUIRE_THAT(problem.design_matrix(last, 2), Catch::Matchers::WithinAbs(dc[1] * dc[1], 1e-6));
    }

    SECTION("length mismatch rejected") {
        const auto y_short = random_input(32, 3);
        REQUIRE_THROWS_AS(build_regression(basis, u, y_short, {1}), ValidationError);
    }
}

TEST_CASE("fit_least_squares", "[volterra]") {
    SECTION("identity design returns the target") {
        RegressionProblem problem;
        problem.design_matrix = Eigen::MatrixXd::Identity(8, 8);
        problem.target = Eigen::VectorXd::LinSpaced(8, 1.0, 8.0);
        const auto fit = fit_least_squares(problem);
        REQUIRE((fit.coefficients - problem.target).norm() < 1e-12);
        REQUIRE(fit.rank == 8);
    }

    SECTION("noise-free synthetic coefficients recovered to 1e-9") {
        const auto basis = standard_basis(256);
        const auto u = random_input(256, 5, 0.5);
        auto problem = build_regression(basis, u, u, {1, 2, 3});
        Eigen::VectorXd truth(problem.design_matrix.cols());
        auto engine = make_engine(6);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (Eigen::Index i = 0; i < truth.size(); ++i) truth(i) = dist(engine);
        problem.target = problem.design_matrix * truth;
        const auto fit = fit_least_squares(problem);
        REQUIRE((fit.coefficients - truth).norm() / truth.norm() < 1e-9);
        // normal equations satisfied
        const Eigen::VectorXd g = problem.design_matrix.transpose() *
                                  (problem.design_matrix * fit.coefficients - problem.target);
        REQUIRE(g.norm() <= 1e-8 * (problem.design_matrix.transpose() * problem.target).norm());
    }

    SECTION("residual RMS tracks the injected noise level") {
        const auto basis = standard_basis(2048);
        const auto u = random_input(2048, 7, 0.5);
        auto problem = build_regression(basis, u, u, {1});
        Eigen::VectorXd truth = Eigen::VectorXd::Constant(2, 0.3);
        problem.target = problem.design_matrix * truth;
        const double sigma = 0.05;
        auto engine = make_engine(8);
        std::normal_distribution<double> dist(0.0, sigma);
        for (Eigen::Index k = 0; k < problem.target.size(); ++k) problem.target(k) += dist(engine);
        const auto fit = fit_least_squares(problem);
        REQUIRE_THAT(fit.residual_rms, Catch::Matchers::WithinRel(sigma, 0.10));
    }

    SECTION("duplicated column raises an ill-posed error carrying the rank") {
        RegressionProblem problem;
        problem.design_matrix.resize(16, 2);
        problem.design_matrix.col(0) = Eigen::VectorXd::LinSpaced(16, 0.0, 1.0);
        problem.design_matrix.col(1) = problem.design_matrix.col(0);
        problem.target = Eigen::VectorXd::Ones(16);
        REQUIRE_THROWS_AS(fit_least_squares(problem), IllPosedError);
        try {
            fit_least_squares(problem);
        } catch (const IllPosedError& e) {
            REQUIRE(e.numerical_rank == 1);
        }
    }
}

TEST_CASE("predict", "[volterra]") {
    SECTION("zero input gives zero contributions") {
        const auto model = random_model(small_basis(64), 9);
        TimeSeries zero;
        zero.sample_rate_hz = 512.0;
        zero.samples.assign(64, 0.0);
        const auto pred = predict(model, zero);
        for (double v : pred.total.samples) REQUIRE(v == 0.0);
    }

    SECTION("linear-only model: total equals y1, higher orders vanish") {
        auto model = random_model(small_basis(64), 10);
        model.b2.setZero();
        std::fill(model.b3.begin(), model.b3.end(), 0.0);
        const auto u = random_input(64, 11);
        const auto pred = predict(model, u);
        for (std::size_t k = 0; k < 64; ++k) {
            REQUIRE(pred.y2.samples[k] == 0.0);
            REQUIRE(pred.y3.samples[k] == 0.0);
            REQUIRE(pred.total.samples[k] == pred.y1.samples[k]);
        }
    }

    SECTION("matches the brute-force kernel-domain evaluation") {
        const auto model = random_model(small_basis(64), 12);
        const auto u = random_input(64, 13, 0.3);
        const auto pred = predict(model, u);
        const auto brute = oracle::volterra_brute_force(model, u.samples);
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < 64; ++k) {
            num += (pred.total.samples[k] - brute[k]) * (pred.total.samples[k] - brute[k]);
            den += brute[k] * brute[k];
        }
        REQUIRE(std::sqrt(num / den) < 1e-8);
    }

    SECTION("homogeneity: a pure order-n path scales as a^n") {
        auto model = random_model(small_basis(64), 14);
        const auto u = random_input(64, 15, 0.2);
        TimeSeries u3 = u;
        const double a = 1.7;
        for (double& v : u3.samples) v *= a;
        const auto p1 = predict(model, u);
        const auto p3 = predict(model, u3);
        using Catch::Matchers::WithinAbs;
        using Catch::Matchers::WithinRel;
        for (std::size_t k = 0; k < 64; ++k) {
            REQUIRE_THAT(p3.y1.samples[k],
                         WithinAbs(a * p1.y1.samples[k], 1e-10) || WithinRel(a * p1.y1.samples[k], 1e-9));
            REQUIRE_THAT(p3.y2.samples[k], WithinAbs(a * a * p1.y2.samples[k], 1e-10) ||
                                               WithinRel(a * a * p1.y2.samples[k], 1e-9));
            REQUIRE_THAT(p3.y3.samples[k], WithinAbs(a * a * a * p1.y3.samples[k], 1e-10) ||
                                               WithinRel(a * a * a * p1.y3.samples[k], 1e-9));
        }
    }

    SECTION("prediction is invariant under symmetrization of the tensors") {
        const auto basis = small_basis(64);
        auto asym = random_model(basis, 16);
        // break symmetry explicitly
        asym.b2(0, 1) += 0.5;
        asym.b3_at(0, 1, 1) += 0.25;
        const auto u = random_input(64, 17, 0.3);
        const auto direct = predict(asym, u);

        auto sym = asym;
        sym.b2 = 0.5 * (asym.b2 + asym.b2.transpose());
        const int J = asym.j3();
        for (int i = 0; i < J; ++i)
            for (int j = 0; j < J; ++j)
                for (int k = 0; k < J; ++k) {
                    const double avg = (asym.b3_at(i, j, k) + asym.b3_at(i, k, j) + asym.b3_at(j, i, k) +
                                        asym.b3_at(j, k, i) + asym.b3_at(k, i, j) + asym.b3_at(k, j, i)) /
                                       6.0;
                    sym.b3[static_cast<std::size_t>((i * J + j) * J + k)] = avg;
                }
        const auto symmetric = predict(sym, u);
        for (std::size_t k = 0; k < 64; ++k)
            REQUIRE_THAT(symmetric.total.samples[k],
                         Catch::Matchers::WithinAbs(direct.total.samples[k], 1e-10));
    }
}

TEST_CASE("extract_indexes reads the tensor diagonals", "[volterra]") {
    SECTION("zero model gives zero vectors") {
        VolterraModel model;
        model.basis = standard_basis(32);
        model.b1 = Eigen::VectorXd::Zero(2);
        model.b2 = Eigen::MatrixXd::Zero(4, 4);
        model.b3.assign(216, 0.0);
        const auto iv = extract_indexes(model);
        REQUIRE(iv.lambda1.norm() == 0.0);
        REQUIRE(iv.lambda2.norm() == 0.0);
        REQUIRE(iv.lambda3.norm() == 0.0);
        REQUIRE(iv.lambda_nl.size() == 10);
    }

    SECTION("identity quadratic tensor gives all-ones lambda2") {
        VolterraModel model;
        model.basis = standard_basis(32);
        model.b1 = Eigen::VectorXd::Zero(2);
        model.b2 = Eigen::MatrixXd::Identity(4, 4);
        model.b3.assign(216, 0.0);
        REQUIRE(extract_indexes(model).lambda2 == Eigen::VectorXd::Ones(4));
    }

    SECTION("diagonals match direct tensor reads on a random model") {
        const auto model = random_model(standard_basis(32), 21);
        const auto iv = extract_indexes(model);
        for (int i = 0; i < 2; ++i) REQUIRE(iv.lambda1(i) == model.b1(i));
        for (int i = 0; i < 4; ++i) REQUIRE(iv.lambda2(i) == model.b2(i, i));
        for (int i = 0; i < 6; ++i) REQUIRE(iv.lambda3(i) == model.b3_at(i, i, i));
        for (int i = 0; i < 4; ++i) REQUIRE(iv.lambda_nl(i) == iv.lambda2(i));
        for (int i = 0; i < 6; ++i) REQUIRE(iv.lambda_nl(4 + i) == iv.lambda3(i));
    }
}

TEST_CASE("identify_two_step", "[volterra]") {
    SimConfig cfg;
    const auto u_low = generate_chirp({0.1, 15.0, 30.0, 4.0}, cfg.sample_rate_hz);
    const auto u_high = generate_chirp({1.0, 15.0, 30.0, 4.0}, cfg.sample_rate_hz);

    SECTION("linear plant data leaves the high-order kernels near-empty") {
        PlantParams lin;
        lin.k2_n_per_m2 = 0.0;
        lin.k3_n_per_m3 = 0.0;
        const auto y_low = simulate(lin, u_low, cfg);
        const auto y_high = simulate(lin, u_high, cfg);
        const auto modal = estimate_modal(y_low, u_low);
        const auto basis = build_basis(pole_specs_from_modal(modal, PoleRelations{}, cfg.sample_rate_hz),
                                       {2, 4, 6}, cfg.n_samples);
        const auto model = identify_two_step(basis, u_low, y_low, u_high, y_high);
        const double rms_b1 = model.b1.norm() / std::sqrt(2.0);
        const double rms_b2 = model.b2.norm() / 4.0;
        double b3_sq = 0.0;
        for (double v : model.b3) b3_sq += v * v;
        const double rms_b3 = std::sqrt(b3_sq / 216.0);
        // the quadratic columns are even in u and stay orthogonal to the
        // odd-symmetric linear residual
        REQUIRE(rms_b2 <= 1e-3 * rms_b1);
        // the cubic columns are odd in u and soak up the two-function
        // truncation floor of the linear kernel (measured ~0.18 rms_b1);
        // what stays small is their share of the output energy
        REQUIRE(rms_b3 <= 0.25 * rms_b1);
        const auto pred = predict(model, u_high);
        double e3 = 0.0, ty = 0.0;
        for (std::size_t k = 0; k < y_high.size(); ++k) {
            e3 += pred.y3.samples[k] * pred.y3.samples[k];
            ty += y_high.samples[k] * y_high.samples[k];
        }
        REQUIRE(std::sqrt(e3 / ty) < 0.05);
    }

    SECTION("noise-free nominal plant: training-chirp prediction within 5% NRMSE") {
        PlantParams nominal;
        const auto y_low = simulate(nominal, u_low, cfg);
        const auto y_high = simulate(nominal, u_high, cfg);
        const auto modal = estimate_modal(y_low, u_low);
        const auto basis = build_basis(pole_specs_from_modal(modal, PoleRelations{}, cfg.sample_rate_hz),
                                       {2, 4, 6}, cfg.n_samples);
        const auto model = identify_two_step(basis, u_low, y_low, u_high, y_high);
        const auto pred = predict(model, u_high);
        REQUIRE(oracle::nrmse(pred.total.samples, y_high.samples) <= 0.05);
    }

    SECTION("zero targets give the all-zero model") {
        TimeSeries zero = u_low;
        for (double& v : zero.samples) v = 0.0;
        const auto basis = standard_basis(cfg.n_samples);
        const auto model = identify_two_step(basis, u_low, zero, u_high, zero);
        REQUIRE(model.b1.norm() == 0.0);
        REQUIRE(model.b2.norm() == 0.0);
        for (double v : model.b3) REQUIRE(v == 0.0);
    }
}

TEST_CASE("fit_pole_relations", "[volterra]") {
    PlantParams nominal;
    SimConfig cfg;

    SECTION("objective never increases from the published starting factors") {
        const auto fit = fit_pole_relations(nominal, cfg, PoleRelations{1.11, 2.7, 1.06, 1.1});
        REQUIRE(fit.objective <= fit.initial_objective);
        REQUIRE(fit.evaluations <= 404); // 400-evaluation budget plus the iteration in flight
        // optimizer dominates a fixed probe point
        const auto probe = fit_pole_relations(nominal, cfg, PoleRelations{1.0, 1.0, 1.0, 1.0});
        REQUIRE(fit.objective <= probe.initial_objective);
    }

    SECTION("on a linear plant the relation factors cannot matter much") {
        PlantParams lin = nominal;
        lin.k2_n_per_m2 = 0.0;
        lin.k3_n_per_m3 = 0.0;
        // the high-order kernels carry no real signal here, so wherever the
        // factors place the poles the model error stays pinned at the
        // linear-kernel truncation floor (a few percent of output energy)
        const auto u_high = generate_chirp({1.0, 15.0, 30.0, 4.0}, cfg.sample_rate_hz);
        const double energy = [&] {
            const auto y = simulate(lin, u_high, cfg);
            double acc = 0.0;
            for (double v : y.samples) acc += v * v;
            return acc;
        }();
        const auto at_ref = fit_pole_relations(lin, cfg, PoleRelations{1.11, 2.7, 1.06, 1.1});
        const auto perturbed = fit_pole_relations(lin, cfg, PoleRelations{1.67, 4.05, 1.59, 1.65});
        REQUIRE(std::sqrt(at_ref.initial_objective / energy) < 0.05);
        REQUIRE(std::sqrt(perturbed.initial_objective / energy) < 0.05);
    }
}

TEST_CASE("model JSON round trip", "[volterra][io]") {
    const auto model = random_model(standard_basis(64), 33);
    const auto j = model_to_json(model);
    REQUIRE(j.at("version") == "volterra_model_v1");
    const auto back = model_from_json(j);
    REQUIRE(back.b1 == model.b1);
    REQUIRE(back.b2 == model.b2);
    REQUIRE(back.b3 == model.b3);
    REQUIRE(back.basis.bank(2).impulse_responses == model.basis.bank(2).impulse_responses);
}
