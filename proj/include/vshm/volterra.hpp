#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <set>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vshm/error.hpp"
#include "vshm/kautz.hpp"
#include "vshm/plant.hpp"
#include "vshm/signals.hpp"
#include "vshm/time_series.hpp"

namespace vshm {

//! Truncated third-order model over a Kautz basis. b2 and b3 hold the full
//! symmetric coefficient tensors (b3 flattened row-major [J3,J3,J3]).
struct VolterraModel {
    KautzBasis basis;
    Eigen::VectorXd b1;
    Eigen::MatrixXd b2;
    std::vector<double> b3;

    int j1() const { return static_cast<int>(b1.size()); }
    int j2() const { return static_cast<int>(b2.rows()); }
    int j3() const {
        const auto n = static_cast<double>(b3.size());
        return static_cast<int>(std::llround(std::cbrt(n)));
    }

    double& b3_at(int i, int j, int k) {
        const int J = j3();
        return b3[static_cast<std::size_t>((i * J + j) * J + k)];
    }
    double b3_at(int i, int j, int k) const {
        const int J = j3();
        return b3[static_cast<std::size_t>((i * J + j) * J + k)];
    }
};

//! One regression column: kernel order plus the sorted multi-index it
//! represents. Sorted (non-decreasing) indexes merge the symmetric
//! duplicates of the full tensor grid.
struct ColumnKey {
    int order = 1;
    std::array<int, 3> index{0, 0, 0}; // only the first `order` entries used

    // number of distinct permutations of the multi-index
    int multiplicity() const {
        if (order == 1) return 1;
        if (order == 2) return index[0] == index[1] ? 1 : 2;
        if (index[0] == index[1] && index[1] == index[2]) return 1;
        if (index[0] == index[1] || index[1] == index[2] || index[0] == index[2]) return 3;
        return 6;
    }
};

struct RegressionProblem {
    Eigen::MatrixXd design_matrix; // N_samples x N_cols
    Eigen::VectorXd target;
    std::vector<ColumnKey> column_index;
};

//! Assemble the least-squares problem whose columns are products of the
//! Kautz-filtered input, reduced to sorted multi-indexes with multiplicity
//! weights so each fitted coefficient equals the symmetric kernel value.
inline RegressionProblem build_regression(const KautzBasis& basis, const TimeSeries& input,
                                          const TimeSeries& target, const std::set<int>& orders) {
    input.validate();
    target.validate();
    require(input.size() == target.size() && input.sample_rate_hz == target.sample_rate_hz,
            "build_regression: input/target must share rate and length");
    require(!orders.empty(), "build_regression: at least one order required");
    for (int o : orders) require(o >= 1 && o <= 3, "build_regression: orders must be within {1,2,3}");

    const auto n = static_cast<Eigen::Index>(input.size());
    std::array<std::vector<std::vector<double>>, 3> filtered;
    for (int o : orders) filtered[static_cast<std::size_t>(o - 1)] = filter_input(basis.bank(o), input);

    std::vector<ColumnKey> keys;
    if (orders.count(1)) {
        for (int i = 0; i < basis.functions(1); ++i) keys.push_back({1, {i, 0, 0}});
    }
    if (orders.count(2)) {
        const int J = basis.functions(2);
        for (int i = 0; i < J; ++i)
            for (int j = i; j < J; ++j) keys.push_back({2, {i, j, 0}});
    }
    if (orders.count(3)) {
        const int J = basis.functions(3);
        for (int i = 0; i < J; ++i)
            for (int j = i; j < J; ++j)
                for (int k = j; k < J; ++k) keys.push_back({3, {i, j, k}});
    }

    RegressionProblem problem;
    problem.column_index = keys;
    problem.design_matrix.resize(n, static_cast<Eigen::Index>(keys.size()));
    problem.target = Eigen::Map<const Eigen::VectorXd>(target.samples.data(), n);

    for (std::size_t col = 0; col < keys.size(); ++col) {
        const ColumnKey& key = keys[col];
        const auto& l = filtered[static_cast<std::size_t>(key.order - 1)];
        const double w = key.multiplicity();
        for (Eigen::Index k = 0; k < n; ++k) {
            double v = l[static_cast<std::size_t>(key.index[0])][static_cast<std::size_t>(k)];
            if (key.order >= 2) v *= l[static_cast<std::size_t>(key.index[1])][static_cast<std::size_t>(k)];
            if (key.order >= 3) v *= l[static_cast<std::size_t>(key.index[2])][static_cast<std::size_t>(k)];
            problem.design_matrix(k, static_cast<Eigen::Index>(col)) = w * v;
        }
    }
    return problem;
}

struct FitResult {
    Eigen::VectorXd coefficients;
    double residual_rms = 0.0;
    double relative_residual = 0.0; // ||r|| / ||y||
    double condition_estimate = 0.0;
    Eigen::Index rank = 0;
};

//! Minimize ||design*phi - target||_2 with a rank-revealing column-pivoted QR.
inline FitResult fit_least_squares(const RegressionProblem& problem) {
    const Eigen::Index n = problem.design_matrix.rows();
    const Eigen::Index p = problem.design_matrix.cols();
    require(n >= p, "fit_least_squares: fewer samples than columns");

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(problem.design_matrix);
    const auto& rdiag = qr.matrixR().diagonal();
    const double r_max = std::abs(rdiag(0));
    const double r_min = std::abs(rdiag(p - 1));
    if (qr.rank() < p)
        throw IllPosedError("fit_least_squares: design matrix is rank deficient", qr.rank());

    FitResult fit;
    fit.coefficients = qr.solve(problem.target);
    fit.rank = qr.rank();
    fit.condition_estimate = r_min > 0.0 ? r_max / r_min : std::numeric_limits<double>::infinity();
    const Eigen::VectorXd residual = problem.design_matrix * fit.coefficients - problem.target;
    fit.residual_rms = std::sqrt(residual.squaredNorm() / static_cast<double>(n));
    const double ynorm = problem.target.norm();
    fit.relative_residual = ynorm > 0.0 ? residual.norm() / ynorm : 0.0;
    return fit;
}

namespace detail {

inline void scatter_coefficients(const std::vector<ColumnKey>& keys, const Eigen::VectorXd& phi,
                                 VolterraModel& model) {
    for (std::size_t col = 0; col < keys.size(); ++col) {
        const ColumnKey& key = keys[col];
        const double v = phi(static_cast<Eigen::Index>(col));
        if (key.order == 1) {
            model.b1(key.index[0]) = v;
        } else if (key.order == 2) {
            model.b2(key.index[0], key.index[1]) = v;
            model.b2(key.index[1], key.index[0]) = v;
        } else {
            int idx[3] = {key.index[0], key.index[1], key.index[2]};
            std::sort(idx, idx + 3);
            do {
                model.b3_at(idx[0], idx[1], idx[2]) = v;
            } while (std::next_permutation(idx, idx + 3));
        }
    }
}

} // namespace detail

//! Two-step identification: the linear kernel from the low-amplitude pair,
//! then the quadratic and cubic kernels from the high-amplitude residual
//! with the linear kernel frozen.
inline VolterraModel identify_two_step(const KautzBasis& basis, const TimeSeries& u_low,
                                       const TimeSeries& y_low, const TimeSeries& u_high,
                                       const TimeSeries& y_high) {
    VolterraModel model;
    model.basis = basis;
    model.b1 = Eigen::VectorXd::Zero(basis.functions(1));
    model.b2 = Eigen::MatrixXd::Zero(basis.functions(2), basis.functions(2));
    model.b3.assign(static_cast<std::size_t>(basis.functions(3)) * basis.functions(3) * basis.functions(3),
                    0.0);

    const auto linear = build_regression(basis, u_low, y_low, {1});
    const auto fit1 = fit_least_squares(linear);
    detail::scatter_coefficients(linear.column_index, fit1.coefficients, model);

    // residual of the frozen linear kernel under the high-amplitude input
    const auto l1_high = filter_input(basis.bank(1), u_high);
    TimeSeries residual = y_high;
    for (std::size_t k = 0; k < residual.size(); ++k) {
        double y1 = 0.0;
        for (int i = 0; i < basis.functions(1); ++i) y1 += model.b1(i) * l1_high[static_cast<std::size_t>(i)][k];
        residual.samples[k] -= y1;
    }

    const auto nonlinear = build_regression(basis, u_high, residual, {2, 3});
    const auto fit23 = fit_least_squares(nonlinear);
    detail::scatter_coefficients(nonlinear.column_index, fit23.coefficients, model);
    return model;
}

struct Prediction {
    TimeSeries y1, y2, y3, total;

    TimeSeries y_nl() const {
        TimeSeries out = y2;
        for (std::size_t k = 0; k < out.size(); ++k) out.samples[k] += y3.samples[k];
        return out;
    }
};

//! Order-wise response of the model to an input record.
inline Prediction predict(const VolterraModel& model, const TimeSeries& input) {
    input.validate();
    require(input.sample_rate_hz == model.basis.sample_rate_hz(),
            "predict: input rate must match the basis sample rate");

    const std::size_t n = input.size();
    const auto l1 = filter_input(model.basis.bank(1), input);
    const auto l2 = filter_input(model.basis.bank(2), input);
    const auto l3 = filter_input(model.basis.bank(3), input);

    Prediction pred;
    for (TimeSeries* ts : {&pred.y1, &pred.y2, &pred.y3, &pred.total}) {
        ts->sample_rate_hz = input.sample_rate_hz;
        ts->start_time_s = input.start_time_s;
        ts->samples.assign(n, 0.0);
    }

    const int J1 = model.j1(), J2 = model.j2(), J3 = model.j3();
    for (std::size_t k = 0; k < n; ++k) {
        double acc1 = 0.0;
        for (int i = 0; i < J1; ++i) acc1 += model.b1(i) * l1[static_cast<std::size_t>(i)][k];
        double acc2 = 0.0;
        for (int i = 0; i < J2; ++i) {
            const double li = l2[static_cast<std::size_t>(i)][k];
            for (int j = 0; j < J2; ++j) acc2 += model.b2(i, j) * li * l2[static_cast<std::size_t>(j)][k];
        }
        double acc3 = 0.0;
        for (int i = 0; i < J3; ++i) {
            const double li = l3[static_cast<std::size_t>(i)][k];
            for (int j = 0; j < J3; ++j) {
                const double lij = li * l3[static_cast<std::size_t>(j)][k];
                for (int m = 0; m < J3; ++m)
                    acc3 += model.b3_at(i, j, m) * lij * l3[static_cast<std::size_t>(m)][k];
            }
        }
        pred.y1.samples[k] = acc1;
        pred.y2.samples[k] = acc2;
        pred.y3.samples[k] = acc3;
        pred.total.samples[k] = acc1 + acc2 + acc3;
    }
    return pred;
}

//! Diagonal monitoring indexes: lambda1 = b1, lambda2 = diag(b2),
//! lambda3 = superdiag(b3), lambda_nl = [lambda2; lambda3].
struct IndexVectors {
    Eigen::VectorXd lambda1, lambda2, lambda3, lambda_nl;
};

inline IndexVectors extract_indexes(const VolterraModel& model) {
    IndexVectors iv;
    iv.lambda1 = model.b1;
    iv.lambda2 = model.b2.diagonal();
    iv.lambda3.resize(model.j3());
    for (int i = 0; i < model.j3(); ++i) iv.lambda3(i) = model.b3_at(i, i, i);
    iv.lambda_nl.resize(iv.lambda2.size() + iv.lambda3.size());
    iv.lambda_nl << iv.lambda2, iv.lambda3;
    return iv;
}

//! Scale factors mapping the measured modal parameters to the pole
//! parameters of the second- and third-order banks.
struct PoleRelations {
    double p1 = 1.11;
    double p2 = 2.7;
    double p3 = 1.06;
    double p4 = 1.1;

    void validate() const {
        require(p1 > 0.0 && p2 > 0.0 && p3 > 0.0 && p4 > 0.0, "PoleRelations: factors must be positive");
    }
};

inline std::array<KautzPoleSpec, 3> pole_specs_from_modal(const ModalEstimate& modal,
                                                          const PoleRelations& rel, double fs) {
    return {KautzPoleSpec{modal.omega_n_rad_s, modal.zeta, fs},
            KautzPoleSpec{rel.p1 * modal.omega_n_rad_s, rel.p2 * modal.zeta, fs},
            KautzPoleSpec{rel.p3 * modal.omega_n_rad_s, rel.p4 * modal.zeta, fs}};
}

struct PoleRelationFit {
    PoleRelations relations;
    double objective = 0.0;
    double initial_objective = 0.0;
    int evaluations = 0;
    bool converged = false;
};

namespace detail {

// Nelder-Mead over a box, bounds enforced by clamping the evaluation point.
template <typename F>
PoleRelationFit simplex_minimize(F&& objective, const std::array<double, 4>& start,
                                 const std::array<double, 4>& lo, const std::array<double, 4>& hi,
                                 int max_evals) {
    using Point = std::array<double, 4>;
    auto clamp = [&](Point p) {
        for (int d = 0; d < 4; ++d) p[static_cast<std::size_t>(d)] = std::clamp(p[static_cast<std::size_t>(d)], lo[static_cast<std::size_t>(d)], hi[static_cast<std::size_t>(d)]);
        return p;
    };
    int evals = 0;
    auto eval = [&](const Point& p) {
        ++evals;
        return objective(clamp(p));
    };

    std::array<Point, 5> vertices;
    std::array<double, 5> values{};
    vertices[0] = clamp(start);
    values[0] = eval(vertices[0]);
    const double start_value = values[0];
    for (std::size_t d = 0; d < 4; ++d) {
        Point p = vertices[0];
        p[d] = p[d] * 1.1 + 0.05;
        vertices[d + 1] = clamp(p);
        values[d + 1] = eval(vertices[d + 1]);
    }

    auto order = [&]() {
        for (std::size_t a = 0; a < 5; ++a)
            for (std::size_t b = a + 1; b < 5; ++b)
                if (values[b] < values[a]) {
                    std::swap(values[a], values[b]);
                    std::swap(vertices[a], vertices[b]);
                }
    };
    order();

    bool converged = false;
    while (evals < max_evals) {
        if (std::abs(values[4] - values[0]) <= 1e-10 * (std::abs(values[0]) + 1e-30)) {
            converged = true;
            break;
        }
        Point centroid{};
        for (std::size_t v = 0; v < 4; ++v)
            for (std::size_t d = 0; d < 4; ++d) centroid[d] += vertices[v][d] / 4.0;
        auto blend = [&](double t) {
            Point p;
            for (std::size_t d = 0; d < 4; ++d) p[d] = centroid[d] + t * (centroid[d] - vertices[4][d]);
            return p;
        };

        const Point reflected = blend(1.0);
        const double fr = eval(reflected);
        if (fr < values[0]) {
            const Point expanded = blend(2.0);
            const double fe = eval(expanded);
            if (fe < fr) {
                vertices[4] = expanded;
                values[4] = fe;
            } else {
                vertices[4] = reflected;
                values[4] = fr;
            }
        } else if (fr < values[3]) {
            vertices[4] = reflected;
            values[4] = fr;
        } else {
            const Point contracted = blend(fr < values[4] ? 0.5 : -0.5);
            const double fc = eval(contracted);
            if (fc < std::min(fr, values[4])) {
                vertices[4] = contracted;
                values[4] = fc;
            } else {
                for (std::size_t v = 1; v < 5; ++v) {
                    for (std::size_t d = 0; d < 4; ++d)
                        vertices[v][d] = vertices[0][d] + 0.5 * (vertices[v][d] - vertices[0][d]);
                    vertices[v] = clamp(vertices[v]);
                    values[v] = eval(vertices[v]);
                    if (evals >= max_evals) break;
                }
            }
        }
        order();
    }

    PoleRelationFit fit;
    fit.relations = PoleRelations{vertices[0][0], vertices[0][1], vertices[0][2], vertices[0][3]};
    fit.objective = values[0];
    fit.initial_objective = start_value;
    fit.evaluations = evals;
    fit.converged = converged;
    return fit;
}

} // namespace detail

//! Tune the modal-to-pole scale factors on noise-free nominal-plant data by
//! minimizing the squared prediction error of the full identify-then-predict
//! pipeline. Derivative-free simplex search over
//! [0.5,5]x[0.5,10]x[0.5,5]x[0.5,10], capped at 400 objective evaluations;
//! returns the best point seen (converged=false flags hitting the cap).
inline PoleRelationFit fit_pole_relations(const PlantParams& nominal_plant, const SimConfig& cfg,
                                          const PoleRelations& initial,
                                          const ChirpSpec& chirp = ChirpSpec{},
                                          double low_amplitude_n = 0.1, double high_amplitude_n = 1.0) {
    nominal_plant.validate();
    cfg.validate();
    initial.validate();

    ChirpSpec low = chirp, high = chirp;
    low.amplitude_n = low_amplitude_n;
    high.amplitude_n = high_amplitude_n;
    const TimeSeries u_low = generate_chirp(low, cfg.sample_rate_hz);
    const TimeSeries u_high = generate_chirp(high, cfg.sample_rate_hz);
    const TimeSeries y_low = simulate(nominal_plant, u_low, cfg);
    const TimeSeries y_high = simulate(nominal_plant, u_high, cfg);
    const ModalEstimate modal = estimate_modal(y_low, u_low);

    const std::array<int, 3> n_functions{2, 4, 6};
    auto objective = [&](const std::array<double, 4>& p) {
        const PoleRelations rel{p[0], p[1], p[2], p[3]};
        try {
            const auto basis = build_basis(pole_specs_from_modal(modal, rel, cfg.sample_rate_hz),
                                           n_functions, cfg.n_samples);
            const auto model = identify_two_step(basis, u_low, y_low, u_high, y_high);
            const auto pred = predict(model, u_high);
            double acc = 0.0;
            for (std::size_t k = 0; k < y_high.size(); ++k) {
                const double e = pred.total.samples[k] - y_high.samples[k];
                acc += e * e;
            }
            return acc;
        } catch (const Error&) {
            return std::numeric_limits<double>::max();
        }
    };

    return detail::simplex_minimize(objective, {initial.p1, initial.p2, initial.p3, initial.p4},
                                    {0.5, 0.5, 0.5, 0.5}, {5.0, 10.0, 5.0, 10.0}, 400);
}

// ---- model JSON ----

inline nlohmann::json model_to_json(const VolterraModel& model) {
    nlohmann::json j;
    j["version"] = "volterra_model_v1";
    j["basis"] = model.basis;
    j["b1"] = std::vector<double>(model.b1.data(), model.b1.data() + model.b1.size());
    j["b1_layout"] = "[J1]";
    std::vector<double> b2(model.b2.size());
    Eigen::Map<Eigen::MatrixXd>(b2.data(), model.b2.rows(), model.b2.cols()) = model.b2;
    j["b2"] = b2;
    j["b2_layout"] = "column-major [J2,J2]";
    j["b3"] = model.b3;
    j["b3_layout"] = "row-major [J3,J3,J3]";
    j["dims"] = {model.j1(), model.j2(), model.j3()};
    return j;
}

inline VolterraModel model_from_json(const nlohmann::json& j) {
    require(j.value("version", "") == std::string("volterra_model_v1"),
            "model JSON: unsupported version");
    VolterraModel model;
    model.basis = kautz_basis_from_json(j.at("basis"));
    const auto dims = j.at("dims").get<std::array<int, 3>>();
    const auto b1 = j.at("b1").get<std::vector<double>>();
    require(static_cast<int>(b1.size()) == dims[0], "model JSON: b1 size mismatch");
    model.b1 = Eigen::Map<const Eigen::VectorXd>(b1.data(), dims[0]);
    const auto b2 = j.at("b2").get<std::vector<double>>();
    require(static_cast<int>(b2.size()) == dims[1] * dims[1], "model JSON: b2 size mismatch");
    model.b2 = Eigen::Map<const Eigen::MatrixXd>(b2.data(), dims[1], dims[1]);
    model.b3 = j.at("b3").get<std::vector<double>>();
    require(static_cast<int>(model.b3.size()) == dims[2] * dims[2] * dims[2],
            "model JSON: b3 size mismatch");
    return model;
}

} // namespace vshm
