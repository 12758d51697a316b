#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "vshm/error.hpp"
#include "vshm/montecarlo.hpp"
#include "vshm/volterra.hpp"

namespace vshm {

enum class FeatureKind {
    coeff_lambda1,
    coeff_lambda2,
    coeff_lambda3,
    coeff_lambda_nl,
    contrib_y1,
    contrib_y2,
    contrib_y3,
    contrib_ynl,
};

inline const std::vector<FeatureKind>& all_feature_kinds() {
    static const std::vector<FeatureKind> kinds = {
        FeatureKind::coeff_lambda1,  FeatureKind::coeff_lambda2, FeatureKind::coeff_lambda3,
        FeatureKind::coeff_lambda_nl, FeatureKind::contrib_y1,   FeatureKind::contrib_y2,
        FeatureKind::contrib_y3,     FeatureKind::contrib_ynl,
    };
    return kinds;
}

inline std::string feature_kind_name(FeatureKind kind) {
    switch (kind) {
        case FeatureKind::coeff_lambda1: return "coeff_lambda1";
        case FeatureKind::coeff_lambda2: return "coeff_lambda2";
        case FeatureKind::coeff_lambda3: return "coeff_lambda3";
        case FeatureKind::coeff_lambda_nl: return "coeff_lambda_nl";
        case FeatureKind::contrib_y1: return "contrib_y1";
        case FeatureKind::contrib_y2: return "contrib_y2";
        case FeatureKind::contrib_y3: return "contrib_y3";
        case FeatureKind::contrib_ynl: return "contrib_ynl";
    }
    throw ValidationError("unknown feature kind");
}

inline FeatureKind feature_kind_from_name(const std::string& name) {
    for (FeatureKind k : all_feature_kinds())
        if (feature_kind_name(k) == name) return k;
    throw ValidationError("unknown feature kind: " + name);
}

inline bool is_contribution_kind(FeatureKind kind) {
    return kind == FeatureKind::contrib_y1 || kind == FeatureKind::contrib_y2 ||
           kind == FeatureKind::contrib_y3 || kind == FeatureKind::contrib_ynl;
}

//! Extract one feature vector from one identified model.
inline Eigen::VectorXd feature_vector(const VolterraModel& model, FeatureKind kind,
                                      const TimeSeries* probe_input) {
    if (is_contribution_kind(kind))
        require(probe_input != nullptr, "contribution features require a probe input");
    switch (kind) {
        case FeatureKind::coeff_lambda1: return extract_indexes(model).lambda1;
        case FeatureKind::coeff_lambda2: return extract_indexes(model).lambda2;
        case FeatureKind::coeff_lambda3: return extract_indexes(model).lambda3;
        case FeatureKind::coeff_lambda_nl: return extract_indexes(model).lambda_nl;
        default: break;
    }
    const Prediction pred = predict(model, *probe_input);
    const std::vector<double>* series = nullptr;
    std::vector<double> ynl;
    switch (kind) {
        case FeatureKind::contrib_y1: series = &pred.y1.samples; break;
        case FeatureKind::contrib_y2: series = &pred.y2.samples; break;
        case FeatureKind::contrib_y3: series = &pred.y3.samples; break;
        default: {
            ynl = pred.y2.samples;
            for (std::size_t k = 0; k < ynl.size(); ++k) ynl[k] += pred.y3.samples[k];
            series = &ynl;
        }
    }
    return Eigen::Map<const Eigen::VectorXd>(series->data(), static_cast<Eigen::Index>(series->size()));
}

//! Reference feature cloud plus the (regularized) metric used for
//! Mahalanobis distances. Low-dimensional coefficient features keep the
//! full covariance; the long contribution vectors are projected onto the
//! principal components carrying 99.9% of the reference variance first,
//! where the covariance is diagonal.
class FeatureMatrix {
public:
    FeatureKind kind = FeatureKind::coeff_lambda1;
    Eigen::MatrixXd rows; // one reference realization per row
    Eigen::VectorXd mean;
    Eigen::MatrixXd covariance; // full covariance (coefficient kinds only)

    static constexpr double regularization_epsilon = 1e-8;
    // fraction of reference variance kept for the long contribution vectors;
    // must keep enough tail components that the quadratic part of y_nl is
    // not drowned out by the cubic kernel's much larger dispersion
    double pca_variance_fraction = 0.9999;

    Eigen::Index dimension() const { return mean.size(); }

    //! Squared Mahalanobis distance of x from the reference cloud.
    double mahalanobis_sq(const Eigen::VectorXd& x) const {
        require(x.size() == mean.size(), "mahalanobis_sq: dimension mismatch");
        if (use_pca_) {
            const Eigen::VectorXd z = pca_basis_.transpose() * (x - mean);
            double acc = 0.0;
            for (Eigen::Index i = 0; i < z.size(); ++i) acc += z(i) * z(i) / pca_variances_(i);
            return acc;
        }
        const Eigen::VectorXd d = x - mean;
        return d.dot(solver_.solve(d));
    }

    //! Exclusive (leave-one-out) squared distances of the reference rows:
    //! each row is measured against the mean and covariance of the other
    //! rows, so the reference distances follow the same law as genuinely
    //! held-out healthy data. Exact via a rank-one downdate: with
    //! u = x_i - mean, c = N/(N-1), B = scatter/(N-2) + tau*I and
    //! q = u' B^-1 u, the exclusive distance is c^2 q / (1 - c q/(N-2)).
    std::vector<double> reference_distances_loo() const {
        const Eigen::Index n = rows.rows();
        require(n >= 3, "reference_distances_loo: need at least three rows");
        const double nn = static_cast<double>(n);
        const double c = nn / (nn - 1.0);
        const double gamma = c / (nn - 2.0);
        std::vector<double> out(static_cast<std::size_t>(n));

        if (use_pca_) {
            // the projected reference covariance is diagonal, so B is too
            Eigen::VectorXd b_diag =
                pca_variances_raw_ * ((nn - 1.0) / (nn - 2.0));
            b_diag.array() += pca_ridge_;
            for (Eigen::Index i = 0; i < n; ++i) {
                const Eigen::VectorXd u = pca_basis_.transpose() * (rows.row(i).transpose() - mean);
                double q = 0.0;
                for (Eigen::Index j = 0; j < u.size(); ++j) q += u(j) * u(j) / b_diag(j);
                out[static_cast<std::size_t>(i)] = c * c * q / std::max(1.0 - gamma * q, 1e-12);
            }
            return out;
        }

        Eigen::MatrixXd b = covariance * ((nn - 1.0) / (nn - 2.0));
        b.diagonal().array() += regularization_epsilon * covariance.trace() /
                                static_cast<double>(covariance.rows());
        const Eigen::LDLT<Eigen::MatrixXd> ldlt(b);
        for (Eigen::Index i = 0; i < n; ++i) {
            const Eigen::VectorXd u = rows.row(i).transpose() - mean;
            const double q = u.dot(ldlt.solve(u));
            out[static_cast<std::size_t>(i)] = c * c * q / std::max(1.0 - gamma * q, 1e-12);
        }
        return out;
    }

    //! Build the metric from reference rows (one call, after `rows`/`kind` set).
    void finalize() {
        const Eigen::Index n = rows.rows();
        require(n >= 2, "FeatureMatrix: need at least two reference rows");
        mean = rows.colwise().mean();
        Eigen::MatrixXd centered = rows.rowwise() - mean.transpose();
        use_pca_ = is_contribution_kind(kind);

        if (!use_pca_) {
            covariance = centered.transpose() * centered / static_cast<double>(n - 1);
            const double tau = regularization_epsilon * covariance.trace() /
                               static_cast<double>(covariance.rows());
            Eigen::MatrixXd reg = covariance;
            reg.diagonal().array() += tau;
            solver_.compute(reg);
            require(solver_.info() == Eigen::Success, "FeatureMatrix: covariance factorization failed");
            return;
        }

        // PCA in the span of the reference rows via the n x n Gram matrix.
        const Eigen::MatrixXd gram = centered * centered.transpose() / static_cast<double>(n - 1);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gram);
        require(eig.info() == Eigen::Success, "FeatureMatrix: PCA eigensolve failed");
        const Eigen::VectorXd evals = eig.eigenvalues().reverse();
        const Eigen::MatrixXd evecs = eig.eigenvectors().rowwise().reverse();

        const double total = std::max(evals.sum(), 0.0);
        double kept = 0.0;
        Eigen::Index n_keep = 0;
        while (n_keep < evals.size() && kept < pca_variance_fraction * total && evals(n_keep) > 0.0) {
            kept += evals(n_keep);
            ++n_keep;
        }
        n_keep = std::max<Eigen::Index>(n_keep, 1);

        pca_variances_raw_ = evals.head(n_keep);
        pca_basis_.resize(rows.cols(), n_keep);
        for (Eigen::Index i = 0; i < n_keep; ++i)
            pca_basis_.col(i) = centered.transpose() * evecs.col(i) /
                                std::sqrt(pca_variances_raw_(i) * static_cast<double>(n - 1));
        pca_ridge_ = regularization_epsilon * pca_variances_raw_.sum() / static_cast<double>(n_keep);
        pca_variances_ = pca_variances_raw_;
        pca_variances_.array() += pca_ridge_;
    }

    Eigen::Index pca_components() const { return use_pca_ ? pca_variances_.size() : 0; }

private:
    bool use_pca_ = false;
    Eigen::LDLT<Eigen::MatrixXd> solver_;
    Eigen::MatrixXd pca_basis_;         // dim x n_keep, orthonormal columns
    Eigen::VectorXd pca_variances_;     // regularized variances along components
    Eigen::VectorXd pca_variances_raw_; // pre-ridge variances (for the LOO downdate)
    double pca_ridge_ = 0.0;
};

inline FeatureMatrix build_features(const ModelEnsemble& ensemble, FeatureKind kind,
                                    const TimeSeries* probe_input = nullptr) {
    require(!ensemble.models.empty(), "build_features: empty ensemble");
    FeatureMatrix fm;
    fm.kind = kind;
    const Eigen::VectorXd first = feature_vector(ensemble.models.front(), kind, probe_input);
    fm.rows.resize(static_cast<Eigen::Index>(ensemble.models.size()), first.size());
    fm.rows.row(0) = first;
    for (std::size_t i = 1; i < ensemble.models.size(); ++i)
        fm.rows.row(static_cast<Eigen::Index>(i)) = feature_vector(ensemble.models[i], kind, probe_input);
    fm.finalize();
    return fm;
}

inline double mahalanobis_sq(const FeatureMatrix& features, const Eigen::VectorXd& x) {
    return features.mahalanobis_sq(x);
}

//! Gaussian-kernel density estimate over scalar distance samples.
class KdeDensity {
public:
    KdeDensity(std::vector<double> samples, double bandwidth)
        : samples_(std::move(samples)), bandwidth_(bandwidth) {
        require(samples_.size() >= 8, "KdeDensity: need at least 8 samples");
        require(bandwidth_ > 0.0 && std::isfinite(bandwidth_), "KdeDensity: bandwidth must be positive");
    }

    double pdf(double x) const {
        const double inv = 1.0 / bandwidth_;
        double acc = 0.0;
        for (double s : samples_) {
            const double u = (x - s) * inv;
            acc += std::exp(-0.5 * u * u);
        }
        return acc * inv / (std::sqrt(2.0 * std::numbers::pi) * static_cast<double>(samples_.size()));
    }

    //! Exact mixture CDF (each kernel integrates to a normal CDF).
    double cdf(double x) const {
        double acc = 0.0;
        for (double s : samples_)
            acc += 0.5 * std::erfc(-(x - s) / (bandwidth_ * std::numbers::sqrt2));
        return acc / static_cast<double>(samples_.size());
    }

    double upper_tail(double x) const { return 1.0 - cdf(x); }

    double bandwidth() const { return bandwidth_; }
    const std::vector<double>& samples() const { return samples_; }

    double support_min() const { return *std::min_element(samples_.begin(), samples_.end()); }
    double support_max() const { return *std::max_element(samples_.begin(), samples_.end()); }

private:
    std::vector<double> samples_;
    double bandwidth_;
};

inline KdeDensity kde_pdf(const std::vector<double>& samples, double bandwidth) {
    return KdeDensity(samples, bandwidth);
}

inline double silverman_bandwidth(const std::vector<double>& samples) {
    const auto n = static_cast<double>(samples.size());
    double mean = 0.0;
    for (double s : samples) mean += s;
    mean /= n;
    double var = 0.0;
    for (double s : samples) var += (s - mean) * (s - mean);
    var /= (n - 1.0);
    return 1.06 * std::sqrt(var) * std::pow(n, -0.2);
}

//! Leave-one-out cross-validated bandwidth: maximize the LOO log-likelihood
//! over a 25-point log grid spanning [0.05, 5] x Silverman's reference value.
inline double select_bandwidth_cv(const std::vector<double>& samples) {
    require(samples.size() >= 16, "select_bandwidth_cv: need at least 16 samples");
    const double h_ref = silverman_bandwidth(samples);
    require(h_ref > 0.0, "select_bandwidth_cv: degenerate (zero variance) samples");

    const int grid_points = 25;
    const double lo = std::log(0.05 * h_ref), hi = std::log(5.0 * h_ref);
    const auto n = samples.size();

    double best_h = h_ref;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int g = 0; g < grid_points; ++g) {
        const double h = std::exp(lo + (hi - lo) * static_cast<double>(g) / (grid_points - 1));
        const double inv = 1.0 / h;
        const double log_norm = std::log((static_cast<double>(n) - 1.0) * h * std::sqrt(2.0 * std::numbers::pi));
        double score = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                const double u = (samples[i] - samples[j]) * inv;
                acc += std::exp(-0.5 * u * u);
            }
            score += acc > 0.0 ? std::log(acc) - log_norm : -1e30;
        }
        if (score > best_score) {
            best_score = score;
            best_h = h;
        }
    }
    return best_h;
}

//! How to turn reference distances into a decision threshold: the false-alarm
//! probability beta plus either a fixed kernel bandwidth or automatic
//! cross-validated selection.
struct ThresholdSpec {
    double beta = 0.01;
    std::optional<double> bandwidth; // nullopt = cross-validated

    void validate() const {
        require(beta > 0.0 && beta < 0.5, "ThresholdSpec: beta must be in (0, 0.5)");
        if (bandwidth) require(*bandwidth > 0.0, "ThresholdSpec: bandwidth must be positive");
    }
};

inline double threshold_from_kde(const KdeDensity& density, double beta);

//! Reference distances -> threshold, resolving the bandwidth choice.
inline double compute_threshold(const std::vector<double>& reference_distances,
                                const ThresholdSpec& spec) {
    spec.validate();
    const double h = spec.bandwidth ? *spec.bandwidth : select_bandwidth_cv(reference_distances);
    return threshold_from_kde(kde_pdf(reference_distances, h), spec.beta);
}

//! Threshold whose KDE upper-tail mass equals beta, by bisection on the
//! exact mixture CDF.
inline double threshold_from_kde(const KdeDensity& density, double beta) {
    require(beta > 0.0 && beta < 0.5, "threshold_from_kde: beta must be in (0, 0.5)");
    double lo = density.support_min() - 8.0 * density.bandwidth();
    double hi = density.support_max() + 8.0 * density.bandwidth();
    for (int iter = 0; iter < 200; ++iter) {
        const double mid = 0.5 * (lo + hi);
        if (density.upper_tail(mid) > beta)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-14 * (std::abs(hi) + 1.0)) break;
    }
    return 0.5 * (lo + hi);
}

enum class Verdict { healthy, damaged };

struct Classification {
    Verdict verdict;
    double distance;
};

//! Hypothesis test: distances at or below the threshold stay healthy.
inline Classification classify(const FeatureMatrix& features, double threshold,
                               const Eigen::VectorXd& unknown) {
    const double d = features.mahalanobis_sq(unknown);
    return {d <= threshold ? Verdict::healthy : Verdict::damaged, d};
}

struct RocPoint {
    double fpr;
    double tpr;
};

struct RocCurve {
    std::vector<RocPoint> points;
    double auc = 0.0;
};

//! Threshold sweep over the pooled observed distances.
inline RocCurve roc_from_distances(const std::vector<double>& reference,
                                   const std::vector<double>& damaged) {
    require(!reference.empty() && !damaged.empty(), "roc: both distance sets must be non-empty");
    std::vector<double> thresholds;
    thresholds.reserve(reference.size() + damaged.size() + 1);
    thresholds.insert(thresholds.end(), reference.begin(), reference.end());
    thresholds.insert(thresholds.end(), damaged.begin(), damaged.end());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());

    RocCurve roc;
    roc.points.push_back({0.0, 0.0}); // threshold above every observation
    for (auto it = thresholds.rbegin(); it != thresholds.rend(); ++it) {
        const double t = *it;
        double fp = 0.0, tp = 0.0;
        for (double d : reference) fp += d > t ? 1.0 : 0.0;
        for (double d : damaged) tp += d > t ? 1.0 : 0.0;
        roc.points.push_back({fp / static_cast<double>(reference.size()),
                              tp / static_cast<double>(damaged.size())});
    }
    roc.points.push_back({1.0, 1.0}); // threshold below every observation

    for (std::size_t i = 1; i < roc.points.size(); ++i)
        roc.auc += 0.5 * (roc.points[i].tpr + roc.points[i - 1].tpr) *
                   (roc.points[i].fpr - roc.points[i - 1].fpr);
    return roc;
}

//! ROC of the trained metric: distances of both row sets are measured
//! against `features` (the reference-trained cloud).
inline RocCurve roc_curve(const FeatureMatrix& features, const Eigen::MatrixXd& reference_test_rows,
                          const Eigen::MatrixXd& damaged_rows) {
    std::vector<double> ref, dam;
    for (Eigen::Index i = 0; i < reference_test_rows.rows(); ++i)
        ref.push_back(features.mahalanobis_sq(reference_test_rows.row(i).transpose()));
    for (Eigen::Index i = 0; i < damaged_rows.rows(); ++i)
        dam.push_back(features.mahalanobis_sq(damaged_rows.row(i).transpose()));
    return roc_from_distances(ref, dam);
}

struct DistanceSummary {
    double q1 = 0.0, median = 0.0, q3 = 0.0;
    double whisker_lo = 0.0, whisker_hi = 0.0; // Tukey 1.5*IQR fences clipped to data
    double min = 0.0, max = 0.0;
};

inline DistanceSummary summarize_distances(std::vector<double> d) {
    DistanceSummary s;
    if (d.empty()) return s;
    std::sort(d.begin(), d.end());
    auto quantile = [&](double q) {
        const double pos = q * static_cast<double>(d.size() - 1);
        const auto i = static_cast<std::size_t>(pos);
        const double frac = pos - static_cast<double>(i);
        return i + 1 < d.size() ? d[i] * (1.0 - frac) + d[i + 1] * frac : d[i];
    };
    s.q1 = quantile(0.25);
    s.median = quantile(0.5);
    s.q3 = quantile(0.75);
    s.min = d.front();
    s.max = d.back();
    const double iqr = s.q3 - s.q1;
    s.whisker_lo = s.min;
    s.whisker_hi = s.max;
    for (double v : d)
        if (v >= s.q1 - 1.5 * iqr) { s.whisker_lo = v; break; }
    for (auto it = d.rbegin(); it != d.rend(); ++it)
        if (*it <= s.q3 + 1.5 * iqr) { s.whisker_hi = *it; break; }
    return s;
}

//! Everything the detection study produces for one feature kind.
struct KindReport {
    FeatureKind kind;
    double bandwidth = 0.0;
    std::map<double, double> thresholds;                    // beta -> threshold
    std::map<std::string, std::vector<double>> distances;   // group label -> distances
    std::map<std::string, DistanceSummary> boxplots;        // group label -> summary
    // rates[beta][severity] = fraction classified damaged (H1)
    std::map<double, std::map<double, double>> rates;
    std::map<double, RocCurve> roc_per_severity;
    RocCurve roc_pooled;
};

struct DetectionReport {
    std::vector<KindReport> kinds;
    std::size_t n_train = 0, n_test = 0;
    std::vector<double> betas;
};

//! Reference-ensemble split + per-severity evaluation.
//!
//! The reference ensemble is halved: the first half trains the feature
//! metric and the KDE threshold, the second half plays held-out healthy
//! data (its rate is the empirical false-alarm probability). Every damaged
//! ensemble is evaluated against the trained metric.
inline DetectionReport detection_experiment(const ModelEnsemble& reference,
                                            const std::map<double, ModelEnsemble>& conditions,
                                            const std::vector<FeatureKind>& kinds,
                                            const std::vector<double>& betas,
                                            const TimeSeries& probe) {
    require(!conditions.empty(), "detection_experiment: empty condition map");
    require(!kinds.empty() && !betas.empty(), "detection_experiment: kinds/betas must be non-empty");
    require(reference.models.size() >= 4, "detection_experiment: reference ensemble too small");

    const std::size_t n_train = reference.models.size() / 2;
    ModelEnsemble train, test;
    train.config = test.config = reference.config;
    train.severity_alpha = test.severity_alpha = reference.severity_alpha;
    for (std::size_t i = 0; i < reference.models.size(); ++i) {
        auto& half = i < n_train ? train : test;
        half.models.push_back(reference.models[i]);
        half.modal.push_back(reference.modal[i]);
        half.params.push_back(reference.params[i]);
    }

    DetectionReport report;
    report.n_train = train.models.size();
    report.n_test = test.models.size();
    report.betas = betas;

    for (FeatureKind kind : kinds) {
        KindReport kr;
        kr.kind = kind;
        const TimeSeries* probe_ptr = is_contribution_kind(kind) ? &probe : nullptr;
        FeatureMatrix features = build_features(train, kind, probe_ptr);

        auto distances_of = [&](const ModelEnsemble& ens) {
            std::vector<double> d(ens.models.size());
            for (std::size_t i = 0; i < ens.models.size(); ++i)
                d[i] = features.mahalanobis_sq(feature_vector(ens.models[i], kind, probe_ptr));
            return d;
        };

        // exclusive distances for the training half: the KDE threshold must
        // be calibrated on distances that follow the held-out law
        kr.distances["reference_train"] = features.reference_distances_loo();
        kr.distances["reference_test"] = distances_of(test);

        kr.bandwidth = select_bandwidth_cv(kr.distances["reference_train"]);
        const KdeDensity density(kr.distances["reference_train"], kr.bandwidth);
        for (double beta : betas) kr.thresholds[beta] = threshold_from_kde(density, beta);

        auto rate_above = [](const std::vector<double>& d, double threshold) {
            double n_above = 0.0;
            for (double v : d) n_above += v > threshold ? 1.0 : 0.0;
            return d.empty() ? 0.0 : n_above / static_cast<double>(d.size());
        };

        // held-out healthy half reported as severity 1.0
        for (double beta : betas)
            kr.rates[beta][1.0] = rate_above(kr.distances["reference_test"], kr.thresholds[beta]);

        std::vector<double> pooled_damaged;
        for (const auto& [alpha, ensemble] : conditions) {
            const auto d = distances_of(ensemble);
            const std::string label = "severity_" + std::to_string(alpha);
            kr.distances[label] = d;
            for (double beta : betas) kr.rates[beta][alpha] = rate_above(d, kr.thresholds[beta]);
            kr.roc_per_severity[alpha] = roc_from_distances(kr.distances["reference_test"], d);
            pooled_damaged.insert(pooled_damaged.end(), d.begin(), d.end());
        }
        kr.roc_pooled = roc_from_distances(kr.distances["reference_test"], pooled_damaged);

        for (const auto& [label, d] : kr.distances) kr.boxplots[label] = summarize_distances(d);
        report.kinds.push_back(std::move(kr));
    }
    return report;
}

// ---- report persistence: JSON + companion CSVs ----

namespace detail {

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

} // namespace detail

inline void save_report_csvs(const DetectionReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);

    std::ofstream rates(dir / "rates.csv", std::ios::binary);
    if (!rates) throw IoError("cannot write " + (dir / "rates.csv").string());
    rates << "kind,beta,severity,rate\n";
    for (const auto& kr : report.kinds)
        for (const auto& [beta, by_sev] : kr.rates)
            for (const auto& [severity, rate] : by_sev)
                rates << feature_kind_name(kr.kind) << "," << detail::fmt_double(beta) << ","
                      << detail::fmt_double(severity) << "," << detail::fmt_double(rate) << "\n";

    for (const auto& kr : report.kinds) {
        std::ofstream dist(dir / ("distances_" + feature_kind_name(kr.kind) + ".csv"), std::ios::binary);
        dist << "realization,severity,distance\n";
        for (const auto& [label, d] : kr.distances) {
            std::string severity = label;
            if (label == "reference_train") severity = "train";
            else if (label == "reference_test") severity = "test";
            else severity = label.substr(std::string("severity_").size());
            for (std::size_t i = 0; i < d.size(); ++i)
                dist << i << "," << severity << "," << detail::fmt_double(d[i]) << "\n";
        }

        std::ofstream roc(dir / ("roc_" + feature_kind_name(kr.kind) + ".csv"), std::ios::binary);
        roc << "fpr,tpr\n";
        for (const auto& pt : kr.roc_pooled.points)
            roc << detail::fmt_double(pt.fpr) << "," << detail::fmt_double(pt.tpr) << "\n";
    }
}

inline nlohmann::json report_to_json(const DetectionReport& report) {
    nlohmann::json j;
    j["n_train"] = report.n_train;
    j["n_test"] = report.n_test;
    j["betas"] = report.betas;
    j["kinds"] = nlohmann::json::array();
    for (const auto& kr : report.kinds) {
        nlohmann::json k;
        k["kind"] = feature_kind_name(kr.kind);
        k["bandwidth"] = kr.bandwidth;
        for (const auto& [beta, threshold] : kr.thresholds)
            k["thresholds"].push_back({{"beta", beta}, {"threshold", threshold}});
        for (const auto& [beta, by_sev] : kr.rates)
            for (const auto& [severity, rate] : by_sev)
                k["rates"].push_back({{"beta", beta}, {"severity", severity}, {"rate", rate}});
        for (const auto& [alpha, roc] : kr.roc_per_severity)
            k["auc_per_severity"].push_back({{"severity", alpha}, {"auc", roc.auc}});
        k["auc_pooled"] = kr.roc_pooled.auc;
        for (const auto& [label, box] : kr.boxplots)
            k["boxplots"].push_back({{"group", label},
                                     {"q1", box.q1},
                                     {"median", box.median},
                                     {"q3", box.q3},
                                     {"whisker_lo", box.whisker_lo},
                                     {"whisker_hi", box.whisker_hi},
                                     {"min", box.min},
                                     {"max", box.max}});
        j["kinds"].push_back(std::move(k));
    }
    return j;
}

} // namespace vshm
