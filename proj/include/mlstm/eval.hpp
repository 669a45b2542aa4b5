#pragma once

// Evaluation: per-node MAE in original units, a shared-covariance LDA
// classifier producing class posteriors, and Hand & Till multi-class AUC.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mlstm/errors.hpp"
#include "mlstm/masked_data.hpp"
#include "mlstm/numeric_io.hpp"

namespace mlstm {

// ---------------------------------------------------------------------------
// MAE
// ---------------------------------------------------------------------------

/// value -> scale * value + offset
struct AffineMap {
    double scale = 1.0;
    double offset = 0.0;

    double operator()(double v) const noexcept { return scale * v + offset; }
};

/// Accumulates absolute residuals over available target cells, per node,
/// after mapping both estimates and targets through `inverse`.
class MaeAccumulator {
public:
    explicit MaeAccumulator(std::vector<AffineMap> inverse)
        : inverse_(std::move(inverse)), sums_(inverse_.size(), 0.0), counts_(inverse_.size(), 0) {}

    void add(const Matrix& estimates, const Matrix& targets, const Mask& mask) {
        const auto M = static_cast<Eigen::Index>(inverse_.size());
        if (estimates.cols() != M || targets.cols() != M || mask.cols() != M || estimates.rows() != targets.rows() ||
            mask.rows() != targets.rows())
            throw DataError("mae: shape mismatch");
        for (Eigen::Index m = 0; m < M; ++m) {
            const auto& f = inverse_[static_cast<std::size_t>(m)];
            for (Eigen::Index t = 0; t < targets.rows(); ++t) {
                if (!mask(t, m)) continue;
                sums_[static_cast<std::size_t>(m)] += std::abs(f(estimates(t, m)) - f(targets(t, m)));
                ++counts_[static_cast<std::size_t>(m)];
            }
        }
    }

    /// Undefined (nullopt) for nodes without any available cell.
    std::vector<std::optional<double>> result() const {
        std::vector<std::optional<double>> out(sums_.size());
        for (std::size_t m = 0; m < sums_.size(); ++m)
            if (counts_[m] > 0) out[m] = sums_[m] / static_cast<double>(counts_[m]);
        return out;
    }

private:
    std::vector<AffineMap> inverse_;
    std::vector<double> sums_;
    std::vector<long> counts_;
};

inline std::vector<std::optional<double>> mae(const Matrix& estimates, const Matrix& targets, const Mask& mask,
                                              std::vector<AffineMap> inverse) {
    MaeAccumulator acc(std::move(inverse));
    acc.add(estimates, targets, mask);
    return acc.result();
}

inline std::vector<AffineMap> identity_maps(Eigen::Index width) {
    return std::vector<AffineMap>(static_cast<std::size_t>(width));
}

// ---------------------------------------------------------------------------
// LDA
// ---------------------------------------------------------------------------

struct LdaModel {
    std::vector<int> classes;  // original label ids, in posterior order
    Matrix means;              // K x D
    Matrix covariance;         // pooled, ridge included
    Vector log_priors;         // K
    double ridge = 0.0;
    Eigen::LLT<Matrix> cholesky;

    Eigen::Index dimension() const noexcept { return means.cols(); }
};

/// Fits class means, the pooled within-class covariance plus ridge * I and
/// frequency priors. Rows of `features` are samples. With no explicit ridge
/// the default is 1e-6 * trace(pooled) / D. A covariance whose reciprocal
/// condition number is at most 1e-12 counts as singular.
inline LdaModel fit_lda(const Matrix& features, std::span<const int> labels,
                        std::optional<double> ridge = std::nullopt) {
    const auto n = features.rows();
    const auto D = features.cols();
    if (static_cast<Eigen::Index>(labels.size()) != n) throw DataError("fit_lda: one label per feature row");
    if (!features.allFinite()) throw DataError("fit_lda: non-finite features");

    LdaModel model;
    model.classes.assign(labels.begin(), labels.end());
    std::sort(model.classes.begin(), model.classes.end());
    model.classes.erase(std::unique(model.classes.begin(), model.classes.end()), model.classes.end());
    const auto K = static_cast<Eigen::Index>(model.classes.size());
    if (K < 2) throw DataError("fit_lda: need at least two classes");

    auto class_index = [&](int label) {
        return static_cast<Eigen::Index>(
            std::lower_bound(model.classes.begin(), model.classes.end(), label) - model.classes.begin());
    };

    model.means = Matrix::Zero(K, D);
    Vector counts = Vector::Zero(K);
    for (Eigen::Index r = 0; r < n; ++r) {
        const auto k = class_index(labels[static_cast<std::size_t>(r)]);
        model.means.row(k) += features.row(r);
        counts(k) += 1.0;
    }
    for (Eigen::Index k = 0; k < K; ++k) {
        if (counts(k) < 2.0)
            throw DataError("fit_lda: class " + std::to_string(model.classes[static_cast<std::size_t>(k)]) +
                            " has fewer than two samples");
        model.means.row(k) /= counts(k);
    }

    Matrix pooled = Matrix::Zero(D, D);
    for (Eigen::Index r = 0; r < n; ++r) {
        const Vector d = (features.row(r) - model.means.row(class_index(labels[static_cast<std::size_t>(r)])))
                             .transpose();
        pooled.noalias() += d * d.transpose();
    }
    pooled /= static_cast<double>(std::max<Eigen::Index>(n - K, 1));

    model.ridge = ridge ? *ridge : 1e-6 * pooled.trace() / static_cast<double>(D);
    if (!(model.ridge >= 0.0)) throw ConfigError("fit_lda: ridge must be >= 0");
    model.covariance = pooled + model.ridge * Matrix::Identity(D, D);
    model.cholesky.compute(model.covariance);
    if (model.cholesky.info() != Eigen::Success || !(model.cholesky.rcond() > 1e-12))
        throw DataError("fit_lda: pooled covariance is singular; use a larger ridge");

    model.log_priors = (counts / static_cast<double>(n)).array().log().matrix();
    return model;
}

/// Class posteriors under Gaussian class-conditionals with shared covariance.
inline Vector posterior(const LdaModel& model, const Vector& x) {
    const auto K = model.means.rows();
    if (x.size() != model.dimension()) throw DataError("posterior: feature width mismatch");
    Vector log_p(K);
    for (Eigen::Index k = 0; k < K; ++k) {
        const Vector d = x - model.means.row(k).transpose();
        log_p(k) = model.log_priors(k) - 0.5 * d.dot(model.cholesky.solve(d));
    }
    const double peak = log_p.maxCoeff();
    Vector p = (log_p.array() - peak).exp().matrix();
    return p / p.sum();
}

// ---------------------------------------------------------------------------
// Multi-class AUC
// ---------------------------------------------------------------------------

struct ScoredVisit {
    int label = 0;     // index into the posterior vector
    Vector posteriors; // one per class, sums to 1
};

struct PairAuc {
    int first = 0;
    int second = 0;
    double value = 0.0;  // mean of A(first|second) and A(second|first)
};

struct AucResult {
    double overall = 0.0;
    std::vector<PairAuc> pairs;
};

namespace detail {

/// Ascending 1-based ranks, tied values share the midrank.
inline std::vector<double> midranks(const std::vector<double>& values) {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> ranks(values.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t k = i + 1;
        while (k < order.size() && values[order[k]] == values[order[i]]) ++k;
        const double rank = 0.5 * static_cast<double>(i + 1 + k);  // mean of i+1 .. k
        for (std::size_t r = i; r < k; ++r) ranks[order[r]] = rank;
        i = k;
    }
    return ranks;
}

/// SR_i - n_i(n_i+1)/2 using p(c_score | x) for samples of `positive` and `negative`.
inline double rank_statistic(std::span<const ScoredVisit> scored, int positive, int negative, int score_class,
                             double& n_pos, double& n_neg) {
    std::vector<double> values;
    std::vector<bool> is_pos;
    for (const auto& s : scored) {
        if (s.label != positive && s.label != negative) continue;
        values.push_back(s.posteriors(score_class));
        is_pos.push_back(s.label == positive);
    }
    const auto ranks = midranks(values);
    double sum = 0.0;
    n_pos = 0.0;
    for (std::size_t r = 0; r < ranks.size(); ++r)
        if (is_pos[r]) {
            sum += ranks[r];
            n_pos += 1.0;
        }
    n_neg = static_cast<double>(ranks.size()) - n_pos;
    return sum - n_pos * (n_pos + 1.0) / 2.0;
}

}  // namespace detail

/// Hand & Till multi-class AUC over `n_classes` classes, labels 0..n_classes-1.
inline AucResult multiclass_auc(std::span<const ScoredVisit> scored, int n_classes) {
    if (n_classes < 2) throw DataError("multiclass_auc: need at least two classes");
    std::vector<int> counts(static_cast<std::size_t>(n_classes), 0);
    for (const auto& s : scored) {
        if (s.label < 0 || s.label >= n_classes || s.posteriors.size() != n_classes)
            throw DataError("multiclass_auc: label or posterior width out of range");
        ++counts[static_cast<std::size_t>(s.label)];
    }
    for (int c = 0; c < n_classes; ++c)
        if (counts[static_cast<std::size_t>(c)] == 0)
            throw DataError("multiclass_auc: class " + std::to_string(c) + " has no samples");

    AucResult result;
    double total = 0.0;
    for (int i = 0; i < n_classes - 1; ++i) {
        for (int k = i + 1; k < n_classes; ++k) {
            double n_i = 0, n_k = 0, dummy = 0;
            const double u_i = detail::rank_statistic(scored, i, k, i, n_i, n_k);
            const double u_k = detail::rank_statistic(scored, k, i, k, n_k, dummy);
            const double term = (u_i + u_k) / (n_i * n_k);
            total += term;
            result.pairs.push_back({i, k, 0.5 * term});
        }
    }
    result.overall = total / static_cast<double>(n_classes * (n_classes - 1));
    return result;
}

// ---------------------------------------------------------------------------
// Metrics report
// ---------------------------------------------------------------------------

struct MetricsReport {
    std::vector<std::string> biomarkers;
    std::vector<std::optional<double>> mae;  // per biomarker, original units
    std::vector<std::string> class_names;
    std::vector<PairAuc> pair_auc;           // class indices into class_names
    std::optional<double> multiclass_auc;
};

/// Comma-separated: `metric,name,value`. One MAE row per biomarker, one AUC
/// row per class pair, then the multi-class row. Undefined values are empty.
inline void write_report(std::ostream& out, const MetricsReport& r) {
    out << "metric,name,value\n";
    for (std::size_t m = 0; m < r.biomarkers.size(); ++m)
        out << "mae," << r.biomarkers[m] << ',' << (r.mae[m] ? format_double(*r.mae[m]) : "") << '\n';
    for (const auto& p : r.pair_auc)
        out << "auc," << r.class_names[static_cast<std::size_t>(p.first)] << " vs "
            << r.class_names[static_cast<std::size_t>(p.second)] << ',' << format_double(p.value) << '\n';
    std::string all;
    for (std::size_t c = 0; c < r.class_names.size(); ++c) all += (c ? " vs " : "") + r.class_names[c];
    out << "auc," << all << ',' << (r.multiclass_auc ? format_double(*r.multiclass_auc) : "") << '\n';
}

}  // namespace mlstm
