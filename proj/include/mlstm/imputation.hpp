#pragma once

// Baseline missing-data strategies: fill the gaps, set every mask to true
// and train the same network as a standard LSTM.

#include <string>
#include <vector>

#include "mlstm/errors.hpp"
#include "mlstm/masked_data.hpp"

namespace mlstm {

enum class MissingStrategy { masked, mean, forward };

inline std::string to_string(MissingStrategy s) {
    switch (s) {
        case MissingStrategy::masked: return "masked";
        case MissingStrategy::mean: return "mean";
        case MissingStrategy::forward: return "forward";
    }
    return "masked";
}

inline MissingStrategy parse_strategy(const std::string& s) {
    if (s == "masked") return MissingStrategy::masked;
    if (s == "mean") return MissingStrategy::mean;
    if (s == "forward") return MissingStrategy::forward;
    throw ConfigError("unknown missing strategy '" + s + "' (expected masked, mean or forward)");
}

/// Per-node means over available cells of a (training) batch.
struct NodeMeans {
    Vector input;   // N
    Vector target;  // M
};

inline NodeMeans node_means(const MaskedBatch& batch) {
    auto column_means = [&](auto values_of, auto mask_of, Eigen::Index width, const char* what) {
        Vector sum = Vector::Zero(width);
        Eigen::VectorXi count = Eigen::VectorXi::Zero(width);
        for (const auto& s : batch.sequences()) {
            const Matrix& v = values_of(s);
            const Mask& m = mask_of(s);
            for (Eigen::Index t = 0; t < v.rows(); ++t)
                for (Eigen::Index k = 0; k < width; ++k)
                    if (m(t, k)) {
                        sum(k) += v(t, k);
                        ++count(k);
                    }
        }
        for (Eigen::Index k = 0; k < width; ++k)
            if (count(k) == 0)
                throw DataError(std::string("no available training values for ") + what + " node " +
                                std::to_string(k) + "; mean undefined");
        return Vector(sum.array() / count.cast<double>().array());
    };
    return {column_means([](const MaskedSequence& s) -> const Matrix& { return s.inputs(); },
                         [](const MaskedSequence& s) -> const Mask& { return s.input_mask(); },
                         batch.input_width(), "input"),
            column_means([](const MaskedSequence& s) -> const Matrix& { return s.targets(); },
                         [](const MaskedSequence& s) -> const Mask& { return s.target_mask(); },
                         batch.target_width(), "target")};
}

struct ImputeOptions {
    bool impute_targets = true;  // false keeps target masks (inputs only)
};

namespace detail {

inline void fill_mean(Matrix& values, Mask& mask, const Vector& means) {
    if (means.size() != values.cols()) throw DataError("imputation: mean vector width mismatch");
    for (Eigen::Index t = 0; t < values.rows(); ++t)
        for (Eigen::Index k = 0; k < values.cols(); ++k)
            if (!mask(t, k)) values(t, k) = means(k);
    mask.setConstant(true);
}

/// Last observation carried forward along rows; leading gaps take the mean.
inline void fill_forward(Matrix& values, Mask& mask, const Vector& means) {
    if (means.size() != values.cols()) throw DataError("imputation: mean vector width mismatch");
    for (Eigen::Index k = 0; k < values.cols(); ++k) {
        double last = means(k);
        for (Eigen::Index t = 0; t < values.rows(); ++t) {
            if (mask(t, k))
                last = values(t, k);
            else
                values(t, k) = last;
        }
    }
    mask.setConstant(true);
}

template <class Fill>
MaskedBatch impute(const MaskedBatch& batch, const NodeMeans& means, ImputeOptions options, Fill fill) {
    std::vector<MaskedSequence> out;
    out.reserve(batch.sequences().size());
    for (const auto& s : batch.sequences()) {
        SequenceData d = s.data();
        fill(d.inputs, d.input_mask, means.input);
        if (options.impute_targets) fill(d.targets, d.target_mask, means.target);
        out.emplace_back(std::move(d));
    }
    return MaskedBatch(std::move(out));
}

}  // namespace detail

inline MaskedBatch mean_impute(const MaskedBatch& batch, const NodeMeans& means, ImputeOptions options = {}) {
    return detail::impute(batch, means, options, &detail::fill_mean);
}

inline MaskedBatch forward_impute(const MaskedBatch& batch, const NodeMeans& means, ImputeOptions options = {}) {
    return detail::impute(batch, means, options, &detail::fill_forward);
}

/// Applies `strategy`; masked returns the batch unchanged.
inline MaskedBatch apply_strategy(MissingStrategy strategy, const MaskedBatch& batch, const NodeMeans& means,
                                  ImputeOptions options = {}) {
    switch (strategy) {
        case MissingStrategy::mean: return mean_impute(batch, means, options);
        case MissingStrategy::forward: return forward_impute(batch, means, options);
        case MissingStrategy::masked: break;
    }
    return batch;
}

}  // namespace mlstm
