#pragma once

// Masked multivariate sequences and the per-subject normalization factors
// used by the missing-data-aware training rule.
//
// Missing cells always hold 0 in the value matrices. The forward pass never
// looks at the masks; they are consulted only when counting available data
// (normalization factors), masking the loss and scaling input-weight
// gradients.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mlstm/errors.hpp"

namespace mlstm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Mask = Eigen::Matrix<bool, Eigen::Dynamic, Eigen::Dynamic>;

/// Unvalidated sequence payload, as assembled by loaders before construction.
struct SequenceData {
    std::string subject_id;
    Matrix inputs;        // T x N
    Mask input_mask;      // T x N, true = available
    Matrix targets;       // T x M, row t holds the visit after input row t
    Mask target_mask;     // T x M
    std::vector<std::optional<int>> labels;  // empty, or T class indices aligned with target rows
};

/// One subject's masked sequence. Immutable once constructed.
class MaskedSequence {
public:
    explicit MaskedSequence(SequenceData data) : data_(std::move(data)) {
        auto& d = data_;
        if (d.inputs.rows() != d.input_mask.rows() || d.inputs.cols() != d.input_mask.cols())
            throw DataError("sequence '" + d.subject_id + "': inputs and input mask differ in shape");
        if (d.targets.rows() != d.target_mask.rows() || d.targets.cols() != d.target_mask.cols())
            throw DataError("sequence '" + d.subject_id + "': targets and target mask differ in shape");
        if (d.inputs.rows() != d.targets.rows())
            throw DataError("sequence '" + d.subject_id + "': inputs and targets differ in length");
        if (d.inputs.rows() < 1 || d.inputs.cols() < 1 || d.targets.cols() < 1)
            throw DataError("sequence '" + d.subject_id + "': empty dimensions");
        if (!d.labels.empty() && static_cast<Eigen::Index>(d.labels.size()) != d.inputs.rows())
            throw DataError("sequence '" + d.subject_id + "': label count differs from sequence length");

        zero_masked(d.inputs, d.input_mask, "input");
        zero_masked(d.targets, d.target_mask, "target");
        if (d.input_mask.count() == 0)
            throw DataError("sequence '" + d.subject_id + "': no available input values");
    }

    const std::string& subject_id() const noexcept { return data_.subject_id; }
    const Matrix& inputs() const noexcept { return data_.inputs; }
    const Mask& input_mask() const noexcept { return data_.input_mask; }
    const Matrix& targets() const noexcept { return data_.targets; }
    const Mask& target_mask() const noexcept { return data_.target_mask; }
    const std::vector<std::optional<int>>& labels() const noexcept { return data_.labels; }
    const SequenceData& data() const noexcept { return data_; }

    Eigen::Index steps() const noexcept { return data_.inputs.rows(); }
    Eigen::Index input_width() const noexcept { return data_.inputs.cols(); }
    Eigen::Index target_width() const noexcept { return data_.targets.cols(); }

private:
    void zero_masked(Matrix& values, const Mask& mask, const char* what) const {
        for (Eigen::Index t = 0; t < values.rows(); ++t) {
            for (Eigen::Index k = 0; k < values.cols(); ++k) {
                if (!mask(t, k)) {
                    values(t, k) = 0.0;
                } else if (!std::isfinite(values(t, k))) {
                    throw DataError("sequence '" + data_.subject_id + "': non-finite available " + what +
                                    " at step " + std::to_string(t) + ", node " + std::to_string(k));
                }
            }
        }
    }

    SequenceData data_;
};

/// J sequences sharing T, N and M.
class MaskedBatch {
public:
    MaskedBatch() = default;

    explicit MaskedBatch(std::vector<MaskedSequence> sequences) : sequences_(std::move(sequences)) {
        if (sequences_.empty()) throw DataError("batch must contain at least one sequence");
        const auto& first = sequences_.front();
        for (const auto& s : sequences_) {
            if (s.steps() != first.steps() || s.input_width() != first.input_width() ||
                s.target_width() != first.target_width())
                throw DataError("sequence '" + s.subject_id() + "' is not dimension-compatible with the batch");
        }
    }

    std::span<const MaskedSequence> sequences() const noexcept { return sequences_; }
    const MaskedSequence& operator[](std::size_t j) const { return sequences_[j]; }
    bool empty() const noexcept { return sequences_.empty(); }

    Eigen::Index size() const noexcept { return static_cast<Eigen::Index>(sequences_.size()); }
    Eigen::Index steps() const noexcept { return empty() ? 0 : sequences_.front().steps(); }
    Eigen::Index input_width() const noexcept { return empty() ? 0 : sequences_.front().input_width(); }
    Eigen::Index target_width() const noexcept { return empty() ? 0 : sequences_.front().target_width(); }

private:
    std::vector<MaskedSequence> sequences_;
};

/// Per-subject counts of available data.
///
///   subject_scale(j)    = J * |x_j| / (T * N)   (total available inputs)
///   target_counts(j, m) = |y_j(m)|              (available targets of node m)
///   node_coverage(j, n) = |x_j(n)| / T          (available inputs of node n)
///
/// A fully observed batch gives subject_scale = J, target_counts = T and
/// node_coverage = 1.
struct NormalizationFactors {
    Vector subject_scale;          // J
    Eigen::MatrixXi target_counts; // J x M
    Matrix node_coverage;          // J x N
};

inline NormalizationFactors compute_factors(const MaskedBatch& batch) {
    const auto J = batch.size();
    const auto T = batch.steps();
    const auto N = batch.input_width();
    const auto M = batch.target_width();

    NormalizationFactors f;
    f.subject_scale.resize(J);
    f.target_counts.resize(J, M);
    f.node_coverage.resize(J, N);
    for (Eigen::Index j = 0; j < J; ++j) {
        const auto& s = batch[static_cast<std::size_t>(j)];
        const auto available = static_cast<double>(s.input_mask().count());
        f.subject_scale(j) = static_cast<double>(J) * available / static_cast<double>(T * N);
        for (Eigen::Index m = 0; m < M; ++m)
            f.target_counts(j, m) = static_cast<int>(s.target_mask().col(m).count());
        for (Eigen::Index n = 0; n < N; ++n)
            f.node_coverage(j, n) = static_cast<double>(s.input_mask().col(n).count()) / static_cast<double>(T);
    }
    return f;
}

struct BatchReport {
    std::vector<Eigen::Index> dead_input_nodes;      // no subject has any available value
    std::vector<std::string> subjects_without_inputs;

    bool empty() const noexcept { return dead_input_nodes.empty() && subjects_without_inputs.empty(); }
};

/// Flags input nodes that cannot contribute to weight updates and subjects
/// with no available inputs. Works on raw payloads so it can run before
/// MaskedSequence construction rejects them.
inline BatchReport validate_batch(std::span<const SequenceData> sequences) {
    BatchReport report;
    if (sequences.empty()) return report;
    const auto N = sequences.front().input_mask.cols();
    std::vector<bool> alive(static_cast<std::size_t>(N), false);
    for (const auto& s : sequences) {
        if (s.input_mask.count() == 0) report.subjects_without_inputs.push_back(s.subject_id);
        for (Eigen::Index n = 0; n < std::min(N, s.input_mask.cols()); ++n)
            if (s.input_mask.col(n).any()) alive[static_cast<std::size_t>(n)] = true;
    }
    for (Eigen::Index n = 0; n < N; ++n)
        if (!alive[static_cast<std::size_t>(n)]) report.dead_input_nodes.push_back(n);
    return report;
}

inline BatchReport validate_batch(const MaskedBatch& batch) {
    std::vector<SequenceData> payloads;
    payloads.reserve(batch.sequences().size());
    for (const auto& s : batch.sequences()) payloads.push_back(s.data());
    return validate_batch(payloads);
}

}  // namespace mlstm
