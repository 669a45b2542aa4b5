#pragma once

// Backpropagation through time with missing-data normalization.
//
// Loss per output node m:
//
//   L(m) = 1/2 * sum_{j,t} (y_j^t(m) - s_j^t(m))^2 / (subject_scale_j * target_counts_j(m))
//
// summed over available target cells only. Input-weight gradient columns
// are further divided by node_coverage_j(n) per subject, so every input node
// contributes in proportion to how often it was observed.

#include <Eigen/Core>

#include <cstddef>
#include <string>
#include <vector>

#include "mlstm/errors.hpp"
#include "mlstm/lstm.hpp"
#include "mlstm/masked_data.hpp"

namespace mlstm {

template <class Scalar>
struct BasicMaskedLoss {
    VectorT<Scalar> per_node;     // M
    MatrixT<Scalar> output_grad;  // T x M, dL/dy

    Scalar total() const { return per_node.sum(); }
};

using MaskedLoss = BasicMaskedLoss<double>;

/// Masked, normalized L2 loss for subject j. Masked cells and nodes with no
/// available targets contribute neither loss nor gradient.
template <class Derived, class Scalar = typename Derived::Scalar>
BasicMaskedLoss<Scalar> masked_loss(const Eigen::MatrixBase<Derived>& outputs, const Matrix& targets,
                                    const Mask& target_mask, const NormalizationFactors& factors,
                                    Eigen::Index subject) {
    const auto T = outputs.rows();
    const auto M = outputs.cols();
    if (targets.rows() != T || targets.cols() != M || target_mask.rows() != T || target_mask.cols() != M)
        throw DataError("masked_loss: shape mismatch between outputs and targets");

    BasicMaskedLoss<Scalar> r{VectorT<Scalar>::Zero(M), MatrixT<Scalar>::Zero(T, M)};
    const Scalar scale = static_cast<Scalar>(factors.subject_scale(subject));
    for (Eigen::Index m = 0; m < M; ++m) {
        const int count = factors.target_counts(subject, m);
        if (count == 0) continue;
        const Scalar weight = Scalar(1) / (scale * static_cast<Scalar>(count));
        for (Eigen::Index t = 0; t < T; ++t) {
            if (!target_mask(t, m)) continue;
            const Scalar residual = outputs(t, m) - static_cast<Scalar>(targets(t, m));
            r.per_node(m) += Scalar(0.5) * weight * residual * residual;
            r.output_grad(t, m) = weight * residual;
        }
    }
    return r;
}

/// Adjoints for one sequence, rows are timesteps.
struct BackwardState {
    Matrix output_grad;  // dy
    Matrix hidden;       // dh
    Matrix cell;         // dc (all five terms)
    // gradients w.r.t. post-activations
    Matrix output_act, cell_act, modulation_act, input_act, forget_act;
    // gradients w.r.t. pre-activations
    Matrix output, modulation, input, forget;
    Matrix inputs;  // dx, T x N
};

/// Walks t = T-1 .. 0. Adjoints one past the end are zero.
inline BackwardState backward(const LstmParameters& p, const ForwardCache& c, const Matrix& output_grad) {
    const auto T = c.steps();
    const auto M = p.width();
    const auto N = p.input_width();
    if (output_grad.rows() != T || output_grad.cols() != M || c.hidden.cols() != M)
        throw DataError("backward: output gradient shape does not match the forward cache");

    BackwardState s;
    s.output_grad = output_grad;
    for (Matrix* m : {&s.hidden, &s.cell, &s.output_act, &s.cell_act, &s.modulation_act, &s.input_act,
                      &s.forget_act, &s.output, &s.modulation, &s.input, &s.forget})
        m->resize(T, M);
    s.inputs.resize(T, N);

    Vector d_forget_next = Vector::Zero(M);
    Vector d_input_next = Vector::Zero(M);
    Vector d_mod_next = Vector::Zero(M);
    Vector d_output_next = Vector::Zero(M);
    Vector d_cell_next = Vector::Zero(M);
    Vector forget_act_next = Vector::Zero(M);

    for (Eigen::Index t = T - 1; t >= 0; --t) {
        const Vector dh = output_grad.row(t).transpose() +
                          p.forget.recurrent_weights.transpose() * d_forget_next +
                          p.input.recurrent_weights.transpose() * d_input_next +
                          p.cell.recurrent_weights.transpose() * d_mod_next +
                          p.output.recurrent_weights.transpose() * d_output_next;

        const Vector o = c.output.row(t).transpose();
        const Vector o_act = c.output_act.row(t).transpose();
        const Vector cell = c.cell.row(t).transpose();
        const Vector cell_act = c.cell_act.row(t).transpose();
        const Vector cell_prev = t > 0 ? Vector(c.cell.row(t - 1).transpose()) : c.initial_cell;

        const Vector d_o_act = dh.cwiseProduct(cell_act);
        const Vector d_o = d_o_act.cwiseProduct(o.unaryExpr(&sigmoid_grad<double>));

        const Vector d_c_act = dh.cwiseProduct(o_act);
        const Vector d_c = d_c_act.cwiseProduct(cell.unaryExpr(&tanh_grad<double>)) +
                           d_cell_next.cwiseProduct(forget_act_next) +
                           p.peephole_forget.cwiseProduct(d_forget_next) +
                           p.peephole_input.cwiseProduct(d_input_next) +
                           p.peephole_output.cwiseProduct(d_o);

        const Vector d_z_act = d_c.cwiseProduct(c.input_act.row(t).transpose());
        const Vector d_z = d_z_act.cwiseProduct(c.modulation.row(t).transpose().unaryExpr(&tanh_grad<double>));
        const Vector d_i_act = d_c.cwiseProduct(c.modulation_act.row(t).transpose());
        const Vector d_i = d_i_act.cwiseProduct(c.input.row(t).transpose().unaryExpr(&sigmoid_grad<double>));
        const Vector d_f_act = d_c.cwiseProduct(cell_prev);
        const Vector d_f = d_f_act.cwiseProduct(c.forget.row(t).transpose().unaryExpr(&sigmoid_grad<double>));

        s.inputs.row(t) = (p.forget.input_weights.transpose() * d_f + p.input.input_weights.transpose() * d_i +
                           p.cell.input_weights.transpose() * d_z + p.output.input_weights.transpose() * d_o)
                              .transpose();

        s.hidden.row(t) = dh.transpose();
        s.cell.row(t) = d_c.transpose();
        s.output_act.row(t) = d_o_act.transpose();
        s.cell_act.row(t) = d_c_act.transpose();
        s.modulation_act.row(t) = d_z_act.transpose();
        s.input_act.row(t) = d_i_act.transpose();
        s.forget_act.row(t) = d_f_act.transpose();
        s.output.row(t) = d_o.transpose();
        s.modulation.row(t) = d_z.transpose();
        s.input.row(t) = d_i.transpose();
        s.forget.row(t) = d_f.transpose();

        d_forget_next = d_f;
        d_input_next = d_i;
        d_mod_next = d_z;
        d_output_next = d_o;
        d_cell_next = d_c;
        forget_act_next = c.forget_act.row(t).transpose();
    }
    return s;
}

namespace detail {

/// Adds one subject's contribution to `g`. Input-weight columns are divided
/// by node_coverage(n); a node with zero coverage has an all-zero input
/// column, so its contribution is defined as zero.
inline void accumulate_subject(GradientSet& g, const Matrix& inputs, const ForwardCache& c,
                               const BackwardState& s, const Eigen::Ref<const Vector>& node_coverage) {
    const auto T = c.steps();
    const auto N = inputs.cols();

    Matrix scaled_inputs = inputs;
    for (Eigen::Index n = 0; n < N; ++n) {
        const double cov = node_coverage(n);
        if (cov > 0.0)
            scaled_inputs.col(n) /= cov;
        else
            scaled_inputs.col(n).setZero();
    }

    // Row t of the shifted matrices holds h^{t-1} and c^{t-1}.
    Matrix hidden_prev(T, c.hidden.cols());
    Matrix cell_prev(T, c.cell.cols());
    hidden_prev.row(0) = c.initial_hidden.transpose();
    cell_prev.row(0) = c.initial_cell.transpose();
    if (T > 1) {
        hidden_prev.bottomRows(T - 1) = c.hidden.topRows(T - 1);
        cell_prev.bottomRows(T - 1) = c.cell.topRows(T - 1);
    }

    auto add_gate = [&](GateArrays<>& gate, const Matrix& delta) {
        gate.input_weights.noalias() += delta.transpose() * scaled_inputs;
        gate.recurrent_weights.noalias() += delta.transpose() * hidden_prev;
        gate.bias += delta.colwise().sum().transpose();
    };
    add_gate(g.forget, s.forget);
    add_gate(g.input, s.input);
    add_gate(g.cell, s.modulation);
    add_gate(g.output, s.output);

    g.peephole_forget += s.forget.cwiseProduct(cell_prev).colwise().sum().transpose();
    g.peephole_input += s.input.cwiseProduct(cell_prev).colwise().sum().transpose();
    g.peephole_output += s.output.cwiseProduct(c.cell).colwise().sum().transpose();
}

}  // namespace detail

/// Sums per-subject gradients in batch order (deterministic reduction).
inline GradientSet accumulate_gradients(const MaskedBatch& batch, const std::vector<ForwardCache>& caches,
                                        const std::vector<BackwardState>& states,
                                        const NormalizationFactors& factors, const LstmParameters& shape) {
    const auto J = static_cast<std::size_t>(batch.size());
    if (caches.size() != J || states.size() != J)
        throw DataError("accumulate_gradients: need one cache and one backward state per sequence");

    auto g = GradientSet::zeros_like(shape);
    for (std::size_t j = 0; j < J; ++j)
        detail::accumulate_subject(g, batch[j].inputs(), caches[j], states[j],
                                   factors.node_coverage.row(static_cast<Eigen::Index>(j)).transpose());
    return g;
}

struct BatchGradient {
    GradientSet gradients;
    Vector loss_per_node;  // M
    double loss = 0.0;     // sum over nodes
};

/// forward -> masked_loss -> backward -> accumulate for a whole batch.
inline BatchGradient batch_gradient(const LstmParameters& params, const MaskedBatch& batch,
                                    const NormalizationFactors& factors) {
    const auto J = static_cast<std::size_t>(batch.size());
    std::vector<ForwardCache> caches;
    std::vector<BackwardState> states;
    caches.reserve(J);
    states.reserve(J);

    BatchGradient out{GradientSet::zeros_like(params), Vector::Zero(params.width()), 0.0};
    for (std::size_t j = 0; j < J; ++j) {
        const auto& seq = batch[j];
        caches.push_back(forward(params, seq.inputs()));
        const auto loss = masked_loss(caches.back().hidden, seq.targets(), seq.target_mask(), factors,
                                      static_cast<Eigen::Index>(j));
        out.loss_per_node += loss.per_node;
        states.push_back(backward(params, caches.back(), loss.output_grad));
    }
    out.gradients = accumulate_gradients(batch, caches, states, factors, params);
    out.loss = out.loss_per_node.sum();
    return out;
}

inline BatchGradient batch_gradient(const LstmParameters& params, const MaskedBatch& batch) {
    return batch_gradient(params, batch, compute_factors(batch));
}

/// Total masked loss without any backward work.
inline double batch_loss(const LstmParameters& params, const MaskedBatch& batch,
                         const NormalizationFactors& factors) {
    double total = 0.0;
    for (Eigen::Index j = 0; j < batch.size(); ++j) {
        const auto& seq = batch[static_cast<std::size_t>(j)];
        const auto cache = forward(params, seq.inputs());
        total += masked_loss(cache.hidden, seq.targets(), seq.target_mask(), factors, j).total();
    }
    return total;
}

}  // namespace mlstm
