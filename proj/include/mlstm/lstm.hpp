#pragma once

// Single-layer LSTM with peephole connections. The hidden output is the
// network output, so the hidden width equals the target width.

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <string_view>

#include "mlstm/errors.hpp"
#include "mlstm/masked_data.hpp"

namespace mlstm {

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

template <class Scalar>
Scalar sigmoid(Scalar v) noexcept {
    using std::exp;
    return Scalar(1) / (Scalar(1) + exp(-v));
}
template <class Scalar>
Scalar tanh_act(Scalar v) noexcept {
    using std::tanh;
    return tanh(v);
}

/// Derivatives evaluated from the pre-activation.
template <class Scalar>
Scalar sigmoid_grad(Scalar v) noexcept {
    const Scalar s = sigmoid(v);
    return s * (Scalar(1) - s);
}
template <class Scalar>
Scalar tanh_grad(Scalar v) noexcept {
    const Scalar t = tanh_act(v);
    return Scalar(1) - t * t;
}

// ---------------------------------------------------------------------------
// Parameter arrays
// ---------------------------------------------------------------------------

template <class Scalar>
using MatrixT = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using VectorT = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Weights feeding one gate (or the cell modulation).
template <class Scalar = double>
struct GateArrays {
    MatrixT<Scalar> input_weights;      // M x N
    MatrixT<Scalar> recurrent_weights;  // M x M
    VectorT<Scalar> bias;               // M
};

/// The 15 arrays of one peephole LSTM layer. Tagged so that parameters,
/// gradients and optimizer velocities are distinct types with one layout.
template <class Tag, class Scalar = double>
struct LayerArrays {
    using scalar_type = Scalar;

    GateArrays<Scalar> forget;
    GateArrays<Scalar> input;
    GateArrays<Scalar> cell;  // modulation input, no peephole
    GateArrays<Scalar> output;
    VectorT<Scalar> peephole_forget;  // reads c^{t-1}
    VectorT<Scalar> peephole_input;   // reads c^{t-1}
    VectorT<Scalar> peephole_output;  // reads c^t

    static LayerArrays zeros(Eigen::Index input_width, Eigen::Index width) {
        LayerArrays a;
        for (GateArrays<Scalar>* g : {&a.forget, &a.input, &a.cell, &a.output}) {
            g->input_weights = MatrixT<Scalar>::Zero(width, input_width);
            g->recurrent_weights = MatrixT<Scalar>::Zero(width, width);
            g->bias = VectorT<Scalar>::Zero(width);
        }
        a.peephole_forget = VectorT<Scalar>::Zero(width);
        a.peephole_input = VectorT<Scalar>::Zero(width);
        a.peephole_output = VectorT<Scalar>::Zero(width);
        return a;
    }

    template <class OtherTag, class OtherScalar>
    static LayerArrays zeros_like(const LayerArrays<OtherTag, OtherScalar>& other) {
        return zeros(other.input_width(), other.width());
    }

    template <class NewScalar>
    LayerArrays<Tag, NewScalar> cast() const {
        auto gate = [](const GateArrays<Scalar>& g) {
            return GateArrays<NewScalar>{g.input_weights.template cast<NewScalar>(),
                                         g.recurrent_weights.template cast<NewScalar>(),
                                         g.bias.template cast<NewScalar>()};
        };
        return {gate(forget), gate(input), gate(cell), gate(output),
                peephole_forget.template cast<NewScalar>(), peephole_input.template cast<NewScalar>(),
                peephole_output.template cast<NewScalar>()};
    }

    Eigen::Index input_width() const noexcept { return forget.input_weights.cols(); }
    Eigen::Index width() const noexcept { return forget.input_weights.rows(); }
};

struct ParameterTag;
struct GradientTag;
struct VelocityTag;

using LstmParameters = LayerArrays<ParameterTag>;
using GradientSet = LayerArrays<GradientTag>;

inline constexpr std::array<std::string_view, 15> kArrayNames = {
    "W_f", "W_i", "W_c", "W_o", "U_f", "U_i", "U_c", "U_o",
    "V_f", "V_i", "V_o", "b_f", "b_i", "b_c", "b_o"};

namespace detail {
template <class Fn, class... Arrays>
void visit_15(Fn&& fn, Arrays&... arrays) {
    fn(0, arrays.forget.input_weights...);
    fn(1, arrays.input.input_weights...);
    fn(2, arrays.cell.input_weights...);
    fn(3, arrays.output.input_weights...);
    fn(4, arrays.forget.recurrent_weights...);
    fn(5, arrays.input.recurrent_weights...);
    fn(6, arrays.cell.recurrent_weights...);
    fn(7, arrays.output.recurrent_weights...);
    fn(8, arrays.peephole_forget...);
    fn(9, arrays.peephole_input...);
    fn(10, arrays.peephole_output...);
    fn(11, arrays.forget.bias...);
    fn(12, arrays.input.bias...);
    fn(13, arrays.cell.bias...);
    fn(14, arrays.output.bias...);
}
}  // namespace detail

/// Calls fn(name, a_k, b_k, ...) for the 15 arrays in checkpoint order
/// (W_f W_i W_c W_o U_f U_i U_c U_o V_f V_i V_o b_f b_i b_c b_o), zipping
/// the same array across every argument.
template <class Fn, class... Arrays>
void for_each_array(Fn&& fn, Arrays&... arrays) {
    detail::visit_15([&](int k, auto&... a) { fn(kArrayNames[static_cast<std::size_t>(k)], a...); },
                     arrays...);
}

template <class TagA, class SA, class TagB, class SB>
bool same_shape(const LayerArrays<TagA, SA>& a, const LayerArrays<TagB, SB>& b) {
    bool ok = true;
    for_each_array([&](std::string_view, const auto& x, const auto& y) {
        ok = ok && x.rows() == y.rows() && x.cols() == y.cols();
    }, a, b);
    return ok;
}

template <class Tag, class Scalar>
bool all_finite(const LayerArrays<Tag, Scalar>& a) {
    bool ok = true;
    for_each_array([&](std::string_view, const auto& x) { ok = ok && x.allFinite(); }, a);
    return ok;
}

/// Entries drawn i.i.d. uniform on [-range, range], arrays filled in
/// checkpoint order and row-major within each array.
inline LstmParameters init_parameters(Eigen::Index input_width, Eigen::Index width, std::uint64_t seed,
                                      double range) {
    if (input_width < 1 || width < 1) throw ConfigError("LSTM dimensions must be at least 1");
    if (!(range >= 0.0) || !std::isfinite(range)) throw ConfigError("init range must be finite and >= 0");

    auto params = LstmParameters::zeros(input_width, width);
    if (range == 0.0) return params;

    std::mt19937_64 engine(seed);
    std::uniform_real_distribution<double> uniform(-range, range);
    for_each_array([&](std::string_view, auto& a) {
        for (Eigen::Index r = 0; r < a.rows(); ++r)
            for (Eigen::Index c = 0; c < a.cols(); ++c) a(r, c) = uniform(engine);
    }, params);
    return params;
}

// ---------------------------------------------------------------------------
// Forward pass
// ---------------------------------------------------------------------------

/// Everything BPTT needs from one sequence. Rows are timesteps (T x M).
template <class Scalar>
struct BasicForwardCache {
    // pre-activations
    MatrixT<Scalar> forget, input, modulation, output;
    MatrixT<Scalar> cell;  // c^t
    // post-activations
    MatrixT<Scalar> forget_act, input_act, modulation_act, cell_act, output_act;
    MatrixT<Scalar> hidden;  // h^t, the network output

    VectorT<Scalar> initial_hidden;  // h^{-1}
    VectorT<Scalar> initial_cell;    // c^{-1}

    Eigen::Index steps() const noexcept { return hidden.rows(); }
};

using ForwardCache = BasicForwardCache<double>;

/// Runs the recurrence for t = 0..T-1. Forget and input gates peek at
/// c^{t-1}; the output gate peeks at the freshly updated c^t.
template <class Tag, class Scalar, class Derived>
BasicForwardCache<Scalar> forward(const LayerArrays<Tag, Scalar>& p, const Eigen::MatrixBase<Derived>& inputs,
                                  const VectorT<Scalar>& initial_hidden, const VectorT<Scalar>& initial_cell) {
    using Vec = VectorT<Scalar>;
    const auto T = inputs.rows();
    const auto M = p.width();
    if (inputs.cols() != p.input_width())
        throw DataError("forward: input width " + std::to_string(inputs.cols()) + " does not match parameters (" +
                        std::to_string(p.input_width()) + ")");
    if (initial_hidden.size() != M || initial_cell.size() != M)
        throw DataError("forward: initial state width does not match parameters");

    BasicForwardCache<Scalar> c;
    for (MatrixT<Scalar>* m : {&c.forget, &c.input, &c.modulation, &c.output, &c.cell, &c.forget_act,
                               &c.input_act, &c.modulation_act, &c.cell_act, &c.output_act, &c.hidden})
        m->resize(T, M);
    c.initial_hidden = initial_hidden;
    c.initial_cell = initial_cell;

    const auto sig = [](Scalar v) { return sigmoid(v); };
    const auto th = [](Scalar v) { return tanh_act(v); };

    Vec h_prev = initial_hidden;
    Vec c_prev = initial_cell;
    for (Eigen::Index t = 0; t < T; ++t) {
        const Vec x = inputs.row(t).transpose().template cast<Scalar>();

        const Vec f = p.forget.input_weights * x + p.forget.recurrent_weights * h_prev +
                      p.peephole_forget.cwiseProduct(c_prev) + p.forget.bias;
        const Vec i = p.input.input_weights * x + p.input.recurrent_weights * h_prev +
                      p.peephole_input.cwiseProduct(c_prev) + p.input.bias;
        const Vec z = p.cell.input_weights * x + p.cell.recurrent_weights * h_prev + p.cell.bias;

        const Vec f_act = f.unaryExpr(sig);
        const Vec i_act = i.unaryExpr(sig);
        const Vec z_act = z.unaryExpr(th);
        const Vec cell = f_act.cwiseProduct(c_prev) + i_act.cwiseProduct(z_act);
        const Vec cell_act = cell.unaryExpr(th);

        const Vec o = p.output.input_weights * x + p.output.recurrent_weights * h_prev +
                      p.peephole_output.cwiseProduct(cell) + p.output.bias;
        const Vec o_act = o.unaryExpr(sig);
        const Vec h = o_act.cwiseProduct(cell_act);

        if (!h.allFinite() || !cell.allFinite())
            throw DivergenceError("forward: non-finite state at timestep " + std::to_string(t));

        c.forget.row(t) = f.transpose();
        c.input.row(t) = i.transpose();
        c.modulation.row(t) = z.transpose();
        c.output.row(t) = o.transpose();
        c.cell.row(t) = cell.transpose();
        c.forget_act.row(t) = f_act.transpose();
        c.input_act.row(t) = i_act.transpose();
        c.modulation_act.row(t) = z_act.transpose();
        c.cell_act.row(t) = cell_act.transpose();
        c.output_act.row(t) = o_act.transpose();
        c.hidden.row(t) = h.transpose();

        h_prev = h;
        c_prev = cell;
    }
    return c;
}

/// Forward pass from zero initial states.
template <class Tag, class Scalar, class Derived>
BasicForwardCache<Scalar> forward(const LayerArrays<Tag, Scalar>& p, const Eigen::MatrixBase<Derived>& inputs) {
    const VectorT<Scalar> zero = VectorT<Scalar>::Zero(p.width());
    return forward(p, inputs, zero, zero);
}

}  // namespace mlstm
