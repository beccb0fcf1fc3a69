#pragma once

#include "lifted/potential.hpp"

#include <optional>
#include <utility>

namespace lifted {

struct InferenceConfig {
    int sweeps = 20;        // backward passes after the initial forward pass
    int inner_iters = 1;    // fixed-point applications per block per sweep
    bool record_trajectory = false;
    double residual_tol = 1e-3;  // only used for the converged flag

    void validate() const {
        if (sweeps < 1 || inner_iters < 1)
            throw InvalidSpecError("inference needs sweeps >= 1 and inner_iters >= 1");
    }
};

// The loss term h(z) added to the potential during inference, canonicalized:
// every supported variant is a beta-scaled combination of Euclidean losses on
// the output layer, i.e. h(z) = c/2 ||z_L||^2 - <z_L, linear> + constant,
// optionally plus per-layer linear perturbations <g_k, z_k>.
struct LossTerm {
    double curvature = 0.0;          // c, may be negative (adversarial)
    Matrix linear;                   // batch x d_L; empty means zero
    double constant = 0.0;
    std::vector<Vector> perturbation;  // g_1..g_L; empty means none

    bool trivial() const { return curvature == 0.0 && linear.size() == 0 && perturbation.empty(); }

    static LossTerm none() { return {}; }

    /// h = beta * l(z;y), the relaxed-reformulation plus phase.
    static LossTerm plus_target(double beta, const Matrix& y) { return weighted({{beta, &y}}); }

    /// h = -beta * l(z;y), the untargeted adversarial phase.
    static LossTerm minus_target(double beta, const Matrix& y) { return weighted({{-beta, &y}}); }

    /// h = beta * (abar*l(z;y_neg) + alpha*l(z;y)) — the label-smoothing form.
    static LossTerm mixed(double alpha, double beta, const Matrix& y, const Matrix& y_neg) {
        return weighted({{beta * (1.0 - alpha), &y_neg}, {beta * alpha, &y}});
    }

    /// h = beta * (abar*l(z;y_neg) - alpha*l(z;y)) — the targeted attack.
    /// Strong convexity of h requires alpha < 1/2; callers certifying a safe
    /// beta may override the guard.
    static LossTerm adv_mixed(double alpha, double beta, const Matrix& y, const Matrix& y_neg,
                              bool allow_unsafe_alpha = false) {
        if (alpha >= 0.5 && !allow_unsafe_alpha)
            throw InvalidSpecError("adv_mixed with alpha >= 1/2 loses strong convexity; "
                                   "pass allow_unsafe_alpha to override");
        return weighted({{beta * (1.0 - alpha), &y_neg}, {-beta * alpha, &y}});
    }

    /// h = abar*beta * l(z;y_neg) — the perturbed-dynamics phase of the
    /// targeted objectives.
    static LossTerm adv_only(double alpha, double beta, const Matrix& y_neg) {
        return weighted({{beta * (1.0 - alpha), &y_neg}});
    }

    /// h = -beta * <g_top, z_L> per sample, the loss linearized at gradient
    /// rows g_top (batch x d_L).
    static LossTerm minus_linearized(double beta, const Matrix& grad_rows) {
        LossTerm t;
        t.linear = beta * grad_rows;
        return t;
    }

    LossTerm with_perturbation(std::vector<Vector> g) const {
        LossTerm t = *this;
        t.perturbation = std::move(g);
        return t;
    }

    /// h(z), batch-summed.
    double value(const ActivationState& state) const {
        double v = constant;
        const Matrix& top = state.top();
        if (curvature != 0.0) v += 0.5 * curvature * top.squaredNorm();
        if (linear.size() != 0) v -= top.cwiseProduct(linear).sum();
        for (size_t k = 0; k < perturbation.size(); ++k)
            if (perturbation[k].size() > 0)
                v += (state.layers[k] * perturbation[k]).sum();
        return v;
    }

private:
    static LossTerm weighted(std::initializer_list<std::pair<double, const Matrix*>> terms) {
        LossTerm t;
        for (auto& [w, y] : terms) {
            t.curvature += w;
            if (t.linear.size() == 0)
                t.linear = w * *y;
            else
                t.linear += w * *y;
            t.constant += 0.5 * w * y->squaredNorm();
        }
        return t;
    }
};

struct InferenceTrace {
    std::vector<double> objective;  // potential + h, per sweep (index 0 = forward init)
    std::vector<double> residual;
    bool diverged = false;
    int diverged_sweep = -1;
};

namespace detail {

// Mutable BCD workspace: activities plus cached pre-activations A_k that are
// kept consistent with the current z_{k-1}.
struct BcdState {
    ActivationState state;
    std::vector<Matrix> preact;  // A_k = z_{k-1} W_{k-1}^T (+ b)

    void refresh(const NetworkParams& params, int k) {
        const Matrix& prev = (k == 0) ? state.input : state.layers[static_cast<size_t>(k - 1)];
        preact[static_cast<size_t>(k)] = preactivation(params, k, prev);
    }
};

inline void check_top_curvature(const PotentialSpec& spec, const LossTerm& loss) {
    const double denom = spec.gamma[spec.depth() - 1] + loss.curvature;
    if (denom <= 0.0)
        throw NonPositiveCurvatureError(
            "output-layer curvature gamma_L + c = " + std::to_string(denom) + " is not positive");
}

// Output layer: exact minimizer of gamma/2 ||z - a||^2 + h(z_L), projected for
// ReluG. Written as a + (d - c a - g)/(gamma + c) so that the trivial loss
// reproduces the forward value bit-exactly.
inline Matrix top_update(const PotentialSpec& spec, const LossTerm& loss, const Matrix& a) {
    const int L = spec.depth();
    const double gamma = spec.gamma[L - 1];
    const double denom = gamma + loss.curvature;
    Matrix num = -loss.curvature * a;
    if (loss.linear.size() != 0) num += loss.linear;
    if (!loss.perturbation.empty() && loss.perturbation.back().size() > 0)
        num.rowwise() -= loss.perturbation.back().transpose();
    Matrix z = a + num / denom;
    if (spec.generators[static_cast<size_t>(L - 1)] == Generator::ReluG) z = z.cwiseMax(0.0);
    return z;
}

// Interior layer k (1-based, k < L): one application of the fixed-point map
//   z_k <- f_k( a_k + (gamma_{k+1}/gamma_k) W_k^T (z_{k+1} - f_{k+1}(a_{k+1})) - g_k/gamma_k )
// with a_{k+1} evaluated at the current z_k.
inline Matrix interior_update(const NetworkParams& params, const PotentialSpec& spec,
                              const LossTerm& loss, const BcdState& bcd, int k,
                              const Matrix& a_up_current) {
    const size_t ki = static_cast<size_t>(k - 1);
    const Matrix& a_k = bcd.preact[ki];
    Matrix err = bcd.state.layers[ki + 1] -
                 activation_apply(generator_activation(spec.generators[ki + 1]), a_up_current);
    Matrix arg = a_k + (spec.gamma[k] / spec.gamma[k - 1]) * (err * params.weights[ki + 1]);
    if (!loss.perturbation.empty() && loss.perturbation[ki].size() > 0)
        arg.rowwise() -= (loss.perturbation[ki] / spec.gamma[k - 1]).transpose();
    return activation_apply(generator_activation(spec.generators[ki]), arg);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace detail

/// Candidate update for block k (1-based) computed from `state` without
/// mutating it.
inline Matrix block_update(const NetworkParams& params, const PotentialSpec& spec,
                           const ActivationState& state, int k, const LossTerm& loss) {
    const int L = spec.depth();
    if (k < 1 || k > L) throw DimensionError("block_update: layer index out of range");
    const Matrix& prev = (k == 1) ? state.input : state.layers[static_cast<size_t>(k - 2)];
    Matrix a_k = preactivation(params, k - 1, prev);
    if (k == L) {
        detail::check_top_curvature(spec, loss);
        return detail::top_update(spec, loss, a_k);
    }
    detail::BcdState bcd{state, {}};
    bcd.preact.resize(static_cast<size_t>(L));
    bcd.preact[static_cast<size_t>(k - 1)] = std::move(a_k);
    Matrix a_up = preactivation(params, k, state.layers[static_cast<size_t>(k - 1)]);
    return detail::interior_update(params, spec, loss, bcd, k, a_up);
}

/// Max-norm distance between the current blocks and their one-step updates.
inline double residual(const NetworkParams& params, const PotentialSpec& spec,
                       const ActivationState& state, const LossTerm& loss) {
    double r = 0.0;
    for (int k = 1; k <= spec.depth(); ++k) {
        Matrix updated = block_update(params, spec, state, k, loss);
        r = std::max(r, (updated - state.layers[static_cast<size_t>(k - 1)]).cwiseAbs().maxCoeff());
    }
    return r;
}

/// Minimize U^(gamma)(z;x) + h(z) by a forward-pass warm start followed by
/// cfg.sweeps backward block-coordinate sweeps (z_L down to z_1). Non-finite
/// activities abort with DivergedError; a non-positive output-layer curvature
/// aborts with NonPositiveCurvatureError before any sweep runs.
inline ActivationState infer(const Architecture& arch, const NetworkParams& params,
                             const PotentialSpec& spec, const InferenceConfig& cfg,
                             const Matrix& x, const LossTerm& loss,
                             InferenceTrace* trace = nullptr) {
    cfg.validate();
    spec.validate();
    const int L = spec.depth();
    detail::check_top_curvature(spec, loss);

    detail::BcdState bcd;
    bcd.state = forward(arch, params, x);
    bcd.preact.resize(static_cast<size_t>(L));
    for (int k = 0; k < L; ++k) bcd.refresh(params, k);

    auto record = [&](int sweep) {
        if (!trace) return;
        trace->objective.push_back(potential_value(params, spec, bcd.state) + loss.value(bcd.state));
        trace->residual.push_back(residual(params, spec, bcd.state, loss));
        (void)sweep;
    };
    if (trace && cfg.record_trajectory) record(0);

    for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
        for (int k = L; k >= 1; --k) {
            const size_t ki = static_cast<size_t>(k - 1);
            if (k == L) {
                bcd.state.layers[ki] = detail::top_update(spec, loss, bcd.preact[ki]);
            } else {
                for (int it = 0; it < cfg.inner_iters; ++it) {
                    // A_{k+1} is consistent with the current z_k here: on entry
                    // via the invariant, afterwards via the refresh below.
                    bcd.state.layers[ki] =
                        detail::interior_update(params, spec, loss, bcd, k, bcd.preact[ki + 1]);
                    bcd.refresh(params, k);
                }
            }
            if (k < L && !detail::all_finite(bcd.state.layers[ki])) {
                if (trace) {
                    trace->diverged = true;
                    trace->diverged_sweep = sweep;
                }
                throw DivergedError("inference diverged (non-finite activities)", sweep);
            }
        }
        if (!detail::all_finite(bcd.state.layers.back())) {
            if (trace) {
                trace->diverged = true;
                trace->diverged_sweep = sweep;
            }
            throw DivergedError("inference diverged (non-finite activities)", sweep);
        }
        if (trace && cfg.record_trajectory) record(sweep + 1);
    }
    return std::move(bcd.state);
}

}  // namespace lifted
