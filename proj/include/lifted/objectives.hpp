#pragma once

#include "lifted/inference.hpp"

namespace lifted {

enum class ObjectiveVariant {
    Backprop,        // standard forward/backward on the Euclidean loss
    Rovr,            // min_z l + U/beta, plus phase only
    Arovr,           // max_z l - U/beta, minus phase only
    TargetedRovr,    // two-phase targeted relaxation
    TargetedArovr,   // two-phase targeted adversarial relaxation
    TargetedArovrG,  // TargetedArovr with a random linear potential perturbation
};

inline bool is_targeted(ObjectiveVariant v) {
    return v == ObjectiveVariant::TargetedRovr || v == ObjectiveVariant::TargetedArovr ||
           v == ObjectiveVariant::TargetedArovrG;
}

struct GDist {
    enum class Kind { None, Gaussian, DropoutLike };
    Kind kind = Kind::None;
    double sigma = 0.0;  // Gaussian std deviation
    double p = 0.0;      // DropoutLike hit probability
    double magnitude = 0.0;

    static GDist none() { return {}; }
    static GDist gaussian(double sigma) { return {Kind::Gaussian, sigma, 0.0, 0.0}; }
    static GDist dropout_like(double p, double magnitude) {
        return {Kind::DropoutLike, 0.0, p, magnitude};
    }
};

// How the adversarial loss l^- is formed. EuclideanRandomLabel is the normal
// mode; Zero and NegatedTarget exist as override hooks (they collapse the
// targeted objectives back onto their untargeted counterparts).
enum class AdvLossMode { EuclideanRandomLabel, Zero, NegatedTarget };

struct ObjectiveSpec {
    ObjectiveVariant variant = ObjectiveVariant::Backprop;
    double beta = 0.25;
    double alpha = 0.49;                       // targeted variants only
    Vector gamma;                              // empty = all ones
    GDist g_dist;                              // TargetedArovrG only
    AdvLossMode adv_loss = AdvLossMode::EuclideanRandomLabel;
    bool allow_unsafe_alpha = false;
    bool linearize_loss = false;               // Arovr only: replace l by its linearization at the forward pass
    InferenceConfig inference;

    void validate() const {
        if (variant == ObjectiveVariant::Backprop) return;
        if (!(beta > 0.0)) throw InvalidSpecError("beta must be positive");
        if (is_targeted(variant)) {
            if (!(alpha > 0.0 && alpha < 1.0))
                throw InvalidSpecError("alpha must lie in (0,1)");
            if (alpha >= 0.5 && !allow_unsafe_alpha &&
                variant != ObjectiveVariant::TargetedRovr)
                throw InvalidSpecError(
                    "alpha >= 1/2 loses strong convexity of the adversarial phase; "
                    "set allow_unsafe_alpha to override");
        }
    }
};

struct EvalResult {
    double loss = 0.0;       // batch-mean objective value
    NetworkParams grad;      // batch-mean parameter gradient
    bool converged = true;
    double residual = 0.0;   // worst residual across phases
};

/// One-hot adversarial target with a class drawn uniformly from the wrong
/// classes of `y` (one-hot or target-scaled; argmax with lowest-index
/// tie-break decides the true class).
inline Vector adversarial_label(const Vector& y, int num_classes, Rng& rng) {
    if (num_classes < 2) throw InvalidSpecError("adversarial_label needs >= 2 classes");
    int true_class = 0;
    for (int i = 1; i < y.size(); ++i)
        if (y[i] > y[true_class]) true_class = i;
    int c = static_cast<int>(rng.integer(static_cast<std::uint64_t>(num_classes - 1)));
    if (c >= true_class) ++c;
    Vector out = Vector::Zero(num_classes);
    out[c] = 1.0;
    return out;
}

inline Matrix adversarial_labels(const Matrix& y, int num_classes, Rng& rng) {
    Matrix out(y.rows(), num_classes);
    for (int i = 0; i < y.rows(); ++i)
        out.row(i) = adversarial_label(y.row(i).transpose(), num_classes, rng).transpose();
    return out;
}

/// Per-layer linear perturbation vectors drawn from `dist`.
inline std::vector<Vector> sample_g(const GDist& dist, const Architecture& arch, Rng& rng) {
    std::vector<Vector> g;
    g.reserve(static_cast<size_t>(arch.depth()));
    for (int k = 1; k <= arch.depth(); ++k) {
        Vector v = Vector::Zero(arch.layer_dims[static_cast<size_t>(k)]);
        switch (dist.kind) {
            case GDist::Kind::None: break;
            case GDist::Kind::Gaussian:
                for (int i = 0; i < v.size(); ++i) v[i] = rng.normal(dist.sigma);
                break;
            case GDist::Kind::DropoutLike:
                for (int i = 0; i < v.size(); ++i)
                    v[i] = (rng.uniform() < dist.p) ? dist.magnitude : 0.0;
                break;
        }
        g.push_back(std::move(v));
    }
    return g;
}

/// Euclidean loss l(z;y) = ||z_L - y||^2 / 2, batch-summed.
inline double euclidean_loss(const Matrix& z_top, const Matrix& y) {
    return 0.5 * (z_top - y).squaredNorm();
}

/// Standard reverse-mode gradient of the batch-mean Euclidean loss.
inline std::pair<double, NetworkParams> backprop(const Architecture& arch,
                                                 const NetworkParams& params, const Matrix& x,
                                                 const Matrix& y) {
    const int L = arch.depth();
    std::vector<Matrix> preacts;
    preacts.reserve(static_cast<size_t>(L));
    std::vector<Matrix> acts;
    acts.reserve(static_cast<size_t>(L));
    const Matrix* prev = &x;
    for (int k = 0; k < L; ++k) {
        preacts.push_back(preactivation(params, k, *prev));
        acts.push_back(activation_apply(arch.activations[static_cast<size_t>(k)], preacts.back()));
        prev = &acts.back();
    }
    const double inv_batch = 1.0 / static_cast<double>(x.rows());
    double loss = euclidean_loss(acts.back(), y) * inv_batch;

    NetworkParams grad;
    grad.weights.resize(static_cast<size_t>(L));
    if (params.has_bias()) grad.biases.resize(static_cast<size_t>(L));
    Matrix delta = (acts.back() - y) * inv_batch;
    for (int k = L - 1; k >= 0; --k) {
        const size_t ki = static_cast<size_t>(k);
        if (arch.activations[ki] == Activation::Relu)
            delta = delta.cwiseProduct((preacts[ki].array() > 0.0).cast<double>().matrix());
        const Matrix& below = (k == 0) ? x : acts[ki - 1];
        grad.weights[ki] = delta.transpose() * below;
        if (params.has_bias()) grad.biases[ki] = delta.colwise().sum().transpose();
        if (k > 0) delta = delta * params.weights[ki];
    }
    return {loss, std::move(grad)};
}

namespace detail {

inline void axpy_params(NetworkParams& acc, const NetworkParams& g, double scale) {
    if (acc.weights.empty()) {
        acc = g;
        for (auto& w : acc.weights) w *= scale;
        for (auto& b : acc.biases) b *= scale;
        return;
    }
    for (size_t k = 0; k < g.weights.size(); ++k) acc.weights[k] += scale * g.weights[k];
    for (size_t k = 0; k < g.biases.size(); ++k) acc.biases[k] += scale * g.biases[k];
}

struct Phase {
    ActivationState state;
    double objective;  // U + h at the solution, batch-summed
    double residual;
};

inline Phase run_phase(const Architecture& arch, const NetworkParams& params,
                       const PotentialSpec& spec, const InferenceConfig& cfg, const Matrix& x,
                       const LossTerm& loss) {
    Phase p{infer(arch, params, spec, cfg, x, loss), 0.0, 0.0};
    p.objective = potential_value(params, spec, p.state) + loss.value(p.state);
    p.residual = residual(params, spec, p.state, loss);
    return p;
}

// l^- target rows per adv_loss mode; for Zero/NegatedTarget the loss-term
// factories below fold the mode in analytically instead.
inline Matrix adv_targets(const ObjectiveSpec& spec, const Matrix& y, Rng& rng) {
    if (spec.adv_loss == AdvLossMode::EuclideanRandomLabel)
        return adversarial_labels(y, static_cast<int>(y.cols()), rng);
    return Matrix();
}

// abar*l^- + alpha*l, by adv-loss mode.
inline LossTerm make_mixed(const ObjectiveSpec& s, const Matrix& y, const Matrix& yneg) {
    switch (s.adv_loss) {
        case AdvLossMode::EuclideanRandomLabel: return LossTerm::mixed(s.alpha, s.beta, y, yneg);
        case AdvLossMode::Zero: return LossTerm::plus_target(s.beta * s.alpha, y);
        case AdvLossMode::NegatedTarget:
            // abar*(-l) + alpha*l = (2 alpha - 1) l
            return LossTerm::plus_target(s.beta * (2.0 * s.alpha - 1.0), y);
    }
    throw InvalidSpecError("unknown adv loss mode");
}

// abar*l^-.
inline LossTerm make_adv_only(const ObjectiveSpec& s, const Matrix& y, const Matrix& yneg) {
    switch (s.adv_loss) {
        case AdvLossMode::EuclideanRandomLabel: return LossTerm::adv_only(s.alpha, s.beta, yneg);
        case AdvLossMode::Zero: return LossTerm::none();
        case AdvLossMode::NegatedTarget:
            return LossTerm::minus_target(s.beta * (1.0 - s.alpha), y);
    }
    throw InvalidSpecError("unknown adv loss mode");
}

// abar*l^- - alpha*l.
inline LossTerm make_adv_mixed(const ObjectiveSpec& s, const Matrix& y, const Matrix& yneg) {
    switch (s.adv_loss) {
        case AdvLossMode::EuclideanRandomLabel:
            return LossTerm::adv_mixed(s.alpha, s.beta, y, yneg, s.allow_unsafe_alpha);
        case AdvLossMode::Zero: return LossTerm::minus_target(s.beta * s.alpha, y);
        case AdvLossMode::NegatedTarget: return LossTerm::minus_target(s.beta, y);
    }
    throw InvalidSpecError("unknown adv loss mode");
}

}  // namespace detail

/// Scalar loss and parameter gradient of the configured training objective on
/// one mini-batch. Contrastive gradients are envelope gradients: dU/dtheta at
/// the inferred states, never differentiated through the inference loop.
/// Deterministic given the rng state.
inline EvalResult evaluate_and_grad(const Architecture& arch, const ObjectiveSpec& obj,
                                    const NetworkParams& params, const Matrix& x, const Matrix& y,
                                    Rng& rng) {
    obj.validate();
    EvalResult result;
    const double inv_batch = 1.0 / static_cast<double>(x.rows());

    if (obj.variant == ObjectiveVariant::Backprop) {
        auto [loss, grad] = backprop(arch, params, x, y);
        result.loss = loss;
        result.grad = std::move(grad);
        return result;
    }

    PotentialSpec spec = PotentialSpec::for_architecture(arch);
    if (obj.gamma.size() > 0) spec = spec.with_gamma(obj.gamma);
    const double beta = obj.beta;

    switch (obj.variant) {
        case ObjectiveVariant::Rovr: {
            auto plus = detail::run_phase(arch, params, spec, obj.inference, x,
                                          LossTerm::plus_target(beta, y));
            // l(z+) + U(z+)/beta; the free-phase term min_z U is identically 0
            result.loss = (euclidean_loss(plus.state.top(), y) +
                           potential_value(params, spec, plus.state) / beta) *
                          inv_batch;
            detail::axpy_params(result.grad, potential_grad_theta(params, spec, plus.state),
                                inv_batch / beta);
            result.residual = plus.residual;
            break;
        }
        case ObjectiveVariant::Arovr: {
            LossTerm loss_term =
                obj.linearize_loss
                    ? LossTerm::minus_linearized(beta, forward(arch, params, x).top() - y)
                    : LossTerm::minus_target(beta, y);
            auto minus = detail::run_phase(arch, params, spec, obj.inference, x, loss_term);
            result.loss = (euclidean_loss(minus.state.top(), y) -
                           potential_value(params, spec, minus.state) / beta) *
                          inv_batch;
            detail::axpy_params(result.grad, potential_grad_theta(params, spec, minus.state),
                                -inv_batch / beta);
            result.residual = minus.residual;
            break;
        }
        case ObjectiveVariant::TargetedRovr:
        case ObjectiveVariant::TargetedArovr:
        case ObjectiveVariant::TargetedArovrG: {
            Matrix yneg = detail::adv_targets(obj, y, rng);
            LossTerm first, second;
            if (obj.variant == ObjectiveVariant::TargetedRovr) {
                first = detail::make_mixed(obj, y, yneg);
                second = detail::make_adv_only(obj, y, yneg);
            } else {
                first = detail::make_adv_only(obj, y, yneg);
                second = detail::make_adv_mixed(obj, y, yneg);
            }
            if (obj.variant == ObjectiveVariant::TargetedArovrG) {
                // one g per mini-batch, shared by both phases
                std::vector<Vector> g = sample_g(obj.g_dist, arch, rng);
                first = first.with_perturbation(g);
                second = second.with_perturbation(std::move(g));
            }
            auto a = detail::run_phase(arch, params, spec, obj.inference, x, first);
            auto b = detail::run_phase(arch, params, spec, obj.inference, x, second);
            // bracketed minima differ by beta; scaled by 1/alpha for
            // learning-rate comparability across alpha
            result.loss = (a.objective - b.objective) * inv_batch / (beta * obj.alpha);
            detail::axpy_params(result.grad, potential_grad_theta(params, spec, a.state),
                                inv_batch / (beta * obj.alpha));
            detail::axpy_params(result.grad, potential_grad_theta(params, spec, b.state),
                                -inv_batch / (beta * obj.alpha));
            result.residual = std::max(a.residual, b.residual);
            break;
        }
        default: throw InvalidSpecError("unknown objective variant");
    }
    result.converged = result.residual < obj.inference.residual_tol;
    return result;
}

}  // namespace lifted
