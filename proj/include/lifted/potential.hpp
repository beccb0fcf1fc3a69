#pragma once

#include "lifted/network.hpp"

#include <limits>

namespace lifted {

// Convex generator per layer. LinearG: G(z) = ||z||^2/2 on all of R^d.
// ReluG: G(z) = ||z||^2/2 + indicator(z >= 0). The induced activation
// f = grad G* is the identity resp. the projection onto the nonnegative
// orthant, so the divergence D(z||a) = G(z) - z.a + G*(a) vanishes exactly
// when z = f(a).
enum class Generator { LinearG, ReluG };

inline Activation generator_activation(Generator g) {
    return g == Generator::LinearG ? Activation::Linear : Activation::Relu;
}

inline Generator generator_for(Activation a) {
    return a == Activation::Linear ? Generator::LinearG : Generator::ReluG;
}

// Per-layer generators plus the reweighting vector gamma (> 0). gamma = 1
// recovers the plain network potential; other values rescale how strongly
// each layer's divergence term weighs in, without moving the minimizer.
struct PotentialSpec {
    std::vector<Generator> generators;
    Vector gamma;

    static PotentialSpec for_architecture(const Architecture& arch) {
        PotentialSpec spec;
        spec.generators.reserve(arch.activations.size());
        for (Activation a : arch.activations) spec.generators.push_back(generator_for(a));
        spec.gamma = Vector::Ones(arch.depth());
        return spec;
    }

    PotentialSpec with_gamma(const Vector& g) const {
        PotentialSpec spec = *this;
        spec.gamma = g;
        spec.validate();
        return spec;
    }

    int depth() const { return static_cast<int>(generators.size()); }

    void validate() const {
        if (gamma.size() != depth()) throw InvalidSpecError("gamma must have one entry per layer");
        for (int k = 0; k < gamma.size(); ++k)
            if (!(gamma[k] > 0.0)) throw InvalidSpecError("gamma entries must be positive");
    }
};

namespace detail {

// Per-coordinate divergence in a form that is exactly zero at z = f(a):
//   LinearG:          (z - a)^2 / 2
//   ReluG, a >  0:    (z - a)^2 / 2
//   ReluG, a <= 0:    z^2/2 - z*a           (>= 0 for z >= 0)
// Algebraically identical to G(z) - z*a + G*(a) on the feasible set.
inline double fy_coord(Generator kind, double z, double a) {
    if (kind == Generator::ReluG) {
        if (z < 0.0) return std::numeric_limits<double>::infinity();
        if (a <= 0.0) return 0.5 * z * z - z * a;
    }
    double r = z - a;
    return 0.5 * r * r;
}

}  // namespace detail

/// Fenchel-Young divergence D(z||a); +infinity signals a domain violation.
inline double fy_divergence(Generator kind, const Vector& z, const Vector& a) {
    if (z.size() != a.size()) throw DimensionError("fy_divergence: size mismatch");
    double total = 0.0;
    for (int i = 0; i < z.size(); ++i) {
        total += detail::fy_coord(kind, z[i], a[i]);
        if (std::isinf(total)) return total;
    }
    return total;
}

// Batch variant, summed over rows and coordinates.
inline double fy_divergence_batch(Generator kind, const Matrix& z, const Matrix& a) {
    if (z.rows() != a.rows() || z.cols() != a.cols())
        throw DimensionError("fy_divergence_batch: shape mismatch");
    double total = 0.0;
    for (int j = 0; j < z.cols(); ++j)
        for (int i = 0; i < z.rows(); ++i) {
            total += detail::fy_coord(kind, z(i, j), a(i, j));
            if (std::isinf(total)) return total;
        }
    return total;
}

/// Network potential sum_k gamma_k D_k(z_k || a_k), batch-summed.
inline double potential_value(const NetworkParams& params, const PotentialSpec& spec,
                              const ActivationState& state) {
    const int L = spec.depth();
    if (static_cast<int>(state.layers.size()) != L)
        throw DimensionError("potential_value: state depth mismatch");
    double total = 0.0;
    const Matrix* prev = &state.input;
    for (int k = 0; k < L; ++k) {
        Matrix a = preactivation(params, k, *prev);
        double d = fy_divergence_batch(spec.generators[static_cast<size_t>(k)],
                                       state.layers[static_cast<size_t>(k)], a);
        if (std::isinf(d)) return d;
        total += spec.gamma[k] * d;
        prev = &state.layers[static_cast<size_t>(k)];
    }
    return total;
}

/// Gradient of the potential w.r.t. z_k (interior sense for ReluG; layer
/// index k is 1-based to match z_1..z_L).
inline Matrix potential_grad_z(const NetworkParams& params, const PotentialSpec& spec,
                               const ActivationState& state, int k) {
    const int L = spec.depth();
    if (k < 1 || k > L) throw DimensionError("potential_grad_z: layer index out of range");
    const Matrix& z_k = state.layers[static_cast<size_t>(k - 1)];
    const Matrix& z_prev = (k == 1) ? state.input : state.layers[static_cast<size_t>(k - 2)];
    Matrix grad = spec.gamma[k - 1] * (z_k - preactivation(params, k - 1, z_prev));
    if (k < L) {
        // only the immediately upstream divergence touches z_k
        Matrix a_up = preactivation(params, k, z_k);
        Matrix err = activation_apply(generator_activation(spec.generators[static_cast<size_t>(k)]), a_up) -
                     state.layers[static_cast<size_t>(k)];
        grad += spec.gamma[k] * (err * params.weights[static_cast<size_t>(k)]);
    }
    return grad;
}

/// Gradient of the potential w.r.t. all weights (and biases), batch-summed:
/// dU/dW_{k-1} = gamma_k (f_k(a_k) - z_k)^T z_{k-1}.
inline NetworkParams potential_grad_theta(const NetworkParams& params, const PotentialSpec& spec,
                                          const ActivationState& state) {
    const int L = spec.depth();
    NetworkParams grad;
    grad.weights.reserve(static_cast<size_t>(L));
    const Matrix* prev = &state.input;
    for (int k = 0; k < L; ++k) {
        Matrix a = preactivation(params, k, *prev);
        Matrix err = activation_apply(generator_activation(spec.generators[static_cast<size_t>(k)]), a) -
                     state.layers[static_cast<size_t>(k)];
        grad.weights.push_back(spec.gamma[k] * (err.transpose() * *prev));
        if (params.has_bias()) grad.biases.push_back(spec.gamma[k] * err.colwise().sum().transpose());
        prev = &state.layers[static_cast<size_t>(k)];
    }
    return grad;
}

}  // namespace lifted
