#pragma once

// Shared helpers for the unit tests: random instances and finite differences.

#include "lifted/lifted.hpp"

#include <functional>

namespace testutil {

using namespace lifted;

inline Matrix random_matrix(Rng& rng, int r, int c, double sigma = 1.0) {
    Matrix m(r, c);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) m(i, j) = rng.normal(sigma);
    return m;
}

struct Instance {
    Architecture arch;
    NetworkParams params;
    PotentialSpec spec;
    Matrix x, y;
};

/// Random small net. ReLU layers get large-magnitude weights/inputs so that
/// pre-activations land away from the kink with high probability.
inline Instance random_instance(Rng& rng, bool relu, bool unit_gamma = true, int batch = 2) {
    Instance inst;
    const int depth = 2 + static_cast<int>(rng.integer(2));
    inst.arch.layer_dims.push_back(2 + static_cast<int>(rng.integer(3)));
    for (int k = 0; k < depth; ++k) {
        inst.arch.layer_dims.push_back(2 + static_cast<int>(rng.integer(3)));
        inst.arch.activations.push_back(relu && rng.uniform() < 0.7 ? Activation::Relu
                                                                    : Activation::Linear);
    }
    inst.params = init_params(inst.arch, rng.next(), InitScheme::gaussian(0.8));
    inst.spec = PotentialSpec::for_architecture(inst.arch);
    if (!unit_gamma) {
        Vector g(depth);
        for (int k = 0; k < depth; ++k) g[k] = rng.uniform(0.5, 2.0);
        inst.spec = inst.spec.with_gamma(g);
    }
    inst.x = random_matrix(rng, batch, inst.arch.input_dim());
    inst.y = random_matrix(rng, batch, inst.arch.output_dim());
    return inst;
}

/// Smallest |pre-activation| across all layers of a state trajectory; used to
/// keep finite differences away from the ReLU kink.
inline double kink_margin(const Instance& inst, const ActivationState& state) {
    double margin = 1e30;
    const Matrix* prev = &state.input;
    for (int k = 0; k < inst.arch.depth(); ++k) {
        Matrix a = preactivation(inst.params, k, *prev);
        if (inst.arch.activations[static_cast<size_t>(k)] == Activation::Relu)
            margin = std::min(margin, a.cwiseAbs().minCoeff());
        prev = &state.layers[static_cast<size_t>(k)];
    }
    return margin;
}

/// Central finite differences of a scalar function of the parameters.
inline NetworkParams fd_grad_theta(const NetworkParams& params,
                                   const std::function<double(const NetworkParams&)>& f,
                                   double h = 1e-5) {
    NetworkParams grad = params;
    grad.set_zero();
    NetworkParams probe = params;
    for (size_t k = 0; k < params.weights.size(); ++k)
        for (int i = 0; i < params.weights[k].rows(); ++i)
            for (int j = 0; j < params.weights[k].cols(); ++j) {
                probe.weights[k](i, j) = params.weights[k](i, j) + h;
                const double fp = f(probe);
                probe.weights[k](i, j) = params.weights[k](i, j) - h;
                const double fm = f(probe);
                probe.weights[k](i, j) = params.weights[k](i, j);
                grad.weights[k](i, j) = (fp - fm) / (2.0 * h);
            }
    for (size_t k = 0; k < params.biases.size(); ++k)
        for (int i = 0; i < params.biases[k].size(); ++i) {
            probe.biases[k][i] = params.biases[k][i] + h;
            const double fp = f(probe);
            probe.biases[k][i] = params.biases[k][i] - h;
            const double fm = f(probe);
            probe.biases[k][i] = params.biases[k][i];
            grad.biases[k][i] = (fp - fm) / (2.0 * h);
        }
    return grad;
}

inline double max_rel_err(const NetworkParams& a, const NetworkParams& b, double floor = 1e-6) {
    double err = 0.0, scale = floor;
    for (size_t k = 0; k < a.weights.size(); ++k) {
        err = std::max(err, (a.weights[k] - b.weights[k]).cwiseAbs().maxCoeff());
        scale = std::max(scale, b.weights[k].cwiseAbs().maxCoeff());
    }
    for (size_t k = 0; k < a.biases.size(); ++k) {
        if (a.biases[k].size() == 0) continue;
        err = std::max(err, (a.biases[k] - b.biases[k]).cwiseAbs().maxCoeff());
        scale = std::max(scale, b.biases[k].cwiseAbs().maxCoeff());
    }
    return err / scale;
}

}  // namespace testutil
