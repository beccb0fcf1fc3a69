#pragma once

#include "lifted/core.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace lifted {

enum class Activation { Linear, Relu };

// Layered feed-forward architecture: dims (d_0, ..., d_L) and one activation
// per layer k = 1..L. Biases are an opt-in extension, default off.
struct Architecture {
    std::vector<int> layer_dims;
    std::vector<Activation> activations;
    bool use_bias = false;

    int depth() const { return static_cast<int>(activations.size()); }
    int input_dim() const { return layer_dims.front(); }
    int output_dim() const { return layer_dims.back(); }

    void validate() const {
        if (layer_dims.size() < 2)
            throw InvalidSpecError("architecture needs at least one layer");
        if (activations.size() + 1 != layer_dims.size())
            throw InvalidSpecError("activation count must equal layer count");
        for (int d : layer_dims)
            if (d < 1) throw InvalidSpecError("layer dims must be >= 1");
    }
};

// Weight matrices W_{k-1} with shape d_k x d_{k-1}; gradients reuse this
// container shape-for-shape.
struct NetworkParams {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;  // empty unless use_bias

    bool has_bias() const { return !biases.empty(); }

    void set_zero() {
        for (auto& w : weights) w.setZero();
        for (auto& b : biases) b.setZero();
    }

    double max_abs() const {
        double m = 0.0;
        for (const auto& w : weights) m = std::max(m, w.cwiseAbs().maxCoeff());
        for (const auto& b : biases)
            if (b.size() > 0) m = std::max(m, b.cwiseAbs().maxCoeff());
        return m;
    }
};

// Per-layer activities z_k (batch x d_k) plus the clamped input z_0 = x.
struct ActivationState {
    Matrix input;
    std::vector<Matrix> layers;

    int batch() const { return static_cast<int>(input.rows()); }
    const Matrix& top() const { return layers.back(); }
};

inline Matrix activation_apply(Activation kind, const Matrix& a) {
    switch (kind) {
        case Activation::Linear: return a;
        case Activation::Relu: return a.cwiseMax(0.0);
    }
    throw InvalidSpecError("unknown activation kind");
}

struct InitScheme {
    enum class Kind { KaimingUniform, Gaussian };
    Kind kind = Kind::KaimingUniform;
    double sigma = 0.0;  // Gaussian only

    static InitScheme kaiming_uniform() { return {Kind::KaimingUniform, 0.0}; }
    static InitScheme gaussian(double sigma) { return {Kind::Gaussian, sigma}; }
};

inline NetworkParams init_params(const Architecture& arch, std::uint64_t seed,
                                 InitScheme scheme = InitScheme::kaiming_uniform()) {
    arch.validate();
    Rng rng(seed);
    NetworkParams params;
    const int L = arch.depth();
    params.weights.reserve(L);
    for (int k = 0; k < L; ++k) {
        const int fan_in = arch.layer_dims[k];
        const int fan_out = arch.layer_dims[k + 1];
        Matrix w(fan_out, fan_in);
        if (scheme.kind == InitScheme::Kind::KaimingUniform) {
            const double limit = std::sqrt(6.0 / fan_in);
            for (int i = 0; i < fan_out; ++i)
                for (int j = 0; j < fan_in; ++j) w(i, j) = rng.uniform(-limit, limit);
        } else {
            for (int i = 0; i < fan_out; ++i)
                for (int j = 0; j < fan_in; ++j) w(i, j) = rng.normal(scheme.sigma);
        }
        params.weights.push_back(std::move(w));
    }
    if (arch.use_bias) {
        for (int k = 0; k < L; ++k) params.biases.emplace_back(Vector::Zero(arch.layer_dims[k + 1]));
    }
    return params;
}

// Pre-activation a_k = z_{k-1} W_{k-1}^T (+ b_{k-1}) for a batch of rows.
inline Matrix preactivation(const NetworkParams& params, int k, const Matrix& z_prev) {
    const Matrix& w = params.weights[static_cast<size_t>(k)];
    if (z_prev.cols() != w.cols())
        throw DimensionError("preactivation: input has " + std::to_string(z_prev.cols()) +
                             " columns, weight expects " + std::to_string(w.cols()));
    Matrix a = z_prev * w.transpose();
    if (params.has_bias()) a.rowwise() += params.biases[static_cast<size_t>(k)].transpose();
    return a;
}

inline ActivationState forward(const Architecture& arch, const NetworkParams& params,
                               const Matrix& x) {
    if (x.cols() != arch.input_dim())
        throw DimensionError("forward: expected " + std::to_string(arch.input_dim()) +
                             " input columns, got " + std::to_string(x.cols()));
    ActivationState state;
    state.input = x;
    state.layers.reserve(arch.activations.size());
    const Matrix* prev = &state.input;
    for (int k = 0; k < arch.depth(); ++k) {
        state.layers.push_back(activation_apply(arch.activations[static_cast<size_t>(k)],
                                                preactivation(params, k, *prev)));
        prev = &state.layers.back();
    }
    return state;
}

}  // namespace lifted
