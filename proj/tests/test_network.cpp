#include "lifted/network.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace lifted;

namespace {

Architecture small_relu() {
    Architecture arch;
    arch.layer_dims = {2, 3, 2};
    arch.activations = {Activation::Relu, Activation::Relu};
    return arch;
}

}  // namespace

TEST_CASE("zero weights and relu give all-zero activities", "[network]") {
    Architecture arch = small_relu();
    NetworkParams p = init_params(arch, 0);
    p.set_zero();
    Matrix x(4, 2);
    x.setRandom();
    ActivationState s = forward(arch, p, x);
    for (const auto& z : s.layers) REQUIRE(z.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("identity weights with linear activation reproduce the input", "[network]") {
    Architecture arch;
    arch.layer_dims = {2, 2};
    arch.activations = {Activation::Linear};
    NetworkParams p;
    p.weights.push_back(Matrix::Identity(2, 2));
    Matrix x(1, 2);
    x << 1.0, 2.0;
    ActivationState s = forward(arch, p, x);
    REQUIRE(s.top()(0, 0) == 1.0);
    REQUIRE(s.top()(0, 1) == 2.0);
}

TEST_CASE("negative pre-activation is clamped by relu", "[network]") {
    Architecture arch;
    arch.layer_dims = {2, 1};
    arch.activations = {Activation::Relu};
    NetworkParams p;
    Matrix w(1, 2);
    w << 1.0, -1.0;
    p.weights.push_back(w);
    Matrix x(1, 2);
    x << 0.3, 0.8;  // 0.3 - 0.8 < 0
    REQUIRE(forward(arch, p, x).top()(0, 0) == 0.0);
}

TEST_CASE("activation_apply matches its definition", "[network]") {
    Matrix a(1, 2);
    a << -3.0, 2.0;
    Matrix r = activation_apply(Activation::Relu, a);
    REQUIRE(r(0, 0) == 0.0);
    REQUIRE(r(0, 1) == 2.0);
    Matrix l = activation_apply(Activation::Linear, a);
    REQUIRE(l == a);
}

TEST_CASE("relu equals the nonnegative-orthant projection", "[network]") {
    Rng rng(11);
    for (int t = 0; t < 1000; ++t) {
        Matrix a(1, 5);
        for (int j = 0; j < 5; ++j) a(0, j) = rng.normal(2.0);
        Matrix z = activation_apply(Activation::Relu, a);
        for (int j = 0; j < 5; ++j) {
            // the projection minimizes (z - a)^2 over z >= 0 coordinate-wise
            double best = a(0, j) > 0.0 ? a(0, j) : 0.0;
            REQUIRE(z(0, j) == best);
        }
    }
}

TEST_CASE("forward is row-permutation equivariant", "[network]") {
    Architecture arch = small_relu();
    NetworkParams p = init_params(arch, 3);
    Matrix x(3, 2);
    x.setRandom();
    Matrix xp(3, 2);
    xp.row(0) = x.row(2);
    xp.row(1) = x.row(0);
    xp.row(2) = x.row(1);
    ActivationState s = forward(arch, p, x);
    ActivationState sp = forward(arch, p, xp);
    REQUIRE((s.top().row(2) - sp.top().row(0)).cwiseAbs().maxCoeff() == 0.0);
    REQUIRE((s.top().row(0) - sp.top().row(1)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("initialization is deterministic and bounded", "[network]") {
    Architecture arch = small_relu();
    NetworkParams a = init_params(arch, 9);
    NetworkParams b = init_params(arch, 9);
    for (size_t k = 0; k < a.weights.size(); ++k) REQUIRE(a.weights[k] == b.weights[k]);
    const double limit0 = std::sqrt(6.0 / arch.layer_dims[0]);
    REQUIRE(a.weights[0].cwiseAbs().maxCoeff() <= limit0);
    NetworkParams g = init_params(arch, 9, InitScheme::gaussian(0.0));
    REQUIRE(g.max_abs() == 0.0);
}

TEST_CASE("architecture validation rejects malformed specs", "[network]") {
    Architecture arch;
    arch.layer_dims = {3};
    REQUIRE_THROWS_AS(arch.validate(), InvalidSpecError);
    arch.layer_dims = {3, 2};
    REQUIRE_THROWS_AS(arch.validate(), InvalidSpecError);  // no activations
    arch.activations = {Activation::Relu};
    REQUIRE_NOTHROW(arch.validate());
    Architecture bad = arch;
    bad.layer_dims = {3, 0};
    REQUIRE_THROWS_AS(bad.validate(), InvalidSpecError);
}

TEST_CASE("dimension mismatches are reported", "[network]") {
    Architecture arch = small_relu();
    NetworkParams p = init_params(arch, 0);
    Matrix x(1, 5);
    x.setZero();
    REQUIRE_THROWS_AS(forward(arch, p, x), DimensionError);
}

TEST_CASE("biases enter every preactivation when enabled", "[network]") {
    Architecture arch = small_relu();
    arch.use_bias = true;
    NetworkParams p = init_params(arch, 1);
    p.set_zero();
    p.biases[0] << 1.0, -1.0, 2.0;
    p.biases[1] << 0.5, 0.0;
    Matrix x(1, 2);
    x.setZero();
    ActivationState s = forward(arch, p, x);
    REQUIRE(s.layers[0](0, 0) == 1.0);
    REQUIRE(s.layers[0](0, 1) == 0.0);  // clamped
    REQUIRE(s.layers[0](0, 2) == 2.0);
    REQUIRE(s.top()(0, 0) == 0.5);
}
