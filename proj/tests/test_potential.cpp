#include "test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace lifted;
using namespace testutil;

TEST_CASE("per-coordinate divergence has the expected closed-form values", "[potential]") {
    Vector z(1), a(1);

    z << 2.0; a << 1.0;  // interior: (z-a)^2/2
    REQUIRE(fy_divergence(Generator::ReluG, z, a) == 0.5);
    REQUIRE(fy_divergence(Generator::LinearG, z, a) == 0.5);

    z << -1.0; a << 0.0;  // outside the nonnegative orthant
    REQUIRE(std::isinf(fy_divergence(Generator::ReluG, z, a)));
    REQUIRE(fy_divergence(Generator::LinearG, z, a) == 0.5);

    z << 1.0; a << -2.0;  // clamped branch: z^2/2 - z*a
    REQUIRE(fy_divergence(Generator::ReluG, z, a) == 0.5 + 2.0);
}

TEST_CASE("divergence vanishes exactly at the forward activation", "[potential]") {
    Rng rng(21);
    for (int t = 0; t < 200; ++t) {
        double a = rng.normal(3.0);
        Vector av(1), zv(1);
        av << a;
        zv << std::max(a, 0.0);
        REQUIRE(fy_divergence(Generator::ReluG, zv, av) == 0.0);
        zv << a;
        REQUIRE(fy_divergence(Generator::LinearG, zv, av) == 0.0);
    }
}

TEST_CASE("divergence is nonnegative on its domain", "[potential]") {
    Rng rng(22);
    for (int t = 0; t < 100000; ++t) {
        Vector z(1), a(1);
        a << rng.normal(2.0);
        z << rng.normal(2.0);
        REQUIRE(fy_divergence(Generator::LinearG, z, a) >= 0.0);
        z[0] = std::abs(z[0]);
        REQUIRE(fy_divergence(Generator::ReluG, z, a) >= 0.0);
    }
}

TEST_CASE("potential is zero at the forward trajectory", "[potential]") {
    Rng rng(23);
    for (int t = 0; t < 50; ++t) {
        Instance inst = random_instance(rng, true, /*unit_gamma=*/false);
        ActivationState s = forward(inst.arch, inst.params, inst.x);
        REQUIRE(potential_value(inst.params, inst.spec, s) == 0.0);
    }
}

TEST_CASE("single-layer potential matches the quadratic by hand", "[potential]") {
    Architecture arch;
    arch.layer_dims = {1, 1};
    arch.activations = {Activation::Linear};
    NetworkParams p;
    p.weights.push_back(Matrix::Ones(1, 1));
    PotentialSpec spec = PotentialSpec::for_architecture(arch);
    ActivationState s;
    s.input = Matrix::Ones(1, 1);
    s.layers.push_back(3.0 * Matrix::Ones(1, 1));
    REQUIRE(potential_value(p, spec, s) == 2.0);  // (3-1)^2/2
    spec = spec.with_gamma(5.0 * Vector::Ones(1));
    REQUIRE(potential_value(p, spec, s) == 10.0);
}

TEST_CASE("potential is linear in gamma", "[potential]") {
    Rng rng(24);
    Instance inst = random_instance(rng, false);
    ActivationState s = forward(inst.arch, inst.params, inst.x);
    // perturb the state so the potential is nonzero
    for (auto& z : s.layers) z.array() += 0.3;
    const double base = potential_value(inst.params, inst.spec, s);
    REQUIRE(base > 0.0);
    Vector g = inst.spec.gamma;
    PotentialSpec scaled = inst.spec.with_gamma(2.5 * g);
    REQUIRE(potential_value(inst.params, scaled, s) == Catch::Approx(2.5 * base).epsilon(1e-12));
}

TEST_CASE("activity gradient matches finite differences", "[potential]") {
    Rng rng(25);
    int done = 0;
    for (int t = 0; t < 200 && done < 40; ++t) {
        Instance inst = random_instance(rng, true, /*unit_gamma=*/false, /*batch=*/1);
        ActivationState s = forward(inst.arch, inst.params, inst.x);
        // move strictly inside the ReluG domain, away from 0 and the kink
        bool feasible = true;
        for (size_t k = 0; k < s.layers.size(); ++k) {
            s.layers[k].array() += 0.5 + 0.1 * static_cast<double>(k);
            if (s.layers[k].minCoeff() < 0.2) feasible = false;
        }
        if (!feasible || kink_margin(inst, s) < 0.1) continue;
        ++done;
        const double h = 1e-6;
        for (int k = 1; k <= inst.arch.depth(); ++k) {
            Matrix grad = potential_grad_z(inst.params, inst.spec, s, k);
            Matrix& zk = s.layers[static_cast<size_t>(k - 1)];
            for (int j = 0; j < zk.cols(); ++j) {
                const double save = zk(0, j);
                zk(0, j) = save + h;
                const double fp = potential_value(inst.params, inst.spec, s);
                zk(0, j) = save - h;
                const double fm = potential_value(inst.params, inst.spec, s);
                zk(0, j) = save;
                const double fd = (fp - fm) / (2.0 * h);
                REQUIRE(grad(0, j) == Catch::Approx(fd).margin(1e-5));
            }
        }
    }
    REQUIRE(done >= 40);
}

TEST_CASE("parameter gradient matches finite differences", "[potential]") {
    Rng rng(26);
    int done = 0;
    for (int t = 0; t < 200 && done < 30; ++t) {
        Instance inst = random_instance(rng, true, /*unit_gamma=*/false);
        inst.arch.use_bias = (t % 2 == 0);
        inst.params = init_params(inst.arch, rng.next(), InitScheme::gaussian(0.8));
        ActivationState s = forward(inst.arch, inst.params, inst.x);
        for (auto& z : s.layers) z.array() += 0.4;
        if (kink_margin(inst, s) < 0.1) continue;
        ++done;
        NetworkParams analytic = potential_grad_theta(inst.params, inst.spec, s);
        NetworkParams fd = fd_grad_theta(inst.params, [&](const NetworkParams& p) {
            return potential_value(p, inst.spec, s);
        });
        REQUIRE(max_rel_err(analytic, fd) < 1e-5);
    }
    REQUIRE(done >= 30);
}

TEST_CASE("top-layer activity gradient is gamma (z - a)", "[potential]") {
    Rng rng(27);
    Instance inst = random_instance(rng, false, /*unit_gamma=*/false);
    ActivationState s = forward(inst.arch, inst.params, inst.x);
    const int L = inst.arch.depth();
    Matrix& top = s.layers.back();
    top.array() += 1.3;
    const Matrix& prev = (L == 1) ? s.input : s.layers[static_cast<size_t>(L - 2)];
    Matrix a = preactivation(inst.params, L - 1, prev);
    Matrix expected = inst.spec.gamma[L - 1] * (top - a);
    Matrix grad = potential_grad_z(inst.params, inst.spec, s, L);
    REQUIRE((grad - expected).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("potential spec validation rejects bad gamma", "[potential]") {
    Architecture arch;
    arch.layer_dims = {2, 2};
    arch.activations = {Activation::Linear};
    PotentialSpec spec = PotentialSpec::for_architecture(arch);
    REQUIRE_THROWS_AS(spec.with_gamma(Vector::Zero(1)), InvalidSpecError);
    Vector two(2);
    two << 1.0, 1.0;
    REQUIRE_THROWS_AS(spec.with_gamma(two), InvalidSpecError);
}
