#include "test_helpers.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <sstream>

using namespace lifted;
using namespace testutil;

namespace {

NetworkParams scalar_params(double w) {
    NetworkParams p;
    p.weights.push_back(w * Matrix::Ones(1, 1));
    return p;
}

NetworkParams scalar_grad(double g) { return scalar_params(g); }

// tiny separable dataset: 5 one-dimensional clusters, one per class
DatasetSplit toy_data() {
    DatasetSplit data;
    const int n = 5, classes = 5;
    data.train_x = Matrix::Zero(n, 1);
    for (int i = 0; i < n; ++i) {
        data.train_x(i, 0) = static_cast<double>(i) - 2.0;
        data.train_y.push_back(i);
    }
    data.val_x = data.train_x;
    data.val_y = data.train_y;
    data.test_x = data.train_x;
    data.test_y = data.train_y;
    data.train_targets = encode_targets(data.train_y, classes);
    return data;
}

Architecture toy_arch() {
    Architecture arch;
    arch.layer_dims = {1, 16, 5};
    arch.activations = {Activation::Relu, Activation::Linear};
    // a bias-free net cannot separate collinear points: it maps x and 2x to
    // proportional logits, hence the same argmax
    arch.use_bias = true;
    return arch;
}

}  // namespace

TEST_CASE("adam first step moves by about the learning rate", "[trainer]") {
    TrainConfig tc;
    tc.lr = 0.01;
    NetworkParams p = scalar_params(1.0);
    AdamState adam;
    adam.reset(p);
    adam_step(adam, p, scalar_grad(1.0), tc);
    // bias-corrected first step: lr * g / (|g| + eps) ~= lr
    REQUIRE(p.weights[0](0, 0) == Catch::Approx(1.0 - tc.lr).epsilon(1e-6));

    // gradient sign decides direction
    NetworkParams q = scalar_params(1.0);
    adam.reset(q);
    adam_step(adam, q, scalar_grad(-2.5), tc);
    REQUIRE(q.weights[0](0, 0) == Catch::Approx(1.0 + tc.lr).epsilon(1e-6));
}

TEST_CASE("adam is a no-op for zero gradient and zero learning rate", "[trainer]") {
    TrainConfig tc;
    NetworkParams p = scalar_params(0.7);
    AdamState adam;
    adam.reset(p);
    adam_step(adam, p, scalar_grad(0.0), tc);
    REQUIRE(p.weights[0](0, 0) == 0.7);

    tc.lr = 0.0;
    NetworkParams q = scalar_params(0.7);
    adam.reset(q);
    for (int i = 0; i < 5; ++i) adam_step(adam, q, scalar_grad(3.0), tc);
    REQUIRE(q.weights[0](0, 0) == 0.7);
}

TEST_CASE("adam is deterministic", "[trainer]") {
    TrainConfig tc;
    tc.lr = 0.05;
    NetworkParams a = scalar_params(1.0), b = scalar_params(1.0);
    AdamState sa, sb;
    sa.reset(a);
    sb.reset(b);
    Rng rng(71);
    for (int i = 0; i < 50; ++i) {
        const double g = rng.normal();
        adam_step(sa, a, scalar_grad(g), tc);
        adam_step(sb, b, scalar_grad(g), tc);
    }
    REQUIRE(a.weights[0](0, 0) == b.weights[0](0, 0));
}

TEST_CASE("accuracy evaluation breaks ties toward the lowest class", "[trainer]") {
    Architecture arch;
    arch.layer_dims = {2, 3};
    arch.activations = {Activation::Linear};
    NetworkParams p = init_params(arch, 0);
    p.set_zero();  // all outputs equal: argmax is always class 0
    Matrix x(4, 2);
    x.setRandom();
    REQUIRE(evaluate_accuracy(arch, p, x, {0, 0, 1, 2}) == 0.5);

    Eigen::RowVectorXd row(3);
    row << 1.0, 1.0, 0.0;
    REQUIRE(argmax_row(row) == 0);
    row << 0.0, 2.0, 2.0;
    REQUIRE(argmax_row(row) == 1);
}

TEST_CASE("backprop training fits the toy problem", "[trainer]") {
    DatasetSplit data = toy_data();
    TrainConfig tc;
    tc.epochs = 400;
    tc.batch_size = 5;
    tc.lr = 0.01;  // the toy problem is tiny; the reference rate would crawl
    ObjectiveSpec obj;  // backprop
    auto [params, report] = train(toy_arch(), obj, tc, data);
    REQUIRE(report.best_val_accuracy == 1.0);
    REQUIRE(evaluate_accuracy(toy_arch(), params, data.train_x, data.train_y) == 1.0);
    REQUIRE(report.epochs.size() == 400);
}

TEST_CASE("training is deterministic in the seed", "[trainer]") {
    DatasetSplit data = toy_data();
    TrainConfig tc;
    tc.epochs = 5;
    tc.batch_size = 2;
    tc.lr = 0.01;
    tc.seed = 3;
    ObjectiveSpec obj;
    obj.variant = ObjectiveVariant::TargetedArovrG;
    obj.beta = 0.1;
    obj.alpha = 0.4;
    obj.g_dist = GDist::gaussian(0.25);
    auto [p1, r1] = train(toy_arch(), obj, tc, data);
    auto [p2, r2] = train(toy_arch(), obj, tc, data);
    REQUIRE(p1.weights[0] == p2.weights[0]);
    REQUIRE(r1.epochs.back().train_loss == r2.epochs.back().train_loss);
    tc.seed = 4;
    auto [p3, r3] = train(toy_arch(), obj, tc, data);
    REQUIRE(p1.weights[0] != p3.weights[0]);
}

TEST_CASE("adversarial training stalls at an interpolating pretrained point", "[trainer]") {
    DatasetSplit data = toy_data();
    // pretrain with backprop until the toy problem is interpolated, then
    // relabel with the network's own outputs so the training loss is exactly 0
    TrainConfig pre;
    pre.epochs = 400;
    pre.batch_size = 5;
    pre.lr = 0.01;
    ObjectiveSpec bp;
    auto [pretrained, prereport] = train(toy_arch(), bp, pre, data);
    REQUIRE(prereport.best_val_accuracy == 1.0);
    data.train_targets = forward(toy_arch(), pretrained, data.train_x).top();

    // the linearized adversarial gradient is exactly zero there, so training
    // cannot move the parameters
    ObjectiveSpec obj;
    obj.variant = ObjectiveVariant::Arovr;
    obj.beta = 0.25;
    obj.linearize_loss = true;
    TrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 5;
    Rng check(0);
    EvalResult at_start = evaluate_and_grad(toy_arch(), obj, pretrained, data.train_x,
                                            data.train_targets, check);
    REQUIRE(at_start.grad.max_abs() == 0.0);
    NetworkParams moved = pretrained;
    AdamState adam;
    adam.reset(moved);
    for (int e = 0; e < 10; ++e) {
        Rng rng(static_cast<std::uint64_t>(e));
        EvalResult res =
            evaluate_and_grad(toy_arch(), obj, moved, data.train_x, data.train_targets, rng);
        adam_step(adam, moved, res.grad, tc);
    }
    REQUIRE(detail::flat_norm(detail::param_diff(moved, pretrained)) == 0.0);
}

TEST_CASE("early stopping halts after the configured patience", "[trainer]") {
    DatasetSplit data = toy_data();
    TrainConfig tc;
    tc.epochs = 200;
    tc.batch_size = 5;
    tc.lr = 0.0;  // accuracy can never improve after epoch 0
    tc.early_stop_patience = 7;
    ObjectiveSpec obj;
    auto [params, report] = train(toy_arch(), obj, tc, data);
    REQUIRE(report.stopped_early);
    REQUIRE(report.epochs.size() == 8);  // best at 0, then 7 flat epochs
}

TEST_CASE("pretraining epochs are recorded and tagged", "[trainer]") {
    DatasetSplit data = toy_data();
    TrainConfig tc;
    tc.epochs = 3;
    tc.pretrain_epochs = 2;
    tc.batch_size = 5;
    tc.lr = 0.01;
    ObjectiveSpec obj;
    obj.variant = ObjectiveVariant::Arovr;
    obj.beta = 0.1;
    auto [params, report] = train(toy_arch(), obj, tc, data);
    REQUIRE(report.epochs.size() == 5);
    REQUIRE(report.epochs[0].pretrain_phase);
    REQUIRE(report.epochs[1].pretrain_phase);
    REQUIRE_FALSE(report.epochs[2].pretrain_phase);
    REQUIRE(report.pretrain_epochs == 2);
    REQUIRE(report.adam_reset_at_handoff);
}

TEST_CASE("metrics CSV has the documented schema", "[trainer]") {
    TrainReport report;
    EpochRecord rec;
    rec.epoch = 0;
    rec.train_loss = 0.5;
    rec.val_accuracy = 0.75;
    report.epochs.push_back(rec);
    std::ostringstream os;
    write_metrics_csv(os, report);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    REQUIRE(line == "epoch,split,metric,value");
    int rows = 0;
    bool saw_val = false;
    while (std::getline(is, line)) {
        ++rows;
        REQUIRE(std::count(line.begin(), line.end(), ',') == 3);
        if (line == "0,val,accuracy,0.75") saw_val = true;
    }
    REQUIRE(rows == 9);
    REQUIRE(saw_val);
}

TEST_CASE("checkpoints round-trip parameters exactly", "[trainer]") {
    namespace fs = std::filesystem;
    Rng rng(72);
    for (bool bias : {false, true}) {
        Instance inst = random_instance(rng, true);
        inst.arch.use_bias = bias;
        inst.params = init_params(inst.arch, rng.next());
        fs::path p = fs::temp_directory_path() / "lifted_ckpt_test.bin";
        save_checkpoint(p.string(), inst.arch, inst.params);
        auto [arch2, params2] = load_checkpoint(p.string());
        REQUIRE(arch2.layer_dims == inst.arch.layer_dims);
        REQUIRE(arch2.activations == inst.arch.activations);
        REQUIRE(arch2.use_bias == bias);
        for (size_t k = 0; k < inst.params.weights.size(); ++k)
            REQUIRE(params2.weights[k] == inst.params.weights[k]);
        for (size_t k = 0; k < inst.params.biases.size(); ++k)
            REQUIRE(params2.biases[k] == inst.params.biases[k]);
        fs::remove(p);
    }
    REQUIRE_THROWS(load_checkpoint("/nonexistent/checkpoint.bin"));
}

TEST_CASE("train config validation", "[trainer]") {
    TrainConfig tc;
    tc.lr = -1.0;
    REQUIRE_THROWS_AS(tc.validate(), InvalidSpecError);
    tc.lr = 0.1;
    tc.batch_size = 0;
    REQUIRE_THROWS_AS(tc.validate(), InvalidSpecError);
    tc.batch_size = 10;
    tc.epochs = -1;
    REQUIRE_THROWS_AS(tc.validate(), InvalidSpecError);
}
