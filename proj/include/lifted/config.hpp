#pragma once

#include "lifted/objectives.hpp"
#include "lifted/trainer.hpp"

#include <json.hpp>

#include <cstdlib>
#include <string>
#include <vector>

namespace lifted {

using Json = nlohmann::json;

inline std::string default_data_dir() {
    if (const char* env = std::getenv("LIFTED_DATA_DIR")) return env;
    return "data/mnist";
}

struct ExperimentConfig {
    std::string data_dir = default_data_dir();
    std::string output_dir = "out";
    int n_train = 5000;
    int n_val = 10000;
    double target_scale = 1.0;
    std::uint64_t split_seed = 0;

    Architecture arch;
    ObjectiveSpec objective;
    TrainConfig train;
    std::vector<std::uint64_t> seeds = {0, 1, 2};

    ExperimentConfig() {
        // ReLU hidden layers, linear output: a ReLU output with the Euclidean
        // loss permanently zeroes the gradient of samples whose true-class
        // pre-activation goes negative.
        arch.layer_dims = {784, 256, 256, 10};
        arch.activations = {Activation::Relu, Activation::Relu, Activation::Linear};
    }

    void validate() const {
        arch.validate();
        objective.validate();
        train.validate();
        if (n_train < 1 || n_val < 0) throw InvalidSpecError("n_train/n_val out of range");
        if (seeds.empty()) throw InvalidSpecError("at least one seed required");
        if (data_dir.empty()) throw InvalidSpecError("data_dir must be set");
    }
};

namespace detail {

inline ObjectiveVariant variant_from_string(const std::string& s) {
    if (s == "backprop") return ObjectiveVariant::Backprop;
    if (s == "rovr") return ObjectiveVariant::Rovr;
    if (s == "arovr") return ObjectiveVariant::Arovr;
    if (s == "targeted_rovr") return ObjectiveVariant::TargetedRovr;
    if (s == "targeted_arovr") return ObjectiveVariant::TargetedArovr;
    if (s == "targeted_arovr_g") return ObjectiveVariant::TargetedArovrG;
    throw InvalidSpecError("unknown objective variant: " + s);
}

inline std::string variant_to_string(ObjectiveVariant v) {
    switch (v) {
        case ObjectiveVariant::Backprop: return "backprop";
        case ObjectiveVariant::Rovr: return "rovr";
        case ObjectiveVariant::Arovr: return "arovr";
        case ObjectiveVariant::TargetedRovr: return "targeted_rovr";
        case ObjectiveVariant::TargetedArovr: return "targeted_arovr";
        case ObjectiveVariant::TargetedArovrG: return "targeted_arovr_g";
    }
    throw InvalidSpecError("unknown objective variant enum");
}

}  // namespace detail

inline ExperimentConfig parse_config(const Json& j) {
    ExperimentConfig cfg;
    cfg.data_dir = j.value("data_dir", cfg.data_dir);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.n_train = j.value("n_train", cfg.n_train);
    cfg.n_val = j.value("n_val", cfg.n_val);
    cfg.target_scale = j.value("target_scale", cfg.target_scale);
    cfg.split_seed = j.value("split_seed", cfg.split_seed);
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();

    if (j.contains("arch")) {
        const Json& a = j.at("arch");
        if (a.contains("layer_dims")) cfg.arch.layer_dims = a.at("layer_dims").get<std::vector<int>>();
        if (a.contains("activations")) {
            cfg.arch.activations.clear();
            for (const auto& s : a.at("activations")) {
                const std::string name = s.get<std::string>();
                if (name == "relu") cfg.arch.activations.push_back(Activation::Relu);
                else if (name == "linear") cfg.arch.activations.push_back(Activation::Linear);
                else throw InvalidSpecError("unknown activation: " + name);
            }
        } else {
            cfg.arch.activations.assign(cfg.arch.layer_dims.size() - 1, Activation::Relu);
            cfg.arch.activations.back() = Activation::Linear;
        }
        cfg.arch.use_bias = a.value("use_bias", cfg.arch.use_bias);
    }

    if (j.contains("objective")) {
        const Json& o = j.at("objective");
        cfg.objective.variant = detail::variant_from_string(o.value("variant", "backprop"));
        cfg.objective.beta = o.value("beta", cfg.objective.beta);
        cfg.objective.alpha = o.value("alpha", cfg.objective.alpha);
        cfg.objective.linearize_loss = o.value("linearize_loss", false);
        cfg.objective.allow_unsafe_alpha = o.value("allow_unsafe_alpha", false);
        if (o.contains("gamma")) {
            const auto g = o.at("gamma").get<std::vector<double>>();
            cfg.objective.gamma = Eigen::Map<const Vector>(g.data(), static_cast<long>(g.size()));
        }
        if (o.contains("g_dist")) {
            const Json& gd = o.at("g_dist");
            const std::string kind = gd.value("kind", "none");
            if (kind == "none") cfg.objective.g_dist = GDist::none();
            else if (kind == "gaussian") cfg.objective.g_dist = GDist::gaussian(gd.value("sigma", 0.25));
            else if (kind == "dropout_like")
                cfg.objective.g_dist = GDist::dropout_like(gd.value("p", 0.5), gd.value("magnitude", 1.0));
            else throw InvalidSpecError("unknown g_dist kind: " + kind);
        }
        if (o.contains("sweeps")) cfg.objective.inference.sweeps = o.at("sweeps").get<int>();
    }

    if (j.contains("train")) {
        const Json& t = j.at("train");
        cfg.train.epochs = t.value("epochs", cfg.train.epochs);
        cfg.train.batch_size = t.value("batch_size", cfg.train.batch_size);
        cfg.train.lr = t.value("lr", cfg.train.lr);
        cfg.train.pretrain_epochs = t.value("pretrain_epochs", cfg.train.pretrain_epochs);
        cfg.train.early_stop_patience = t.value("early_stop_patience", cfg.train.early_stop_patience);
    }
    cfg.validate();
    return cfg;
}

/// Fully-resolved echo of the configuration, suitable for reruns.
inline Json config_to_json(const ExperimentConfig& cfg) {
    Json j;
    j["data_dir"] = cfg.data_dir;
    j["output_dir"] = cfg.output_dir;
    j["n_train"] = cfg.n_train;
    j["n_val"] = cfg.n_val;
    j["target_scale"] = cfg.target_scale;
    j["split_seed"] = cfg.split_seed;
    j["seeds"] = cfg.seeds;
    Json a;
    a["layer_dims"] = cfg.arch.layer_dims;
    std::vector<std::string> acts;
    for (Activation act : cfg.arch.activations)
        acts.push_back(act == Activation::Relu ? "relu" : "linear");
    a["activations"] = acts;
    a["use_bias"] = cfg.arch.use_bias;
    j["arch"] = a;
    Json o;
    o["variant"] = detail::variant_to_string(cfg.objective.variant);
    o["beta"] = cfg.objective.beta;
    o["alpha"] = cfg.objective.alpha;
    o["linearize_loss"] = cfg.objective.linearize_loss;
    o["allow_unsafe_alpha"] = cfg.objective.allow_unsafe_alpha;
    if (cfg.objective.gamma.size() > 0)
        o["gamma"] = std::vector<double>(cfg.objective.gamma.data(),
                                         cfg.objective.gamma.data() + cfg.objective.gamma.size());
    Json gd;
    switch (cfg.objective.g_dist.kind) {
        case GDist::Kind::None: gd["kind"] = "none"; break;
        case GDist::Kind::Gaussian:
            gd["kind"] = "gaussian";
            gd["sigma"] = cfg.objective.g_dist.sigma;
            break;
        case GDist::Kind::DropoutLike:
            gd["kind"] = "dropout_like";
            gd["p"] = cfg.objective.g_dist.p;
            gd["magnitude"] = cfg.objective.g_dist.magnitude;
            break;
    }
    o["g_dist"] = gd;
    o["sweeps"] = cfg.objective.inference.sweeps;
    j["objective"] = o;
    Json t;
    t["epochs"] = cfg.train.epochs;
    t["batch_size"] = cfg.train.batch_size;
    t["lr"] = cfg.train.lr;
    t["pretrain_epochs"] = cfg.train.pretrain_epochs;
    t["early_stop_patience"] = cfg.train.early_stop_patience;
    j["train"] = t;
    return j;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config: " + path);
    Json j = Json::parse(in);
    return parse_config(j);
}

}  // namespace lifted
