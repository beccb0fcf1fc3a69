#pragma once

#include "lifted/data.hpp"
#include "lifted/diagnostics.hpp"
#include "lifted/objectives.hpp"

#include <chrono>
#include <fstream>
#include <numeric>
#include <ostream>

namespace lifted {

struct TrainConfig {
    int epochs = 50;
    int batch_size = 100;
    double lr = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int pretrain_epochs = 0;       // backprop warm-up before the main objective
    int early_stop_patience = 0;   // 0 disables early stopping
    std::uint64_t seed = 0;

    void validate() const {
        if (!(lr >= 0.0)) throw InvalidSpecError("lr must be >= 0");
        if (batch_size < 1) throw InvalidSpecError("batch_size must be >= 1");
        if (epochs < 0 || pretrain_epochs < 0)
            throw InvalidSpecError("epoch counts must be >= 0");
    }
};

struct AdamState {
    std::vector<Matrix> m, v;
    std::vector<Vector> mb, vb;
    long step = 0;

    void reset(const NetworkParams& params) {
        m.clear(); v.clear(); mb.clear(); vb.clear();
        step = 0;
        for (const auto& w : params.weights) {
            m.push_back(Matrix::Zero(w.rows(), w.cols()));
            v.push_back(Matrix::Zero(w.rows(), w.cols()));
        }
        for (const auto& b : params.biases) {
            mb.push_back(Vector::Zero(b.size()));
            vb.push_back(Vector::Zero(b.size()));
        }
    }
};

/// Bias-corrected Adam update, in place.
inline void adam_step(AdamState& state, NetworkParams& params, const NetworkParams& grad,
                      const TrainConfig& tc) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(tc.adam_beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(tc.adam_beta2, static_cast<double>(state.step));
    for (size_t k = 0; k < params.weights.size(); ++k) {
        state.m[k] = tc.adam_beta1 * state.m[k] + (1.0 - tc.adam_beta1) * grad.weights[k];
        state.v[k] = tc.adam_beta2 * state.v[k] + (1.0 - tc.adam_beta2) * grad.weights[k].cwiseProduct(grad.weights[k]);
        params.weights[k].array() -= tc.lr * (state.m[k].array() / bc1) /
                                     ((state.v[k].array() / bc2).sqrt() + tc.adam_eps);
    }
    for (size_t k = 0; k < params.biases.size(); ++k) {
        state.mb[k] = tc.adam_beta1 * state.mb[k] + (1.0 - tc.adam_beta1) * grad.biases[k];
        state.vb[k] = tc.adam_beta2 * state.vb[k] + (1.0 - tc.adam_beta2) * grad.biases[k].cwiseProduct(grad.biases[k]);
        params.biases[k].array() -= tc.lr * (state.mb[k].array() / bc1) /
                                    ((state.vb[k].array() / bc2).sqrt() + tc.adam_eps);
    }
}

inline int argmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& row) {
    int best = 0;  // lowest index wins ties
    for (int i = 1; i < row.size(); ++i)
        if (row[i] > row[best]) best = i;
    return best;
}

/// Classification accuracy of the plain (unperturbed) forward pass.
inline double evaluate_accuracy(const Architecture& arch, const NetworkParams& params,
                                const Matrix& x, const std::vector<int>& labels,
                                int eval_batch = 1000) {
    if (x.rows() == 0) return 0.0;
    long correct = 0;
    for (int start = 0; start < x.rows(); start += eval_batch) {
        const int n = std::min<int>(eval_batch, static_cast<int>(x.rows()) - start);
        ActivationState state = forward(arch, params, x.middleRows(start, n));
        for (int i = 0; i < n; ++i)
            if (argmax_row(state.top().row(i)) == labels[static_cast<size_t>(start + i)]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(x.rows());
}

struct EpochRecord {
    int epoch = 0;
    bool pretrain_phase = false;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_accuracy = 0.0;
    double test_accuracy = 0.0;
    double lipschitz = 0.0;        // layer-norm product (upper bound)
    double lipschitz_local = 0.0;  // max Jacobian norm over a validation probe
    double seconds = 0.0;
    int skipped_batches = 0;
};

/// Rows of the validation set probed for the per-epoch local Lipschitz
/// estimate. Fixed so the metric is comparable across runs.
inline constexpr int kLipschitzProbeRows = 256;

struct TrainReport {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_accuracy = 0.0;
    double best_test_accuracy = 0.0;  // test accuracy at the argmax-validation epoch
    int pretrain_epochs = 0;
    bool adam_reset_at_handoff = true;
    bool stopped_early = false;
};

/// Mini-batch training loop. Deterministic given (config, seed): batch order,
/// adversarial labels and g-draws all derive from tc.seed. Batches whose
/// inference diverges are skipped and counted. Returns the parameters of the
/// best-validation epoch together with the full report.
inline std::pair<NetworkParams, TrainReport> train(const Architecture& arch,
                                                   const ObjectiveSpec& obj, const TrainConfig& tc,
                                                   const DatasetSplit& data,
                                                   std::ostream* log = nullptr) {
    tc.validate();
    obj.validate();
    arch.validate();

    NetworkParams params = init_params(arch, tc.seed);
    Rng rng(tc.seed);
    Rng shuffle_rng = rng.fork(1);
    Rng batch_rng = rng.fork(2);

    AdamState adam;
    adam.reset(params);

    TrainReport report;
    report.pretrain_epochs = tc.pretrain_epochs;

    NetworkParams best_params = params;
    const int n = static_cast<int>(data.train_x.rows());
    std::vector<int> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);

    ObjectiveSpec pretrain_obj;
    pretrain_obj.variant = ObjectiveVariant::Backprop;

    const int total_epochs = tc.pretrain_epochs + tc.epochs;
    int epochs_since_best = 0;
    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        const bool pretrain = epoch < tc.pretrain_epochs;
        if (epoch == tc.pretrain_epochs && tc.pretrain_epochs > 0) {
            adam.reset(params);  // fresh moments: the objective changed
        }
        const ObjectiveSpec& active = pretrain ? pretrain_obj : obj;

        const auto t0 = std::chrono::steady_clock::now();
        // Fisher-Yates with the dedicated stream
        for (int i = n - 1; i > 0; --i) {
            int j = static_cast<int>(shuffle_rng.integer(static_cast<std::uint64_t>(i + 1)));
            std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
        }

        double loss_sum = 0.0;
        int batches = 0, skipped = 0;
        for (int start = 0; start < n; start += tc.batch_size) {
            const int bs = std::min(tc.batch_size, n - start);
            Matrix xb(bs, data.train_x.cols());
            Matrix yb(bs, data.train_targets.cols());
            for (int i = 0; i < bs; ++i) {
                xb.row(i) = data.train_x.row(order[static_cast<size_t>(start + i)]);
                yb.row(i) = data.train_targets.row(order[static_cast<size_t>(start + i)]);
            }
            try {
                EvalResult res = evaluate_and_grad(arch, active, params, xb, yb, batch_rng);
                adam_step(adam, params, res.grad, tc);
                loss_sum += res.loss;
                ++batches;
            } catch (const DivergedError& e) {
                ++skipped;
                if (log)
                    *log << "epoch " << epoch << ": skipped diverged batch at sample offset "
                         << start << " (sweep " << e.sweep << ")\n";
            }
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.pretrain_phase = pretrain;
        rec.train_loss = batches > 0 ? loss_sum / batches : 0.0;
        rec.skipped_batches = skipped;
        rec.train_accuracy = evaluate_accuracy(arch, params, data.train_x, data.train_y);
        rec.val_accuracy = evaluate_accuracy(arch, params, data.val_x, data.val_y);
        rec.test_accuracy = evaluate_accuracy(arch, params, data.test_x, data.test_y);
        rec.lipschitz = lipschitz_estimate(params);
        rec.lipschitz_local = local_lipschitz_estimate(
            arch, params,
            data.val_x.topRows(std::min<Eigen::Index>(kLipschitzProbeRows, data.val_x.rows())));
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        report.epochs.push_back(rec);

        if (rec.val_accuracy > report.best_val_accuracy || report.best_epoch < 0) {
            report.best_epoch = epoch;
            report.best_val_accuracy = rec.val_accuracy;
            report.best_test_accuracy = rec.test_accuracy;
            best_params = params;
            epochs_since_best = 0;
        } else {
            ++epochs_since_best;
        }
        if (log)
            *log << "epoch " << epoch << (pretrain ? " [pretrain]" : "") << " loss "
                 << rec.train_loss << " train " << rec.train_accuracy << " val "
                 << rec.val_accuracy << " test " << rec.test_accuracy << " lip " << rec.lipschitz
                 << " lip_local " << rec.lipschitz_local << "\n";
        if (!pretrain && tc.early_stop_patience > 0 && epochs_since_best >= tc.early_stop_patience) {
            report.stopped_early = true;
            break;
        }
    }
    return {std::move(best_params), std::move(report)};
}

/// Metrics CSV, one (epoch, split, metric, value) row per measurement.
inline void write_metrics_csv(std::ostream& out, const TrainReport& report) {
    out << "epoch,split,metric,value\n";
    for (const auto& r : report.epochs) {
        out << r.epoch << ",train,loss," << r.train_loss << "\n";
        out << r.epoch << ",train,accuracy," << r.train_accuracy << "\n";
        out << r.epoch << ",val,accuracy," << r.val_accuracy << "\n";
        out << r.epoch << ",test,accuracy," << r.test_accuracy << "\n";
        out << r.epoch << ",model,lipschitz," << r.lipschitz << "\n";
        out << r.epoch << ",model,lipschitz_local," << r.lipschitz_local << "\n";
        out << r.epoch << ",model,pretrain_phase," << (r.pretrain_phase ? 1 : 0) << "\n";
        out << r.epoch << ",model,skipped_batches," << r.skipped_batches << "\n";
        out << r.epoch << ",model,seconds," << r.seconds << "\n";
    }
}

// Checkpoints: little-endian binary, magic "LNET1\n", then layer count,
// per-layer dims, bias flag, and the weight (and bias) payloads as raw
// doubles in row-major order.
inline void save_checkpoint(const std::string& path, const Architecture& arch,
                            const NetworkParams& params) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open checkpoint for writing: " + path);
    out.write("LNET1\n", 6);
    auto put_i32 = [&](std::int32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
    put_i32(static_cast<std::int32_t>(arch.layer_dims.size()));
    for (int d : arch.layer_dims) put_i32(d);
    put_i32(static_cast<std::int32_t>(arch.activations.size()));
    for (Activation a : arch.activations) put_i32(a == Activation::Relu ? 1 : 0);
    put_i32(params.has_bias() ? 1 : 0);
    for (const auto& w : params.weights)
        for (int i = 0; i < w.rows(); ++i)
            for (int j = 0; j < w.cols(); ++j) {
                double v = w(i, j);
                out.write(reinterpret_cast<const char*>(&v), 8);
            }
    for (const auto& b : params.biases)
        out.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()) * 8);
}

inline std::pair<Architecture, NetworkParams> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[6];
    in.read(magic, 6);
    if (!in || std::string(magic, 6) != "LNET1\n")
        throw std::runtime_error("bad checkpoint magic in " + path);
    auto get_i32 = [&]() {
        std::int32_t v = 0;
        in.read(reinterpret_cast<char*>(&v), 4);
        if (!in) throw std::runtime_error("truncated checkpoint: " + path);
        return v;
    };
    Architecture arch;
    const int ndims = get_i32();
    for (int i = 0; i < ndims; ++i) arch.layer_dims.push_back(get_i32());
    const int nact = get_i32();
    for (int i = 0; i < nact; ++i)
        arch.activations.push_back(get_i32() == 1 ? Activation::Relu : Activation::Linear);
    arch.use_bias = get_i32() == 1;
    arch.validate();
    NetworkParams params;
    for (int k = 0; k < arch.depth(); ++k) {
        Matrix w(arch.layer_dims[static_cast<size_t>(k + 1)], arch.layer_dims[static_cast<size_t>(k)]);
        for (int i = 0; i < w.rows(); ++i)
            for (int j = 0; j < w.cols(); ++j) {
                double v;
                in.read(reinterpret_cast<char*>(&v), 8);
                if (!in) throw std::runtime_error("truncated checkpoint: " + path);
                w(i, j) = v;
            }
        params.weights.push_back(std::move(w));
    }
    if (arch.use_bias)
        for (int k = 0; k < arch.depth(); ++k) {
            Vector b(arch.layer_dims[static_cast<size_t>(k + 1)]);
            in.read(reinterpret_cast<char*>(b.data()), static_cast<std::streamsize>(b.size()) * 8);
            if (!in) throw std::runtime_error("truncated checkpoint: " + path);
            params.biases.push_back(std::move(b));
        }
    return {std::move(arch), std::move(params)};
}

}  // namespace lifted
