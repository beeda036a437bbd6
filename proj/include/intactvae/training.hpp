// Minibatch optimization of the objective with validation-based early
// stopping and exact snapshotting of the best model.
//
// Determinism: every random draw comes from a stream derived from
// (cfg.seed, stream tag, index). Model init uses Stream::init. Epoch e uses
// Stream::epoch with index e for its shuffle and its per-batch noise, in
// that order. Validation noise at epoch e uses Stream::eval with index e.
// Per-epoch streams make a run replayable to any epoch without simulating
// the epochs after it.
#pragma once

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "intactvae/adam.hpp"
#include "intactvae/dataset.hpp"
#include "intactvae/model.hpp"

namespace intactvae {

enum class NetPreset { paper, small };

inline const char* to_string(NetPreset p) { return p == NetPreset::paper ? "paper" : "small"; }

inline std::vector<int> hidden_layout(NetPreset p) {
    return p == NetPreset::paper ? std::vector<int>{200, 200, 200} : std::vector<int>{64, 64};
}

struct TrainConfig {
    double lr = 1e-4;
    int batch_size = 100;
    int max_epochs = 500;
    int patience = 10;   // evaluations without improvement before stopping
    int eval_every = 1;  // epochs between validation evaluations
    double beta = 1.0;
    uint64_t seed = 0;
    NetPreset net_preset = NetPreset::small;
    HeadMode heads = HeadMode::shared;
    // Strict increase needed to count as an improvement; absolute.
    double improvement_eps = 1e-6;
};

inline void validate(const TrainConfig& cfg) {
    check(cfg.lr > 0.0, "train config: lr must be > 0");
    check(cfg.beta > 0.0, "train config: beta must be > 0");
    check(cfg.batch_size >= 1 && cfg.patience >= 1 && cfg.eval_every >= 1,
          "train config: counts must be >= 1");
    check(cfg.max_epochs >= 0, "train config: max_epochs must be >= 0");
}

struct TrainHistory {
    std::vector<double> train_loss;  // one entry per epoch (mean batch loss)
    std::vector<int> eval_epochs;    // epochs at which validation ran
    std::vector<double> val_elbo;    // validation objective at those epochs
    int best_epoch = 0;              // 0 = never evaluated / init model kept
    double best_val_elbo = 0.0;
    std::string stop_reason;  // "max_epochs" or "early_stop"
};

struct ModelDims {
    int dim_x = 0;
    int dim_z = 0;
    int dim_y = 0;
};

inline IntactVaeModel init_model(Rng& rng, const ModelDims& dims, NetPreset preset,
                                 double beta, HeadMode heads = HeadMode::shared) {
    check(dims.dim_x > 0 && dims.dim_z > 0 && dims.dim_y > 0, "init_model: dims must be positive");
    IntactVaeModel m;
    m.dim_x = dims.dim_x;
    m.dim_z = dims.dim_z;
    m.dim_y = dims.dim_y;
    m.beta = beta;
    m.heads = heads;
    const std::vector<int> hidden = hidden_layout(preset);
    auto dims_of = [&hidden](int in, int out) {
        std::vector<int> d{in};
        d.insert(d.end(), hidden.begin(), hidden.end());
        d.push_back(out);
        return d;
    };
    const int enc_in = heads == HeadMode::shared ? dims.dim_x + dims.dim_y + 1
                                                 : dims.dim_x + dims.dim_y;
    const int dec_in = heads == HeadMode::shared ? dims.dim_z + 1 : dims.dim_z;
    m.prior_net = init_mlp(rng, dims_of(dims.dim_x, 2 * dims.dim_z), Activation::relu);
    m.encoder_net = init_mlp(rng, dims_of(enc_in, 2 * dims.dim_z), Activation::relu);
    m.decoder_net = init_mlp(rng, dims_of(dec_in, 2 * dims.dim_y), Activation::relu);
    if (heads == HeadMode::split) {
        m.encoder_net1 = init_mlp(rng, dims_of(enc_in, 2 * dims.dim_z), Activation::relu);
        m.decoder_net1 = init_mlp(rng, dims_of(dec_in, 2 * dims.dim_y), Activation::relu);
    }
    validate_model(m);
    return m;
}

// Validation objective: mean per-row bound over the full set, antithetic in
// the reparameterization noise (average of +eps and -eps passes) to cut the
// Monte Carlo variance without biasing the expectation.
inline double validation_elbo(const IntactVaeModel& m, const Dataset& val, Rng& rng) {
    const Tensor2 noise = draw_noise(val.n(), m.dim_z, rng);
    Tensor2 neg = noise;
    for (double& x : neg.data) x = -x;
    const ElboResult a = elbo_beta_fixed(m, val, noise);
    const ElboResult b = elbo_beta_fixed(m, val, neg);
    return 0.5 * (a.breakdown.total + b.breakdown.total);
}

inline std::pair<IntactVaeModel, TrainHistory> train(const IntactVaeModel& init,
                                                     const Dataset& train_set,
                                                     const Dataset& val_set,
                                                     const TrainConfig& cfg) {
    validate(cfg);
    validate_model(init);
    check(train_set.n() > 0 && val_set.n() > 0, "train: empty split");
    check(train_set.dim_x() == init.dim_x && train_set.dim_y() == init.dim_y &&
              val_set.dim_x() == init.dim_x && val_set.dim_y() == init.dim_y,
          "train: dataset dims do not match model");

    IntactVaeModel model = init;
    model.beta = cfg.beta;
    IntactVaeModel best = model;
    TrainHistory hist;
    hist.stop_reason = "max_epochs";

    AdamState opt_prior = make_adam(model.prior_net, cfg.lr);
    AdamState opt_enc = make_adam(model.encoder_net, cfg.lr);
    AdamState opt_dec = make_adam(model.decoder_net, cfg.lr);
    AdamState opt_enc1, opt_dec1;
    if (model.heads == HeadMode::split) {
        opt_enc1 = make_adam(model.encoder_net1, cfg.lr);
        opt_dec1 = make_adam(model.decoder_net1, cfg.lr);
    }

    bool has_best = false;
    int evals_since_improvement = 0;
    ModelGrads grads;

    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng erng(derive_seed(cfg.seed, Stream::epoch, static_cast<uint64_t>(epoch)));
        const std::vector<int> perm = erng.permutation(train_set.n());
        double loss_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < train_set.n(); start += cfg.batch_size) {
            const int stop = std::min(start + cfg.batch_size, train_set.n());
            std::vector<int> idx(perm.begin() + start, perm.begin() + stop);
            const Dataset batch = select_rows(train_set, idx);
            const Tensor2 noise = draw_noise(batch.n(), model.dim_z, erng);
            ElboResult res;
            try {
                res = elbo_beta_grad(model, batch, noise, grads);
            } catch (const std::exception& e) {
                throw std::runtime_error("train: epoch " + std::to_string(epoch) + " batch " +
                                         std::to_string(batches) + ": " + e.what());
            }
            adam_step(opt_prior, model.prior_net, grads.prior, "prior_net");
            adam_step(opt_enc, model.encoder_net, grads.encoder, "encoder_net");
            adam_step(opt_dec, model.decoder_net, grads.decoder, "decoder_net");
            if (model.heads == HeadMode::split) {
                adam_step(opt_enc1, model.encoder_net1, grads.encoder1, "encoder_net1");
                adam_step(opt_dec1, model.decoder_net1, grads.decoder1, "decoder_net1");
            }
            loss_sum += res.loss;
            ++batches;
        }
        hist.train_loss.push_back(loss_sum / std::max(batches, 1));

        if (epoch % cfg.eval_every != 0) continue;
        Rng vrng(derive_seed(cfg.seed, Stream::eval, static_cast<uint64_t>(epoch)));
        const double velbo = validation_elbo(model, val_set, vrng);
        hist.eval_epochs.push_back(epoch);
        hist.val_elbo.push_back(velbo);
        if (!has_best || velbo >= hist.best_val_elbo + cfg.improvement_eps) {
            has_best = true;
            hist.best_val_elbo = velbo;
            hist.best_epoch = epoch;
            best = model;
            evals_since_improvement = 0;
        } else {
            ++evals_since_improvement;
            if (evals_since_improvement >= cfg.patience) {
                hist.stop_reason = "early_stop";
                break;
            }
        }
    }

    return {has_best ? best : model, hist};
}

inline nlohmann::json history_to_json(const TrainHistory& h) {
    return {{"train_loss", h.train_loss}, {"eval_epochs", h.eval_epochs},
            {"val_elbo", h.val_elbo},     {"best_epoch", h.best_epoch},
            {"best_val_elbo", h.best_val_elbo}, {"stop_reason", h.stop_reason}};
}

inline void write_history_json(const TrainHistory& h, const std::string& path) {
    std::ofstream f(path);
    check(f.good(), "write_history_json: cannot open " + path);
    f << history_to_json(h).dump(1) << "\n";
}

// Per-epoch log: `epoch,train_loss,val_elbo`; val_elbo blank on epochs
// without an evaluation.
inline void write_history_csv(const TrainHistory& h, const std::string& path) {
    std::ofstream f(path);
    check(f.good(), "write_history_csv: cannot open " + path);
    f << "epoch,train_loss,val_elbo\n";
    size_t ei = 0;
    for (size_t e = 0; e < h.train_loss.size(); ++e) {
        f << (e + 1) << "," << format_double(h.train_loss[e]) << ",";
        if (ei < h.eval_epochs.size() && h.eval_epochs[ei] == static_cast<int>(e + 1)) {
            f << format_double(h.val_elbo[ei]);
            ++ei;
        }
        f << "\n";
    }
}

}  // namespace intactvae
