// Command-line front end for the library: synthetic data generation,
// training, estimation, evaluation, sweeps, the IHDP protocol, and
// plot-data emission.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "intactvae/intactvae.hpp"

namespace {

using namespace intactvae;

NetPreset parse_preset(const std::string& s) {
    return s == "paper" ? NetPreset::paper : NetPreset::small;
}

HeadMode parse_heads(const std::string& s) {
    return s == "split" ? HeadMode::split : HeadMode::shared;
}

struct TrainFlags {
    double lr = 1e-4;
    int batch_size = 100;
    int max_epochs = 500;
    int patience = 10;
    int eval_every = 1;
    std::string preset = "small";
    std::string heads = "shared";
};

void add_train_flags(CLI::App* cmd, TrainFlags& tf) {
    cmd->add_option("--lr", tf.lr, "Adam learning rate");
    cmd->add_option("--batch", tf.batch_size, "minibatch size");
    cmd->add_option("--epochs", tf.max_epochs, "maximum training epochs");
    cmd->add_option("--patience", tf.patience, "evaluations without improvement before stopping");
    cmd->add_option("--eval-every", tf.eval_every, "epochs between validation evaluations");
    cmd->add_option("--preset", tf.preset, "network preset: paper|small")
        ->check(CLI::IsMember({"paper", "small"}));
    cmd->add_option("--heads", tf.heads, "treatment conditioning: shared|split")
        ->check(CLI::IsMember({"shared", "split"}));
}

TrainConfig to_train_config(const TrainFlags& tf, double beta, uint64_t seed) {
    TrainConfig tc;
    tc.lr = tf.lr;
    tc.batch_size = tf.batch_size;
    tc.max_epochs = tf.max_epochs;
    tc.patience = tf.patience;
    tc.eval_every = tf.eval_every;
    tc.net_preset = parse_preset(tf.preset);
    tc.heads = parse_heads(tf.heads);
    tc.beta = beta;
    tc.seed = seed;
    return tc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"beta-Intact-VAE: prognostic-score CATE estimation under limited overlap"};
    app.require_subcommand(1);

    // ---- gen ----------------------------------------------------------------
    auto* gen = app.add_subcommand("gen", "generate a synthetic dataset CSV");
    uint64_t gen_seed = 1;
    int gen_dim_w = 1, gen_n = 1500, gen_dim_x = 30;
    double gen_omega = 0.0;
    std::string gen_noise = "heteroscedastic", gen_out = "dataset.csv";
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--dim-w", gen_dim_w, "latent dimension");
    gen->add_option("--dim-x", gen_dim_x, "covariate dimension");
    gen->add_option("--omega", gen_omega, "overlap knob (0 = full overlap)");
    gen->add_option("--n", gen_n, "number of units");
    gen->add_option("--noise", gen_noise, "outcome noise: heteroscedastic|unit")
        ->check(CLI::IsMember({"heteroscedastic", "unit"}));
    gen->add_option("--out", gen_out, "output CSV path");

    // ---- train --------------------------------------------------------------
    auto* tr = app.add_subcommand("train", "train a model on dataset CSVs");
    std::string tr_data, tr_val, tr_out = "run";
    double tr_beta = 1.0;
    int tr_dim_z = 1;
    uint64_t tr_seed = 1;
    TrainFlags tr_flags;
    tr->add_option("--data", tr_data, "training split CSV")->required();
    tr->add_option("--val", tr_val, "validation split CSV")->required();
    tr->add_option("--out", tr_out, "output directory");
    tr->add_option("--beta", tr_beta, "KL weight");
    tr->add_option("--dim-z", tr_dim_z, "latent dimension of the model");
    tr->add_option("--seed", tr_seed, "training seed");
    add_train_flags(tr, tr_flags);

    // ---- estimate -----------------------------------------------------------
    auto* est = app.add_subcommand("estimate", "per-unit potential outcomes and CATE");
    std::string est_model, est_data, est_mode = "post", est_out = "estimates.csv";
    int est_L = 30;
    uint64_t est_seed = 1;
    est->add_option("--model", est_model, "model checkpoint JSON")->required();
    est->add_option("--data", est_data, "dataset CSV")->required();
    est->add_option("--mode", est_mode, "post|pre")->check(CLI::IsMember({"post", "pre"}));
    est->add_option("--L", est_L, "Monte Carlo samples per unit");
    est->add_option("--seed", est_seed, "estimation seed");
    est->add_option("--out", est_out, "output CSV path");

    // ---- eval ---------------------------------------------------------------
    auto* ev = app.add_subcommand("eval", "estimate and score against ground truth");
    std::string ev_model, ev_data, ev_mode = "post", ev_out = "report.json";
    int ev_L = 30;
    uint64_t ev_seed = 1;
    ev->add_option("--model", ev_model, "model checkpoint JSON")->required();
    ev->add_option("--data", ev_data, "dataset CSV with ground-truth columns")->required();
    ev->add_option("--mode", ev_mode, "post|pre")->check(CLI::IsMember({"post", "pre"}));
    ev->add_option("--L", ev_L, "Monte Carlo samples per unit");
    ev->add_option("--seed", ev_seed, "estimation seed");
    ev->add_option("--out", ev_out, "output JSON path");

    // ---- sweep ----------------------------------------------------------
    auto* sw = app.add_subcommand("sweep", "run the synthetic experiment grid");
    std::string sw_config, sw_out = "out_sweep", sw_preset;
    uint64_t sw_seed = 0;
    int sw_jobs = 0;
    std::vector<double> sw_beta;
    int sw_dim_z = 0;
    sw->add_option("--config", sw_config, "key = value config file");
    sw->add_option("--out", sw_out, "output directory");
    sw->add_option("--seed", sw_seed, "master seed override");
    sw->add_option("--jobs", sw_jobs, "worker threads");
    sw->add_option("--beta", sw_beta, "beta grid override");
    sw->add_option("--dim-z", sw_dim_z, "model latent dimension override");
    sw->add_option("--preset", sw_preset, "network preset override: paper|small")
        ->check(CLI::IsMember({"paper", "small"}));

    // ---- ihdp ---------------------------------------------------------------
    auto* ih = app.add_subcommand("ihdp", "run the IHDP benchmark protocol");
    std::string ih_data, ih_out = "out_ihdp";
    int ih_reps = 100, ih_dim_z = 10, ih_L = 30, ih_jobs = 1;
    double ih_beta = 1.0;
    uint64_t ih_seed = 1;
    TrainFlags ih_flags;
    ih->add_option("--data", ih_data, "directory of ihdp_npci_<k>.csv files (or one file)")
        ->required();
    ih->add_option("--reps", ih_reps, "number of replications");
    ih->add_option("--dim-z", ih_dim_z, "model latent dimension");
    ih->add_option("--beta", ih_beta, "KL weight");
    ih->add_option("--L", ih_L, "Monte Carlo samples per unit");
    ih->add_option("--jobs", ih_jobs, "worker threads");
    ih->add_option("--seed", ih_seed, "master seed");
    ih->add_option("--out", ih_out, "output directory");
    add_train_flags(ih, ih_flags);

    // ---- plotdata -------------------------------------------------------
    auto* pd = app.add_subcommand("plotdata", "tidy per-figure CSVs from a sweep aggregate");
    std::string pd_agg, pd_out = "plotdata";
    pd->add_option("--aggregate", pd_agg, "aggregate.csv from a sweep")->required();
    pd->add_option("--out", pd_out, "output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            Rng rng(gen_seed);
            DgpSpec spec = sample_dgp_spec(
                rng, gen_dim_w, gen_omega,
                gen_noise == "unit" ? NoiseMode::unit : NoiseMode::heteroscedastic, gen_dim_x);
            Dataset ds = generate(spec, gen_n, rng);
            write_dataset_csv(ds, gen_out);
            std::printf("wrote %d units to %s (overlap degree %.3f)\n", ds.n(), gen_out.c_str(),
                        overlap_degree(ds));
        } else if (*tr) {
            const Dataset train_set = read_dataset_csv(tr_data);
            const Dataset val_set = read_dataset_csv(tr_val);
            std::filesystem::create_directories(tr_out);
            TrainConfig tc = to_train_config(tr_flags, tr_beta, tr_seed);
            Rng init_rng(derive_seed(tr_seed, Stream::init, 0));
            IntactVaeModel model0 =
                init_model(init_rng, ModelDims{train_set.dim_x(), tr_dim_z, train_set.dim_y()},
                           tc.net_preset, tr_beta, tc.heads);
            auto [best, hist] = train(model0, train_set, val_set, tc);
            save_model(best, tr_out + "/model.json");
            write_history_json(hist, tr_out + "/history.json");
            write_history_csv(hist, tr_out + "/history.csv");
            std::printf("best epoch %d (%s), validation objective %.6f\n", hist.best_epoch,
                        hist.stop_reason.c_str(), hist.best_val_elbo);
        } else if (*est) {
            const IntactVaeModel model = load_model(est_model);
            const Dataset ds = read_dataset_csv(est_data);
            const CateEstimates estimates =
                cate(model, ds, est_mode == "pre" ? EstimationMode::pre : EstimationMode::post,
                     est_L, est_seed);
            write_estimates_csv(estimates, est_out);
            std::printf("ate = %.6f over %d units -> %s\n", ate(estimates), ds.n(),
                        est_out.c_str());
        } else if (*ev) {
            const IntactVaeModel model = load_model(ev_model);
            const Dataset ds = read_dataset_csv(ev_data);
            const CateEstimates estimates =
                cate(model, ds, ev_mode == "pre" ? EstimationMode::pre : EstimationMode::post,
                     ev_L, ev_seed);
            const MetricsReport report = evaluate_estimates(model, ds, estimates);
            std::ofstream f(ev_out);
            f << report_to_json(report).dump(1) << "\n";
            std::printf("eps_ate = %.4f, root_pehe = %.4f -> %s\n", report.eps_ate,
                        report.root_pehe, ev_out.c_str());
        } else if (*sw) {
            ExperimentConfig cfg =
                sw_config.empty() ? ExperimentConfig{} : read_config_file(sw_config);
            cfg.out_dir = sw_out;
            if (sw_seed != 0) cfg.master_seed = sw_seed;
            if (sw_jobs != 0) cfg.jobs = sw_jobs;
            if (!sw_beta.empty()) cfg.beta_list = sw_beta;
            if (sw_dim_z != 0) cfg.dim_z = sw_dim_z;
            if (!sw_preset.empty()) cfg.train.net_preset = parse_preset(sw_preset);
            const int rc = run_sweep(cfg);
            std::printf("sweep %s -> %s/aggregate.csv\n", rc == kExitOk ? "ok" : "had failures",
                        cfg.out_dir.c_str());
            return rc;
        } else if (*ih) {
            IhdpOptions opt;
            opt.dim_z = ih_dim_z;
            opt.beta = ih_beta;
            opt.mc_samples = ih_L;
            opt.jobs = ih_jobs;
            opt.master_seed = ih_seed;
            opt.out_dir = ih_out;
            opt.train = to_train_config(ih_flags, ih_beta, ih_seed);
            const IhdpReport rep = run_ihdp(opt, ih_data, ih_reps);
            std::printf("post: eps_ate %.3f +/- %.3f, root_pehe %.3f +/- %.3f\n",
                        rep.post_eps_ate_mean, rep.post_eps_ate_se, rep.post_root_pehe_mean,
                        rep.post_root_pehe_se);
            std::printf("pre:  eps_ate %.3f +/- %.3f, root_pehe %.3f +/- %.3f\n",
                        rep.pre_eps_ate_mean, rep.pre_eps_ate_se, rep.pre_root_pehe_mean,
                        rep.pre_root_pehe_se);
        } else if (*pd) {
            emit_plot_data(pd_agg, pd_out);
            std::printf("plot data -> %s\n", pd_out.c_str());
        }
    } catch (const MissingDataError& e) {
        std::cerr << "missing data: " << e.what() << "\n";
        return kExitMissingData;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitOk;
}
