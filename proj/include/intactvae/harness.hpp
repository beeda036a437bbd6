// Experiment harness: seeded sweep over synthetic processes, the IHDP
// benchmark protocol, and tidy plot-data emission.
//
// Seed discipline: the master seed fully determines every run.
//   dgp_seed(a, b, r)  = derive_seed(master, Stream::dgp,  flat index of
//                        (dim_w index a, omega index b, replication r))
//   train_seed(cell)   = derive_seed(master, Stream::cell, flat cell index)
// where cells enumerate (a, b, r, beta index) lexicographically. The dataset
// of a replication is therefore shared across beta values, matching the
// protocol of evaluating several beta on the same random processes.
//
// Post-treatment metrics are computed on train+validation jointly;
// pre-treatment metrics on the held-out test set.
#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "intactvae/dgp.hpp"
#include "intactvae/estimation.hpp"
#include "intactvae/metrics.hpp"
#include "intactvae/training.hpp"

namespace intactvae {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitMissingData = 2;

struct ExperimentConfig {
    std::vector<int> dim_w_list{1};
    std::vector<double> omega_list{0.0, 6.0, 11.0, 16.0, 22.0};
    int n = 1500;
    int replications = 10;
    NoiseMode noise_mode = NoiseMode::heteroscedastic;
    int dim_x = 30;
    int dim_z = 1;
    std::vector<double> beta_list{1.0};
    TrainConfig train;  // beta and seed are filled per cell
    int mc_samples = 30;
    std::string out_dir = "out";
    uint64_t master_seed = 1;
    int jobs = 1;
};

inline void validate(const ExperimentConfig& cfg) {
    check(cfg.replications >= 1, "config: replications must be >= 1");
    check(!cfg.dim_w_list.empty() && !cfg.omega_list.empty() && !cfg.beta_list.empty(),
          "config: grids must be nonempty");
    check(cfg.n >= 3, "config: n too small to split");
    check(cfg.jobs >= 1, "config: jobs must be >= 1");
    check(cfg.mc_samples >= 1, "config: mc_samples must be >= 1");
}

// ---------------------------------------------------------------------------
// Flat key = value config files.

inline std::string serialize_config(const ExperimentConfig& c) {
    std::ostringstream o;
    auto list_int = [](const std::vector<int>& v) {
        std::string s;
        for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
        return s;
    };
    auto list_dbl = [](const std::vector<double>& v) {
        std::string s;
        for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
        return s;
    };
    o << "dim_w_list = " << list_int(c.dim_w_list) << "\n";
    o << "omega_list = " << list_dbl(c.omega_list) << "\n";
    o << "n = " << c.n << "\n";
    o << "replications = " << c.replications << "\n";
    o << "noise_mode = " << to_string(c.noise_mode) << "\n";
    o << "dim_x = " << c.dim_x << "\n";
    o << "dim_z = " << c.dim_z << "\n";
    o << "beta_list = " << list_dbl(c.beta_list) << "\n";
    o << "preset = " << to_string(c.train.net_preset) << "\n";
    o << "heads = " << to_string(c.train.heads) << "\n";
    o << "lr = " << format_double(c.train.lr) << "\n";
    o << "batch_size = " << c.train.batch_size << "\n";
    o << "max_epochs = " << c.train.max_epochs << "\n";
    o << "patience = " << c.train.patience << "\n";
    o << "eval_every = " << c.train.eval_every << "\n";
    o << "mc_samples = " << c.mc_samples << "\n";
    o << "seed = " << c.master_seed << "\n";
    o << "jobs = " << c.jobs << "\n";
    return o.str();
}

namespace detail {
inline std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    size_t b = s.find_last_not_of(" \t\r");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else
            cur.push_back(ch);
    }
    out.push_back(trim(cur));
    return out;
}
}  // namespace detail

inline void apply_config_line(ExperimentConfig& c, const std::string& key,
                              const std::string& value) {
    auto to_int = [&](const std::string& v) { return static_cast<int>(std::stoll(v)); };
    if (key == "dim_w_list") {
        c.dim_w_list.clear();
        for (const auto& s : detail::split_list(value)) c.dim_w_list.push_back(to_int(s));
    } else if (key == "omega_list") {
        c.omega_list.clear();
        for (const auto& s : detail::split_list(value)) c.omega_list.push_back(std::stod(s));
    } else if (key == "beta_list") {
        c.beta_list.clear();
        for (const auto& s : detail::split_list(value)) c.beta_list.push_back(std::stod(s));
    } else if (key == "n")
        c.n = to_int(value);
    else if (key == "replications")
        c.replications = to_int(value);
    else if (key == "noise_mode")
        c.noise_mode = value == "unit" ? NoiseMode::unit : NoiseMode::heteroscedastic;
    else if (key == "dim_x")
        c.dim_x = to_int(value);
    else if (key == "dim_z")
        c.dim_z = to_int(value);
    else if (key == "preset")
        c.train.net_preset = value == "paper" ? NetPreset::paper : NetPreset::small;
    else if (key == "heads")
        c.train.heads = value == "split" ? HeadMode::split : HeadMode::shared;
    else if (key == "lr")
        c.train.lr = std::stod(value);
    else if (key == "batch_size")
        c.train.batch_size = to_int(value);
    else if (key == "max_epochs")
        c.train.max_epochs = to_int(value);
    else if (key == "patience")
        c.train.patience = to_int(value);
    else if (key == "eval_every")
        c.train.eval_every = to_int(value);
    else if (key == "mc_samples")
        c.mc_samples = to_int(value);
    else if (key == "seed")
        c.master_seed = std::stoull(value);
    else if (key == "jobs")
        c.jobs = to_int(value);
    else if (key == "out_dir")
        c.out_dir = value;
    else
        throw std::runtime_error("config: unknown key '" + key + "'");
}

inline ExperimentConfig read_config_file(const std::string& path) {
    std::ifstream f(path);
    check(f.good(), "config: cannot open " + path);
    ExperimentConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        const size_t eq = s.find('=');
        check(eq != std::string::npos,
              "config: line " + std::to_string(lineno) + " is not 'key = value'");
        apply_config_line(c, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
    }
    return c;
}

// ---------------------------------------------------------------------------
// Sweep.

inline const double* ground_truth_y0(const Dataset& ds) {
    return ds.has_mu() ? ds.mu0.data.data() : ds.y0.data.data();
}
inline const double* ground_truth_y1(const Dataset& ds) {
    return ds.has_mu() ? ds.mu1.data.data() : ds.y1.data.data();
}

// Metrics of one estimate set against a dataset's ground truth. Noiseless
// outcome means are preferred when the source provides them (IHDP); sampled
// potential outcomes are used otherwise (synthetic).
inline MetricsReport evaluate_estimates(const IntactVaeModel& model, const Dataset& ds,
                                        const CateEstimates& est) {
    check(ds.has_potential_outcomes() || ds.has_mu(),
          "evaluate_estimates: dataset carries no ground truth");
    MetricsReport r;
    r.mode = to_string(est.mode);
    const size_t n = static_cast<size_t>(ds.n());
    std::span<const double> y0{ground_truth_y0(ds), n};
    std::span<const double> y1{ground_truth_y1(ds), n};
    r.eps_ate = eps_ate(y0, y1, est.tau_hat.data);
    r.pehe = pehe(y0, y1, est.tau_hat.data);
    r.root_pehe = std::sqrt(r.pehe);
    if (ds.has_latent()) {
        Tensor2 zprior(ds.n(), model.dim_z), zpost(ds.n(), model.dim_z);
        for (int i = 0; i < ds.n(); ++i) {
            const DiagonalGaussian p = prior(model, ds.x.row(i));
            const DiagonalGaussian q =
                encode(model, ds.x.row(i), ds.y.row(i), ds.t[static_cast<size_t>(i)]);
            for (int j = 0; j < model.dim_z; ++j) {
                zprior(i, j) = p.mean[static_cast<size_t>(j)];
                zpost(i, j) = q.mean[static_cast<size_t>(j)];
            }
        }
        r.recovery_prior = affine_recovery(zprior, ds.w, ds.t);
        r.recovery_posterior = affine_recovery(zpost, ds.w, ds.t);
    } else {
        r.recovery_prior.note = "no true latent in dataset";
        r.recovery_posterior.note = r.recovery_prior.note;
    }
    r.imbalance = conditional_imbalance(model, ds);
    return r;
}

struct SweepCell {
    int index = 0;
    int dim_w = 0;
    double omega = 0.0;
    double beta = 0.0;
    int replication = 0;
    uint64_t dgp_seed = 0;
    uint64_t train_seed = 0;
};

inline std::vector<SweepCell> enumerate_cells(const ExperimentConfig& cfg) {
    std::vector<SweepCell> cells;
    int cell_index = 0;
    for (size_t a = 0; a < cfg.dim_w_list.size(); ++a)
        for (size_t b = 0; b < cfg.omega_list.size(); ++b)
            for (int r = 0; r < cfg.replications; ++r) {
                const uint64_t dgp_index =
                    (a * cfg.omega_list.size() + b) * static_cast<size_t>(cfg.replications) +
                    static_cast<size_t>(r);
                for (size_t c = 0; c < cfg.beta_list.size(); ++c) {
                    SweepCell cell;
                    cell.index = cell_index;
                    cell.dim_w = cfg.dim_w_list[a];
                    cell.omega = cfg.omega_list[b];
                    cell.beta = cfg.beta_list[c];
                    cell.replication = r;
                    cell.dgp_seed = derive_seed(cfg.master_seed, Stream::dgp, dgp_index);
                    cell.train_seed =
                        derive_seed(cfg.master_seed, Stream::cell,
                                    static_cast<uint64_t>(cell_index));
                    cells.push_back(cell);
                    ++cell_index;
                }
            }
    return cells;
}

struct CellOutcome {
    bool ok = false;
    std::string error;
    std::string csv_rows;  // two aggregate rows, post then pre
    nlohmann::json record;
    double wall_seconds = 0.0;
};

struct CellRunResult {
    IntactVaeModel model;
    TrainHistory history;
    MetricsReport post, pre;
};

// Full pipeline of one cell: sample process, generate, split in thirds,
// train, estimate post on train+val and pre on test, score.
inline CellRunResult run_cell_pipeline(const ExperimentConfig& cfg, const SweepCell& cell) {
    Rng dgp_rng(cell.dgp_seed);
    DgpSpec spec = sample_dgp_spec(dgp_rng, cell.dim_w, cell.omega, cfg.noise_mode, cfg.dim_x);
    Dataset ds = generate(spec, cfg.n, dgp_rng);
    Rng split_rng(derive_seed(cell.dgp_seed, Stream::split, 0));
    SplitDataset parts = split(ds, {1.0 / 3, 1.0 / 3, 1.0 / 3}, split_rng);

    TrainConfig tc = cfg.train;
    tc.beta = cell.beta;
    tc.seed = cell.train_seed;
    Rng init_rng(derive_seed(cell.train_seed, Stream::init, 0));
    IntactVaeModel model0 = init_model(
        init_rng, ModelDims{cfg.dim_x, cfg.dim_z, 1}, tc.net_preset, cell.beta, tc.heads);

    CellRunResult out;
    auto trained = train(model0, parts.train, parts.val, tc);
    out.model = std::move(trained.first);
    out.history = std::move(trained.second);

    const Dataset post_set = concat_datasets(parts.train, parts.val);
    const uint64_t est_seed = derive_seed(cell.train_seed, Stream::estimate, 0);
    const CateEstimates est_post =
        cate(out.model, post_set, EstimationMode::post, cfg.mc_samples, est_seed);
    out.post = evaluate_estimates(out.model, post_set, est_post);
    const CateEstimates est_pre =
        cate(out.model, parts.test, EstimationMode::pre, cfg.mc_samples, est_seed);
    out.pre = evaluate_estimates(out.model, parts.test, est_pre);
    return out;
}

inline std::string aggregate_csv_header() {
    return "dgp_seed,dim_w,omega,beta,mode,eps_ate,root_pehe,r2_pooled,d_mean";
}

namespace detail {
inline std::string aggregate_row(const SweepCell& cell, const MetricsReport& r) {
    std::ostringstream o;
    o << cell.dgp_seed << "," << cell.dim_w << "," << format_double(cell.omega) << ","
      << format_double(cell.beta) << "," << r.mode << "," << format_double(r.eps_ate) << ","
      << format_double(r.root_pehe) << ","
      << format_double(r.recovery_prior.valid ? r.recovery_prior.r2_pooled : -1.0) << ","
      << format_double(r.imbalance.mean);
    return o.str();
}
}  // namespace detail

// Runs every cell (jobs-wide thread pool), writes out_dir/aggregate.csv,
// out_dir/config_used.txt and one JSON record per run. Cell failures are
// recorded and skipped; the return value is kExitOk only if all succeeded.
inline int run_sweep(const ExperimentConfig& cfg) {
    validate(cfg);
    validate(cfg.train);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    fs::create_directories(cfg.out_dir + "/runs");
    const std::string cfg_text = serialize_config(cfg);
    {
        std::ofstream f(cfg.out_dir + "/config_used.txt");
        check(f.good(), "run_sweep: cannot write config to " + cfg.out_dir);
        f << cfg_text;
    }
    const uint64_t cfg_hash = hash_bytes(cfg_text.data(), cfg_text.size());

    const std::vector<SweepCell> cells = enumerate_cells(cfg);
    std::vector<CellOutcome> outcomes(cells.size());
    std::atomic<size_t> next{0};
    std::mutex log_mutex;

    auto worker = [&]() {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= cells.size()) break;
            const SweepCell& cell = cells[i];
            CellOutcome& oc = outcomes[i];
            const auto t0 = std::chrono::steady_clock::now();
            try {
                CellRunResult res = run_cell_pipeline(cfg, cell);
                const std::string run_dir =
                    cfg.out_dir + "/runs/cell_" + std::to_string(cell.index);
                fs::create_directories(run_dir);
                save_model(res.model, run_dir + "/model.json");
                write_history_json(res.history, run_dir + "/history.json");
                write_history_csv(res.history, run_dir + "/history.csv");
                oc.csv_rows = detail::aggregate_row(cell, res.post) + "\n" +
                              detail::aggregate_row(cell, res.pre) + "\n";
                oc.wall_seconds = std::chrono::duration<double>(
                                      std::chrono::steady_clock::now() - t0)
                                      .count();
                oc.record = {{"cell", cell.index},
                             {"dgp_seed", cell.dgp_seed},
                             {"train_seed", cell.train_seed},
                             {"dim_w", cell.dim_w},
                             {"omega", cell.omega},
                             {"beta", cell.beta},
                             {"replication", cell.replication},
                             {"config_hash", cfg_hash},
                             {"status", "ok"},
                             {"wall_seconds", oc.wall_seconds},
                             {"best_epoch", res.history.best_epoch},
                             {"stop_reason", res.history.stop_reason},
                             {"post", report_to_json(res.post)},
                             {"pre", report_to_json(res.pre)},
                             {"artifacts",
                              {{"model", run_dir + "/model.json"},
                               {"history_json", run_dir + "/history.json"},
                               {"history_csv", run_dir + "/history.csv"}}}};
                oc.ok = true;
            } catch (const std::exception& e) {
                oc.ok = false;
                oc.error = e.what();
                oc.record = {{"cell", cell.index},
                             {"dgp_seed", cell.dgp_seed},
                             {"status", "failed"},
                             {"error", oc.error}};
                std::lock_guard<std::mutex> lk(log_mutex);
                std::fprintf(stderr, "cell %d failed: %s\n", cell.index, e.what());
            }
        }
    };
    {
        std::vector<std::thread> pool;
        const int nthreads = std::min<int>(cfg.jobs, static_cast<int>(cells.size()));
        for (int i = 0; i < nthreads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::ofstream agg(cfg.out_dir + "/aggregate.csv");
    check(agg.good(), "run_sweep: cannot write aggregate.csv");
    agg << aggregate_csv_header() << "\n";
    bool all_ok = true;
    for (size_t i = 0; i < cells.size(); ++i) {
        const CellOutcome& oc = outcomes[i];
        if (oc.ok) agg << oc.csv_rows;
        all_ok = all_ok && oc.ok;
        std::ofstream rec(cfg.out_dir + "/runs/record_" + std::to_string(cells[i].index) +
                          ".json");
        rec << oc.record.dump(1) << "\n";
    }
    return all_ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------------------------
// IHDP protocol.

struct MissingDataError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Reads one replication in the published layout: rows of
//   treatment, factual y, counterfactual y, mu0, mu1, x1..x25
// either from <path>/ihdp_npci_<index+1>.csv or, when path is a file, from
// that file (index 0 only). A non-numeric first line is skipped as a header.
inline Dataset load_ihdp(const std::string& path, int replication) {
    namespace fs = std::filesystem;
    std::string file = path;
    if (fs::is_directory(path)) {
        file = path + "/ihdp_npci_" + std::to_string(replication + 1) + ".csv";
    } else {
        check(replication == 0, "load_ihdp: a single file holds one replication; "
                                "pass a directory for replication > 0");
    }
    if (!fs::exists(file)) throw MissingDataError("load_ihdp: no such file: " + file);
    std::ifstream f(file);
    check(f.good(), "load_ihdp: cannot open " + file);

    std::vector<std::vector<double>> rows;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        const std::string s = detail::trim(line);
        if (s.empty()) continue;
        const auto cells = detail::split_csv_line(s);
        if (lineno == 1) {
            char* end = nullptr;
            std::strtod(cells[0].c_str(), &end);
            if (end == cells[0].c_str()) continue;  // header line
        }
        check(cells.size() >= 6, "load_ihdp: row " + std::to_string(lineno) +
                                     " has only " + std::to_string(cells.size()) + " columns");
        std::vector<double> vals;
        vals.reserve(cells.size());
        for (size_t c = 0; c < cells.size(); ++c) {
            char* end = nullptr;
            const double v = std::strtod(cells[c].c_str(), &end);
            check(end != cells[c].c_str() && *end == '\0',
                  "load_ihdp: bad value in column " + std::to_string(c + 1) + " of row " +
                      std::to_string(lineno));
            vals.push_back(v);
        }
        if (!rows.empty())
            check(vals.size() == rows.front().size(),
                  "load_ihdp: ragged row " + std::to_string(lineno));
        rows.push_back(std::move(vals));
    }
    check(!rows.empty(), "load_ihdp: no data rows in " + file);
    const int n = static_cast<int>(rows.size());
    const int m = static_cast<int>(rows.front().size()) - 5;
    check(m >= 1, "load_ihdp: missing covariate columns");

    Dataset ds;
    ds.x = Tensor2(n, m);
    ds.y = Tensor2(n, 1);
    ds.y0 = Tensor2(n, 1);
    ds.y1 = Tensor2(n, 1);
    ds.mu0 = Tensor2(n, 1);
    ds.mu1 = Tensor2(n, 1);
    ds.t.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        const auto& r = rows[static_cast<size_t>(i)];
        check(r[0] == 0.0 || r[0] == 1.0,
              "load_ihdp: column 1 (treatment) not binary at row " + std::to_string(i + 1));
        ds.t[static_cast<size_t>(i)] = static_cast<int>(r[0]);
        const double yf = r[1], ycf = r[2];
        ds.y(i, 0) = yf;
        if (ds.t[static_cast<size_t>(i)] == 1) {
            ds.y1(i, 0) = yf;
            ds.y0(i, 0) = ycf;
        } else {
            ds.y0(i, 0) = yf;
            ds.y1(i, 0) = ycf;
        }
        ds.mu0(i, 0) = r[3];
        ds.mu1(i, 0) = r[4];
        for (int j = 0; j < m; ++j) ds.x(i, j) = r[static_cast<size_t>(5 + j)];
    }
    validate(ds);
    return ds;
}

// Z-scores columns with more than two distinct values using statistics of
// the reference (training) split; binary columns pass through.
inline void standardize_continuous(const Dataset& ref, std::vector<Dataset*> all) {
    for (int j = 0; j < ref.dim_x(); ++j) {
        bool continuous = false;
        double v0 = ref.x(0, j);
        double v1 = v0;
        bool have2 = false;
        for (int i = 1; i < ref.n(); ++i) {
            const double v = ref.x(i, j);
            if (v != v0 && !have2) {
                v1 = v;
                have2 = true;
            } else if (v != v0 && v != v1) {
                continuous = true;
                break;
            }
        }
        if (!continuous) continue;
        Vec col(static_cast<size_t>(ref.n()));
        for (int i = 0; i < ref.n(); ++i) col[static_cast<size_t>(i)] = ref.x(i, j);
        const double mu = mean(col);
        const double sd = std::sqrt(variance(col));
        if (sd <= 0.0) continue;
        for (Dataset* ds : all)
            for (int i = 0; i < ds->n(); ++i) ds->x(i, j) = (ds->x(i, j) - mu) / sd;
    }
}

struct IhdpOptions {
    int dim_z = 10;
    double beta = 1.0;
    TrainConfig train;
    int mc_samples = 30;
    uint64_t master_seed = 1;
    int jobs = 1;
    std::string out_dir = "out_ihdp";
};

struct IhdpReport {
    int replications = 0;
    double post_eps_ate_mean = 0.0, post_eps_ate_se = 0.0;
    double post_root_pehe_mean = 0.0, post_root_pehe_se = 0.0;
    double pre_eps_ate_mean = 0.0, pre_eps_ate_se = 0.0;
    double pre_root_pehe_mean = 0.0, pre_root_pehe_se = 0.0;
};

namespace detail {
inline std::pair<double, double> mean_se(const Vec& v) {
    const double m = mean(v);
    if (v.size() < 2) return {m, 0.0};
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    const double sd = std::sqrt(s / static_cast<double>(v.size() - 1));
    return {m, sd / std::sqrt(static_cast<double>(v.size()))};
}
}  // namespace detail

// One IHDP replication: split 63:27:10, z-score continuous covariates and
// the outcome on the training split, train with a 10-dimensional latent and
// beta = 1 (defaults), report post metrics on train+val and pre on test in
// the original outcome units against the noiseless means.
inline std::pair<MetricsReport, MetricsReport> run_ihdp_replication(const IhdpOptions& opt,
                                                                    const Dataset& raw,
                                                                    int replication) {
    Dataset ds = raw;
    Rng split_rng(derive_seed(opt.master_seed, Stream::split, static_cast<uint64_t>(replication)));
    SplitDataset parts = split(ds, {0.63, 0.27, 0.10}, split_rng);
    standardize_continuous(parts.train, {&parts.train, &parts.val, &parts.test});

    // Standardize the outcome (and its ground-truth columns, so everything
    // stays in one unit system); reported errors are scaled back at the end.
    Vec ytr(parts.train.y.data);
    const double y_mu = mean(ytr);
    double y_sd = std::sqrt(variance(ytr));
    if (y_sd <= 0.0) y_sd = 1.0;
    auto scale_y = [&](Dataset& d) {
        for (double& v : d.y.data) v = (v - y_mu) / y_sd;
        for (double& v : d.y0.data) v = (v - y_mu) / y_sd;
        for (double& v : d.y1.data) v = (v - y_mu) / y_sd;
        for (double& v : d.mu0.data) v = (v - y_mu) / y_sd;
        for (double& v : d.mu1.data) v = (v - y_mu) / y_sd;
    };
    scale_y(parts.train);
    scale_y(parts.val);
    scale_y(parts.test);

    const uint64_t run_seed =
        derive_seed(opt.master_seed, Stream::cell, static_cast<uint64_t>(replication));
    TrainConfig tc = opt.train;
    tc.beta = opt.beta;
    tc.seed = run_seed;
    Rng init_rng(derive_seed(run_seed, Stream::init, 0));
    IntactVaeModel model0 =
        init_model(init_rng, ModelDims{ds.dim_x(), opt.dim_z, 1}, tc.net_preset, opt.beta,
                   tc.heads);
    auto trained = train(model0, parts.train, parts.val, tc);
    const IntactVaeModel& model = trained.first;

    const uint64_t est_seed = derive_seed(run_seed, Stream::estimate, 0);
    auto to_original_units = [&](MetricsReport r) {
        r.eps_ate *= y_sd;
        r.pehe *= y_sd * y_sd;
        r.root_pehe *= y_sd;
        return r;
    };

    const Dataset post_set = concat_datasets(parts.train, parts.val);
    const CateEstimates est_post =
        cate(model, post_set, EstimationMode::post, opt.mc_samples, est_seed);
    MetricsReport post = to_original_units(evaluate_estimates(model, post_set, est_post));
    const CateEstimates est_pre =
        cate(model, parts.test, EstimationMode::pre, opt.mc_samples, est_seed);
    MetricsReport pre = to_original_units(evaluate_estimates(model, parts.test, est_pre));
    return {post, pre};
}

// Throws MissingDataError when the data directory is absent: the benchmark
// data is user-supplied and never bundled.
inline IhdpReport run_ihdp(const IhdpOptions& opt, const std::string& data_path,
                           int n_replications) {
    check(n_replications >= 1, "run_ihdp: need at least one replication");
    namespace fs = std::filesystem;
    if (!fs::exists(data_path))
        throw MissingDataError("run_ihdp: data path does not exist: " + data_path +
                               " (the IHDP files are user-supplied; see README)");
    fs::create_directories(opt.out_dir);

    Vec post_ate(static_cast<size_t>(n_replications)), post_pehe(static_cast<size_t>(n_replications));
    Vec pre_ate(static_cast<size_t>(n_replications)), pre_pehe(static_cast<size_t>(n_replications));
    std::ofstream agg(opt.out_dir + "/ihdp_replications.csv");
    agg << "replication,mode,eps_ate,root_pehe\n";

    std::atomic<int> next{0};
    std::mutex agg_mutex;
    std::vector<std::string> rows(static_cast<size_t>(n_replications));
    std::vector<std::string> errors;
    auto worker = [&]() {
        while (true) {
            const int r = next.fetch_add(1);
            if (r >= n_replications) break;
            try {
                const Dataset raw = load_ihdp(data_path, r);
                auto [post, pre] = run_ihdp_replication(opt, raw, r);
                post_ate[static_cast<size_t>(r)] = post.eps_ate;
                post_pehe[static_cast<size_t>(r)] = post.root_pehe;
                pre_ate[static_cast<size_t>(r)] = pre.eps_ate;
                pre_pehe[static_cast<size_t>(r)] = pre.root_pehe;
                rows[static_cast<size_t>(r)] =
                    std::to_string(r) + ",post," + format_double(post.eps_ate) + "," +
                    format_double(post.root_pehe) + "\n" + std::to_string(r) + ",pre," +
                    format_double(pre.eps_ate) + "," + format_double(pre.root_pehe) + "\n";
            } catch (const MissingDataError&) {
                std::lock_guard<std::mutex> lk(agg_mutex);
                errors.push_back("missing:" + std::to_string(r));
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lk(agg_mutex);
                errors.push_back(std::string(e.what()));
            }
        }
    };
    {
        std::vector<std::thread> pool;
        for (int i = 0; i < std::min(opt.jobs, n_replications); ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    for (const auto& err : errors) {
        if (err.rfind("missing:", 0) == 0)
            throw MissingDataError("run_ihdp: replication file missing (" + err + ")");
        throw std::runtime_error("run_ihdp: " + err);
    }
    for (const auto& row : rows) agg << row;

    IhdpReport rep;
    rep.replications = n_replications;
    std::tie(rep.post_eps_ate_mean, rep.post_eps_ate_se) = detail::mean_se(post_ate);
    std::tie(rep.post_root_pehe_mean, rep.post_root_pehe_se) = detail::mean_se(post_pehe);
    std::tie(rep.pre_eps_ate_mean, rep.pre_eps_ate_se) = detail::mean_se(pre_ate);
    std::tie(rep.pre_root_pehe_mean, rep.pre_root_pehe_se) = detail::mean_se(pre_pehe);

    nlohmann::json j{{"replications", rep.replications},
                     {"post", {{"eps_ate", rep.post_eps_ate_mean}, {"root_pehe", rep.post_root_pehe_mean}}},
                     {"pre", {{"eps_ate", rep.pre_eps_ate_mean}, {"root_pehe", rep.pre_root_pehe_mean}}}};
    if (n_replications >= 2) {
        j["post"]["eps_ate_se"] = rep.post_eps_ate_se;
        j["post"]["root_pehe_se"] = rep.post_root_pehe_se;
        j["pre"]["eps_ate_se"] = rep.pre_eps_ate_se;
        j["pre"]["root_pehe_se"] = rep.pre_root_pehe_se;
    }
    std::ofstream jf(opt.out_dir + "/ihdp_report.json");
    jf << j.dump(1) << "\n";
    return rep;
}

// ---------------------------------------------------------------------------
// Plot data: long-format per-figure CSVs from the aggregate.
//
// For each metric and mode, one file varies omega at the smallest dim_w and
// one varies dim_w at the smallest omega; rows are
// `x_var,x_value,beta,mean,stderr` with the spread taken over replications.

namespace detail {
struct AggRow {
    uint64_t dgp_seed;
    int dim_w;
    double omega, beta;
    std::string mode;
    double eps_ate, root_pehe, r2, d_mean;
};

inline std::vector<AggRow> read_aggregate(const std::string& path) {
    std::ifstream f(path);
    check(f.good(), "emit_plot_data: cannot open " + path);
    std::string line;
    check(static_cast<bool>(std::getline(f, line)), "emit_plot_data: empty aggregate");
    check(detail::trim(line) == aggregate_csv_header(),
          "emit_plot_data: unexpected aggregate header");
    std::vector<AggRow> rows;
    while (std::getline(f, line)) {
        if (detail::trim(line).empty()) continue;
        const auto c = split_csv_line(line);
        check(c.size() == 9, "emit_plot_data: bad aggregate row");
        AggRow r;
        r.dgp_seed = std::stoull(c[0]);
        r.dim_w = std::stoi(c[1]);
        r.omega = std::stod(c[2]);
        r.beta = std::stod(c[3]);
        r.mode = c[4];
        r.eps_ate = std::stod(c[5]);
        r.root_pehe = std::stod(c[6]);
        r.r2 = std::stod(c[7]);
        r.d_mean = std::stod(c[8]);
        rows.push_back(r);
    }
    return rows;
}
}  // namespace detail

inline void emit_plot_data(const std::string& aggregate_path, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    const std::vector<detail::AggRow> rows = detail::read_aggregate(aggregate_path);

    double min_omega = 0.0;
    int min_dim_w = 0;
    if (!rows.empty()) {
        min_omega = rows[0].omega;
        min_dim_w = rows[0].dim_w;
        for (const auto& r : rows) {
            min_omega = std::min(min_omega, r.omega);
            min_dim_w = std::min(min_dim_w, r.dim_w);
        }
    }

    const std::vector<std::string> metrics{"root_pehe", "eps_ate"};
    const std::vector<std::string> modes{"post", "pre"};
    for (const std::string& metric : metrics) {
        auto value_of = [&](const detail::AggRow& r) {
            return metric == "root_pehe" ? r.root_pehe : r.eps_ate;
        };
        for (const std::string& mode : modes) {
            for (const std::string& x_var : {std::string("omega"), std::string("dim_w")}) {
                // key: (x_value, beta) -> replication values
                std::map<std::pair<double, double>, Vec> groups;
                for (const auto& r : rows) {
                    if (r.mode != mode) continue;
                    if (x_var == "omega" && r.dim_w != min_dim_w) continue;
                    if (x_var == "dim_w" && r.omega != min_omega) continue;
                    const double xv = x_var == "omega" ? r.omega : static_cast<double>(r.dim_w);
                    groups[{xv, r.beta}].push_back(value_of(r));
                }
                std::ofstream f(out_dir + "/plot_" + metric + "_vs_" + x_var + "_" + mode +
                                ".csv");
                f << "x_var,x_value,beta,mean,stderr\n";
                for (const auto& [key, vals] : groups) {
                    const auto [m, se] = detail::mean_se(vals);
                    f << x_var << "," << format_double(key.first) << ","
                      << format_double(key.second) << "," << format_double(m) << ","
                      << format_double(se) << "\n";
                }
            }
        }
    }
}

}  // namespace intactvae
