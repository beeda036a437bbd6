// The generative prognostic model and its training objective.
//
// Three networks over a latent Z of width dim_z:
//   prior_net:   x            -> (prior mean, raw prior var), 2*dim_z outputs.
//                Depends on x alone, never on t; this balance is structural.
//   encoder_net: (x, y, t)    -> (posterior mean, raw posterior var)
//   decoder_net: (z, t)       -> (outcome mean, raw outcome var)
// Raw variance heads pass through softplus + kVarFloor, so every emitted
// DiagonalGaussian has variance >= kVarFloor.
//
// Treatment conditioning is configurable: `shared` feeds t as an extra input
// feature of a single network per role, `split` keeps two disjoint networks
// per role and selects by t.
//
// The training objective for a batch is the mean of
//     beta * KL(q(z|x,y,t) || p(z|x)) + (y - f_t(z))^2 / (2 g_t(z)^2)
//     + sum_j log g_t(z)_j
// with one reparameterized z sample per row. This is the negated evidence
// bound with the additive constant (d/2) log 2*pi dropped; ElboBreakdown
// stores the three positive terms plus total = -(beta*kl + recon + log_g).
#pragma once

#include <optional>
#include <string>
#include <utility>

#include <json.hpp>

#include "intactvae/autodiff.hpp"
#include "intactvae/dataset.hpp"
#include "intactvae/gaussian.hpp"
#include "intactvae/mlp.hpp"

namespace intactvae {

enum class HeadMode { shared, split };

inline const char* to_string(HeadMode h) { return h == HeadMode::shared ? "shared" : "split"; }

struct IntactVaeModel {
    int dim_x = 0;
    int dim_z = 0;
    int dim_y = 0;
    double beta = 1.0;
    HeadMode heads = HeadMode::shared;

    MlpParams prior_net;    // x -> 2*dim_z
    MlpParams encoder_net;  // shared: (x,y,t) -> 2*dim_z; split: the t=0 network, (x,y) -> 2*dim_z
    MlpParams decoder_net;  // shared: (z,t) -> 2*dim_y; split: the t=0 network, z -> 2*dim_y
    MlpParams encoder_net1;  // split only
    MlpParams decoder_net1;  // split only
};

inline void validate_model(const IntactVaeModel& m) {
    check(m.dim_x > 0 && m.dim_z > 0 && m.dim_y > 0, "model: dims must be positive");
    check(m.beta > 0.0, "model: beta must be > 0");
    validate_mlp(m.prior_net, "prior_net");
    check(m.prior_net.input_dim() == m.dim_x, "prior_net: input width must equal dim_x");
    check(m.prior_net.output_dim() == 2 * m.dim_z, "prior_net: output width must be 2*dim_z");
    const int enc_in = m.heads == HeadMode::shared ? m.dim_x + m.dim_y + 1 : m.dim_x + m.dim_y;
    const int dec_in = m.heads == HeadMode::shared ? m.dim_z + 1 : m.dim_z;
    validate_mlp(m.encoder_net, "encoder_net");
    check(m.encoder_net.input_dim() == enc_in, "encoder_net: input width mismatch");
    check(m.encoder_net.output_dim() == 2 * m.dim_z, "encoder_net: output width must be 2*dim_z");
    validate_mlp(m.decoder_net, "decoder_net");
    check(m.decoder_net.input_dim() == dec_in, "decoder_net: input width mismatch");
    check(m.decoder_net.output_dim() == 2 * m.dim_y, "decoder_net: output width must be 2*dim_y");
    if (m.heads == HeadMode::split) {
        validate_mlp(m.encoder_net1, "encoder_net1");
        validate_mlp(m.decoder_net1, "decoder_net1");
        check(m.encoder_net1.input_dim() == enc_in && m.encoder_net1.output_dim() == 2 * m.dim_z,
              "encoder_net1: shape mismatch");
        check(m.decoder_net1.input_dim() == dec_in && m.decoder_net1.output_dim() == 2 * m.dim_y,
              "decoder_net1: shape mismatch");
    }
}

namespace detail {
inline DiagonalGaussian split_mean_rawvar(const Vec& out) {
    const size_t n = out.size() / 2;
    DiagonalGaussian g;
    g.mean.assign(out.begin(), out.begin() + static_cast<long>(n));
    g.var.resize(n);
    for (size_t i = 0; i < n; ++i)
        g.var[i] = Graph::softplus_stable(out[n + i]) + kVarFloor;
    return g;
}

inline void check_t(int t) { check(t == 0 || t == 1, "treatment must be 0 or 1"); }
}  // namespace detail

// p(z | x): depends on the covariates only.
inline DiagonalGaussian prior(const IntactVaeModel& m, std::span<const double> x) {
    check(static_cast<int>(x.size()) == m.dim_x, "prior: covariate length mismatch");
    return detail::split_mean_rawvar(mlp_forward(m.prior_net, x));
}

// q(z | x, y, t).
inline DiagonalGaussian encode(const IntactVaeModel& m, std::span<const double> x,
                               std::span<const double> y, int t) {
    check(static_cast<int>(x.size()) == m.dim_x, "encode: covariate length mismatch");
    check(static_cast<int>(y.size()) == m.dim_y, "encode: outcome length mismatch");
    detail::check_t(t);
    Vec in(x.begin(), x.end());
    in.insert(in.end(), y.begin(), y.end());
    if (m.heads == HeadMode::shared) {
        in.push_back(static_cast<double>(t));
        return detail::split_mean_rawvar(mlp_forward(m.encoder_net, in));
    }
    return detail::split_mean_rawvar(mlp_forward(t == 0 ? m.encoder_net : m.encoder_net1, in));
}

// p(y | z, t).
inline DiagonalGaussian decode(const IntactVaeModel& m, std::span<const double> z, int t) {
    check(static_cast<int>(z.size()) == m.dim_z, "decode: latent length mismatch");
    detail::check_t(t);
    if (m.heads == HeadMode::shared) {
        Vec in(z.begin(), z.end());
        in.push_back(static_cast<double>(t));
        return detail::split_mean_rawvar(mlp_forward(m.decoder_net, in));
    }
    return detail::split_mean_rawvar(mlp_forward(t == 0 ? m.decoder_net : m.decoder_net1, z));
}

struct ElboBreakdown {
    double kl_term = 0.0;     // mean KL(q || prior), >= 0
    double recon_term = 0.0;  // mean squared reconstruction weighted by 1/(2 g^2)
    double log_g_term = 0.0;  // mean sum_j log g_j = (1/2) log var_j
    double total = 0.0;       // -(beta*kl + recon + log_g); higher is better
};

struct ModelGrads {
    MlpGrads prior, encoder, decoder;
    MlpGrads encoder1, decoder1;  // split heads only
};

struct ElboResult {
    double loss = 0.0;  // beta*kl + recon + log_g, the quantity minimized
    ElboBreakdown breakdown;
};

namespace detail {

struct ElboGraph {
    Graph g;
    MlpOnGraph prior, enc, dec, enc1, dec1;
    Graph::Ref loss = -1;
    Graph::Ref kl_sum_rows = -1, recon_sum_rows = -1, logg_sum_rows = -1;
    Graph::Ref kl_term = -1, recon_term = -1, logg_term = -1;
};

// Builds the objective for one batch with the given reparameterization noise
// (rows x dim_z). Parameters become leaves so callers can pull gradients.
inline ElboGraph build_elbo_graph(const IntactVaeModel& m, const Dataset& batch,
                                  const Tensor2& noise) {
    check(batch.n() > 0, "elbo: empty batch");
    check(m.beta > 0.0, "elbo: beta must be > 0");
    check(batch.dim_x() == m.dim_x && batch.dim_y() == m.dim_y, "elbo: batch dims mismatch");
    check(noise.rows == batch.n() && noise.cols == m.dim_z, "elbo: noise shape mismatch");
    const int B = batch.n();
    const int n = m.dim_z;
    const int d = m.dim_y;

    ElboGraph eg;
    Graph& g = eg.g;
    const Graph::Ref X = g.constant(batch.x);
    const Graph::Ref Y = g.constant(batch.y);
    Tensor2 tcol(B, 1);
    for (int i = 0; i < B; ++i) {
        detail::check_t(batch.t[static_cast<size_t>(i)]);
        tcol(i, 0) = static_cast<double>(batch.t[static_cast<size_t>(i)]);
    }
    const Graph::Ref T = g.constant(tcol);
    const Graph::Ref N = g.constant(noise);

    auto var_head = [&](Graph::Ref raw) { return g.add_scalar(g.softplus(raw), kVarFloor); };

    eg.prior = attach_mlp(g, m.prior_net);
    const Graph::Ref prior_out = mlp_apply(g, m.prior_net, eg.prior, X);
    const Graph::Ref h = g.slice_cols(prior_out, 0, n);
    const Graph::Ref k = var_head(g.slice_cols(prior_out, n, 2 * n));

    Graph::Ref mask0 = -1, mask1 = -1;
    if (m.heads == HeadMode::split) {
        Tensor2 m0t(B, 1);
        for (int i = 0; i < B; ++i) m0t(i, 0) = 1.0 - tcol(i, 0);
        mask0 = g.constant(m0t);
        mask1 = g.constant(tcol);
    }

    Graph::Ref enc_out;
    if (m.heads == HeadMode::shared) {
        eg.enc = attach_mlp(g, m.encoder_net);
        enc_out = mlp_apply(g, m.encoder_net, eg.enc, g.concat_cols({X, Y, T}));
    } else {
        const Graph::Ref enc_in = g.concat_cols({X, Y});
        eg.enc = attach_mlp(g, m.encoder_net);
        eg.enc1 = attach_mlp(g, m.encoder_net1);
        enc_out = g.add(g.mul_colvec(mlp_apply(g, m.encoder_net, eg.enc, enc_in), mask0),
                        g.mul_colvec(mlp_apply(g, m.encoder_net1, eg.enc1, enc_in), mask1));
    }

    const Graph::Ref r = g.slice_cols(enc_out, 0, n);
    const Graph::Ref s = var_head(g.slice_cols(enc_out, n, 2 * n));
    const Graph::Ref z = g.add(r, g.mul(g.sqrt(s), N));

    Graph::Ref dec_out;
    if (m.heads == HeadMode::shared) {
        eg.dec = attach_mlp(g, m.decoder_net);
        dec_out = mlp_apply(g, m.decoder_net, eg.dec, g.concat_cols({z, T}));
    } else {
        eg.dec = attach_mlp(g, m.decoder_net);
        eg.dec1 = attach_mlp(g, m.decoder_net1);
        dec_out = g.add(g.mul_colvec(mlp_apply(g, m.decoder_net, eg.dec, z), mask0),
                        g.mul_colvec(mlp_apply(g, m.decoder_net1, eg.dec1, z), mask1));
    }
    const Graph::Ref f = g.slice_cols(dec_out, 0, d);
    const Graph::Ref gvar = var_head(g.slice_cols(dec_out, d, 2 * d));

    // KL(q||p) per coordinate: (log k - log s + (s + (r-h)^2)/k - 1) / 2
    const Graph::Ref kl_el = g.scale(
        g.add(g.sub(g.log(k), g.log(s)),
              g.add_scalar(g.div(g.add(s, g.square(g.sub(r, h))), k), -1.0)),
        0.5);
    const Graph::Ref recon_el = g.div(g.square(g.sub(Y, f)), g.scale(gvar, 2.0));
    const Graph::Ref logg_el = g.scale(g.log(gvar), 0.5);
    eg.kl_sum_rows = kl_el;
    eg.recon_sum_rows = recon_el;
    eg.logg_sum_rows = logg_el;

    const double invB = 1.0 / static_cast<double>(B);
    eg.kl_term = g.scale(g.sum(kl_el), invB);
    eg.recon_term = g.scale(g.sum(recon_el), invB);
    eg.logg_term = g.scale(g.sum(logg_el), invB);
    eg.loss = g.add(g.add(g.scale(eg.kl_term, m.beta), eg.recon_term), eg.logg_term);
    return eg;
}

inline void throw_if_nonfinite_loss(const ElboGraph& eg, double loss) {
    if (std::isfinite(loss)) return;
    const Graph& g = eg.g;
    const Tensor2& kl = g.value(eg.kl_sum_rows);
    const Tensor2& rc = g.value(eg.recon_sum_rows);
    const Tensor2& lg = g.value(eg.logg_sum_rows);
    for (int i = 0; i < kl.rows; ++i) {
        double rowsum = 0.0;
        for (int j = 0; j < kl.cols; ++j) rowsum += kl(i, j);
        for (int j = 0; j < rc.cols; ++j) rowsum += rc(i, j) + lg(i, j);
        if (!std::isfinite(rowsum))
            throw std::runtime_error("elbo: non-finite objective at batch row " +
                                     std::to_string(i));
    }
    throw std::runtime_error("elbo: non-finite objective");
}

inline ElboResult result_from_graph(const ElboGraph& eg) {
    ElboResult r;
    r.breakdown.kl_term = eg.g.scalar_value(eg.kl_term);
    r.breakdown.recon_term = eg.g.scalar_value(eg.recon_term);
    r.breakdown.log_g_term = eg.g.scalar_value(eg.logg_term);
    r.loss = eg.g.scalar_value(eg.loss);
    r.breakdown.total = -r.loss;
    throw_if_nonfinite_loss(eg, r.loss);
    return r;
}

}  // namespace detail

inline Tensor2 draw_noise(int rows, int cols, Rng& rng) {
    Tensor2 n(rows, cols);
    for (double& x : n.data) x = rng.normal();
    return n;
}

// Objective with explicitly supplied reparameterization noise. Deterministic;
// used by gradient checks and quadrature-style evaluations.
inline ElboResult elbo_beta_fixed(const IntactVaeModel& m, const Dataset& batch,
                                  const Tensor2& noise) {
    detail::ElboGraph eg = detail::build_elbo_graph(m, batch, noise);
    return detail::result_from_graph(eg);
}

// Objective with one fresh z sample per row.
inline ElboResult elbo_beta(const IntactVaeModel& m, const Dataset& batch, Rng& rng) {
    return elbo_beta_fixed(m, batch, draw_noise(batch.n(), m.dim_z, rng));
}

// Objective plus gradients for all networks.
inline ElboResult elbo_beta_grad(const IntactVaeModel& m, const Dataset& batch,
                                 const Tensor2& noise, ModelGrads& grads) {
    detail::ElboGraph eg = detail::build_elbo_graph(m, batch, noise);
    ElboResult r = detail::result_from_graph(eg);
    eg.g.backward(eg.loss);
    grads.prior = collect_grads(eg.g, eg.prior);
    grads.encoder = collect_grads(eg.g, eg.enc);
    grads.decoder = collect_grads(eg.g, eg.dec);
    if (m.heads == HeadMode::split) {
        grads.encoder1 = collect_grads(eg.g, eg.enc1);
        grads.decoder1 = collect_grads(eg.g, eg.dec1);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Checkpoint serialization (versioned JSON document).

namespace detail {
inline nlohmann::json net_to_json(const MlpParams& p) {
    nlohmann::json layers = nlohmann::json::array();
    for (const DenseLayer& l : p.layers) {
        nlohmann::json w = nlohmann::json::array();
        for (int i = 0; i < l.weight.rows; ++i) {
            nlohmann::json row = nlohmann::json::array();
            for (int j = 0; j < l.weight.cols; ++j) row.push_back(l.weight(i, j));
            w.push_back(std::move(row));
        }
        nlohmann::json b = nlohmann::json::array();
        for (int j = 0; j < l.bias.cols; ++j) b.push_back(l.bias(0, j));
        layers.push_back({{"weight", std::move(w)}, {"bias", std::move(b)}});
    }
    return {{"activation", to_string(p.hidden_activation)},
            {"leaky_alpha", p.leaky_alpha},
            {"layers", std::move(layers)}};
}

inline MlpParams net_from_json(const nlohmann::json& j) {
    MlpParams p;
    const std::string act = j.at("activation").get<std::string>();
    if (act == "identity") p.hidden_activation = Activation::identity;
    else if (act == "relu") p.hidden_activation = Activation::relu;
    else if (act == "leaky_relu") p.hidden_activation = Activation::leaky_relu;
    else if (act == "softplus") p.hidden_activation = Activation::softplus;
    else throw std::runtime_error("checkpoint: unknown activation '" + act + "'");
    p.leaky_alpha = j.at("leaky_alpha").get<double>();
    for (const auto& lj : j.at("layers")) {
        DenseLayer l;
        const auto& w = lj.at("weight");
        const int rows = static_cast<int>(w.size());
        const int cols = rows > 0 ? static_cast<int>(w[0].size()) : 0;
        l.weight = Tensor2(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j2 = 0; j2 < cols; ++j2) l.weight(i, j2) = w[static_cast<size_t>(i)][static_cast<size_t>(j2)].get<double>();
        const auto& b = lj.at("bias");
        l.bias = Tensor2(1, static_cast<int>(b.size()));
        for (int j2 = 0; j2 < l.bias.cols; ++j2) l.bias(0, j2) = b[static_cast<size_t>(j2)].get<double>();
        p.layers.push_back(std::move(l));
    }
    return p;
}
}  // namespace detail

inline constexpr const char* kCheckpointFormat = "intact-vae-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json model_to_json(const IntactVaeModel& m) {
    nlohmann::json j{{"format", kCheckpointFormat},
                     {"version", kCheckpointVersion},
                     {"dim_x", m.dim_x},
                     {"dim_z", m.dim_z},
                     {"dim_y", m.dim_y},
                     {"beta", m.beta},
                     {"heads", to_string(m.heads)},
                     {"prior_net", detail::net_to_json(m.prior_net)},
                     {"encoder_net", detail::net_to_json(m.encoder_net)},
                     {"decoder_net", detail::net_to_json(m.decoder_net)}};
    if (m.heads == HeadMode::split) {
        j["encoder_net1"] = detail::net_to_json(m.encoder_net1);
        j["decoder_net1"] = detail::net_to_json(m.decoder_net1);
    }
    return j;
}

inline IntactVaeModel model_from_json(const nlohmann::json& j) {
    check(j.value("format", "") == kCheckpointFormat, "checkpoint: unrecognized format tag");
    check(j.value("version", -1) == kCheckpointVersion, "checkpoint: unsupported version");
    IntactVaeModel m;
    m.dim_x = j.at("dim_x").get<int>();
    m.dim_z = j.at("dim_z").get<int>();
    m.dim_y = j.at("dim_y").get<int>();
    m.beta = j.at("beta").get<double>();
    m.heads = j.at("heads").get<std::string>() == "split" ? HeadMode::split : HeadMode::shared;
    m.prior_net = detail::net_from_json(j.at("prior_net"));
    m.encoder_net = detail::net_from_json(j.at("encoder_net"));
    m.decoder_net = detail::net_from_json(j.at("decoder_net"));
    if (m.heads == HeadMode::split) {
        m.encoder_net1 = detail::net_from_json(j.at("encoder_net1"));
        m.decoder_net1 = detail::net_from_json(j.at("decoder_net1"));
    }
    validate_model(m);
    return m;
}

inline void save_model(const IntactVaeModel& m, const std::string& path) {
    std::ofstream f(path);
    check(f.good(), "save_model: cannot open " + path);
    f << model_to_json(m).dump(1) << "\n";
    check(f.good(), "save_model: write failed for " + path);
}

inline IntactVaeModel load_model(const std::string& path) {
    std::ifstream f(path);
    check(f.good(), "load_model: cannot open " + path);
    nlohmann::json j;
    f >> j;
    return model_from_json(j);
}

}  // namespace intactvae
