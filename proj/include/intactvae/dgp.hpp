// Randomized synthetic data-generating processes with a controllable degree
// of covariate overlap, ground-truth potential outcomes, and the true latent
// kept for diagnostics.
//
// Structure of one process:
//   X ~ N(mu, diag(sigma^2))          mu_i ~ U(-0.2, 0.2), sigma_i ~ U(0, 0.2]
//   W | X ~ N(h_w(X), var_w(X))       h_w linear with standard-normal weights
//   T | X ~ Bernoulli(sigmoid(omega * l(X)))   l linear, standard-normal weights
//   Y(t) | W ~ N(f_t(W) / C_t, g_t(W)^2)
//
// The treatment logit l(X) is centered and scaled to unit variance over the
// generated sample before omega is applied. This pins the meaning of the
// overlap knob: the fraction of units with propensity within 0.001 of 0 or 1
// is ~0 at omega = 0, ~0.25 at omega = 6 and ~0.75 at omega = 22 for every
// process, instead of wandering with the draw of the logit direction.
// f_t are leaky-ReLU(0.5) networks of random depth 3..8 with weights uniform
// in (-1.1, -0.9) and biases uniform in +/- sqrt(dim_w); the nonzero biases
// spread the activation kinks across the latent range (whose scale grows
// like sqrt(dim_w) under the near-uniform weights), so two draws of f_t
// generically differ by more than a constant and the family's roughness is
// comparable across latent widths. The normalizer
// (m_t, C_t) centers and rescales each arm's mean-outcome values to zero
// mean and unit variance over its treatment group, keeping outcome levels
// O(1) at every depth; g_t is either the constant 1 or a softplus head
// rescaled into (0, 2]. Normalizers are computed from the generated sample
// itself, at generation time.
//
// The latent-noise map k_w is sampled like h_w but enters through
// softplus * kLatentNoiseScale, keeping variances positive and small; the
// latent is then close to a deterministic score of X, which is the regime
// the identification diagnostics target.
#pragma once

#include <cmath>
#include <tuple>
#include <vector>

#include "intactvae/dataset.hpp"
#include "intactvae/gaussian.hpp"
#include "intactvae/mlp.hpp"
#include "intactvae/rng.hpp"

namespace intactvae {

enum class NoiseMode { heteroscedastic, unit };

inline const char* to_string(NoiseMode m) {
    return m == NoiseMode::heteroscedastic ? "heteroscedastic" : "unit";
}

// Scale of the W|X conditional variance relative to softplus of its linear map.
inline constexpr double kLatentNoiseScale = 0.01;

struct DgpSpec {
    int dim_x = 30;
    int dim_w = 1;
    Vec mu;     // dim_x
    Vec sigma;  // dim_x, entries in (0, 0.2]
    Tensor2 h_w;  // dim_x x dim_w, latent mean map
    Tensor2 k_w;  // dim_x x dim_w, latent noise map (through softplus)
    Vec l;        // dim_x, treatment logit direction
    double omega = 0.0;
    MlpParams f0, f1;  // dim_w -> 1, leaky-ReLU(0.5), depth 3..8
    double c0 = 1.0, c1 = 1.0;  // output scale normalizers; filled by generate()
    double m0 = 0.0, m1 = 0.0;  // output centering constants; filled by generate()
    NoiseMode noise_mode = NoiseMode::heteroscedastic;
    uint64_t seed = 0;
};

namespace detail {
inline MlpParams sample_outcome_net(Rng& rng, int dim_w) {
    const int depth = 3 + rng.below(6);  // layers, uniform in 3..8
    std::vector<int> dims(static_cast<size_t>(depth), dim_w);
    dims.push_back(1);
    MlpParams p;
    p.hidden_activation = Activation::leaky_relu;
    p.leaky_alpha = 0.5;
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        DenseLayer l;
        l.weight = Tensor2(dims[i], dims[i + 1]);
        for (double& w : l.weight.data) w = rng.uniform(-1.1, -0.9);
        const double kink_spread = std::sqrt(static_cast<double>(dim_w));
        l.bias = Tensor2(1, dims[i + 1]);
        for (double& b : l.bias.data) b = rng.uniform(-kink_spread, kink_spread);
        p.layers.push_back(std::move(l));
    }
    return p;
}
}  // namespace detail

inline DgpSpec sample_dgp_spec(Rng& rng, int dim_w, double omega, NoiseMode noise_mode,
                               int dim_x = 30) {
    check(dim_w >= 1, "sample_dgp_spec: dim_w must be >= 1");
    check(omega >= 0.0, "sample_dgp_spec: omega must be >= 0");
    DgpSpec s;
    s.dim_x = dim_x;
    s.dim_w = dim_w;
    s.omega = omega;
    s.noise_mode = noise_mode;
    s.mu.resize(static_cast<size_t>(dim_x));
    s.sigma.resize(static_cast<size_t>(dim_x));
    for (double& v : s.mu) v = rng.uniform(-0.2, 0.2);
    for (double& v : s.sigma) v = 0.2 * (1.0 - rng.uniform01());  // (0, 0.2]
    s.h_w = Tensor2(dim_x, dim_w);
    for (double& v : s.h_w.data) v = rng.normal();
    s.k_w = Tensor2(dim_x, dim_w);
    for (double& v : s.k_w.data) v = rng.normal();
    s.l.resize(static_cast<size_t>(dim_x));
    for (double& v : s.l) v = rng.normal();
    s.f0 = detail::sample_outcome_net(rng, dim_w);
    s.f1 = detail::sample_outcome_net(rng, dim_w);
    return s;
}

// Draws a full dataset of n units: covariates, latent, treatment, both
// potential outcomes, factual outcome, propensity. Draw order: all X rows,
// all W rows, all T draws, then per-unit (eps0, eps1) outcome noise.
// Updates spec.c0/c1 with the normalizers realized on this sample.
inline Dataset generate(DgpSpec& spec, int n, Rng& rng) {
    check(n >= 1, "generate: n must be >= 1");
    const int m = spec.dim_x;
    const int k = spec.dim_w;
    Dataset ds;
    ds.x = Tensor2(n, m);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            ds.x(i, j) = rng.normal(spec.mu[static_cast<size_t>(j)], spec.sigma[static_cast<size_t>(j)]);

    ds.w = Tensor2(n, k);
    const Tensor2 wmean = matmul(ds.x, spec.h_w);
    const Tensor2 wraw = matmul(ds.x, spec.k_w);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < k; ++j) {
            const double var =
                kLatentNoiseScale * Graph::softplus_stable(wraw(i, j)) + kVarFloor;
            ds.w(i, j) = rng.normal(wmean(i, j), std::sqrt(var));
        }

    ds.t.resize(static_cast<size_t>(n));
    ds.propensity.resize(static_cast<size_t>(n));
    Vec logit(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j)
            logit[static_cast<size_t>(i)] += spec.l[static_cast<size_t>(j)] * ds.x(i, j);
    const double lmean = mean(logit);
    double lsd = std::sqrt(variance(logit));
    if (lsd <= 0.0) lsd = 1.0;
    for (int i = 0; i < n; ++i) {
        const double p =
            Graph::sigmoid(spec.omega * (logit[static_cast<size_t>(i)] - lmean) / lsd);
        ds.propensity[static_cast<size_t>(i)] = p;
        ds.t[static_cast<size_t>(i)] = rng.uniform01() < p ? 1 : 0;
    }

    // Raw outcome means, then per-group standardization of each arm.
    Tensor2 raw(n, 2);
    for (int i = 0; i < n; ++i) {
        raw(i, 0) = mlp_forward(spec.f0, ds.w.row(i))[0];
        raw(i, 1) = mlp_forward(spec.f1, ds.w.row(i))[0];
    }
    auto group_stats = [&](int t) {
        Vec vals;
        for (int i = 0; i < n; ++i)
            if (ds.t[static_cast<size_t>(i)] == t) vals.push_back(raw(i, t));
        if (vals.size() < 2)  // degenerate group; fall back to the full sample
            for (int i = 0; i < n; ++i) vals.push_back(raw(i, t));
        const double m = mean(vals);
        const double sd = std::sqrt(variance(vals));
        return std::pair<double, double>{m, sd > 0.0 ? sd : 1.0};
    };
    std::tie(spec.m0, spec.c0) = group_stats(0);
    std::tie(spec.m1, spec.c1) = group_stats(1);
    Tensor2 f(n, 2);
    for (int i = 0; i < n; ++i) {
        f(i, 0) = (raw(i, 0) - spec.m0) / spec.c0;
        f(i, 1) = (raw(i, 1) - spec.m1) / spec.c1;
    }

    // Outcome noise std per unit and arm.
    Tensor2 g(n, 2, 1.0);
    if (spec.noise_mode == NoiseMode::heteroscedastic) {
        for (int t = 0; t < 2; ++t) {
            double mx = 0.0;
            Vec sp(static_cast<size_t>(n));
            for (int i = 0; i < n; ++i) {
                sp[static_cast<size_t>(i)] = Graph::softplus_stable(f(i, t));
                if (ds.t[static_cast<size_t>(i)] == t)
                    mx = std::max(mx, sp[static_cast<size_t>(i)]);
            }
            if (mx == 0.0)
                for (double v : sp) mx = std::max(mx, v);
            for (int i = 0; i < n; ++i) g(i, t) = 2.0 * sp[static_cast<size_t>(i)] / mx;
        }
    }

    ds.y0 = Tensor2(n, 1);
    ds.y1 = Tensor2(n, 1);
    ds.y = Tensor2(n, 1);
    for (int i = 0; i < n; ++i) {
        ds.y0(i, 0) = f(i, 0) + g(i, 0) * rng.normal();
        ds.y1(i, 0) = f(i, 1) + g(i, 1) * rng.normal();
        ds.y(i, 0) = ds.t[static_cast<size_t>(i)] == 0 ? ds.y0(i, 0) : ds.y1(i, 0);
    }
    return ds;
}

// Fraction of units whose propensity is within `threshold` of 0 or 1; only
// synthetic data carries the propensity needed here.
inline double overlap_degree(const Dataset& ds, double threshold = 0.001) {
    check(ds.has_propensity(), "overlap_degree: dataset has no propensity column");
    int bad = 0;
    for (double p : ds.propensity)
        if (std::min(p, 1.0 - p) < threshold) ++bad;
    return static_cast<double>(bad) / static_cast<double>(ds.n());
}

struct SplitDataset {
    Dataset train, val, test;
};

// Disjoint row partition by a shuffled permutation; ground-truth columns are
// carried along. Boundaries use cumulative rounding so 1500 at equal thirds
// gives exactly 500/500/500.
inline SplitDataset split(const Dataset& ds, const std::vector<double>& ratios, Rng& rng) {
    check(ratios.size() == 3, "split: expected three ratios (train, val, test)");
    double sum = 0.0;
    for (double r : ratios) {
        check(r >= 0.0, "split: negative ratio");
        sum += r;
    }
    check(std::abs(sum - 1.0) < 1e-9, "split: ratios must sum to 1");
    const int n = ds.n();
    const std::vector<int> perm = rng.permutation(n);
    const int c0 = static_cast<int>(std::lround(ratios[0] * n));
    const int c1 = static_cast<int>(std::lround((ratios[0] + ratios[1]) * n));
    check(c0 >= 1 && c1 > c0 && n > c1, "split: a split is empty at n = " + std::to_string(n));
    SplitDataset out;
    out.train = select_rows(ds, {perm.begin(), perm.begin() + c0});
    out.val = select_rows(ds, {perm.begin() + c0, perm.begin() + c1});
    out.test = select_rows(ds, {perm.begin() + c1, perm.end()});
    return out;
}

}  // namespace intactvae
