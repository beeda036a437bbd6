// Potential-outcome and CATE estimation from a trained model.
//
// Post-treatment: z is drawn from the posterior at the unit's factual triple
// (x_i, y_i, t_i); the counterfactual assignment t_hat enters the decoder
// only. Pre-treatment: z is drawn from the prior at x, so no (y, t) is
// needed. Either way the estimate is the Monte Carlo mean of the decoder
// mean over L draws.
//
// Each unit gets its own noise stream derived from the master seed and a
// hash of the unit's own values, so results are unchanged by row order and
// both counterfactual arms of a unit share z draws.
#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "intactvae/dataset.hpp"
#include "intactvae/gaussian.hpp"
#include "intactvae/model.hpp"

namespace intactvae {

enum class EstimationMode { post, pre };

inline const char* to_string(EstimationMode m) {
    return m == EstimationMode::post ? "post" : "pre";
}

struct CateEstimates {
    Tensor2 mu0_hat;  // n x d
    Tensor2 mu1_hat;  // n x d
    Tensor2 tau_hat;  // n x d, mu1_hat - mu0_hat
    EstimationMode mode = EstimationMode::post;
    int mc_samples = 0;
};

namespace detail {
inline uint64_t unit_stream(uint64_t seed, std::span<const double> x,
                            std::span<const double> y, const int* t) {
    uint64_t h = hash_bytes(x.data(), x.size_bytes());
    if (!y.empty()) h = hash_bytes(y.data(), y.size_bytes(), h);
    if (t) h = hash_bytes(t, sizeof(*t), h);
    return derive_seed(seed, Stream::estimate, h);
}

inline Vec mc_mean_outcome(const IntactVaeModel& m, const DiagonalGaussian& z_dist,
                           int t_hat, int L, Rng& rng) {
    Vec acc(static_cast<size_t>(m.dim_y), 0.0);
    for (int s = 0; s < L; ++s) {
        const Vec z = gaussian_sample(z_dist, rng);
        const DiagonalGaussian out = decode(m, z, t_hat);
        for (size_t j = 0; j < acc.size(); ++j) acc[j] += out.mean[j];
    }
    for (double& v : acc) v /= static_cast<double>(L);
    return acc;
}
}  // namespace detail

// Posterior estimate of the expected outcome of unit i under assignment t_hat.
inline Vec estimate_po_post(const IntactVaeModel& m, const Dataset& ds, int i, int t_hat,
                            int L, uint64_t seed) {
    check(i >= 0 && i < ds.n(), "estimate_po_post: unit index out of range");
    check(L >= 1, "estimate_po_post: L must be >= 1");
    const int t_i = ds.t[static_cast<size_t>(i)];
    const DiagonalGaussian q = encode(m, ds.x.row(i), ds.y.row(i), t_i);
    Rng rng(detail::unit_stream(seed, ds.x.row(i), ds.y.row(i), &t_i));
    return detail::mc_mean_outcome(m, q, t_hat, L, rng);
}

// Prior (covariates-only) estimate of the expected outcome under t_hat.
inline Vec estimate_po_pre(const IntactVaeModel& m, std::span<const double> x, int t_hat,
                           int L, uint64_t seed) {
    check(L >= 1, "estimate_po_pre: L must be >= 1");
    const DiagonalGaussian p = prior(m, x);
    Rng rng(detail::unit_stream(seed, x, {}, nullptr));
    return detail::mc_mean_outcome(m, p, t_hat, L, rng);
}

inline CateEstimates cate(const IntactVaeModel& m, const Dataset& ds, EstimationMode mode,
                          int L, uint64_t seed) {
    check(ds.dim_x() == m.dim_x, "cate: dataset dims do not match model");
    if (mode == EstimationMode::post)
        check(ds.dim_y() == m.dim_y, "cate: post mode needs factual outcomes matching dim_y");
    CateEstimates est;
    est.mode = mode;
    est.mc_samples = L;
    est.mu0_hat = Tensor2(ds.n(), m.dim_y);
    est.mu1_hat = Tensor2(ds.n(), m.dim_y);
    est.tau_hat = Tensor2(ds.n(), m.dim_y);
    for (int i = 0; i < ds.n(); ++i) {
        Vec mu0, mu1;
        if (mode == EstimationMode::post) {
            mu0 = estimate_po_post(m, ds, i, 0, L, seed);
            mu1 = estimate_po_post(m, ds, i, 1, L, seed);
        } else {
            mu0 = estimate_po_pre(m, ds.x.row(i), 0, L, seed);
            mu1 = estimate_po_pre(m, ds.x.row(i), 1, L, seed);
        }
        for (int j = 0; j < m.dim_y; ++j) {
            est.mu0_hat(i, j) = mu0[static_cast<size_t>(j)];
            est.mu1_hat(i, j) = mu1[static_cast<size_t>(j)];
            est.tau_hat(i, j) = mu1[static_cast<size_t>(j)] - mu0[static_cast<size_t>(j)];
        }
    }
    return est;
}

// Mean of tau_hat over units (univariate outcome).
inline double ate(const CateEstimates& est) {
    check(est.tau_hat.rows > 0, "ate: empty estimates");
    check(est.tau_hat.cols == 1, "ate: defined for univariate outcomes");
    return mean(est.tau_hat.data);
}

inline void write_estimates_csv(const CateEstimates& est, const std::string& path) {
    check(est.tau_hat.cols == 1, "write_estimates_csv: univariate outcomes only");
    std::ofstream f(path);
    check(f.good(), "write_estimates_csv: cannot open " + path);
    f << "unit,mu0_hat,mu1_hat,tau_hat\n";
    for (int i = 0; i < est.tau_hat.rows; ++i)
        f << i << "," << format_double(est.mu0_hat(i, 0)) << ","
          << format_double(est.mu1_hat(i, 0)) << "," << format_double(est.tau_hat(i, 0))
          << "\n";
}

}  // namespace intactvae
