// Evaluation metrics and identification diagnostics.
//
// eps_ate and pehe take per-unit ground-truth potential outcomes; callers
// pass sampled outcomes where those are what the source provides and
// noiseless means where available. affine_recovery fits one diagonal-affine
// map pooled over both treatment groups (the same map for both groups is the
// point of the diagnostic) and reports the pooled and per-group R^2 under
// that single map. conditional_imbalance scores how much the posterior over
// the latent moves when only the treatment flag flips, using the factual
// outcome for both evaluations.
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "intactvae/dataset.hpp"
#include "intactvae/gaussian.hpp"
#include "intactvae/model.hpp"

namespace intactvae {

inline double eps_ate(std::span<const double> y0, std::span<const double> y1,
                      std::span<const double> tau_hat) {
    check(!y0.empty(), "eps_ate: empty input");
    check(y0.size() == y1.size() && y0.size() == tau_hat.size(), "eps_ate: length mismatch");
    double ite = 0.0, tau = 0.0;
    for (size_t i = 0; i < y0.size(); ++i) {
        ite += y1[i] - y0[i];
        tau += tau_hat[i];
    }
    return std::abs((ite - tau) / static_cast<double>(y0.size()));
}

inline double pehe(std::span<const double> y0, std::span<const double> y1,
                   std::span<const double> tau_hat) {
    check(!y0.empty(), "pehe: empty input");
    check(y0.size() == y1.size() && y0.size() == tau_hat.size(), "pehe: length mismatch");
    double s = 0.0;
    for (size_t i = 0; i < y0.size(); ++i) {
        const double e = (y1[i] - y0[i]) - tau_hat[i];
        s += e * e;
    }
    return s / static_cast<double>(y0.size());
}

inline double root_pehe(std::span<const double> y0, std::span<const double> y1,
                        std::span<const double> tau_hat) {
    return std::sqrt(pehe(y0, y1, tau_hat));
}

struct RecoveryFit {
    bool valid = false;
    std::string note;          // reason when invalid
    Vec slope, intercept;      // per coordinate, pooled fit
    double r2_pooled = 0.0;
    double r2_group0 = 0.0;
    double r2_group1 = 0.0;
};

// Least-squares fit z_rec ~ diag(a) * w_true + b pooled over all units;
// group R^2 values reuse the pooled (a, b). Requires matching widths.
// With full_linear the per-coordinate map is replaced by one full linear map
// (normal equations); kept behind a flag for robustness studies.
inline RecoveryFit affine_recovery(const Tensor2& z_rec, const Tensor2& w_true,
                                   const std::vector<int>& t, bool full_linear = false) {
    RecoveryFit fit;
    if (z_rec.cols != w_true.cols) {
        fit.note = "latent widths differ (" + std::to_string(z_rec.cols) + " vs " +
                   std::to_string(w_true.cols) + "); diagnostic skipped";
        return fit;
    }
    check(z_rec.rows == w_true.rows && z_rec.rows == static_cast<int>(t.size()),
          "affine_recovery: row mismatch");
    check(z_rec.rows >= 3, "affine_recovery: too few rows");
    const int n = z_rec.rows;
    const int k = z_rec.cols;

    Tensor2 pred(n, k);
    fit.slope.resize(static_cast<size_t>(k));
    fit.intercept.resize(static_cast<size_t>(k));
    if (!full_linear) {
        for (int j = 0; j < k; ++j) {
            double mw = 0.0, mz = 0.0;
            for (int i = 0; i < n; ++i) {
                mw += w_true(i, j);
                mz += z_rec(i, j);
            }
            mw /= n;
            mz /= n;
            double sww = 0.0, swz = 0.0;
            for (int i = 0; i < n; ++i) {
                const double dw = w_true(i, j) - mw;
                sww += dw * dw;
                swz += dw * (z_rec(i, j) - mz);
            }
            const double a = sww > 0.0 ? swz / sww : 0.0;
            const double b = mz - a * mw;
            fit.slope[static_cast<size_t>(j)] = a;
            fit.intercept[static_cast<size_t>(j)] = b;
            for (int i = 0; i < n; ++i) pred(i, j) = a * w_true(i, j) + b;
        }
    } else {
        // z ~ W A + 1 b^T via normal equations on [W 1].
        const int p = k + 1;
        Tensor2 X(n, p);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < k; ++j) X(i, j) = w_true(i, j);
            X(i, k) = 1.0;
        }
        Tensor2 xtx(p, p), xtz(p, k);
        add_matmul_at_b(xtx, X, X);
        add_matmul_at_b(xtz, X, z_rec);
        // Gaussian elimination with partial pivoting; p is tiny.
        for (int c = 0; c < p; ++c) {
            int piv = c;
            for (int r0 = c + 1; r0 < p; ++r0)
                if (std::abs(xtx(r0, c)) > std::abs(xtx(piv, c))) piv = r0;
            if (std::abs(xtx(piv, c)) < 1e-12) {
                fit.note = "degenerate design in full-linear fit";
                return fit;
            }
            if (piv != c)
                for (int j = 0; j < p; ++j) std::swap(xtx(c, j), xtx(piv, j));
            if (piv != c)
                for (int j = 0; j < k; ++j) std::swap(xtz(c, j), xtz(piv, j));
            for (int r0 = 0; r0 < p; ++r0) {
                if (r0 == c) continue;
                const double fac = xtx(r0, c) / xtx(c, c);
                for (int j = 0; j < p; ++j) xtx(r0, j) -= fac * xtx(c, j);
                for (int j = 0; j < k; ++j) xtz(r0, j) -= fac * xtz(c, j);
            }
        }
        Tensor2 coef(p, k);
        for (int r0 = 0; r0 < p; ++r0)
            for (int j = 0; j < k; ++j) coef(r0, j) = xtz(r0, j) / xtx(r0, r0);
        for (int j = 0; j < k; ++j) {
            fit.slope[static_cast<size_t>(j)] = coef(j, j);
            fit.intercept[static_cast<size_t>(j)] = coef(k, j);
        }
        pred = matmul(X, coef);
    }

    // Unweighted mean of per-coordinate R^2 so the statistic is invariant to
    // per-coordinate affine maps of z_rec.
    auto r2_over = [&](auto include) {
        double acc = 0.0;
        for (int j = 0; j < k; ++j) {
            double mz = 0.0;
            int cnt = 0;
            for (int i = 0; i < n; ++i)
                if (include(i)) {
                    mz += z_rec(i, j);
                    ++cnt;
                }
            if (cnt == 0) return 0.0;
            mz /= cnt;
            double sres = 0.0, stot = 0.0;
            for (int i = 0; i < n; ++i) {
                if (!include(i)) continue;
                const double e = z_rec(i, j) - pred(i, j);
                const double d = z_rec(i, j) - mz;
                sres += e * e;
                stot += d * d;
            }
            if (stot > 0.0) acc += std::max(0.0, 1.0 - sres / stot);
        }
        return acc / static_cast<double>(k);
    };
    fit.r2_pooled = r2_over([](int) { return true; });
    fit.r2_group0 = r2_over([&](int i) { return t[static_cast<size_t>(i)] == 0; });
    fit.r2_group1 = r2_over([&](int i) { return t[static_cast<size_t>(i)] == 1; });
    fit.valid = true;
    return fit;
}

struct ImbalanceSummary {
    Vec per_unit;  // D(x_i) per unit
    double mean = 0.0;
    double median = 0.0;
    double max = 0.0;
};

// D(x) = sum_t sqrt(KL(q_t || q_{1-t}) / 2) with q_t the encoder evaluated
// at (x_i, y_i, t). Using the factual y for both t is an approximation of
// the aggregated per-group posterior; the counterfactual outcome is not
// available.
inline ImbalanceSummary conditional_imbalance(const IntactVaeModel& m, const Dataset& ds) {
    ImbalanceSummary s;
    s.per_unit.resize(static_cast<size_t>(ds.n()));
    for (int i = 0; i < ds.n(); ++i) {
        const DiagonalGaussian q0 = encode(m, ds.x.row(i), ds.y.row(i), 0);
        const DiagonalGaussian q1 = encode(m, ds.x.row(i), ds.y.row(i), 1);
        const double d = std::sqrt(std::max(0.0, kl_diag_gaussians(q0, q1)) / 2.0) +
                         std::sqrt(std::max(0.0, kl_diag_gaussians(q1, q0)) / 2.0);
        s.per_unit[static_cast<size_t>(i)] = d;
    }
    Vec sorted = s.per_unit;
    std::sort(sorted.begin(), sorted.end());
    s.mean = mean(s.per_unit);
    s.median = sorted[sorted.size() / 2];
    s.max = sorted.back();
    return s;
}

struct MetricsReport {
    double eps_ate = 0.0;
    double pehe = 0.0;
    double root_pehe = 0.0;
    RecoveryFit recovery_prior;      // prior mean vs true latent (default diagnostic)
    RecoveryFit recovery_posterior;  // posterior mean at the factual triple
    ImbalanceSummary imbalance;
    std::string mode;  // "post" or "pre"
};

inline nlohmann::json recovery_to_json(const RecoveryFit& f) {
    if (!f.valid) return {{"valid", false}, {"note", f.note}};
    return {{"valid", true},          {"slope", f.slope},
            {"intercept", f.intercept}, {"r2_pooled", f.r2_pooled},
            {"r2_group0", f.r2_group0}, {"r2_group1", f.r2_group1}};
}

inline nlohmann::json report_to_json(const MetricsReport& r) {
    return {{"mode", r.mode},
            {"eps_ate", r.eps_ate},
            {"pehe", r.pehe},
            {"root_pehe", r.root_pehe},
            {"recovery_prior", recovery_to_json(r.recovery_prior)},
            {"recovery_posterior", recovery_to_json(r.recovery_posterior)},
            {"imbalance",
             {{"mean", r.imbalance.mean}, {"median", r.imbalance.median}, {"max", r.imbalance.max}}}};
}

}  // namespace intactvae
