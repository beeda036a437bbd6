// Diagonal-Gaussian algebra: sampling, exact log density, closed-form KL.
// Every variance in the library is produced as softplus(raw) + kVarFloor, so
// a DiagonalGaussian always has strictly positive variances.
#pragma once

#include <cmath>
#include <span>

#include "intactvae/rng.hpp"
#include "intactvae/tensor.hpp"

namespace intactvae {

// Lower bound on any variance head.
inline constexpr double kVarFloor = 1e-4;

inline constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

struct DiagonalGaussian {
    Vec mean;
    Vec var;  // strictly positive, >= kVarFloor when produced by a model head

    int dim() const { return static_cast<int>(mean.size()); }
};

inline void validate(const DiagonalGaussian& g) {
    check(g.mean.size() == g.var.size(), "DiagonalGaussian: mean/var length mismatch");
    for (double v : g.var) check(v > 0.0, "DiagonalGaussian: non-positive variance");
}

// mean + sqrt(var) * eps with eps ~ N(0, I); one normal per coordinate in order.
inline Vec gaussian_sample(const DiagonalGaussian& g, Rng& rng) {
    Vec out(g.mean.size());
    for (size_t i = 0; i < out.size(); ++i)
        out[i] = g.mean[i] + std::sqrt(g.var[i]) * rng.normal();
    return out;
}

inline double gaussian_log_density(const DiagonalGaussian& g, std::span<const double> x) {
    check(x.size() == g.mean.size(), "gaussian_log_density: length mismatch");
    double lp = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - g.mean[i];
        lp += -0.5 * (kLog2Pi + std::log(g.var[i]) + d * d / g.var[i]);
    }
    return lp;
}

// KL(q || p) for diagonal Gaussians, summed over coordinates. Non-negative,
// zero exactly when the parameters coincide.
inline double kl_diag_gaussians(const DiagonalGaussian& q, const DiagonalGaussian& p) {
    check(q.mean.size() == p.mean.size(), "kl_diag_gaussians: length mismatch");
    double kl = 0.0;
    for (size_t i = 0; i < q.mean.size(); ++i) {
        const double d = q.mean[i] - p.mean[i];
        kl += 0.5 * (std::log(p.var[i] / q.var[i]) + (q.var[i] + d * d) / p.var[i] - 1.0);
    }
    return kl;
}

}  // namespace intactvae
