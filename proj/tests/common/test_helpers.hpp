// Shared helpers for the unit and acceptance suites: finite-difference
// gradient oracles and hand-built linear-Gaussian models with closed-form
// marginals. Everything here is independent of the gradient code it checks.
#pragma once

#include <cmath>
#include <functional>

#include "intactvae/intactvae.hpp"

namespace testutil {

using namespace intactvae;

// Central finite differences with step h on every parameter of one network.
// `loss` must re-evaluate the objective from scratch for the given params.
inline MlpGrads fd_grads(MlpParams params, const std::function<double(const MlpParams&)>& loss,
                         double h = 1e-4) {
    MlpGrads out;
    out.layers.resize(params.layers.size());
    for (size_t li = 0; li < params.layers.size(); ++li) {
        out.layers[li].weight = Tensor2(params.layers[li].weight.rows, params.layers[li].weight.cols);
        out.layers[li].bias = Tensor2(1, params.layers[li].bias.cols);
        auto probe = [&](Tensor2& t, Tensor2& g) {
            for (size_t i = 0; i < t.data.size(); ++i) {
                const double keep = t.data[i];
                t.data[i] = keep + h;
                const double up = loss(params);
                t.data[i] = keep - h;
                const double dn = loss(params);
                t.data[i] = keep;
                g.data[i] = (up - dn) / (2.0 * h);
            }
        };
        probe(params.layers[li].weight, out.layers[li].weight);
        probe(params.layers[li].bias, out.layers[li].bias);
    }
    return out;
}

inline double max_rel_err(const MlpGrads& got, const MlpGrads& want, double floor = 1e-6) {
    double worst = 0.0;
    for (size_t li = 0; li < got.layers.size(); ++li) {
        auto scan = [&](const Tensor2& a, const Tensor2& b) {
            for (size_t i = 0; i < a.data.size(); ++i) {
                const double denom = std::max({std::abs(a.data[i]), std::abs(b.data[i]), floor});
                worst = std::max(worst, std::abs(a.data[i] - b.data[i]) / denom);
            }
        };
        scan(got.layers[li].weight, want.layers[li].weight);
        scan(got.layers[li].bias, want.layers[li].bias);
    }
    return worst;
}

// Inverse of softplus(x) + kVarFloor = v, for planting exact variances.
inline double raw_for_variance(double v) {
    const double s = v - kVarFloor;
    // softplus^{-1}(s) = log(exp(s) - 1)
    return std::log(std::expm1(s));
}

inline MlpParams single_layer(const Tensor2& weight, const Tensor2& bias) {
    MlpParams p;
    p.hidden_activation = Activation::identity;
    p.layers.push_back(DenseLayer{weight, bias});
    return p;
}

// Linear-Gaussian generative process with matching model parameters:
//   z | x ~ N(h x + c, k),  y | z ~ N(a z + b, g2),  t ignored by the outcome.
// Everything about it is available in closed form.
struct LinearGaussianToy {
    double h = 0.8, c = 0.2, k = 0.3;
    double a = 1.5, b = -0.4, g2 = 0.25;

    double marginal_mean(double x) const { return a * (h * x + c) + b; }
    double marginal_var() const { return a * a * k + g2; }
    double log_marginal(double x, double y) const {
        const double d = y - marginal_mean(x);
        return -0.5 * (kLog2Pi + std::log(marginal_var()) + d * d / marginal_var());
    }
    double posterior_var() const { return 1.0 / (1.0 / k + a * a / g2); }
    // posterior mean = s * (h x + c) / k + s * a (y - b) / g2
    double posterior_mean(double x, double y) const {
        const double s = posterior_var();
        return s * ((h * x + c) / k + a * (y - b) / g2);
    }

    // Model whose prior matches the truth exactly and whose encoder is the
    // exact posterior; single identity-activation layers throughout.
    IntactVaeModel exact_model() const {
        IntactVaeModel m;
        m.dim_x = 1;
        m.dim_z = 1;
        m.dim_y = 1;
        m.beta = 1.0;
        m.heads = HeadMode::shared;
        {
            Tensor2 w(1, 2);
            w(0, 0) = h;
            w(0, 1) = 0.0;
            Tensor2 bsc(1, 2);
            bsc(0, 0) = c;
            bsc(0, 1) = raw_for_variance(k);
            m.prior_net = single_layer(w, bsc);
        }
        {
            const double s = posterior_var();
            Tensor2 w(3, 2);  // rows: x, y, t
            w(0, 0) = s * h / k;
            w(1, 0) = s * a / g2;
            w(2, 0) = 0.0;
            w(0, 1) = w(1, 1) = w(2, 1) = 0.0;
            Tensor2 bsc(1, 2);
            bsc(0, 0) = s * (c / k - a * b / g2);
            bsc(0, 1) = raw_for_variance(s);
            m.encoder_net = single_layer(w, bsc);
        }
        {
            Tensor2 w(2, 2);  // rows: z, t
            w(0, 0) = a;
            w(1, 0) = 0.0;
            w(0, 1) = w(1, 1) = 0.0;
            Tensor2 bsc(1, 2);
            bsc(0, 0) = b;
            bsc(0, 1) = raw_for_variance(g2);
            m.decoder_net = single_layer(w, bsc);
        }
        validate_model(m);
        return m;
    }

    Dataset sample(int n, Rng& rng) const {
        Dataset ds;
        ds.x = Tensor2(n, 1);
        ds.y = Tensor2(n, 1);
        ds.t.resize(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) {
            const double x = rng.normal();
            const double z = rng.normal(h * x + c, std::sqrt(k));
            const double y = rng.normal(a * z + b, std::sqrt(g2));
            ds.x(i, 0) = x;
            ds.y(i, 0) = y;
            ds.t[static_cast<size_t>(i)] = rng.uniform01() < 0.5 ? 1 : 0;
        }
        return ds;
    }

    double mean_log_marginal(const Dataset& ds) const {
        double s = 0.0;
        for (int i = 0; i < ds.n(); ++i) s += log_marginal(ds.x(i, 0), ds.y(i, 0));
        return s / ds.n();
    }
};

// Mean objective value with the +/-eps noise pair; exact expectation over the
// reparameterization noise for decoders that are linear in z.
inline double elbo_pm1(const IntactVaeModel& m, const Dataset& batch) {
    Tensor2 plus(batch.n(), m.dim_z, 1.0);
    Tensor2 minus(batch.n(), m.dim_z, -1.0);
    return 0.5 * (elbo_beta_fixed(m, batch, plus).breakdown.total +
                  elbo_beta_fixed(m, batch, minus).breakdown.total);
}

}  // namespace testutil
