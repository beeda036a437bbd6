// Adam with bias correction, one state per network.
#pragma once

#include <cstdint>
#include <string>

#include "intactvae/mlp.hpp"
#include "intactvae/tensor.hpp"

namespace intactvae {

struct AdamState {
    int64_t step = 0;
    std::vector<DenseLayer> m;  // first moments, mirrors the parameter layout
    std::vector<DenseLayer> v;  // second moments
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

inline AdamState make_adam(const MlpParams& params, double lr) {
    AdamState s;
    s.lr = lr;
    for (const DenseLayer& l : params.layers) {
        DenseLayer zero{Tensor2(l.weight.rows, l.weight.cols, 0.0),
                        Tensor2(1, l.bias.cols, 0.0)};
        s.m.push_back(zero);
        s.v.push_back(zero);
    }
    return s;
}

namespace detail {
inline void adam_update_tensor(Tensor2& p, const Tensor2& g, Tensor2& m, Tensor2& v,
                               const AdamState& s, double bc1, double bc2,
                               const std::string& path) {
    check(p.same_shape(g), "adam_step: gradient shape mismatch at " + path);
    for (size_t i = 0; i < p.data.size(); ++i) {
        const double gi = g.data[i];
        if (!std::isfinite(gi))
            throw std::runtime_error("adam_step: non-finite gradient at " + path + "[" +
                                     std::to_string(i) + "]");
        m.data[i] = s.beta1 * m.data[i] + (1.0 - s.beta1) * gi;
        v.data[i] = s.beta2 * v.data[i] + (1.0 - s.beta2) * gi * gi;
        const double mhat = m.data[i] / bc1;
        const double vhat = v.data[i] / bc2;
        p.data[i] -= s.lr * mhat / (std::sqrt(vhat) + s.eps);
    }
}
}  // namespace detail

// One optimizer step in place. `path` names the parameter group in errors.
inline void adam_step(AdamState& state, MlpParams& params, const MlpGrads& grads,
                      const std::string& path = "params") {
    check(grads.layers.size() == params.layers.size(),
          "adam_step: layer count mismatch at " + path);
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < params.layers.size(); ++i) {
        const std::string layer_path = path + " layer " + std::to_string(i);
        detail::adam_update_tensor(params.layers[i].weight, grads.layers[i].weight,
                                   state.m[i].weight, state.v[i].weight, state, bc1, bc2,
                                   layer_path + " weight");
        detail::adam_update_tensor(params.layers[i].bias, grads.layers[i].bias,
                                   state.m[i].bias, state.v[i].bias, state, bc1, bc2,
                                   layer_path + " bias");
    }
}

}  // namespace intactvae
