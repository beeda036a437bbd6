// Feed-forward networks: parameter container, plain forward evaluation, and
// tape-attached evaluation for training. Hidden layers share one activation;
// the output layer is always affine.
#pragma once

#include <span>
#include <string>
#include <vector>

#include "intactvae/autodiff.hpp"
#include "intactvae/rng.hpp"
#include "intactvae/tensor.hpp"

namespace intactvae {

enum class Activation { identity, relu, leaky_relu, softplus };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::identity: return "identity";
        case Activation::relu: return "relu";
        case Activation::leaky_relu: return "leaky_relu";
        case Activation::softplus: return "softplus";
    }
    return "?";
}

struct DenseLayer {
    Tensor2 weight;  // in x out
    Tensor2 bias;    // 1 x out
};

struct MlpParams {
    std::vector<DenseLayer> layers;
    Activation hidden_activation = Activation::relu;
    double leaky_alpha = 0.01;

    int input_dim() const { return layers.empty() ? 0 : layers.front().weight.rows; }
    int output_dim() const { return layers.empty() ? 0 : layers.back().weight.cols; }
};

// Shape-chain and finiteness checks; `name` prefixes error messages.
inline void validate_mlp(const MlpParams& p, const std::string& name) {
    check(!p.layers.empty(), name + ": no layers");
    for (size_t i = 0; i < p.layers.size(); ++i) {
        const DenseLayer& l = p.layers[i];
        const std::string where = name + " layer " + std::to_string(i);
        check(l.bias.rows == 1 && l.bias.cols == l.weight.cols, where + ": bias shape");
        check(all_finite(l.weight) && all_finite(l.bias), where + ": non-finite parameter");
        if (i + 1 < p.layers.size())
            check(l.weight.cols == p.layers[i + 1].weight.rows,
                  where + ": output width " + std::to_string(l.weight.cols) +
                      " does not chain into layer " + std::to_string(i + 1) + " input width " +
                      std::to_string(p.layers[i + 1].weight.rows));
    }
}

inline double apply_activation(Activation a, double x, double alpha) {
    switch (a) {
        case Activation::identity: return x;
        case Activation::relu: return x > 0.0 ? x : 0.0;
        case Activation::leaky_relu: return x > 0.0 ? x : alpha * x;
        case Activation::softplus: return Graph::softplus_stable(x);
    }
    return x;
}

inline Tensor2 mlp_forward_batch(const MlpParams& p, const Tensor2& input) {
    check(!p.layers.empty(), "mlp_forward: empty network");
    check(input.cols == p.input_dim(),
          "mlp_forward: layer 0 expects input width " + std::to_string(p.input_dim()) +
              ", got " + std::to_string(input.cols));
    Tensor2 h = input;
    for (size_t i = 0; i < p.layers.size(); ++i) {
        const DenseLayer& l = p.layers[i];
        check(h.cols == l.weight.rows,
              "mlp_forward: layer " + std::to_string(i) + " expects input width " +
                  std::to_string(l.weight.rows) + ", got " + std::to_string(h.cols));
        Tensor2 z = matmul(h, l.weight);
        for (int r = 0; r < z.rows; ++r)
            for (int c = 0; c < z.cols; ++c) z(r, c) += l.bias(0, c);
        if (i + 1 < p.layers.size())
            for (double& x : z.data) x = apply_activation(p.hidden_activation, x, p.leaky_alpha);
        h = std::move(z);
    }
    return h;
}

inline Vec mlp_forward(const MlpParams& p, std::span<const double> input) {
    Tensor2 out = mlp_forward_batch(p, Tensor2::from_row(input));
    return out.data;
}

// Parameter leaves of one network registered on a tape.
struct MlpOnGraph {
    std::vector<Graph::Ref> weight;
    std::vector<Graph::Ref> bias;
};

inline MlpOnGraph attach_mlp(Graph& g, const MlpParams& p) {
    MlpOnGraph m;
    for (const DenseLayer& l : p.layers) {
        m.weight.push_back(g.leaf(l.weight));
        m.bias.push_back(g.leaf(l.bias));
    }
    return m;
}

inline Graph::Ref mlp_apply(Graph& g, const MlpParams& p, const MlpOnGraph& m,
                            Graph::Ref input) {
    Graph::Ref h = input;
    for (size_t i = 0; i < p.layers.size(); ++i) {
        h = g.add_rowvec(g.matmul(h, m.weight[i]), m.bias[i]);
        if (i + 1 < p.layers.size()) {
            switch (p.hidden_activation) {
                case Activation::identity: break;
                case Activation::relu: h = g.relu(h); break;
                case Activation::leaky_relu: h = g.leaky_relu(h, p.leaky_alpha); break;
                case Activation::softplus: h = g.softplus(h); break;
            }
        }
    }
    return h;
}

// Gradients mirroring MlpParams layer by layer.
struct MlpGrads {
    std::vector<DenseLayer> layers;
};

inline MlpGrads collect_grads(const Graph& g, const MlpOnGraph& m) {
    MlpGrads out;
    out.layers.resize(m.weight.size());
    for (size_t i = 0; i < m.weight.size(); ++i) {
        out.layers[i].weight = g.grad(m.weight[i]);
        out.layers[i].bias = g.grad(m.bias[i]);
    }
    return out;
}

// Uniform(-sqrt(6/(fan_in+fan_out)), +...) weights, zero biases. Weights are
// drawn row-major, layer by layer, so init is a fixed function of the stream.
inline MlpParams init_mlp(Rng& rng, const std::vector<int>& dims, Activation hidden,
                          double leaky_alpha = 0.01) {
    check(dims.size() >= 2, "init_mlp: need at least input and output dims");
    MlpParams p;
    p.hidden_activation = hidden;
    p.leaky_alpha = leaky_alpha;
    for (size_t i = 0; i + 1 < dims.size(); ++i) {
        DenseLayer l;
        l.weight = Tensor2(dims[i], dims[i + 1]);
        l.bias = Tensor2(1, dims[i + 1], 0.0);
        const double bound = std::sqrt(6.0 / (dims[i] + dims[i + 1]));
        for (double& w : l.weight.data) w = rng.uniform(-bound, bound);
        p.layers.push_back(std::move(l));
    }
    return p;
}

}  // namespace intactvae
