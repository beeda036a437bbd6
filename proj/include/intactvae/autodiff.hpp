// Reverse-mode automatic differentiation on a per-evaluation tape.
//
// A Graph is built freshly for every loss evaluation: leaves hold parameter
// or data tensors, interior nodes record the primitive and its operands, and
// backward() walks the tape in reverse creation order (creation order is a
// topological order by construction). Gradients are exact for every
// primitive; there is no approximation anywhere in this file.
//
// The primitive set is deliberately small: affine pieces (matmul, row-vector
// bias broadcast), the activations used by the networks, and the elementwise
// functions needed to express Gaussian log-densities, closed-form KL, and the
// reparameterization z = mean + sqrt(var) * eps with eps held constant.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "intactvae/tensor.hpp"

namespace intactvae {

class Graph {
public:
    // Handle into the tape. Plain int keeps call sites compact.
    using Ref = int;

    Ref constant(Tensor2 v) { return push_(Op::kConst, std::move(v), -1, -1, 0.0, false); }

    // A leaf participates in backward(); use for parameters and anything
    // else whose gradient is wanted.
    Ref leaf(Tensor2 v) { return push_(Op::kConst, std::move(v), -1, -1, 0.0, true); }

    Ref matmul(Ref a, Ref b) {
        const Tensor2& ta = value(a);
        const Tensor2& tb = value(b);
        check(ta.cols == tb.rows, "graph matmul: " + shape_str_(ta) + " x " + shape_str_(tb));
        return push_(Op::kMatmul, intactvae::matmul(ta, tb), a, b);
    }

    Ref add(Ref a, Ref b) { return ew_(Op::kAdd, a, b); }
    Ref sub(Ref a, Ref b) { return ew_(Op::kSub, a, b); }
    Ref mul(Ref a, Ref b) { return ew_(Op::kMul, a, b); }
    Ref div(Ref a, Ref b) { return ew_(Op::kDiv, a, b); }

    // m (r x c) + v (1 x c), broadcast over rows.
    Ref add_rowvec(Ref m, Ref v) {
        const Tensor2& tm = value(m);
        const Tensor2& tv = value(v);
        check(tv.rows == 1 && tv.cols == tm.cols,
              "add_rowvec: " + shape_str_(tm) + " + " + shape_str_(tv));
        Tensor2 out = tm;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out(i, j) += tv(0, j);
        return push_(Op::kAddRowvec, std::move(out), m, v);
    }

    // m (r x c) * v (r x 1), broadcast over columns.
    Ref mul_colvec(Ref m, Ref v) {
        const Tensor2& tm = value(m);
        const Tensor2& tv = value(v);
        check(tv.cols == 1 && tv.rows == tm.rows,
              "mul_colvec: " + shape_str_(tm) + " * " + shape_str_(tv));
        Tensor2 out = tm;
        for (int i = 0; i < out.rows; ++i)
            for (int j = 0; j < out.cols; ++j) out(i, j) *= tv(i, 0);
        return push_(Op::kMulColvec, std::move(out), m, v);
    }

    Ref relu(Ref a) {
        return unary_(Op::kRelu, a, [](double x) { return x > 0.0 ? x : 0.0; });
    }
    Ref leaky_relu(Ref a, double alpha) {
        return unary_(Op::kLeakyRelu, a,
                      [alpha](double x) { return x > 0.0 ? x : alpha * x; }, alpha);
    }
    Ref softplus(Ref a) {
        return unary_(Op::kSoftplus, a, [](double x) { return softplus_stable(x); });
    }
    Ref exp(Ref a) {
        return unary_(Op::kExp, a, [](double x) { return std::exp(x); });
    }
    Ref log(Ref a) {
        return unary_(Op::kLog, a, [](double x) { return std::log(x); });
    }
    Ref sqrt(Ref a) {
        return unary_(Op::kSqrt, a, [](double x) { return std::sqrt(x); });
    }
    Ref square(Ref a) {
        return unary_(Op::kSquare, a, [](double x) { return x * x; });
    }
    Ref scale(Ref a, double c) {
        return unary_(Op::kScale, a, [c](double x) { return c * x; }, c);
    }
    Ref add_scalar(Ref a, double c) {
        return unary_(Op::kAddScalar, a, [c](double x) { return x + c; }, c);
    }

    // Sum of all entries, as a 1x1 tensor.
    Ref sum(Ref a) {
        const Tensor2& ta = value(a);
        double s = 0.0;
        for (double x : ta.data) s += x;
        Tensor2 out(1, 1, s);
        return push_(Op::kSum, std::move(out), a, -1);
    }

    // Columns [from, to) of a.
    Ref slice_cols(Ref a, int from, int to) {
        const Tensor2& ta = value(a);
        check(0 <= from && from < to && to <= ta.cols, "slice_cols: bad range");
        Tensor2 out(ta.rows, to - from);
        for (int i = 0; i < ta.rows; ++i)
            for (int j = from; j < to; ++j) out(i, j - from) = ta(i, j);
        Ref r = push_(Op::kSliceCols, std::move(out), a, -1);
        nodes_[static_cast<size_t>(r)].i0 = from;
        return r;
    }

    Ref concat_cols(const std::vector<Ref>& parts) {
        check(!parts.empty(), "concat_cols: empty");
        const int rows = value(parts[0]).rows;
        int cols = 0;
        for (Ref p : parts) {
            check(value(p).rows == rows, "concat_cols: row mismatch");
            cols += value(p).cols;
        }
        Tensor2 out(rows, cols);
        int at = 0;
        for (Ref p : parts) {
            const Tensor2& tp = value(p);
            for (int i = 0; i < rows; ++i)
                for (int j = 0; j < tp.cols; ++j) out(i, at + j) = tp(i, j);
            at += tp.cols;
        }
        Ref r = push_(Op::kConcatCols, std::move(out), -1, -1);
        nodes_[static_cast<size_t>(r)].extra = parts;
        bool ng = false;
        for (Ref p : parts) ng = ng || nodes_[static_cast<size_t>(p)].needs_grad;
        nodes_[static_cast<size_t>(r)].needs_grad = ng;
        return r;
    }

    const Tensor2& value(Ref r) const { return nodes_[static_cast<size_t>(r)].value; }

    // Valid after backward(); zero tensor for nodes the loss does not reach.
    const Tensor2& grad(Ref r) const { return nodes_[static_cast<size_t>(r)].grad; }

    double scalar_value(Ref r) const {
        const Tensor2& t = value(r);
        check(t.rows == 1 && t.cols == 1, "scalar_value: node is not 1x1");
        return t(0, 0);
    }

    // Reverse sweep seeding d(loss)/d(loss) = 1. The loss must be 1x1.
    void backward(Ref loss) {
        const Tensor2& lt = value(loss);
        check(lt.rows == 1 && lt.cols == 1,
              "backward: loss must be a scalar, got " + shape_str_(lt));
        for (auto& n : nodes_) {
            if (n.needs_grad)
                n.grad = Tensor2(n.value.rows, n.value.cols, 0.0);
            else
                n.grad = Tensor2();
        }
        auto& ln = nodes_[static_cast<size_t>(loss)];
        if (!ln.needs_grad) return;  // loss disconnected from every leaf
        ln.grad(0, 0) = 1.0;
        for (int id = loss; id >= 0; --id) backprop_(id);
    }

    static double softplus_stable(double x) {
        return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
    }
    static double sigmoid(double x) {
        return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
    }

private:
    enum class Op : uint8_t {
        kConst,
        kMatmul,
        kAdd,
        kSub,
        kMul,
        kDiv,
        kAddRowvec,
        kMulColvec,
        kRelu,
        kLeakyRelu,
        kSoftplus,
        kExp,
        kLog,
        kSqrt,
        kSquare,
        kScale,
        kAddScalar,
        kSum,
        kSliceCols,
        kConcatCols,
    };

    struct Node {
        Tensor2 value;
        Tensor2 grad;
        Op op = Op::kConst;
        int a = -1;
        int b = -1;
        int i0 = 0;        // slice offset
        double c = 0.0;    // scalar operand / activation slope
        bool needs_grad = false;
        std::vector<int> extra;  // concat operands
    };

    std::vector<Node> nodes_;

    static std::string shape_str_(const Tensor2& t) {
        return "[" + std::to_string(t.rows) + "x" + std::to_string(t.cols) + "]";
    }

    Ref push_(Op op, Tensor2 v, int a, int b, double c = 0.0, bool force_grad = false) {
        Node n;
        n.value = std::move(v);
        n.op = op;
        n.a = a;
        n.b = b;
        n.c = c;
        n.needs_grad = force_grad || (a >= 0 && nodes_[static_cast<size_t>(a)].needs_grad) ||
                       (b >= 0 && nodes_[static_cast<size_t>(b)].needs_grad);
        nodes_.push_back(std::move(n));
        return static_cast<Ref>(nodes_.size() - 1);
    }

    Ref ew_(Op op, Ref a, Ref b) {
        const Tensor2& ta = value(a);
        const Tensor2& tb = value(b);
        check(ta.same_shape(tb), "elementwise op: " + shape_str_(ta) + " vs " + shape_str_(tb));
        Tensor2 out(ta.rows, ta.cols);
        for (size_t i = 0; i < out.data.size(); ++i) {
            switch (op) {
                case Op::kAdd: out.data[i] = ta.data[i] + tb.data[i]; break;
                case Op::kSub: out.data[i] = ta.data[i] - tb.data[i]; break;
                case Op::kMul: out.data[i] = ta.data[i] * tb.data[i]; break;
                case Op::kDiv: out.data[i] = ta.data[i] / tb.data[i]; break;
                default: break;
            }
        }
        return push_(op, std::move(out), a, b);
    }

    template <class F>
    Ref unary_(Op op, Ref a, F f, double c = 0.0) {
        const Tensor2& ta = value(a);
        Tensor2 out(ta.rows, ta.cols);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = f(ta.data[i]);
        return push_(op, std::move(out), a, -1, c);
    }

    void acc_(int target, const Tensor2& g) {
        Node& n = nodes_[static_cast<size_t>(target)];
        if (!n.needs_grad) return;
        for (size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
    }

    void backprop_(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (!n.needs_grad || n.op == Op::kConst) return;
        const Tensor2& g = n.grad;
        Node* na = n.a >= 0 ? &nodes_[static_cast<size_t>(n.a)] : nullptr;
        Node* nb = n.b >= 0 ? &nodes_[static_cast<size_t>(n.b)] : nullptr;
        switch (n.op) {
            case Op::kMatmul:
                if (na && na->needs_grad) add_matmul_a_bt(na->grad, g, nb->value);
                if (nb && nb->needs_grad) add_matmul_at_b(nb->grad, na->value, g);
                break;
            case Op::kAdd:
                acc_(n.a, g);
                acc_(n.b, g);
                break;
            case Op::kSub: {
                acc_(n.a, g);
                if (nb->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i) nb->grad.data[i] -= g.data[i];
                break;
            }
            case Op::kMul:
                if (na->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        na->grad.data[i] += g.data[i] * nb->value.data[i];
                if (nb->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nb->grad.data[i] += g.data[i] * na->value.data[i];
                break;
            case Op::kDiv:
                if (na->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        na->grad.data[i] += g.data[i] / nb->value.data[i];
                if (nb->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        nb->grad.data[i] -= g.data[i] * na->value.data[i] /
                                            (nb->value.data[i] * nb->value.data[i]);
                break;
            case Op::kAddRowvec:
                acc_(n.a, g);
                if (nb->needs_grad)
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) nb->grad(0, j) += g(i, j);
                break;
            case Op::kMulColvec:
                if (na->needs_grad)
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j)
                            na->grad(i, j) += g(i, j) * nb->value(i, 0);
                if (nb->needs_grad)
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j)
                            nb->grad(i, 0) += g(i, j) * na->value(i, j);
                break;
            case Op::kRelu:
                if (na->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        if (na->value.data[i] > 0.0) na->grad.data[i] += g.data[i];
                break;
            case Op::kLeakyRelu:
                if (na->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        na->grad.data[i] +=
                            g.data[i] * (na->value.data[i] > 0.0 ? 1.0 : n.c);
                break;
            case Op::kSoftplus:
                if (na->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        na->grad.data[i] += g.data[i] * sigmoid(na->value.data[i]);
                break;
            case Op::kExp:
                if (na->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        na->grad.data[i] += g.data[i] * n.value.data[i];
                break;
            case Op::kLog:
                if (na->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        na->grad.data[i] += g.data[i] / na->value.data[i];
                break;
            case Op::kSqrt:
                if (na->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        na->grad.data[i] += g.data[i] * 0.5 / n.value.data[i];
                break;
            case Op::kSquare:
                if (na->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        na->grad.data[i] += g.data[i] * 2.0 * na->value.data[i];
                break;
            case Op::kScale:
                if (na->needs_grad)
                    for (size_t i = 0; i < g.data.size(); ++i)
                        na->grad.data[i] += g.data[i] * n.c;
                break;
            case Op::kAddScalar:
                acc_(n.a, g);
                break;
            case Op::kSum:
                if (na->needs_grad) {
                    const double gs = g(0, 0);
                    for (double& x : na->grad.data) x += gs;
                }
                break;
            case Op::kSliceCols:
                if (na->needs_grad)
                    for (int i = 0; i < g.rows; ++i)
                        for (int j = 0; j < g.cols; ++j) na->grad(i, n.i0 + j) += g(i, j);
                break;
            case Op::kConcatCols: {
                int at = 0;
                for (int p : n.extra) {
                    Node& np = nodes_[static_cast<size_t>(p)];
                    if (np.needs_grad)
                        for (int i = 0; i < g.rows; ++i)
                            for (int j = 0; j < np.value.cols; ++j)
                                np.grad(i, j) += g(i, at + j);
                    at += np.value.cols;
                }
                break;
            }
            case Op::kConst:
                break;
        }
    }
};

}  // namespace intactvae
