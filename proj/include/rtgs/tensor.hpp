#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "rtgs/common.hpp"

namespace rtgs {

using Shape = std::vector<size_t>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string r = "[";
    for (size_t i = 0; i < s.size(); ++i) r += (i ? "x" : "") + std::to_string(s[i]);
    return r + "]";
}

// ---------------------------------------------------------------------------
// Reverse-mode autodiff over dense 64-bit tensors.
//
// Every op builds a node holding its value and a closure that routes the
// node's gradient into its parents. backward() seeds d(loss)/d(loss) = 1 and
// walks the graph once in reverse topological order. Execution is a dynamic
// tape: the graph is rebuilt every training step and dropped afterwards.

struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // allocated on first accumulation
    bool requires_grad = false;
    uint64_t id = 0;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<TensorNode> n) : node_(std::move(n)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), 0.0, requires_grad);
    }
    static Tensor filled(Shape shape, double v, bool requires_grad = false) {
        auto n = fresh_node();
        n->shape = std::move(shape);
        n->value.assign(shape_numel(n->shape), v);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }
    static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            fail("tensor data length ", data.size(), " does not match shape ", shape_str(shape));
        auto n = fresh_node();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return Tensor(n);
    }
    static Tensor scalar(double v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    size_t numel() const { return node_->numel(); }
    size_t dim(size_t i) const { return node_->shape[i]; }
    uint64_t id() const { return node_->id; }
    bool requires_grad() const { return node_->requires_grad; }

    std::vector<double>& data() { return node_->value; }
    const std::vector<double>& data() const { return node_->value; }
    std::vector<double>& grad() {
        node_->ensure_grad();
        return node_->grad;
    }
    const std::vector<double>& grad_or_empty() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    void zero_grad() { node_->grad.clear(); }

    double item() const {
        if (numel() != 1) fail("item() on non-scalar tensor of shape ", shape_str(shape()));
        return node_->value[0];
    }

    std::shared_ptr<TensorNode> node() const { return node_; }

    // Value copy detached from the graph.
    Tensor detach() const {
        return from_data(shape(), data(), false);
    }

  private:
    static std::shared_ptr<TensorNode> fresh_node() {
        static uint64_t next_id = 0;
        auto n = std::make_shared<TensorNode>();
        n->id = ++next_id;
        return n;
    }
    friend Tensor make_op(Shape shape, std::vector<double> value,
                          std::vector<Tensor> parents,
                          std::function<void(TensorNode&)> backward_fn);

    std::shared_ptr<TensorNode> node_;
};

inline Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents,
                      std::function<void(TensorNode&)> backward_fn) {
    auto n = std::make_shared<TensorNode>();
    static uint64_t next_op_id = 1ULL << 32;
    n->id = ++next_op_id;
    n->shape = std::move(shape);
    n->value = std::move(value);
    for (auto& p : parents) {
        if (p.node()->requires_grad) n->requires_grad = true;
        n->parents.push_back(p.node());
    }
    if (n->requires_grad) n->backward_fn = std::move(backward_fn);
    return Tensor(n);
}

// Accumulate src into the parent's gradient if it participates in the graph.
inline void accum_grad(const std::shared_ptr<TensorNode>& p, size_t i, double v) {
    if (p->requires_grad) p->grad[i] += v;
}

inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        fail("backward() requires a scalar loss, got shape ", shape_str(loss.shape()));
    if (!loss.requires_grad()) return;

    // Iterative post-order DFS over parents; reverse gives topological order.
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    std::vector<std::pair<TensorNode*, size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode* p = node->parents[idx++].get();
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (TensorNode* n : order) n->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise ops

namespace detail {

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape())
        fail(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
}

template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    check_same_shape(a, b, name);
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i], b.data()[i]);
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn, bwd](TensorNode& n) {
        for (size_t i = 0; i < n.numel(); ++i) {
            auto [da, db] = bwd(an->value[i], bn->value[i], n.value[i]);
            accum_grad(an, i, da * n.grad[i]);
            accum_grad(bn, i, db * n.grad[i]);
        }
    });
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, Fwd fwd, Bwd bwd) {
    std::vector<double> out(a.numel());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.data()[i]);
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, bwd](TensorNode& n) {
        for (size_t i = 0; i < n.numel(); ++i)
            accum_grad(an, i, bwd(an->value[i], n.value[i]) * n.grad[i]);
    });
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op("add", a, b, [](double x, double y) { return x + y; },
                             [](double, double, double) { return std::pair{1.0, 1.0}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op("sub", a, b, [](double x, double y) { return x - y; },
                             [](double, double, double) { return std::pair{1.0, -1.0}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op("mul", a, b, [](double x, double y) { return x * y; },
                             [](double x, double y, double) { return std::pair{y, x}; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op("div", a, b, [](double x, double y) { return x / y; },
                             [](double x, double y, double) {
                                 return std::pair{1.0 / y, -x / (y * y)};
                             });
}

inline Tensor scale(const Tensor& a, double s) {
    return detail::unary_op(a, [s](double x) { return x * s; },
                            [s](double, double) { return s; });
}

inline Tensor offset(const Tensor& a, double c) {
    return detail::unary_op(a, [c](double x) { return x + c; },
                            [](double, double) { return 1.0; });
}

inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }

inline Tensor relu(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                            [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return sigmoid(x); },
                            [](double, double y) { return y * (1.0 - y); });
}

inline Tensor exp(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::exp(x); },
                            [](double, double y) { return y; });
}

inline Tensor log(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::log(x); },
                            [](double x, double) { return 1.0 / x; });
}

inline Tensor sqrt(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return std::sqrt(x); },
                            [](double, double y) { return 0.5 / y; });
}

inline Tensor reciprocal(const Tensor& a) {
    return detail::unary_op(a, [](double x) { return 1.0 / x; },
                            [](double, double y) { return -y * y; });
}

inline Tensor abs(const Tensor& a) {
    // Subgradient 0 at the kink.
    return detail::unary_op(a, [](double x) { return std::abs(x); },
                            [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
    double s = 0;
    for (double v : a.data()) s += v;
    auto an = a.node();
    return make_op({1}, {s}, {a}, [an](TensorNode& n) {
        for (size_t i = 0; i < an->value.size(); ++i) accum_grad(an, i, n.grad[0]);
    });
}

inline Tensor mean(const Tensor& a) {
    double inv = 1.0 / double(a.numel());
    double s = 0;
    for (double v : a.data()) s += v;
    auto an = a.node();
    return make_op({1}, {s * inv}, {a}, [an, inv](TensorNode& n) {
        for (size_t i = 0; i < an->value.size(); ++i) accum_grad(an, i, n.grad[0] * inv);
    });
}

// 2D only: axis 0 collapses rows (result length = cols), axis 1 collapses cols.
inline Tensor sum_axis(const Tensor& a, int axis) {
    if (a.shape().size() != 2) fail("sum_axis expects a 2D tensor, got ", shape_str(a.shape()));
    size_t r = a.dim(0), c = a.dim(1);
    auto an = a.node();
    if (axis == 0) {
        std::vector<double> out(c, 0.0);
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) out[j] += a.data()[i * c + j];
        return make_op({c}, std::move(out), {a}, [an, r, c](TensorNode& n) {
            for (size_t i = 0; i < r; ++i)
                for (size_t j = 0; j < c; ++j) accum_grad(an, i * c + j, n.grad[j]);
        });
    }
    if (axis != 1) fail("sum_axis: axis must be 0 or 1");
    std::vector<double> out(r, 0.0);
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[i] += a.data()[i * c + j];
    return make_op({r}, std::move(out), {a}, [an, r, c](TensorNode& n) {
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) accum_grad(an, i * c + j, n.grad[i]);
    });
}

// ---------------------------------------------------------------------------
// Shape ops

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        fail("reshape: cannot view ", shape_str(a.shape()), " as ", shape_str(shape));
    auto an = a.node();
    return make_op(std::move(shape), a.data(), {a}, [an](TensorNode& n) {
        for (size_t i = 0; i < n.numel(); ++i) accum_grad(an, i, n.grad[i]);
    });
}

inline Tensor transpose(const Tensor& a) {
    if (a.shape().size() != 2) fail("transpose expects a 2D tensor, got ", shape_str(a.shape()));
    size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r * c);
    for (size_t i = 0; i < r; ++i)
        for (size_t j = 0; j < c; ++j) out[j * r + i] = a.data()[i * c + j];
    auto an = a.node();
    return make_op({c, r}, std::move(out), {a}, [an, r, c](TensorNode& n) {
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j) accum_grad(an, i * c + j, n.grad[j * r + i]);
    });
}

inline Tensor concat(const std::vector<Tensor>& parts, size_t axis) {
    if (parts.empty()) fail("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) fail("concat: axis ", axis, " out of range for ", shape_str(s0));
    size_t total_axis = 0;
    for (const auto& p : parts) {
        if (p.shape().size() != s0.size()) fail("concat: rank mismatch");
        for (size_t d = 0; d < s0.size(); ++d)
            if (d != axis && p.shape()[d] != s0[d])
                fail("concat: shape mismatch ", shape_str(p.shape()), " vs ", shape_str(s0));
        total_axis += p.shape()[axis];
    }
    Shape out_shape = s0;
    out_shape[axis] = total_axis;

    size_t outer = 1, inner = 1;
    for (size_t d = 0; d < axis; ++d) outer *= s0[d];
    for (size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

    std::vector<double> out(shape_numel(out_shape));
    std::vector<size_t> offsets;  // start of each part along the axis
    size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        size_t pa = p.shape()[axis];
        for (size_t o = 0; o < outer; ++o)
            std::copy_n(p.data().data() + o * pa * inner, pa * inner,
                        out.data() + (o * total_axis + off) * inner);
        off += pa;
    }

    std::vector<std::shared_ptr<TensorNode>> pnodes;
    std::vector<size_t> sizes;
    for (const auto& p : parts) {
        pnodes.push_back(p.node());
        sizes.push_back(p.shape()[axis]);
    }
    return make_op(out_shape, std::move(out), parts,
                   [pnodes, sizes, offsets, outer, inner, total_axis](TensorNode& n) {
                       for (size_t k = 0; k < pnodes.size(); ++k) {
                           if (!pnodes[k]->requires_grad) continue;
                           size_t pa = sizes[k];
                           for (size_t o = 0; o < outer; ++o)
                               for (size_t i = 0; i < pa * inner; ++i)
                                   pnodes[k]->grad[o * pa * inner + i] +=
                                       n.grad[(o * total_axis + offsets[k]) * inner + i];
                       }
                   });
}

// ---------------------------------------------------------------------------
// Matrix ops

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        fail("matmul: incompatible shapes ", shape_str(a.shape()), " vs ", shape_str(b.shape()));
    size_t m = a.dim(0), k = a.dim(1), n2 = b.dim(1);
    std::vector<double> out(m * n2, 0.0);
    for (size_t i = 0; i < m; ++i)
        for (size_t l = 0; l < k; ++l) {
            double av = a.data()[i * k + l];
            if (av == 0) continue;
            const double* brow = b.data().data() + l * n2;
            double* orow = out.data() + i * n2;
            for (size_t j = 0; j < n2; ++j) orow[j] += av * brow[j];
        }
    auto an = a.node(), bn = b.node();
    return make_op({m, n2}, std::move(out), {a, b}, [an, bn, m, k, n2](TensorNode& n) {
        // dA = dC * B^T, dB = A^T * dC
        if (an->requires_grad)
            for (size_t i = 0; i < m; ++i)
                for (size_t l = 0; l < k; ++l) {
                    double s = 0;
                    const double* g = n.grad.data() + i * n2;
                    const double* brow = bn->value.data() + l * n2;
                    for (size_t j = 0; j < n2; ++j) s += g[j] * brow[j];
                    an->grad[i * k + l] += s;
                }
        if (bn->requires_grad)
            for (size_t l = 0; l < k; ++l)
                for (size_t i = 0; i < m; ++i) {
                    double av = an->value[i * k + l];
                    if (av == 0) continue;
                    const double* g = n.grad.data() + i * n2;
                    double* brow = bn->grad.data() + l * n2;
                    for (size_t j = 0; j < n2; ++j) brow[j] += av * g[j];
                }
    });
}

// ---------------------------------------------------------------------------
// Softmax family (over a named axis, log-sum-exp stabilized)

namespace detail {

struct AxisView {
    size_t outer, n, inner;
};

inline AxisView axis_view(const Shape& s, size_t axis) {
    if (axis >= s.size()) fail("axis ", axis, " out of range for ", shape_str(s));
    AxisView v{1, s[axis], 1};
    for (size_t d = 0; d < axis; ++d) v.outer *= s[d];
    for (size_t d = axis + 1; d < s.size(); ++d) v.inner *= s[d];
    return v;
}

}  // namespace detail

inline Tensor softmax(const Tensor& a, size_t axis) {
    auto v = detail::axis_view(a.shape(), axis);
    std::vector<double> out(a.numel());
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t in = 0; in < v.inner; ++in) {
            size_t base = o * v.n * v.inner + in;
            double mx = -HUGE_VAL;
            for (size_t j = 0; j < v.n; ++j) mx = std::max(mx, a.data()[base + j * v.inner]);
            double z = 0;
            for (size_t j = 0; j < v.n; ++j) {
                double e = std::exp(a.data()[base + j * v.inner] - mx);
                out[base + j * v.inner] = e;
                z += e;
            }
            for (size_t j = 0; j < v.n; ++j) out[base + j * v.inner] /= z;
        }
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, v](TensorNode& n) {
        for (size_t o = 0; o < v.outer; ++o)
            for (size_t in = 0; in < v.inner; ++in) {
                size_t base = o * v.n * v.inner + in;
                double dot = 0;
                for (size_t j = 0; j < v.n; ++j) {
                    size_t idx = base + j * v.inner;
                    dot += n.grad[idx] * n.value[idx];
                }
                for (size_t j = 0; j < v.n; ++j) {
                    size_t idx = base + j * v.inner;
                    an->grad[idx] += n.value[idx] * (n.grad[idx] - dot);
                }
            }
    });
}

inline Tensor log_softmax(const Tensor& a, size_t axis) {
    auto v = detail::axis_view(a.shape(), axis);
    std::vector<double> out(a.numel());
    for (size_t o = 0; o < v.outer; ++o)
        for (size_t in = 0; in < v.inner; ++in) {
            size_t base = o * v.n * v.inner + in;
            double mx = -HUGE_VAL;
            for (size_t j = 0; j < v.n; ++j) mx = std::max(mx, a.data()[base + j * v.inner]);
            double z = 0;
            for (size_t j = 0; j < v.n; ++j) z += std::exp(a.data()[base + j * v.inner] - mx);
            double lse = std::log(z) + mx;
            for (size_t j = 0; j < v.n; ++j)
                out[base + j * v.inner] = a.data()[base + j * v.inner] - lse;
        }
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, v](TensorNode& n) {
        for (size_t o = 0; o < v.outer; ++o)
            for (size_t in = 0; in < v.inner; ++in) {
                size_t base = o * v.n * v.inner + in;
                double gsum = 0;
                for (size_t j = 0; j < v.n; ++j) gsum += n.grad[base + j * v.inner];
                for (size_t j = 0; j < v.n; ++j) {
                    size_t idx = base + j * v.inner;
                    an->grad[idx] += n.grad[idx] - std::exp(n.value[idx]) * gsum;
                }
            }
    });
}

// log(sum(exp(row))) per row of a 2D tensor.
inline Tensor logsumexp_rows(const Tensor& a) {
    if (a.shape().size() != 2) fail("logsumexp_rows expects 2D, got ", shape_str(a.shape()));
    size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r);
    for (size_t i = 0; i < r; ++i) {
        double mx = -HUGE_VAL;
        for (size_t j = 0; j < c; ++j) mx = std::max(mx, a.data()[i * c + j]);
        double z = 0;
        for (size_t j = 0; j < c; ++j) z += std::exp(a.data()[i * c + j] - mx);
        out[i] = std::log(z) + mx;
    }
    auto an = a.node();
    return make_op({r}, std::move(out), {a}, [an, r, c](TensorNode& n) {
        for (size_t i = 0; i < r; ++i)
            for (size_t j = 0; j < c; ++j)
                an->grad[i * c + j] += n.grad[i] * std::exp(an->value[i * c + j] - n.value[i]);
    });
}

// ---------------------------------------------------------------------------
// Row-structured ops for point networks

// Batch-free layer normalization: each row normalized to zero mean, unit
// variance. Affine terms compose externally via scale/bias ops.
inline Tensor layer_norm(const Tensor& a, double eps = 1e-5) {
    if (a.shape().size() != 2) fail("layer_norm expects 2D, got ", shape_str(a.shape()));
    size_t r = a.dim(0), c = a.dim(1);
    std::vector<double> out(r * c);
    std::vector<double> inv_std(r);
    for (size_t i = 0; i < r; ++i) {
        double mu = 0;
        for (size_t j = 0; j < c; ++j) mu += a.data()[i * c + j];
        mu /= double(c);
        double var = 0;
        for (size_t j = 0; j < c; ++j) {
            double d = a.data()[i * c + j] - mu;
            var += d * d;
        }
        var /= double(c);
        inv_std[i] = 1.0 / std::sqrt(var + eps);
        for (size_t j = 0; j < c; ++j) out[i * c + j] = (a.data()[i * c + j] - mu) * inv_std[i];
    }
    auto an = a.node();
    return make_op(a.shape(), std::move(out), {a}, [an, r, c, inv_std](TensorNode& n) {
        for (size_t i = 0; i < r; ++i) {
            double gmean = 0, gydot = 0;
            for (size_t j = 0; j < c; ++j) {
                gmean += n.grad[i * c + j];
                gydot += n.grad[i * c + j] * n.value[i * c + j];
            }
            gmean /= double(c);
            gydot /= double(c);
            for (size_t j = 0; j < c; ++j)
                an->grad[i * c + j] +=
                    inv_std[i] * (n.grad[i * c + j] - gmean - n.value[i * c + j] * gydot);
        }
    });
}

// out[r] = a[idx[r]] for a 2D tensor; rows may repeat.
inline Tensor gather_rows(const Tensor& a, const std::vector<size_t>& idx) {
    if (a.shape().size() != 2) fail("gather_rows expects 2D, got ", shape_str(a.shape()));
    size_t c = a.dim(1);
    std::vector<double> out(idx.size() * c);
    for (size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= a.dim(0)) fail("gather_rows: index ", idx[r], " out of range ", a.dim(0));
        std::copy_n(a.data().data() + idx[r] * c, c, out.data() + r * c);
    }
    auto an = a.node();
    return make_op({idx.size(), c}, std::move(out), {a}, [an, idx, c](TensorNode& n) {
        for (size_t r = 0; r < idx.size(); ++r)
            for (size_t j = 0; j < c; ++j) an->grad[idx[r] * c + j] += n.grad[r * c + j];
    });
}

// out[i] = mean over a's rows listed in row i of nbr (M x k indices).
inline Tensor neighbor_mean(const Tensor& a, const std::vector<size_t>& nbr, size_t k) {
    if (a.shape().size() != 2) fail("neighbor_mean expects 2D, got ", shape_str(a.shape()));
    size_t m = a.dim(0), c = a.dim(1);
    if (nbr.size() != m * k) fail("neighbor_mean: index table size mismatch");
    std::vector<double> out(m * c, 0.0);
    double inv = 1.0 / double(k);
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < k; ++j) {
            const double* row = a.data().data() + nbr[i * k + j] * c;
            double* o = out.data() + i * c;
            for (size_t d = 0; d < c; ++d) o[d] += row[d];
        }
        for (size_t d = 0; d < c; ++d) out[i * c + d] *= inv;
    }
    auto an = a.node();
    return make_op({m, c}, std::move(out), {a}, [an, nbr, k, m, c, inv](TensorNode& n) {
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < k; ++j) {
                double* g = an->grad.data() + nbr[i * k + j] * c;
                const double* up = n.grad.data() + i * c;
                for (size_t d = 0; d < c; ++d) g[d] += up[d] * inv;
            }
    });
}

// Row i scaled by s[i].
inline Tensor scale_rows(const Tensor& a, const Tensor& s) {
    if (a.shape().size() != 2 || s.shape().size() != 1 || s.dim(0) != a.dim(0))
        fail("scale_rows: need [MxN] and [M], got ", shape_str(a.shape()), " and ",
             shape_str(s.shape()));
    size_t m = a.dim(0), c = a.dim(1);
    std::vector<double> out(m * c);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] = a.data()[i * c + j] * s.data()[i];
    auto an = a.node(), sn = s.node();
    return make_op(a.shape(), std::move(out), {a, s}, [an, sn, m, c](TensorNode& n) {
        for (size_t i = 0; i < m; ++i) {
            double srow = sn->value[i], acc = 0;
            for (size_t j = 0; j < c; ++j) {
                size_t idx = i * c + j;
                if (an->requires_grad) an->grad[idx] += n.grad[idx] * srow;
                acc += n.grad[idx] * an->value[idx];
            }
            if (sn->requires_grad) sn->grad[i] += acc;
        }
    });
}

// b (length N) added to every row of a (M x N).
inline Tensor add_row_bias(const Tensor& a, const Tensor& b) {
    if (a.shape().size() != 2 || b.shape().size() != 1 || b.dim(0) != a.dim(1))
        fail("add_row_bias: need [MxN] and [N], got ", shape_str(a.shape()), " and ",
             shape_str(b.shape()));
    size_t m = a.dim(0), c = a.dim(1);
    std::vector<double> out(m * c);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < c; ++j) out[i * c + j] = a.data()[i * c + j] + b.data()[j];
    auto an = a.node(), bn = b.node();
    return make_op(a.shape(), std::move(out), {a, b}, [an, bn, m, c](TensorNode& n) {
        for (size_t i = 0; i < m; ++i)
            for (size_t j = 0; j < c; ++j) {
                accum_grad(an, i * c + j, n.grad[i * c + j]);
                accum_grad(bn, j, n.grad[i * c + j]);
            }
    });
}

// Rows rescaled to unit L2 norm.
inline Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12) {
    Tensor sq = mul(a, a);
    Tensor norms = sqrt(offset(sum_axis(sq, 1), eps));
    return scale_rows(a, reciprocal(norms));
}

}  // namespace rtgs
