#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "nse/errors.hpp"

namespace nse {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

// Guard floor for log(); sigmoid outputs can underflow to 0.
inline constexpr double kLogEps = 1e-12;

struct TensorNode;
using NodePtr = std::shared_ptr<TensorNode>;

// One vertex of the computation graph. `backprop` pulls this node's grad
// into its parents' grads; graphs are acyclic by construction.
struct TensorNode {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    bool backward_ran = false;  // set on a loss root once backward() completes
    const char* op = "leaf";
    std::vector<NodePtr> parents;
    std::function<void(TensorNode&)> backprop;

    std::size_t numel() const { return value.size(); }

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    }
};

// Value-semantic handle onto a graph node. Copies share the node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr n) : node_(std::move(n)) {}

    static Tensor constant(Shape shape, std::vector<double> data) {
        return make_leaf(std::move(shape), std::move(data), false);
    }
    static Tensor parameter(Shape shape, std::vector<double> data) {
        return make_leaf(std::move(shape), std::move(data), true);
    }
    static Tensor zeros(Shape shape) {
        auto n = shape_numel(shape);
        return constant(std::move(shape), std::vector<double>(n, 0.0));
    }
    static Tensor ones(Shape shape) {
        auto n = shape_numel(shape);
        return constant(std::move(shape), std::vector<double>(n, 1.0));
    }
    static Tensor scalar(double v) { return constant({1}, {v}); }
    static Tensor vector(std::vector<double> data) {
        Shape s{data.size()};
        return constant(std::move(s), std::move(data));
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->numel(); }
    std::size_t ndim() const { return node_->shape.size(); }
    std::size_t rows() const { return node_->shape.at(0); }
    std::size_t cols() const { return node_->shape.at(1); }
    bool requires_grad() const { return node_->requires_grad; }

    const std::vector<double>& value() const { return node_->value; }
    std::vector<double>& mutable_value() { return node_->value; }
    const std::vector<double>& grad() const { return node_->grad; }

    double item() const {
        if (numel() != 1) throw ShapeError("item(): tensor is not scalar, shape " + shape_str(shape()));
        return node_->value[0];
    }

    NodePtr node() const { return node_; }

private:
    static Tensor make_leaf(Shape shape, std::vector<double> data, bool req) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("tensor: data length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
        auto n = std::make_shared<TensorNode>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = req;
        return Tensor(n);
    }

    NodePtr node_;
};

namespace detail {

inline NodePtr new_node(Shape shape, const char* op, std::vector<NodePtr> parents) {
    auto n = std::make_shared<TensorNode>();
    n->shape = std::move(shape);
    n->value.resize(shape_numel(n->shape));
    n->op = op;
    bool req = false;
    for (const auto& p : parents) req = req || p->requires_grad;
    n->requires_grad = req;
    n->parents = std::move(parents);
    return n;
}

inline void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("add", a, b);
    auto n = detail::new_node(a.shape(), "add", {a.node(), b.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = a.value()[i] + b.value()[i];
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            for (auto& p : self.parents) {
                if (!p->requires_grad) continue;
                p->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
            }
        };
    return Tensor(n);
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("sub", a, b);
    auto n = detail::new_node(a.shape(), "sub", {a.node(), b.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = a.value()[i] - b.value()[i];
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pa->grad[i] += self.grad[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) pb->grad[i] -= self.grad[i];
            }
        };
    return Tensor(n);
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("mul", a, b);
    auto n = detail::new_node(a.shape(), "mul", {a.node(), b.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = a.value()[i] * b.value()[i];
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa->grad[i] += self.grad[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb->grad[i] += self.grad[i] * pa->value[i];
            }
        };
    return Tensor(n);
}

inline Tensor div(const Tensor& a, const Tensor& b) {
    detail::check_same_shape("div", a, b);
    auto n = detail::new_node(a.shape(), "div", {a.node(), b.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = a.value()[i] / b.value()[i];
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa->grad[i] += self.grad[i] / pb->value[i];
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb->grad[i] -= self.grad[i] * pa->value[i] / (pb->value[i] * pb->value[i]);
            }
        };
    return Tensor(n);
}

inline Tensor scalar_mul(const Tensor& a, double c) {
    auto n = detail::new_node(a.shape(), "scalar_mul", {a.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] * c;
    if (n->requires_grad)
        n->backprop = [c](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * c;
        };
    return Tensor(n);
}

inline Tensor scalar_add(const Tensor& a, double c) {
    auto n = detail::new_node(a.shape(), "scalar_add", {a.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] + c;
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        };
    return Tensor(n);
}

inline Tensor neg(const Tensor& a) { return scalar_mul(a, -1.0); }

inline Tensor reciprocal(const Tensor& a) {
    auto n = detail::new_node(a.shape(), "reciprocal", {a.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = 1.0 / a.value()[i];
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p->grad[i] -= self.grad[i] * self.value[i] * self.value[i];
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    const std::size_t m = a.rows(), k = a.cols(), p = b.cols();
    auto n = detail::new_node({m, p}, "matmul", {a.node(), b.node()});
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < p; ++j) {
            double acc = 0.0;
            for (std::size_t t = 0; t < k; ++t) acc += av[i * k + t] * bv[t * p + j];
            n->value[i * p + j] = acc;
        }
    if (n->requires_grad)
        n->backprop = [m, k, p](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& pb = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                // dA = G * B^T
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t t = 0; t < k; ++t) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < p; ++j)
                            acc += self.grad[i * p + j] * pb->value[t * p + j];
                        pa->grad[i * k + t] += acc;
                    }
            }
            if (pb->requires_grad) {
                pb->ensure_grad();
                // dB = A^T * G
                for (std::size_t t = 0; t < k; ++t)
                    for (std::size_t j = 0; j < p; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += pa->value[i * k + t] * self.grad[i * p + j];
                        pb->grad[t * p + j] += acc;
                    }
            }
        };
    return Tensor(n);
}

inline Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ShapeError("transpose: expects 2-d tensor, got " + shape_str(a.shape()));
    const std::size_t m = a.rows(), k = a.cols();
    auto n = detail::new_node({k, m}, "transpose", {a.node()});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) n->value[j * m + i] = a.value()[i * k + j];
    if (n->requires_grad)
        n->backprop = [m, k](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < k; ++j) p->grad[i * k + j] += self.grad[j * m + i];
        };
    return Tensor(n);
}

inline Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel())
        throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    auto n = detail::new_node(std::move(shape), "reshape", {a.node()});
    n->value = a.value();
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// Slicing / concatenation
// ---------------------------------------------------------------------------

inline Tensor slice_rows(const Tensor& a, std::size_t r0, std::size_t r1) {
    if (a.ndim() != 2 || r0 >= r1 || r1 > a.rows())
        throw ShapeError("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                         ") for shape " + shape_str(a.shape()));
    const std::size_t c = a.cols();
    auto n = detail::new_node({r1 - r0, c}, "slice_rows", {a.node()});
    std::copy(a.value().begin() + r0 * c, a.value().begin() + r1 * c, n->value.begin());
    if (n->requires_grad)
        n->backprop = [r0, c](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[r0 * c + i] += self.grad[i];
        };
    return Tensor(n);
}

inline Tensor slice_cols(const Tensor& a, std::size_t c0, std::size_t c1) {
    if (a.ndim() != 2 || c0 >= c1 || c1 > a.cols())
        throw ShapeError("slice_cols: bad range [" + std::to_string(c0) + "," + std::to_string(c1) +
                         ") for shape " + shape_str(a.shape()));
    const std::size_t m = a.rows(), k = a.cols(), w = c1 - c0;
    auto n = detail::new_node({m, w}, "slice_cols", {a.node()});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < w; ++j) n->value[i * w + j] = a.value()[i * k + c0 + j];
    if (n->requires_grad)
        n->backprop = [m, k, w, c0](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) p->grad[i * k + c0 + j] += self.grad[i * w + j];
        };
    return Tensor(n);
}

inline Tensor slice(const Tensor& a, std::size_t i0, std::size_t i1) {
    if (a.ndim() != 1 || i0 >= i1 || i1 > a.numel())
        throw ShapeError("slice: bad range [" + std::to_string(i0) + "," + std::to_string(i1) +
                         ") for shape " + shape_str(a.shape()));
    auto n = detail::new_node({i1 - i0}, "slice", {a.node()});
    std::copy(a.value().begin() + i0, a.value().begin() + i1, n->value.begin());
    if (n->requires_grad)
        n->backprop = [i0](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i0 + i] += self.grad[i];
        };
    return Tensor(n);
}

// Concatenate 2-d blocks left-to-right; all blocks share the row count.
inline Tensor concat_cols(const std::vector<Tensor>& blocks) {
    if (blocks.empty()) throw ShapeError("concat_cols: no blocks");
    const std::size_t m = blocks[0].rows();
    std::size_t total = 0;
    std::vector<NodePtr> parents;
    for (const auto& b : blocks) {
        if (b.ndim() != 2 || b.rows() != m)
            throw ShapeError("concat_cols: shape mismatch " + shape_str(blocks[0].shape()) +
                             " vs " + shape_str(b.shape()));
        total += b.cols();
        parents.push_back(b.node());
    }
    auto n = detail::new_node({m, total}, "concat_cols", std::move(parents));
    std::size_t off = 0;
    for (const auto& b : blocks) {
        const std::size_t w = b.cols();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < w; ++j) n->value[i * total + off + j] = b.value()[i * w + j];
        off += w;
    }
    if (n->requires_grad)
        n->backprop = [m, total](TensorNode& self) {
            std::size_t off = 0;
            for (auto& p : self.parents) {
                const std::size_t w = p->shape[1];
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < m; ++i)
                        for (std::size_t j = 0; j < w; ++j)
                            p->grad[i * w + j] += self.grad[i * total + off + j];
                }
                off += w;
            }
        };
    return Tensor(n);
}

inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no parts");
    std::size_t total = 0;
    std::vector<NodePtr> parents;
    for (const auto& p : parts) {
        if (p.ndim() != 1) throw ShapeError("concat: expects 1-d parts, got " + shape_str(p.shape()));
        total += p.numel();
        parents.push_back(p.node());
    }
    auto n = detail::new_node({total}, "concat", std::move(parents));
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.value().begin(), p.value().end(), n->value.begin() + off);
        off += p.numel();
    }
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            std::size_t off = 0;
            for (auto& p : self.parents) {
                if (p->requires_grad) {
                    p->ensure_grad();
                    for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += self.grad[off + i];
                }
                off += p->value.size();
            }
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
    auto n = detail::new_node({1}, "sum", {a.node()});
    n->value[0] = std::accumulate(a.value().begin(), a.value().end(), 0.0);
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (auto& g : p->grad) g += self.grad[0];
        };
    return Tensor(n);
}

inline Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    auto n = detail::new_node({1}, "mean", {a.node()});
    n->value[0] = std::accumulate(a.value().begin(), a.value().end(), 0.0) * inv;
    if (n->requires_grad)
        n->backprop = [inv](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (auto& g : p->grad) g += self.grad[0] * inv;
        };
    return Tensor(n);
}

// axis=0 reduces over rows (result has `cols` entries);
// axis=1 reduces over columns (result has `rows` entries).
inline Tensor sum_axis(const Tensor& a, int axis) {
    if (a.ndim() != 2 || (axis != 0 && axis != 1))
        throw ShapeError("sum_axis: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_str(a.shape()));
    const std::size_t m = a.rows(), k = a.cols();
    const std::size_t out = (axis == 0) ? k : m;
    auto n = detail::new_node({out}, "sum_axis", {a.node()});
    std::fill(n->value.begin(), n->value.end(), 0.0);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) n->value[axis == 0 ? j : i] += a.value()[i * k + j];
    if (n->requires_grad)
        n->backprop = [m, k, axis](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < k; ++j)
                    p->grad[i * k + j] += self.grad[axis == 0 ? j : i];
        };
    return Tensor(n);
}

inline Tensor mean_axis(const Tensor& a, int axis) {
    const double inv = 1.0 / static_cast<double>(axis == 0 ? a.rows() : a.cols());
    return scalar_mul(sum_axis(a, axis), inv);
}

// ---------------------------------------------------------------------------
// Nonlinearities
// ---------------------------------------------------------------------------

inline Tensor relu(const Tensor& a) {
    auto n = detail::new_node(a.shape(), "relu", {a.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = a.value()[i] > 0.0 ? a.value()[i] : 0.0;
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (p->value[i] > 0.0) p->grad[i] += self.grad[i];
        };
    return Tensor(n);
}

inline Tensor sigmoid(const Tensor& a) {
    auto n = detail::new_node(a.shape(), "sigmoid", {a.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = 1.0 / (1.0 + std::exp(-a.value()[i]));
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.value[i];
                p->grad[i] += self.grad[i] * y * (1.0 - y);
            }
        };
    return Tensor(n);
}

inline Tensor tanh(const Tensor& a) {
    auto n = detail::new_node(a.shape(), "tanh", {a.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::tanh(a.value()[i]);
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double y = self.value[i];
                p->grad[i] += self.grad[i] * (1.0 - y * y);
            }
        };
    return Tensor(n);
}

inline Tensor exp(const Tensor& a) {
    auto n = detail::new_node(a.shape(), "exp", {a.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = std::exp(a.value()[i]);
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                p->grad[i] += self.grad[i] * self.value[i];
        };
    return Tensor(n);
}

// log(max(x, 1e-12)); the clamped region is flat, so its gradient is zero.
inline Tensor log(const Tensor& a) {
    auto n = detail::new_node(a.shape(), "log", {a.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i)
        n->value[i] = std::log(std::max(a.value()[i], kLogEps));
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (p->value[i] > kLogEps) p->grad[i] += self.grad[i] / p->value[i];
        };
    return Tensor(n);
}

// Softmax along `axis` (0 for 1-d tensors; 0 or 1 for 2-d). Max-shifted.
inline Tensor softmax(const Tensor& a, int axis = -1) {
    if (a.ndim() == 1) {
        if (axis != 0 && axis != -1)
            throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(a.shape()));
    } else if (a.ndim() == 2) {
        if (axis != 0 && axis != 1)
            throw ShapeError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                             shape_str(a.shape()));
    } else {
        throw ShapeError("softmax: expects 1-d or 2-d tensor, got " + shape_str(a.shape()));
    }

    const bool one_d = a.ndim() == 1;
    const std::size_t m = one_d ? 1 : a.rows();
    const std::size_t k = one_d ? a.numel() : a.cols();
    // number of independent slices and their stride
    const std::size_t slices = (one_d || axis == 1) ? m : k;
    const std::size_t len = (one_d || axis == 1) ? k : m;
    const bool rowwise = one_d || axis == 1;

    auto n = detail::new_node(a.shape(), "softmax", {a.node()});
    auto at = [&](std::size_t s, std::size_t t) {
        return rowwise ? s * k + t : t * k + s;
    };
    for (std::size_t s = 0; s < slices; ++s) {
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < len; ++t) mx = std::max(mx, a.value()[at(s, t)]);
        double z = 0.0;
        for (std::size_t t = 0; t < len; ++t) {
            const double e = std::exp(a.value()[at(s, t)] - mx);
            n->value[at(s, t)] = e;
            z += e;
        }
        for (std::size_t t = 0; t < len; ++t) n->value[at(s, t)] /= z;
    }
    if (n->requires_grad)
        n->backprop = [slices, len, k, rowwise](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            auto at = [&](std::size_t s, std::size_t t) {
                return rowwise ? s * k + t : t * k + s;
            };
            for (std::size_t s = 0; s < slices; ++s) {
                double dot = 0.0;
                for (std::size_t t = 0; t < len; ++t)
                    dot += self.grad[at(s, t)] * self.value[at(s, t)];
                for (std::size_t t = 0; t < len; ++t)
                    p->grad[at(s, t)] += self.value[at(s, t)] * (self.grad[at(s, t)] - dot);
            }
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// Structured ops used by the model
// ---------------------------------------------------------------------------

// Scale row i of `a` by s[i].
inline Tensor rowwise_scale(const Tensor& a, const Tensor& s) {
    if (a.ndim() != 2 || s.ndim() != 1 || s.numel() != a.rows())
        throw ShapeError("rowwise_scale: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(s.shape()));
    const std::size_t m = a.rows(), k = a.cols();
    auto n = detail::new_node({m, k}, "rowwise_scale", {a.node(), s.node()});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) n->value[i * k + j] = a.value()[i * k + j] * s.value()[i];
    if (n->requires_grad)
        n->backprop = [m, k](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& ps = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < k; ++j)
                        pa->grad[i * k + j] += self.grad[i * k + j] * ps->value[i];
            }
            if (ps->requires_grad) {
                ps->ensure_grad();
                for (std::size_t i = 0; i < m; ++i) {
                    double acc = 0.0;
                    for (std::size_t j = 0; j < k; ++j)
                        acc += self.grad[i * k + j] * pa->value[i * k + j];
                    ps->grad[i] += acc;
                }
            }
        };
    return Tensor(n);
}

// Scale column j of `a` by s[j].
inline Tensor colwise_scale(const Tensor& a, const Tensor& s) {
    if (a.ndim() != 2 || s.ndim() != 1 || s.numel() != a.cols())
        throw ShapeError("colwise_scale: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(s.shape()));
    const std::size_t m = a.rows(), k = a.cols();
    auto n = detail::new_node({m, k}, "colwise_scale", {a.node(), s.node()});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) n->value[i * k + j] = a.value()[i * k + j] * s.value()[j];
    if (n->requires_grad)
        n->backprop = [m, k](TensorNode& self) {
            auto& pa = self.parents[0];
            auto& ps = self.parents[1];
            if (pa->requires_grad) {
                pa->ensure_grad();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < k; ++j)
                        pa->grad[i * k + j] += self.grad[i * k + j] * ps->value[j];
            }
            if (ps->requires_grad) {
                ps->ensure_grad();
                for (std::size_t j = 0; j < k; ++j) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < m; ++i)
                        acc += self.grad[i * k + j] * pa->value[i * k + j];
                    ps->grad[j] += acc;
                }
            }
        };
    return Tensor(n);
}

// Broadcast a length-k vector into n identical rows.
inline Tensor repeat_row(const Tensor& v, std::size_t n_rows) {
    if (v.ndim() != 1) throw ShapeError("repeat_row: expects 1-d tensor, got " + shape_str(v.shape()));
    const std::size_t k = v.numel();
    auto n = detail::new_node({n_rows, k}, "repeat_row", {v.node()});
    for (std::size_t i = 0; i < n_rows; ++i)
        std::copy(v.value().begin(), v.value().end(), n->value.begin() + i * k);
    if (n->requires_grad)
        n->backprop = [n_rows, k](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < n_rows; ++i)
                for (std::size_t j = 0; j < k; ++j) p->grad[j] += self.grad[i * k + j];
        };
    return Tensor(n);
}

// A + broadcast row vector b.
inline Tensor add_rowvec(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 1 || b.numel() != a.cols())
        throw ShapeError("add_rowvec: shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    return add(a, repeat_row(b, a.rows()));
}

// Gather rows of `table` by integer id; grads scatter-add back into the rows.
inline Tensor embedding_lookup(const Tensor& table, const std::vector<int>& ids) {
    if (table.ndim() != 2)
        throw ShapeError("embedding_lookup: table must be 2-d, got " + shape_str(table.shape()));
    const std::size_t v = table.rows(), d = table.cols();
    for (int id : ids)
        if (id < 0 || static_cast<std::size_t>(id) >= v)
            throw ShapeError("embedding_lookup: id " + std::to_string(id) + " out of range for table " +
                             shape_str(table.shape()));
    auto n = detail::new_node({ids.size(), d}, "embedding_lookup", {table.node()});
    for (std::size_t i = 0; i < ids.size(); ++i)
        std::copy(table.value().begin() + ids[i] * d, table.value().begin() + (ids[i] + 1) * d,
                  n->value.begin() + i * d);
    if (n->requires_grad)
        n->backprop = [ids, d](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::size_t j = 0; j < d; ++j)
                    p->grad[ids[i] * d + j] += self.grad[i * d + j];
        };
    return Tensor(n);
}

// Apply a pre-drawn inverted-dropout mask (entries 0 or 1/(1-rate)).
inline Tensor dropout(const Tensor& a, const std::vector<double>& mask) {
    if (mask.size() != a.numel())
        throw ShapeError("dropout: mask length " + std::to_string(mask.size()) +
                         " does not match tensor " + shape_str(a.shape()));
    auto n = detail::new_node(a.shape(), "dropout", {a.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] * mask[i];
    if (n->requires_grad)
        n->backprop = [mask](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i] * mask[i];
        };
    return Tensor(n);
}

// Overwrite the listed indices with `v`; their gradient is cut to zero,
// the rest passes through untouched.
inline Tensor force_values(const Tensor& a, const std::vector<std::size_t>& idx, double v) {
    if (a.ndim() != 1) throw ShapeError("force_values: expects 1-d tensor, got " + shape_str(a.shape()));
    for (auto i : idx)
        if (i >= a.numel())
            throw ShapeError("force_values: index " + std::to_string(i) + " out of range for " +
                             shape_str(a.shape()));
    auto n = detail::new_node(a.shape(), "force_values", {a.node()});
    n->value = a.value();
    for (auto i : idx) n->value[i] = v;
    if (n->requires_grad)
        n->backprop = [idx](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            std::vector<bool> forced(p->value.size(), false);
            for (auto i : idx) forced[i] = true;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (!forced[i]) p->grad[i] += self.grad[i];
        };
    return Tensor(n);
}

// Straight-through rounding: forward emits 1[x > 0.5], backward passes the
// upstream gradient to the soft input unchanged.
inline Tensor hard_straight_through(const Tensor& a) {
    auto n = detail::new_node(a.shape(), "hard_straight_through", {a.node()});
    for (std::size_t i = 0; i < n->value.size(); ++i) n->value[i] = a.value()[i] > 0.5 ? 1.0 : 0.0;
    if (n->requires_grad)
        n->backprop = [](TensorNode& self) {
            auto& p = self.parents[0];
            p->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) p->grad[i] += self.grad[i];
        };
    return Tensor(n);
}

// ---------------------------------------------------------------------------
// Backward pass
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<TensorNode*> topo_order(TensorNode* root) {
    std::vector<TensorNode*> order;
    std::unordered_set<TensorNode*> seen;
    // iterative post-order DFS; graphs can be several thousand nodes deep
    std::vector<std::pair<TensorNode*, std::size_t>> stack{{root, 0}};
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            TensorNode* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // parents before children
}

}  // namespace detail

// Reverse-mode sweep from a scalar loss. Gradients accumulate additively, so
// backward from two losses equals one backward from their sum. Running
// backward twice on the same loss without a reset is an error.
inline void backward(const Tensor& loss) {
    if (loss.numel() != 1)
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    TensorNode* root = loss.node().get();
    if (root->backward_ran)
        throw Error("backward: already ran on this loss; reset gradients first");
    if (!root->requires_grad) {
        root->backward_ran = true;
        return;  // nothing upstream wants gradients
    }
    auto order = detail::topo_order(root);
    root->ensure_grad();
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorNode* node = *it;
        if (node->backprop && node->grad.size() == node->value.size()) node->backprop(*node);
    }
    root->backward_ran = true;
}

// Zero every gradient reachable from `root` and clear its backward flag.
inline void zero_grad(const Tensor& root) {
    std::vector<TensorNode*> stack{root.node().get()};
    std::unordered_set<TensorNode*> seen{root.node().get()};
    while (!stack.empty()) {
        TensorNode* n = stack.back();
        stack.pop_back();
        std::fill(n->grad.begin(), n->grad.end(), 0.0);
        n->backward_ran = false;
        for (const auto& p : n->parents)
            if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
}

}  // namespace nse
