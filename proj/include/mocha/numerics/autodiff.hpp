#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mocha/error.hpp"
#include "mocha/numerics/tensor.hpp"

// Reverse-mode differentiation over dense f64 tensors.
//
// A Tape records every primitive in execution order. Each node owns its value,
// a lazily allocated gradient buffer and a closure that pushes the node's
// gradient into its parents. backward() replays the closures in exact reverse
// recording order. Tapes are single-owner and are meant to live for one
// training step.

namespace mocha::ad {

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    const Tensor& value() const;
    const Tensor& grad() const;
    bool requires_grad() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }

    Tape& tape() const { return *tape_; }
    std::size_t id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value) { return push(std::move(value), false, {}); }

    /// A differentiable input; its gradient is available after backward().
    Var leaf(Tensor value) { return push(std::move(value), true, {}); }

    Var record(Tensor value, std::span<const Var> parents, Backward backward, const char* op) {
        value.ensure_finite(op);
        bool needs = false;
        for (const Var& p : parents) needs = needs || nodes_[p.id()].requires_grad;
        return push(std::move(value), needs, needs ? std::move(backward) : Backward{});
    }

    Var record(Tensor value, std::initializer_list<Var> parents, Backward backward, const char* op) {
        return record(std::move(value), std::span<const Var>(parents.begin(), parents.size()),
                      std::move(backward), op);
    }

    /// Seeds d(root)/d(root) = 1 and propagates to every recorded ancestor.
    void backward(Var root) {
        require(root.value().size() == 1, ErrorKind::DimensionMismatch,
                "backward() needs a scalar root, got " + shape_string(root.shape()));
        for (auto& n : nodes_) n.grad = Tensor();
        backward_order_.clear();
        grad_buffer(root.id())[0] = 1.0;
        for (std::size_t i = root.id() + 1; i-- > 0;) {
            Node& node = nodes_[i];
            if (!node.backward || node.grad.size() == 0) continue;
            backward_order_.push_back(i);
            node.backward(*this, i);
        }
        for (std::size_t i = 0; i <= root.id(); ++i) {
            if (nodes_[i].requires_grad && nodes_[i].grad.size() != 0 && !nodes_[i].grad.all_finite())
                fail(ErrorKind::NonFiniteGradient, "gradient of node " + std::to_string(i) + " is not finite");
        }
    }

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }

    /// Gradient after backward(); zeros if nothing reached the node.
    const Tensor& grad(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
        return n.grad;
    }

    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    /// Writable gradient of a node that participates in differentiation.
    Tensor& grad_buffer(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
        return n.grad;
    }

    std::size_t size() const noexcept { return nodes_.size(); }

    /// Node ids whose backward closures ran during the last backward(), in visit order.
    const std::vector<std::size_t>& last_backward_order() const noexcept { return backward_order_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Backward backward;
    };

    Var push(Tensor value, bool requires_grad, Backward backward) {
        nodes_.push_back(Node{std::move(value), Tensor(), requires_grad, std::move(backward)});
        return Var(this, nodes_.size() - 1);
    }

    std::deque<Node> nodes_;
    std::vector<std::size_t> backward_order_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }
inline const Tensor& Var::grad() const { return tape_->grad(id_); }
inline bool Var::requires_grad() const { return tape_->requires_grad(id_); }

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* op) {
    require(a.shape() == b.shape(), ErrorKind::ShapeMismatch,
            std::string(op) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
}

inline void require_matrix(const Var& a, const char* op) {
    require(a.value().rank() == 2, ErrorKind::DimensionMismatch,
            std::string(op) + " expects a matrix, got " + shape_string(a.shape()));
}

/// Adds `delta` into the gradient of `v` when `v` is differentiable.
template <typename F>
inline void accumulate(Tape& tape, const Var& v, F&& fill) {
    if (!tape.requires_grad(v.id())) return;
    fill(tape.grad_buffer(v.id()));
}

inline double gelu_value(double x) {
    constexpr double k = 0.7978845608028654; // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(k * (x + 0.044715 * x * x * x)));
}

inline double gelu_derivative(double x) {
    constexpr double k = 0.7978845608028654;
    const double inner = k * (x + 0.044715 * x * x * x);
    const double t = std::tanh(inner);
    const double dinner = k * (1.0 + 3.0 * 0.044715 * x * x);
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
}

} // namespace detail

// ---- elementwise ---------------------------------------------------------

inline Var add(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "add");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, a, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
        detail::accumulate(t, b, [&](Tensor& gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i]; });
    }, "add");
}

inline Var sub(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, a, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
        detail::accumulate(t, b, [&](Tensor& gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i]; });
    }, "sub");
}

inline Var mul(const Var& a, const Var& b) {
    detail::require_same_shape(a, b, "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return a.tape().record(std::move(out), {a, b}, [a, b](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& av = a.value();
        const Tensor& bv = b.value();
        detail::accumulate(t, a, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i]; });
        detail::accumulate(t, b, [&](Tensor& gb) { for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i]; });
    }, "mul");
}

inline Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (double& v : out.data()) v *= s;
    return a.tape().record(std::move(out), {a}, [a, s](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, a, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i]; });
    }, "scale");
}

inline Var gelu(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = detail::gelu_value(v);
    return a.tape().record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = a.value();
        detail::accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * detail::gelu_derivative(x[i]);
        });
    }, "gelu");
}

/// |x| with subgradient 0 at x == 0.
inline Var abs(const Var& a) {
    Tensor out = a.value();
    for (double& v : out.data()) v = std::abs(v);
    return a.tape().record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = a.value();
        detail::accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * ((x[i] > 0) - (x[i] < 0));
        });
    }, "abs");
}

// ---- reductions ----------------------------------------------------------

inline Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    return a.tape().record(Tensor::scalar(s), {a}, [a](Tape& t, std::size_t self) {
        const double g = t.grad(self)[0];
        detail::accumulate(t, a, [&](Tensor& ga) { for (double& v : ga.data()) v += g; });
    }, "sum");
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Per-row l1 norm of an m x n matrix; returns a length-m vector.
inline Var row_l1(const Var& a) {
    detail::require_matrix(a, "row_l1");
    const Tensor& x = a.value();
    Tensor out({x.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (double v : x.row(r)) out[r] += std::abs(v);
    return a.tape().record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = a.value();
        detail::accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t r = 0; r < x.rows(); ++r)
                for (std::size_t c = 0; c < x.cols(); ++c)
                    ga(r, c) += g[r] * ((x(r, c) > 0) - (x(r, c) < 0));
        });
    }, "row_l1");
}

/// Per-row l2 norm; the gradient of a zero row is defined as 0.
inline Var row_l2(const Var& a) {
    detail::require_matrix(a, "row_l2");
    const Tensor& x = a.value();
    Tensor out({x.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r) out[r] = norm2(x.row(r));
    Tensor norms = out;
    return a.tape().record(std::move(out), {a}, [a, norms = std::move(norms)](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = a.value();
        detail::accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t r = 0; r < x.rows(); ++r) {
                if (norms[r] == 0.0) continue;
                const double k = g[r] / norms[r];
                for (std::size_t c = 0; c < x.cols(); ++c) ga(r, c) += k * x(r, c);
            }
        });
    }, "row_l2");
}

// ---- linear algebra ------------------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
    detail::require_matrix(a, "matmul");
    detail::require_matrix(b, "matmul");
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    const std::size_t m = x.rows(), k = x.cols(), n = y.cols();
    require(y.rows() == k, ErrorKind::ShapeMismatch,
            "matmul " + shape_string(x.shape()) + " x " + shape_string(y.shape()));
    Tensor out({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        double* orow = &out(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
            const double xv = x(i, p);
            if (xv == 0.0) continue;
            const double* yrow = y.row(p).data();
            for (std::size_t j = 0; j < n; ++j) orow[j] += xv * yrow[j];
        }
    }
    return a.tape().record(std::move(out), {a, b}, [a, b, m, k, n](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        const Tensor& x = a.value();
        const Tensor& y = b.value();
        // dA = G * B^T
        detail::accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < n; ++j) s += g(i, j) * y(p, j);
                    ga(i, p) += s;
                }
        });
        // dB = A^T * G
        detail::accumulate(t, b, [&](Tensor& gb) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const double xv = x(i, p);
                    if (xv == 0.0) continue;
                    for (std::size_t j = 0; j < n; ++j) gb(p, j) += xv * g(i, j);
                }
        });
    }, "matmul");
}

inline Var transpose(const Var& a) {
    detail::require_matrix(a, "transpose");
    const Tensor& x = a.value();
    Tensor out({x.cols(), x.rows()});
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(c, r) = x(r, c);
    return a.tape().record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t r = 0; r < ga.rows(); ++r)
                for (std::size_t c = 0; c < ga.cols(); ++c) ga(r, c) += g(c, r);
        });
    }, "transpose");
}

/// Adds a length-n bias to every row of an m x n matrix.
inline Var add_row(const Var& a, const Var& bias) {
    detail::require_matrix(a, "add_row");
    const Tensor& x = a.value();
    require(bias.value().size() == x.cols(), ErrorKind::ShapeMismatch,
            "add_row bias " + shape_string(bias.shape()) + " vs " + shape_string(x.shape()));
    Tensor out = x;
    for (std::size_t r = 0; r < x.rows(); ++r)
        for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) += bias.value()[c];
    return a.tape().record(std::move(out), {a, bias}, [a, bias](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, a, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
        detail::accumulate(t, bias, [&](Tensor& gb) {
            for (std::size_t r = 0; r < g.rows(); ++r)
                for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
        });
    }, "add_row");
}

inline Var linear(const Var& x, const Var& weight, const Var& bias) { return add_row(matmul(x, weight), bias); }

// ---- shape ---------------------------------------------------------------

inline Var reshape(const Var& a, Shape shape) {
    Tensor out = a.value().reshaped(std::move(shape));
    return a.tape().record(std::move(out), {a}, [a](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, a, [&](Tensor& ga) { for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i]; });
    }, "reshape");
}

inline Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::DimensionMismatch, "concat_cols of nothing");
    const std::size_t rows = parts.front().rows();
    std::size_t cols = 0;
    for (const Var& p : parts) {
        detail::require_matrix(p, "concat_cols");
        require(p.rows() == rows, ErrorKind::ShapeMismatch, "concat_cols row mismatch");
        cols += p.cols();
    }
    Tensor out({rows, cols});
    std::size_t offset = 0;
    for (const Var& p : parts) {
        const Tensor& x = p.value();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < x.cols(); ++c) out(r, offset + c) = x(r, c);
        offset += x.cols();
    }
    return parts.front().tape().record(std::move(out), parts, [parts](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t offset = 0;
        for (const Var& p : parts) {
            const std::size_t pc = p.cols();
            detail::accumulate(t, p, [&](Tensor& gp) {
                for (std::size_t r = 0; r < gp.rows(); ++r)
                    for (std::size_t c = 0; c < pc; ++c) gp(r, c) += g(r, offset + c);
            });
            offset += pc;
        }
    }, "concat_cols");
}

inline Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), ErrorKind::DimensionMismatch, "concat_rows of nothing");
    const std::size_t cols = parts.front().cols();
    std::size_t rows = 0;
    for (const Var& p : parts) {
        detail::require_matrix(p, "concat_rows");
        require(p.cols() == cols, ErrorKind::ShapeMismatch, "concat_rows column mismatch");
        rows += p.rows();
    }
    std::vector<double> data;
    data.reserve(rows * cols);
    for (const Var& p : parts) data.insert(data.end(), p.value().data().begin(), p.value().data().end());
    Tensor out({rows, cols}, std::move(data));
    return parts.front().tape().record(std::move(out), parts, [parts](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        std::size_t offset = 0;
        for (const Var& p : parts) {
            const std::size_t n = p.value().size();
            detail::accumulate(t, p, [&](Tensor& gp) { for (std::size_t i = 0; i < n; ++i) gp[i] += g[offset + i]; });
            offset += n;
        }
    }, "concat_rows");
}

inline Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
    detail::require_matrix(a, "slice_rows");
    require(begin + count <= a.rows(), ErrorKind::DimensionMismatch, "slice_rows out of range");
    const std::size_t cols = a.cols();
    auto src = a.value().data().subspan(begin * cols, count * cols);
    Tensor out({count, cols}, std::vector<double>(src.begin(), src.end()));
    return a.tape().record(std::move(out), {a}, [a, begin, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < g.size(); ++i) ga[begin * cols + i] += g[i];
        });
    }, "slice_rows");
}

/// 2x2 average pooling of a feature map stored as (height*width) x channels.
inline Var avg_pool2x2(const Var& a, std::size_t height, std::size_t width) {
    detail::require_matrix(a, "avg_pool2x2");
    require(a.rows() == height * width && height % 2 == 0 && width % 2 == 0, ErrorKind::DimensionMismatch,
            "avg_pool2x2 needs even extents matching the row count");
    const std::size_t c = a.cols(), oh = height / 2, ow = width / 2;
    const Tensor& x = a.value();
    Tensor out({oh * ow, c});
    for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j)
            for (std::size_t di = 0; di < 2; ++di)
                for (std::size_t dj = 0; dj < 2; ++dj) {
                    const std::size_t src = (2 * i + di) * width + 2 * j + dj;
                    for (std::size_t k = 0; k < c; ++k) out(i * ow + j, k) += 0.25 * x(src, k);
                }
    return a.tape().record(std::move(out), {a}, [a, width, oh, ow, c](Tape& t, std::size_t self) {
        const Tensor& g = t.grad(self);
        detail::accumulate(t, a, [&](Tensor& ga) {
            for (std::size_t i = 0; i < oh; ++i)
                for (std::size_t j = 0; j < ow; ++j)
                    for (std::size_t di = 0; di < 2; ++di)
                        for (std::size_t dj = 0; dj < 2; ++dj) {
                            const std::size_t src = (2 * i + di) * width + 2 * j + dj;
                            for (std::size_t k = 0; k < c; ++k) ga(src, k) += 0.25 * g(i * ow + j, k);
                        }
        });
    }, "avg_pool2x2");
}

// ---- attention -----------------------------------------------------------

/// Scaled dot-product attention applied independently to `blocks` groups of
/// `tokens` consecutive rows and to `heads` groups of `head_dim` columns.
/// q, k, v: (blocks*tokens) x (heads*head_dim).
inline Var block_attention(const Var& q, const Var& k, const Var& v, std::size_t tokens, std::size_t heads) {
    detail::require_same_shape(q, k, "block_attention");
    detail::require_same_shape(q, v, "block_attention");
    detail::require_matrix(q, "block_attention");
    require(tokens > 0 && q.rows() % tokens == 0, ErrorKind::DimensionMismatch, "rows not a multiple of tokens");
    require(heads > 0 && q.cols() % heads == 0, ErrorKind::DimensionMismatch, "cols not a multiple of heads");
    const std::size_t blocks = q.rows() / tokens;
    const std::size_t hd = q.cols() / heads;
    const std::size_t width = q.cols();
    const double inv = 1.0 / std::sqrt(static_cast<double>(hd));
    const Tensor& Q = q.value();
    const Tensor& K = k.value();
    const Tensor& V = v.value();

    // attention weights per (block, head): tokens x tokens, stored contiguously
    Tensor weights({blocks * heads * tokens * tokens});
    Tensor out({q.rows(), width});
    std::vector<double> scores(tokens);
    for (std::size_t b = 0; b < blocks; ++b)
        for (std::size_t h = 0; h < heads; ++h) {
            double* w = &weights[((b * heads + h) * tokens) * tokens];
            for (std::size_t i = 0; i < tokens; ++i) {
                const std::size_t qi = b * tokens + i;
                double mx = -std::numeric_limits<double>::infinity();
                for (std::size_t j = 0; j < tokens; ++j) {
                    const std::size_t kj = b * tokens + j;
                    double s = 0.0;
                    for (std::size_t d = 0; d < hd; ++d) s += Q(qi, h * hd + d) * K(kj, h * hd + d);
                    scores[j] = s * inv;
                    mx = std::max(mx, scores[j]);
                }
                double z = 0.0;
                for (std::size_t j = 0; j < tokens; ++j) z += (scores[j] = std::exp(scores[j] - mx));
                for (std::size_t j = 0; j < tokens; ++j) {
                    const double p = scores[j] / z;
                    w[i * tokens + j] = p;
                    const std::size_t vj = b * tokens + j;
                    for (std::size_t d = 0; d < hd; ++d) out(qi, h * hd + d) += p * V(vj, h * hd + d);
                }
            }
        }

    return q.tape().record(std::move(out), {q, k, v},
        [q, k, v, weights = std::move(weights), blocks, heads, tokens, hd, inv](Tape& t, std::size_t self) {
            const Tensor& G = t.grad(self);
            const Tensor& Q = q.value();
            const Tensor& K = k.value();
            const Tensor& V = v.value();
            Tensor gq(Q.shape()), gk(K.shape()), gv(V.shape());
            std::vector<double> dw(tokens);
            for (std::size_t b = 0; b < blocks; ++b)
                for (std::size_t h = 0; h < heads; ++h) {
                    const double* w = weights.data().data() + ((b * heads + h) * tokens) * tokens;
                    for (std::size_t i = 0; i < tokens; ++i) {
                        const std::size_t qi = b * tokens + i;
                        // dW[i,j] = G[i] . V[j]; dV[j] += W[i,j] G[i]
                        double wdot = 0.0;
                        for (std::size_t j = 0; j < tokens; ++j) {
                            const std::size_t vj = b * tokens + j;
                            double s = 0.0;
                            for (std::size_t d = 0; d < hd; ++d) {
                                s += G(qi, h * hd + d) * V(vj, h * hd + d);
                                gv(vj, h * hd + d) += w[i * tokens + j] * G(qi, h * hd + d);
                            }
                            dw[j] = s;
                            wdot += s * w[i * tokens + j];
                        }
                        // softmax backward, then the scaled dot product
                        for (std::size_t j = 0; j < tokens; ++j) {
                            const double ds = w[i * tokens + j] * (dw[j] - wdot) * inv;
                            if (ds == 0.0) continue;
                            const std::size_t kj = b * tokens + j;
                            for (std::size_t d = 0; d < hd; ++d) {
                                gq(qi, h * hd + d) += ds * K(kj, h * hd + d);
                                gk(kj, h * hd + d) += ds * Q(qi, h * hd + d);
                            }
                        }
                    }
                }
            detail::accumulate(t, q, [&](Tensor& g) { for (std::size_t i = 0; i < g.size(); ++i) g[i] += gq[i]; });
            detail::accumulate(t, k, [&](Tensor& g) { for (std::size_t i = 0; i < g.size(); ++i) g[i] += gk[i]; });
            detail::accumulate(t, v, [&](Tensor& g) { for (std::size_t i = 0; i < g.size(); ++i) g[i] += gv[i]; });
        },
        "block_attention");
}

} // namespace mocha::ad
