#pragma once

#include <cmath>
#include <cstddef>
#if defined(__GLIBC__)
#include <malloc.h>
#endif
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "thermocast/error.hpp"

/// Dense double tensors and a tape for reverse-mode differentiation.
///
/// Ops view a tensor as a matrix of rows() x cols() where cols() is the last
/// dimension. Binary elementwise ops accept equal shapes or a right operand
/// whose shape equals the trailing dims of the left one (broadcast over the
/// leading batch dimension).
namespace thermocast::ad {

using Shape = std::vector<std::size_t>;

/// Keeps freed tape memory in the process heap instead of returning it to the
/// OS. Rebuilding large tapes every step otherwise pays a page fault per page.
/// Process-wide; a no-op outside glibc.
inline void retain_freed_memory() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

inline std::string shape_string(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), values_(count(shape_), fill) {}
    Tensor(Shape shape, std::vector<double> values) : shape_(std::move(shape)), values_(std::move(values)) {
        if (values_.size() != count(shape_))
            throw ShapeError("shape " + shape_string(shape_) + " does not match " + std::to_string(values_.size()) +
                             " values");
    }

    static Tensor scalar(double v) { return Tensor({}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return values_.size(); }
    std::size_t cols() const { return shape_.empty() ? 1 : shape_.back(); }
    std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

    const std::vector<double>& values() const { return values_; }
    std::vector<double>& values() { return values_; }
    double* data() { return values_.data(); }
    const double* data() const { return values_.data(); }
    double operator[](std::size_t i) const { return values_[i]; }
    double& operator[](std::size_t i) { return values_[i]; }
    double item() const {
        if (size() != 1) throw ShapeError("item() on a tensor of shape " + shape_string(shape_));
        return values_[0];
    }

    bool all_finite() const {
        for (double v : values_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    static std::size_t count(const Shape& s) {
        return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
    }

private:
    Shape shape_;
    std::vector<double> values_;
};

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

inline MatMap as_matrix(Tensor& t) {
    return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}
inline ConstMatMap as_matrix(const Tensor& t) {
    return {t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols())};
}

class Tape;

/// Handle to a node on a tape.
class Var {
public:
    Var() = default;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape() const { return tape_; }
    std::size_t id() const { return id_; }
    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }

private:
    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, std::size_t)>;

    struct Node {
        std::string op;
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        Backward backward;
        bool requires_grad = false;
    };

    Var parameter(Tensor value) { return push("parameter", std::move(value), {}, nullptr, true); }
    Var constant(Tensor value) { return push("constant", std::move(value), {}, nullptr, false); }

    /// Records an op result; the backward rule runs only if an input needs a gradient.
    Var record(std::string op, Tensor value, std::vector<std::size_t> inputs, Backward backward) {
        if (!value.all_finite()) throw NumericalError("non-finite value produced by " + op);
        bool needs = false;
        for (auto i : inputs) needs = needs || nodes_[i].requires_grad;
        return push(std::move(op), std::move(value), std::move(inputs), needs ? std::move(backward) : nullptr, needs);
    }

    void backward(Var loss) {
        check(loss);
        if (loss.value().size() != 1)
            throw GraphError("backward needs a scalar loss, got shape " + shape_string(loss.shape()));
        for (auto& n : nodes_) n.grad = Tensor();
        nodes_[loss.id()].grad = Tensor(loss.shape(), 1.0);
        for (std::size_t k = loss.id() + 1; k-- > 0;) {
            Node& n = nodes_[k];
            if (!n.requires_grad || n.grad.size() == 0 || !n.backward) continue;
            n.backward(*this, k);
        }
    }

    /// Gradient of the last backward() w.r.t. `v`; zeros when `v` did not reach the loss.
    Tensor grad(Var v) const {
        check(v);
        const Node& n = nodes_[v.id()];
        return n.grad.size() == n.value.size() && n.grad.shape() == n.value.shape() ? n.grad : Tensor(n.value.shape());
    }

    const Node& node(std::size_t id) const { return nodes_.at(id); }
    const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
    std::size_t size() const { return nodes_.size(); }
    void clear() { nodes_.clear(); }

    /// Gradient slot of node `id`, allocated as zeros on first use.
    Tensor& grad_slot(std::size_t id) {
        Node& n = nodes_[id];
        if (n.grad.size() != n.value.size() || n.grad.shape() != n.value.shape()) n.grad = Tensor(n.value.shape());
        return n.grad;
    }
    bool needs_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    void check(Var v) const {
        if (v.tape() != this || v.id() >= nodes_.size()) throw GraphError("variable belongs to another tape");
    }

private:
    Var push(std::string op, Tensor value, std::vector<std::size_t> inputs, Backward backward, bool needs) {
        nodes_.push_back({std::move(op), std::move(value), Tensor(), std::move(inputs), std::move(backward), needs});
        return {this, nodes_.size() - 1};
    }

    std::vector<Node> nodes_;
};

inline const Tensor& Var::value() const { return tape_->value(id_); }

namespace detail {

inline Tape& same_tape(Var a, Var b) {
    if (a.tape() == nullptr || a.tape() != b.tape()) throw GraphError("operands live on different tapes");
    return *a.tape();
}

/// True when b broadcasts over the leading dims of a.
inline bool trailing_match(const Shape& a, const Shape& b) {
    if (b.size() > a.size()) return false;
    return std::equal(b.begin(), b.end(), a.end() - static_cast<std::ptrdiff_t>(b.size()));
}

inline void require_broadcast(const Shape& a, const Shape& b, const char* op) {
    if (!trailing_match(a, b))
        throw ShapeError(std::string(op) + ": cannot combine " + shape_string(a) + " and " + shape_string(b));
}

template <class F, class D>
Var unary(Var a, const char* op, F f, D deriv) {
    Tape& tape = *a.tape();
    const Tensor& x = a.value();
    Tensor y(x.shape());
    for (std::size_t k = 0; k < x.size(); ++k) y[k] = f(x[k]);
    const std::size_t ia = a.id();
    return tape.record(op, std::move(y), {ia}, [ia, deriv](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& xv = t.value(ia);
        const Tensor& yv = t.value(self);
        Tensor& ga = t.grad_slot(ia);
        for (std::size_t k = 0; k < g.size(); ++k) ga[k] += g[k] * deriv(xv[k], yv[k]);
    });
}

}  // namespace detail

/// (n x k) . (k x m)
inline Var matmul(Var a, Var b) {
    Tape& tape = detail::same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& w = b.value();
    if (x.rank() != 2 || w.rank() != 2 || x.dim(1) != w.dim(0))
        throw ShapeError("matmul: " + shape_string(x.shape()) + " x " + shape_string(w.shape()));
    Tensor y({x.dim(0), w.dim(1)});
    as_matrix(y).noalias() = as_matrix(x) * as_matrix(w);
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record("matmul", std::move(y), {ia, ib}, [ia, ib](Tape& t, std::size_t self) {
        const auto g = as_matrix(t.node(self).grad);
        if (t.needs_grad(ia)) as_matrix(t.grad_slot(ia)).noalias() += g * as_matrix(t.value(ib)).transpose();
        if (t.needs_grad(ib)) as_matrix(t.grad_slot(ib)).noalias() += as_matrix(t.value(ia)).transpose() * g;
    });
}

namespace detail {

template <class F, class DA, class DB>
Var binary(Var a, Var b, const char* op, F f, DA da, DB db) {
    Tape& tape = same_tape(a, b);
    const Tensor& x = a.value();
    const Tensor& z = b.value();
    require_broadcast(x.shape(), z.shape(), op);
    const std::size_t period = z.size();
    const std::size_t reps = period == 0 ? 0 : x.size() / period;
    Tensor y(x.shape());
    for (std::size_t r = 0; r < reps; ++r) {
        const double* xr = x.data() + r * period;
        double* yr = y.data() + r * period;
        for (std::size_t k = 0; k < period; ++k) yr[k] = f(xr[k], z[k]);
    }
    const std::size_t ia = a.id(), ib = b.id();
    return tape.record(op, std::move(y), {ia, ib}, [ia, ib, period, reps, da, db](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        const Tensor& xv = t.value(ia);
        const Tensor& zv = t.value(ib);
        if (t.needs_grad(ia)) {
            Tensor& ga = t.grad_slot(ia);
            for (std::size_t r = 0; r < reps; ++r) {
                const std::size_t o = r * period;
                for (std::size_t k = 0; k < period; ++k) ga[o + k] += g[o + k] * da(xv[o + k], zv[k]);
            }
        }
        if (t.needs_grad(ib)) {
            Tensor& gb = t.grad_slot(ib);
            for (std::size_t r = 0; r < reps; ++r) {
                const std::size_t o = r * period;
                for (std::size_t k = 0; k < period; ++k) gb[k] += g[o + k] * db(xv[o + k], zv[k]);
            }
        }
    });
}

}  // namespace detail

inline Var add(Var a, Var b) {
    return detail::binary(
        a, b, "add", [](double x, double z) { return x + z; }, [](double, double) { return 1.0; },
        [](double, double) { return 1.0; });
}

inline Var sub(Var a, Var b) {
    return detail::binary(
        a, b, "sub", [](double x, double z) { return x - z; }, [](double, double) { return 1.0; },
        [](double, double) { return -1.0; });
}

inline Var mul(Var a, Var b) {
    return detail::binary(
        a, b, "mul", [](double x, double z) { return x * z; }, [](double, double z) { return z; },
        [](double x, double) { return x; });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }

inline double sigmoid_value(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

inline double softplus_value(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

inline Var sigmoid(Var a) {
    return detail::unary(a, "sigmoid", sigmoid_value, [](double, double y) { return y * (1.0 - y); });
}

inline Var tanh(Var a) {
    return detail::unary(a, "tanh", [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var relu(Var a) {
    return detail::unary(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var exp(Var a) {
    return detail::unary(a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(Var a) {
    return detail::unary(a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var square(Var a) {
    return detail::unary(a, "square", [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

inline Var softplus(Var a) {
    return detail::unary(a, "softplus", softplus_value, [](double x, double) { return sigmoid_value(x); });
}

inline Var scale(Var a, double c) {
    return detail::unary(a, "scale", [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(Var a, double c) {
    return detail::unary(a, "add_scalar", [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

namespace detail {

template <class F, class D>
Var reduce(Var a, const char* op, F f, D deriv) {
    Tape& tape = *a.tape();
    const Tensor& x = a.value();
    double s = 0.0;
    for (double v : x.values()) s += f(v);
    const std::size_t ia = a.id();
    return tape.record(op, Tensor::scalar(s), {ia}, [ia, deriv](Tape& t, std::size_t self) {
        const double g = t.node(self).grad[0];
        const Tensor& xv = t.value(ia);
        Tensor& ga = t.grad_slot(ia);
        for (std::size_t k = 0; k < xv.size(); ++k) ga[k] += g * deriv(xv[k]);
    });
}

}  // namespace detail

inline Var sum(Var a) {
    return detail::reduce(a, "sum", [](double x) { return x; }, [](double) { return 1.0; });
}

/// L1 norm; the subgradient at 0 is 0.
inline Var abs_sum(Var a) {
    return detail::reduce(
        a, "abs_sum", [](double x) { return std::abs(x); },
        [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

/// Columns [begin, begin + len) of the last dimension.
inline Var slice(Var a, std::size_t begin, std::size_t len) {
    Tape& tape = *a.tape();
    const Tensor& x = a.value();
    if (x.rank() == 0 || begin + len > x.cols())
        throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(begin + len) + ") of " +
                         shape_string(x.shape()));
    Shape shape = x.shape();
    shape.back() = len;
    Tensor y(shape);
    const std::size_t rows = x.rows(), cols = x.cols();
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < len; ++c) y[r * len + c] = x[r * cols + begin + c];
    const std::size_t ia = a.id();
    return tape.record("slice", std::move(y), {ia}, [ia, begin, len, rows, cols](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        Tensor& ga = t.grad_slot(ia);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < len; ++c) ga[r * cols + begin + c] += g[r * len + c];
    });
}

/// Concatenation along the last dimension; leading dims must agree.
inline Var concat(const std::vector<Var>& parts) {
    if (parts.empty()) throw ShapeError("concat of nothing");
    Tape& tape = *parts.front().tape();
    const Shape& first = parts.front().shape();
    if (first.empty()) throw ShapeError("concat of scalars");
    std::size_t total = 0;
    std::vector<std::size_t> ids, widths;
    for (const Var& p : parts) {
        tape.check(p);
        const Shape& s = p.shape();
        if (s.size() != first.size() || !std::equal(s.begin(), s.end() - 1, first.begin()))
            throw ShapeError("concat: " + shape_string(s) + " vs " + shape_string(first));
        ids.push_back(p.id());
        widths.push_back(s.back());
        total += s.back();
    }
    Shape shape = first;
    shape.back() = total;
    Tensor y(shape);
    const std::size_t rows = y.rows();
    for (std::size_t r = 0, off = 0; r < rows; ++r) {
        off = 0;
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const Tensor& x = parts[p].value();
            for (std::size_t c = 0; c < widths[p]; ++c) y[r * total + off + c] = x[r * widths[p] + c];
            off += widths[p];
        }
    }
    return tape.record("concat", std::move(y), ids, [ids, widths, rows, total](Tape& t, std::size_t self) {
        const Tensor& g = t.node(self).grad;
        std::size_t off = 0;
        for (std::size_t p = 0; p < ids.size(); ++p) {
            if (t.needs_grad(ids[p])) {
                Tensor& gp = t.grad_slot(ids[p]);
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t c = 0; c < widths[p]; ++c) gp[r * widths[p] + c] += g[r * total + off + c];
            }
            off += widths[p];
        }
    });
}

/// Per-row affine map with row-specific weights
///   y[n] = h[n] (mu_w + sigma_w * eps_w[n]) + mu_b + sigma_b * eps_b[n]
/// h: N x I, mu_w/sigma_w: I x O, mu_b/sigma_b: O, eps_w: N x I x O, eps_b: N x O.
inline Var sampled_affine(Var h, Var mu_w, Var sigma_w, Var mu_b, Var sigma_b, Var eps_w, Var eps_b) {
    Tape& tape = *h.tape();
    for (Var v : {mu_w, sigma_w, mu_b, sigma_b, eps_w, eps_b}) tape.check(v);
    const Tensor& x = h.value();
    if (x.rank() != 2 || mu_w.value().rank() != 2) throw ShapeError("sampled_affine expects matrices");
    const std::size_t n = x.dim(0), in = x.dim(1), out = mu_w.value().dim(1);
    if (mu_w.shape() != Shape{in, out} || sigma_w.shape() != Shape{in, out} || mu_b.shape() != Shape{out} ||
        sigma_b.shape() != Shape{out} || eps_w.shape() != Shape{n, in, out} || eps_b.shape() != Shape{n, out})
        throw ShapeError("sampled_affine: inconsistent operand shapes");

    Tensor y({n, out});
    as_matrix(y).noalias() = as_matrix(x) * as_matrix(mu_w.value());
    {
        const double* sw = sigma_w.value().data();
        const double* ew = eps_w.value().data();
        const double* mb = mu_b.value().data();
        const double* sb = sigma_b.value().data();
        const double* eb = eps_b.value().data();
        for (std::size_t r = 0; r < n; ++r) {
            double* yr = y.data() + r * out;
            for (std::size_t i = 0; i < in; ++i) {
                const double hi = x[r * in + i];
                const double* e = ew + (r * in + i) * out;
                const double* s = sw + i * out;
                for (std::size_t o = 0; o < out; ++o) yr[o] += hi * s[o] * e[o];
            }
            for (std::size_t o = 0; o < out; ++o) yr[o] += mb[o] + sb[o] * eb[r * out + o];
        }
    }
    const std::size_t ih = h.id(), imw = mu_w.id(), isw = sigma_w.id(), imb = mu_b.id(), isb = sigma_b.id(),
                      iew = eps_w.id(), ieb = eps_b.id();
    return tape.record(
        "sampled_affine", std::move(y), {ih, imw, isw, imb, isb, iew, ieb},
        [=](Tape& t, std::size_t self) {
            const Tensor& g = t.node(self).grad;
            const Tensor& xv = t.value(ih);
            const Tensor& sw = t.value(isw);
            const Tensor& ew = t.value(iew);
            const Tensor& eb = t.value(ieb);
            if (t.needs_grad(imw)) as_matrix(t.grad_slot(imw)).noalias() += as_matrix(xv).transpose() * as_matrix(g);
            if (t.needs_grad(imb)) {
                Tensor& gb = t.grad_slot(imb);
                for (std::size_t k = 0; k < g.size(); ++k) gb[k % out] += g[k];
            }
            if (t.needs_grad(isb)) {
                Tensor& gs = t.grad_slot(isb);
                for (std::size_t k = 0; k < g.size(); ++k) gs[k % out] += g[k] * eb[k];
            }
            const bool want_h = t.needs_grad(ih), want_s = t.needs_grad(isw);
            if (want_h) as_matrix(t.grad_slot(ih)).noalias() += as_matrix(g) * as_matrix(t.value(imw)).transpose();
            if (want_h || want_s) {
                Tensor* gh = want_h ? &t.grad_slot(ih) : nullptr;
                Tensor* gs = want_s ? &t.grad_slot(isw) : nullptr;
                for (std::size_t r = 0; r < n; ++r) {
                    const double* gr = g.data() + r * out;
                    for (std::size_t i = 0; i < in; ++i) {
                        const double* e = ew.data() + (r * in + i) * out;
                        const double* s = sw.data() + i * out;
                        const double hi = xv[r * in + i];
                        double acc = 0.0;
                        for (std::size_t o = 0; o < out; ++o) {
                            const double ge = gr[o] * e[o];
                            acc += ge * s[o];
                            if (gs) (*gs)[i * out + o] += hi * ge;
                        }
                        if (gh) (*gh)[r * in + i] += acc;
                    }
                }
            }
        });
}

/// LSTM gate pre-activations x w_x + h w_h + b (N x 4D).
inline Var gate_preactivation(Var x, Var w_x, Var h, Var w_h, Var b) {
    Tape& tape = *x.tape();
    for (Var v : {w_x, h, w_h, b}) tape.check(v);
    const Tensor& xv = x.value();
    const Tensor& hv = h.value();
    if (xv.rank() != 2 || hv.rank() != 2 || w_x.value().rank() != 2 || w_h.value().rank() != 2 ||
        w_x.value().dim(0) != xv.dim(1) || w_h.value().dim(0) != hv.dim(1) || xv.dim(0) != hv.dim(0) ||
        w_x.value().dim(1) != w_h.value().dim(1) || b.shape() != Shape{w_x.value().dim(1)})
        throw ShapeError("gate_preactivation: inconsistent operand shapes");
    Tensor z({xv.dim(0), w_x.value().dim(1)});
    auto zm = as_matrix(z);
    zm.noalias() = as_matrix(xv) * as_matrix(w_x.value());
    zm.noalias() += as_matrix(hv) * as_matrix(w_h.value());
    zm.rowwise() += as_matrix(b.value()).row(0);
    const std::size_t ix = x.id(), iwx = w_x.id(), ih = h.id(), iwh = w_h.id(), ib = b.id();
    return tape.record("gate_preactivation", std::move(z), {ix, iwx, ih, iwh, ib}, [=](Tape& t, std::size_t self) {
        const auto g = as_matrix(t.node(self).grad);
        if (t.needs_grad(ix)) as_matrix(t.grad_slot(ix)).noalias() += g * as_matrix(t.value(iwx)).transpose();
        if (t.needs_grad(iwx)) as_matrix(t.grad_slot(iwx)).noalias() += as_matrix(t.value(ix)).transpose() * g;
        if (t.needs_grad(ih)) as_matrix(t.grad_slot(ih)).noalias() += g * as_matrix(t.value(iwh)).transpose();
        if (t.needs_grad(iwh)) as_matrix(t.grad_slot(iwh)).noalias() += as_matrix(t.value(ih)).transpose() * g;
        if (t.needs_grad(ib)) {
            Tensor& gb = t.grad_slot(ib);
            as_matrix(gb).row(0) += g.colwise().sum();
        }
    });
}

namespace detail {

// Array-wide logistic and tanh; Eigen vectorizes exp, std::tanh it would not.
template <class X>
auto logistic(const X& x) {
    return (1.0 + (-x).exp()).inverse();
}
template <class X>
auto tanh_via_logistic(const X& x) {
    return 2.0 * logistic(2.0 * x) - 1.0;
}

inline RowMat activated(const ConstMatMap& z, Eigen::Index col, Eigen::Index d, bool tanh_gate) {
    const auto block = z.middleCols(col, d).array();
    return tanh_gate ? RowMat(tanh_via_logistic(block).matrix()) : RowMat(logistic(block).matrix());
}

}  // namespace detail

/// Cell update sigmoid(z_f) * c + sigmoid(z_i) * tanh(z_q) for z = [z_f z_i z_q z_o].
inline Var lstm_cell_state(Var z, Var c) {
    Tape& tape = detail::same_tape(z, c);
    const Tensor& zv = z.value();
    const Tensor& cv = c.value();
    const std::size_t n = cv.rows(), d = cv.cols();
    if (zv.rank() != 2 || cv.rank() != 2 || zv.dim(0) != n || zv.dim(1) != 4 * d)
        throw ShapeError("lstm_cell_state: z must be N x 4D for c of N x D");
    const auto zm = as_matrix(zv);
    const auto di = static_cast<Eigen::Index>(d);
    struct Gates {
        RowMat f, i, q;
    };
    auto gates = std::make_shared<Gates>(Gates{detail::activated(zm, 0, di, false), detail::activated(zm, di, di, false),
                                               detail::activated(zm, 2 * di, di, true)});
    Tensor out({n, d});
    as_matrix(out).array() = gates->f.array() * as_matrix(cv).array() + gates->i.array() * gates->q.array();
    const std::size_t iz = z.id(), ic = c.id();
    return tape.record("lstm_cell_state", std::move(out), {iz, ic}, [iz, ic, di, gates](Tape& t, std::size_t self) {
        const auto g = as_matrix(t.node(self).grad).array();
        const auto& [f, i, q] = *gates;
        if (t.needs_grad(iz)) {
            auto gz = as_matrix(t.grad_slot(iz));
            gz.middleCols(0, di).array() += g * as_matrix(t.value(ic)).array() * f.array() * (1.0 - f.array());
            gz.middleCols(di, di).array() += g * q.array() * i.array() * (1.0 - i.array());
            gz.middleCols(2 * di, di).array() += g * i.array() * (1.0 - q.array().square());
        }
        if (t.needs_grad(ic)) as_matrix(t.grad_slot(ic)).array() += g * f.array();
    });
}

/// Hidden update sigmoid(z_o) * tanh(c) for z = [z_f z_i z_q z_o].
inline Var lstm_hidden_state(Var z, Var c) {
    Tape& tape = detail::same_tape(z, c);
    const Tensor& zv = z.value();
    const Tensor& cv = c.value();
    const std::size_t n = cv.rows(), d = cv.cols();
    if (zv.rank() != 2 || cv.rank() != 2 || zv.dim(0) != n || zv.dim(1) != 4 * d)
        throw ShapeError("lstm_hidden_state: z must be N x 4D for c of N x D");
    const auto di = static_cast<Eigen::Index>(d);
    struct Gates {
        RowMat o, tc;
    };
    auto gates = std::make_shared<Gates>(
        Gates{detail::activated(as_matrix(zv), 3 * di, di, false), RowMat(detail::tanh_via_logistic(as_matrix(cv).array()).matrix())});
    Tensor out({n, d});
    as_matrix(out).array() = gates->o.array() * gates->tc.array();
    const std::size_t iz = z.id(), ic = c.id();
    return tape.record("lstm_hidden_state", std::move(out), {iz, ic}, [iz, ic, di, gates](Tape& t, std::size_t self) {
        const auto g = as_matrix(t.node(self).grad).array();
        const auto& [o, tc] = *gates;
        if (t.needs_grad(iz))
            as_matrix(t.grad_slot(iz)).middleCols(3 * di, di).array() += g * tc.array() * o.array() * (1.0 - o.array());
        if (t.needs_grad(ic)) as_matrix(t.grad_slot(ic)).array() += g * o.array() * (1.0 - tc.array().square());
    });
}

}  // namespace thermocast::ad
