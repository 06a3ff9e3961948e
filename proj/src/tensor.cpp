#include "ecgan/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "ecgan/errors.hpp"

namespace ecgan::ad {

Tensor wrap_node(NodePtr n);

namespace {

std::atomic<std::uint64_t> g_next_id{1};

NodePtr new_node(Shape shape, const char* op) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->values.assign(static_cast<std::size_t>(shape_size(n->shape)), 0.0);
    n->op = op;
    n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
    return n;
}

void check_finite(const Node& n) {
    for (double v : n.values) {
        if (!std::isfinite(v)) {
            throw NumericError(std::string("non-finite value in output of op '") + n.op + "'");
        }
    }
}

void check_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw StateError(std::string("undefined tensor passed to op '") + op + "'");
}

// Adds g into p's gradient buffer if p participates in differentiation.
void accum(Node& p, std::size_t i, double g) {
    p.grad[i] += g;
}

void prepare_parents(std::vector<NodePtr>& parents) {
    for (auto& p : parents)
        if (p->requires_grad) p->ensure_grad();
}

// b broadcasts into a's shape when b.size()==1 or b.shape is a suffix of
// a.shape. Row-major layout makes suffix broadcast a modulo walk.
bool broadcasts_into(const Shape& big, const Shape& small) {
    if (shape_size(small) == 1) return true;
    if (small.size() > big.size()) return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct BinopPlan {
    Shape out_shape;
    bool swap = false;  // true when a is the broadcast (smaller) side
    std::size_t inner = 0;
};

BinopPlan plan_binop(const char* op, const Tensor& a, const Tensor& b) {
    BinopPlan plan;
    if (a.shape() == b.shape()) {
        plan.out_shape = a.shape();
        plan.inner = static_cast<std::size_t>(a.size());
        return plan;
    }
    if (broadcasts_into(a.shape(), b.shape())) {
        plan.out_shape = a.shape();
        plan.inner = static_cast<std::size_t>(b.size());
        return plan;
    }
    if (broadcasts_into(b.shape(), a.shape())) {
        plan.out_shape = b.shape();
        plan.swap = true;
        plan.inner = static_cast<std::size_t>(a.size());
        return plan;
    }
    throw ShapeError(std::string("op '") + op + "': incompatible shapes " +
                     shape_str(a.shape()) + " and " + shape_str(b.shape()));
}

Tensor make_result(NodePtr out, std::vector<NodePtr> parents,
                   std::function<void(const Node&)> backprop) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    out->parents = std::move(parents);
    out->requires_grad = rg;
    if (rg) {
        prepare_parents(out->parents);
        out->backprop = std::move(backprop);
    }
    check_finite(*out);
    return wrap_node(std::move(out));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
    if (t.shape().size() != rank) {
        throw ShapeError(std::string("op '") + op + "': expected rank " +
                         std::to_string(rank) + " tensor, got shape " + shape_str(t.shape()));
    }
}

}  // namespace

Tensor wrap_node(NodePtr n) { return Tensor(std::move(n)); }

int shape_size(const Shape& s) {
    int n = 1;
    for (int d : s) {
        if (d <= 0) throw ShapeError("shape dimensions must be positive, got " + shape_str(s));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

void Node::ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

Tensor Tensor::leaf(Shape shape, std::vector<double> values, bool requires_grad) {
    int n = shape_size(shape);
    if (static_cast<std::size_t>(n) != values.size()) {
        throw ShapeError("leaf: shape " + shape_str(shape) + " needs " + std::to_string(n) +
                         " values, got " + std::to_string(values.size()));
    }
    auto node = new_node(std::move(shape), "leaf");
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    check_finite(*node);
    return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double v, bool requires_grad) {
    int n = shape_size(shape);
    return leaf(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v),
                requires_grad);
}

Tensor Tensor::scalar_of(double v) { return leaf({1}, {v}, false); }

const Shape& Tensor::shape() const {
    if (!n_) throw StateError("shape() on undefined tensor");
    return n_->shape;
}

int Tensor::size() const { return static_cast<int>(shape_size(shape())); }

int Tensor::dim(int axis) const {
    const Shape& s = shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("dim(): axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    return s[static_cast<std::size_t>(axis)];
}

std::span<const double> Tensor::values() const {
    if (!n_) throw StateError("values() on undefined tensor");
    return n_->values;
}

std::span<double> Tensor::values_mut() {
    if (!n_) throw StateError("values_mut() on undefined tensor");
    if (n_->backprop) throw StateError("values_mut() is only valid on leaf tensors");
    return n_->values;
}

double Tensor::scalar() const {
    if (size() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(shape()));
    return n_->values[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
    const Shape& s = shape();
    if (idx.size() != s.size())
        throw ShapeError("at(): rank mismatch for shape " + shape_str(s));
    std::size_t flat = 0;
    std::size_t k = 0;
    for (int i : idx) {
        if (i < 0 || i >= s[k]) throw ShapeError("at(): index out of range");
        flat = flat * static_cast<std::size_t>(s[k]) + static_cast<std::size_t>(i);
        ++k;
    }
    return n_->values[flat];
}

bool Tensor::requires_grad() const { return n_ && n_->requires_grad; }

void Tensor::set_requires_grad(bool rg) {
    if (!n_) throw StateError("set_requires_grad() on undefined tensor");
    if (n_->backprop) throw StateError("set_requires_grad() is only valid on leaf tensors");
    n_->requires_grad = rg;
}

bool Tensor::has_grad() const { return n_ && n_->grad.size() == n_->values.size(); }

std::span<const double> Tensor::grad() const {
    if (!has_grad()) throw StateError("grad() requested but no gradient has been accumulated");
    return n_->grad;
}

void Tensor::zero_grad() {
    if (n_ && !n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), 0.0);
}

// ---- elementwise binary ops ----

namespace {

template <typename Fwd, typename Bwd>
Tensor binop(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
    check_defined(a, name);
    check_defined(b, name);
    BinopPlan plan = plan_binop(name, a, b);
    const Tensor& big = plan.swap ? b : a;
    const Tensor& small = plan.swap ? a : b;
    auto out = new_node(plan.out_shape, name);
    auto bv = big.values();
    auto sv = small.values();
    const std::size_t inner = plan.inner;
    const bool swap = plan.swap;
    for (std::size_t i = 0; i < out->values.size(); ++i) {
        double x = bv[i];
        double y = sv[i % inner];
        out->values[i] = swap ? fwd(y, x) : fwd(x, y);
    }
    NodePtr big_n = big.node_ptr();
    NodePtr small_n = small.node_ptr();
    return make_result(
        std::move(out), {a.node_ptr(), b.node_ptr()},
        [big_n, small_n, inner, swap, bwd](const Node& self) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                double g = self.grad[i];
                if (g == 0.0) continue;
                double x = big_n->values[i];
                double y = small_n->values[i % inner];
                double da, db;
                if (swap) {
                    bwd(y, x, g, db, da);  // a is the small side
                } else {
                    bwd(x, y, g, da, db);
                }
                if (big_n->requires_grad) accum(*big_n, i, swap ? db : da);
                if (small_n->requires_grad) accum(*small_n, i % inner, swap ? da : db);
            }
        });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binop(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binop(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double g, double& da, double& db) {
            da = g;
            db = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binop(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double g, double& da, double& db) {
            da = g * y;
            db = g * x;
        });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    check_defined(a, "matmul");
    check_defined(b, "matmul");
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
    if (k != k2) {
        throw ShapeError("op 'matmul': inner dimensions disagree, " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()));
    }
    auto out = new_node({m, n}, "matmul");
    auto av = a.values();
    auto bv = b.values();
    for (int i = 0; i < m; ++i) {
        double* orow = out->values.data() + static_cast<std::size_t>(i) * n;
        for (int l = 0; l < k; ++l) {
            double av_il = av[static_cast<std::size_t>(i) * k + l];
            if (av_il == 0.0) continue;
            const double* brow = bv.data() + static_cast<std::size_t>(l) * n;
            for (int j = 0; j < n; ++j) orow[j] += av_il * brow[j];
        }
    }
    NodePtr an = a.node_ptr();
    NodePtr bn = b.node_ptr();
    return make_result(std::move(out), {an, bn}, [an, bn, m, k, n](const Node& self) {
        const double* g = self.grad.data();
        if (an->requires_grad) {
            double* da = an->grad.data();
            const double* bvals = bn->values.data();
            for (int i = 0; i < m; ++i) {
                for (int l = 0; l < k; ++l) {
                    double acc = 0.0;
                    const double* grow = g + static_cast<std::size_t>(i) * n;
                    const double* brow = bvals + static_cast<std::size_t>(l) * n;
                    for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    da[static_cast<std::size_t>(i) * k + l] += acc;
                }
            }
        }
        if (bn->requires_grad) {
            double* db = bn->grad.data();
            const double* avals = an->values.data();
            for (int i = 0; i < m; ++i) {
                const double* grow = g + static_cast<std::size_t>(i) * n;
                for (int l = 0; l < k; ++l) {
                    double a_il = avals[static_cast<std::size_t>(i) * k + l];
                    if (a_il == 0.0) continue;
                    double* dbrow = db + static_cast<std::size_t>(l) * n;
                    for (int j = 0; j < n; ++j) dbrow[j] += a_il * grow[j];
                }
            }
        }
    });
}

Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b) {
    check_defined(x, "conv1d");
    check_defined(w, "conv1d");
    check_defined(b, "conv1d");
    require_rank(x, 2, "conv1d");
    require_rank(w, 3, "conv1d");
    require_rank(b, 1, "conv1d");
    const int cin = x.dim(0), n = x.dim(1);
    const int cout = w.dim(0), wcin = w.dim(1), k = w.dim(2);
    if (wcin != cin || b.dim(0) != cout) {
        throw ShapeError("op 'conv1d': weight " + shape_str(w.shape()) + " / bias " +
                         shape_str(b.shape()) + " incompatible with input " + shape_str(x.shape()));
    }
    if (n < 1) throw ShapeError("op 'conv1d': empty sequence");
    const int pad_left = (k - 1) / 2;
    auto out = new_node({cout, n}, "conv1d");
    auto xv = x.values();
    auto wv = w.values();
    auto bv = b.values();
    for (int co = 0; co < cout; ++co) {
        double* orow = out->values.data() + static_cast<std::size_t>(co) * n;
        for (int t = 0; t < n; ++t) orow[t] = bv[co];
        for (int ci = 0; ci < cin; ++ci) {
            const double* xrow = xv.data() + static_cast<std::size_t>(ci) * n;
            const double* wrow = wv.data() + (static_cast<std::size_t>(co) * cin + ci) * k;
            for (int j = 0; j < k; ++j) {
                double wj = wrow[j];
                if (wj == 0.0) continue;
                int lo = std::max(0, pad_left - j);
                int hi = std::min(n, n + pad_left - j);
                for (int t = lo; t < hi; ++t) orow[t] += wj * xrow[t + j - pad_left];
            }
        }
    }
    NodePtr xn = x.node_ptr();
    NodePtr wn = w.node_ptr();
    NodePtr bn = b.node_ptr();
    return make_result(
        std::move(out), {xn, wn, bn}, [xn, wn, bn, cin, cout, n, k, pad_left](const Node& self) {
            const double* g = self.grad.data();
            for (int co = 0; co < cout; ++co) {
                const double* grow = g + static_cast<std::size_t>(co) * n;
                if (bn->requires_grad) {
                    double acc = 0.0;
                    for (int t = 0; t < n; ++t) acc += grow[t];
                    accum(*bn, static_cast<std::size_t>(co), acc);
                }
                for (int ci = 0; ci < cin; ++ci) {
                    const double* xrow = xn->values.data() + static_cast<std::size_t>(ci) * n;
                    const double* wrow =
                        wn->values.data() + (static_cast<std::size_t>(co) * cin + ci) * k;
                    for (int j = 0; j < k; ++j) {
                        int lo = std::max(0, pad_left - j);
                        int hi = std::min(n, n + pad_left - j);
                        if (wn->requires_grad) {
                            double acc = 0.0;
                            for (int t = lo; t < hi; ++t) acc += grow[t] * xrow[t + j - pad_left];
                            accum(*wn, (static_cast<std::size_t>(co) * cin + ci) * k + j, acc);
                        }
                        if (xn->requires_grad) {
                            double wj = wrow[j];
                            if (wj == 0.0) continue;
                            double* dxrow = xn->grad.data() + static_cast<std::size_t>(ci) * n;
                            for (int t = lo; t < hi; ++t) dxrow[t + j - pad_left] += wj * grow[t];
                        }
                    }
                }
            }
        });
}

Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
    check_defined(x, "instance_norm");
    check_defined(gamma, "instance_norm");
    check_defined(beta, "instance_norm");
    require_rank(x, 2, "instance_norm");
    const int c = x.dim(0), n = x.dim(1);
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw ShapeError("op 'instance_norm': gamma/beta must have shape [" + std::to_string(c) +
                         "], got " + shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    }
    auto out = new_node({c, n}, "instance_norm");
    auto xv = x.values();
    auto gv = gamma.values();
    auto bv = beta.values();
    for (int ch = 0; ch < c; ++ch) {
        const double* row = xv.data() + static_cast<std::size_t>(ch) * n;
        double mu = 0.0;
        for (int t = 0; t < n; ++t) mu += row[t];
        mu /= n;
        double var = 0.0;
        for (int t = 0; t < n; ++t) var += (row[t] - mu) * (row[t] - mu);
        var /= n;
        double s = std::sqrt(var + eps);
        double* orow = out->values.data() + static_cast<std::size_t>(ch) * n;
        for (int t = 0; t < n; ++t) orow[t] = gv[ch] * (row[t] - mu) / s + bv[ch];
    }
    NodePtr xn = x.node_ptr();
    NodePtr gn = gamma.node_ptr();
    NodePtr bn = beta.node_ptr();
    return make_result(std::move(out), {xn, gn, bn}, [xn, gn, bn, c, n, eps](const Node& self) {
        for (int ch = 0; ch < c; ++ch) {
            const double* row = xn->values.data() + static_cast<std::size_t>(ch) * n;
            const double* grow = self.grad.data() + static_cast<std::size_t>(ch) * n;
            double mu = 0.0;
            for (int t = 0; t < n; ++t) mu += row[t];
            mu /= n;
            double var = 0.0;
            for (int t = 0; t < n; ++t) var += (row[t] - mu) * (row[t] - mu);
            var /= n;
            double s = std::sqrt(var + eps);
            double gamma_ch = gn->values[static_cast<std::size_t>(ch)];
            double sum_g = 0.0, sum_gx = 0.0;
            for (int t = 0; t < n; ++t) {
                double xhat = (row[t] - mu) / s;
                sum_g += grow[t];
                sum_gx += grow[t] * xhat;
            }
            if (bn->requires_grad) accum(*bn, static_cast<std::size_t>(ch), sum_g);
            if (gn->requires_grad) accum(*gn, static_cast<std::size_t>(ch), sum_gx);
            if (xn->requires_grad) {
                double* dxrow = xn->grad.data() + static_cast<std::size_t>(ch) * n;
                double mean_g = sum_g / n;
                double mean_gx = sum_gx / n;
                for (int t = 0; t < n; ++t) {
                    double xhat = (row[t] - mu) / s;
                    dxrow[t] += gamma_ch / s * (grow[t] - mean_g - xhat * mean_gx);
                }
            }
        }
    });
}

namespace {

template <typename Fwd, typename Bwd>
Tensor unop(const char* name, const Tensor& x, Fwd fwd, Bwd bwd) {
    check_defined(x, name);
    auto out = new_node(x.shape(), name);
    auto xv = x.values();
    for (std::size_t i = 0; i < out->values.size(); ++i) out->values[i] = fwd(xv[i]);
    NodePtr xn = x.node_ptr();
    return make_result(std::move(out), {xn}, [xn, bwd](const Node& self) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            accum(*xn, i, self.grad[i] * bwd(xn->values[i], self.values[i]));
        }
    });
}

}  // namespace

Tensor relu(const Tensor& x) {
    return unop(
        "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
        [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor tanh_op(const Tensor& x) {
    return unop(
        "tanh", x, [](double v) { return std::tanh(v); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& x) {
    return unop(
        "sigmoid", x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor global_avg_pool(const Tensor& x) {
    check_defined(x, "global_avg_pool");
    require_rank(x, 2, "global_avg_pool");
    const int c = x.dim(0), n = x.dim(1);
    auto out = new_node({c, 1}, "global_avg_pool");
    auto xv = x.values();
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const double* row = xv.data() + static_cast<std::size_t>(ch) * n;
        for (int t = 0; t < n; ++t) acc += row[t];
        out->values[static_cast<std::size_t>(ch)] = acc / n;
    }
    NodePtr xn = x.node_ptr();
    return make_result(std::move(out), {xn}, [xn, c, n](const Node& self) {
        if (!xn->requires_grad) return;
        for (int ch = 0; ch < c; ++ch) {
            double g = self.grad[static_cast<std::size_t>(ch)] / n;
            if (g == 0.0) continue;
            double* dxrow = xn->grad.data() + static_cast<std::size_t>(ch) * n;
            for (int t = 0; t < n; ++t) dxrow[t] += g;
        }
    });
}

namespace {

struct AxisSplit {
    std::size_t outer = 1, axis = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, int axis) {
    AxisSplit sp;
    for (int i = 0; i < axis; ++i) sp.outer *= static_cast<std::size_t>(s[static_cast<std::size_t>(i)]);
    sp.axis = static_cast<std::size_t>(s[static_cast<std::size_t>(axis)]);
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i)
        sp.inner *= static_cast<std::size_t>(s[i]);
    return sp;
}

}  // namespace

Tensor concat(const std::vector<Tensor>& parts, int axis) {
    if (parts.empty()) throw ShapeError("op 'concat': no inputs");
    for (const Tensor& p : parts) check_defined(p, "concat");
    const Shape& first = parts[0].shape();
    if (axis < 0 || axis >= static_cast<int>(first.size()))
        throw ShapeError("op 'concat': axis " + std::to_string(axis) + " out of range for " +
                         shape_str(first));
    Shape out_shape = first;
    int total = 0;
    for (const Tensor& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != first.size())
            throw ShapeError("op 'concat': rank mismatch between " + shape_str(first) + " and " +
                             shape_str(s));
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (static_cast<int>(i) != axis && s[i] != first[i])
                throw ShapeError("op 'concat': shapes " + shape_str(first) + " and " +
                                 shape_str(s) + " differ off-axis");
        }
        total += s[static_cast<std::size_t>(axis)];
    }
    out_shape[static_cast<std::size_t>(axis)] = total;
    auto out = new_node(out_shape, "concat");
    AxisSplit osp = split_at(out_shape, axis);
    std::vector<NodePtr> parents;
    parents.reserve(parts.size());
    std::vector<std::size_t> offsets;  // element offset of each part along axis
    std::size_t off = 0;
    for (const Tensor& p : parts) {
        parents.push_back(p.node_ptr());
        offsets.push_back(off);
        AxisSplit psp = split_at(p.shape(), axis);
        auto pv = p.values();
        for (std::size_t o = 0; o < psp.outer; ++o) {
            double* dst = out->values.data() + (o * osp.axis + off) * osp.inner;
            const double* src = pv.data() + o * psp.axis * psp.inner;
            std::copy(src, src + psp.axis * psp.inner, dst);
        }
        off += psp.axis;
    }
    std::vector<std::size_t> axis_sizes;
    for (const Tensor& p : parts)
        axis_sizes.push_back(static_cast<std::size_t>(p.dim(axis)));
    auto parents_copy = parents;
    return make_result(std::move(out), std::move(parents),
                       [parents_copy, offsets, axis_sizes, osp](const Node& self) {
                           for (std::size_t pi = 0; pi < parents_copy.size(); ++pi) {
                               Node& p = *parents_copy[pi];
                               if (!p.requires_grad) continue;
                               std::size_t pa = axis_sizes[pi];
                               for (std::size_t o = 0; o * osp.axis * osp.inner < self.grad.size() &&
                                                       o < osp.outer;
                                    ++o) {
                                   const double* src =
                                       self.grad.data() + (o * osp.axis + offsets[pi]) * osp.inner;
                                   double* dst = p.grad.data() + o * pa * osp.inner;
                                   for (std::size_t i = 0; i < pa * osp.inner; ++i) dst[i] += src[i];
                               }
                           }
                       });
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    check_defined(x, "slice");
    const Shape& s = x.shape();
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("op 'slice': axis " + std::to_string(axis) + " out of range for " +
                         shape_str(s));
    int d = s[static_cast<std::size_t>(axis)];
    if (start < 0 || len < 1 || start + len > d)
        throw ShapeError("op 'slice': range [" + std::to_string(start) + "," +
                         std::to_string(start + len) + ") out of bounds for axis size " +
                         std::to_string(d));
    Shape out_shape = s;
    out_shape[static_cast<std::size_t>(axis)] = len;
    auto out = new_node(out_shape, "slice");
    AxisSplit sp = split_at(s, axis);
    auto xv = x.values();
    for (std::size_t o = 0; o < sp.outer; ++o) {
        const double* src = xv.data() + (o * sp.axis + static_cast<std::size_t>(start)) * sp.inner;
        double* dst = out->values.data() + o * static_cast<std::size_t>(len) * sp.inner;
        std::copy(src, src + static_cast<std::size_t>(len) * sp.inner, dst);
    }
    NodePtr xn = x.node_ptr();
    return make_result(std::move(out), {xn}, [xn, sp, start, len](const Node& self) {
        if (!xn->requires_grad) return;
        for (std::size_t o = 0; o < sp.outer; ++o) {
            const double* src = self.grad.data() + o * static_cast<std::size_t>(len) * sp.inner;
            double* dst =
                xn->grad.data() + (o * sp.axis + static_cast<std::size_t>(start)) * sp.inner;
            for (std::size_t i = 0; i < static_cast<std::size_t>(len) * sp.inner; ++i)
                dst[i] += src[i];
        }
    });
}

Tensor reshape(const Tensor& x, Shape shape) {
    check_defined(x, "reshape");
    if (shape_size(shape) != x.size())
        throw ShapeError("op 'reshape': cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
    auto out = new_node(shape, "reshape");
    auto xv = x.values();
    std::copy(xv.begin(), xv.end(), out->values.begin());
    NodePtr xn = x.node_ptr();
    return make_result(std::move(out), {xn}, [xn](const Node& self) {
        if (!xn->requires_grad) return;
        for (std::size_t i = 0; i < self.grad.size(); ++i) accum(*xn, i, self.grad[i]);
    });
}

namespace {

Tensor full_reduce(const char* name, const Tensor& x, bool average) {
    check_defined(x, name);
    auto out = new_node({1}, name);
    double acc = 0.0;
    for (double v : x.values()) acc += v;
    const double scale = average ? 1.0 / x.size() : 1.0;
    out->values[0] = acc * scale;
    NodePtr xn = x.node_ptr();
    return make_result(std::move(out), {xn}, [xn, scale](const Node& self) {
        if (!xn->requires_grad) return;
        double g = self.grad[0] * scale;
        for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
    });
}

}  // namespace

Tensor mean(const Tensor& x) { return full_reduce("mean", x, true); }

Tensor sum(const Tensor& x) { return full_reduce("sum", x, false); }

Tensor l1_loss(const Tensor& pred, const Tensor& target) {
    check_defined(pred, "l1_loss");
    check_defined(target, "l1_loss");
    if (pred.shape() != target.shape())
        throw ShapeError("op 'l1_loss': shapes " + shape_str(pred.shape()) + " and " +
                         shape_str(target.shape()) + " differ");
    auto out = new_node({1}, "l1_loss");
    auto pv = pred.values();
    auto tv = target.values();
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) acc += std::abs(pv[i] - tv[i]);
    const double inv_n = 1.0 / pred.size();
    out->values[0] = acc * inv_n;
    NodePtr pn = pred.node_ptr();
    NodePtr tn = target.node_ptr();
    return make_result(std::move(out), {pn, tn}, [pn, tn, inv_n](const Node& self) {
        double g = self.grad[0] * inv_n;
        for (std::size_t i = 0; i < pn->values.size(); ++i) {
            double d = pn->values[i] - tn->values[i];
            // subgradient at zero taken as 0
            double sg = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (pn->requires_grad) accum(*pn, i, g * sg);
            if (tn->requires_grad) accum(*tn, i, -g * sg);
        }
    });
}

Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    check_defined(logits, "softmax_cross_entropy");
    require_rank(logits, 2, "softmax_cross_entropy");
    const int m = logits.dim(0), k = logits.dim(1);
    if (static_cast<int>(labels.size()) != m)
        throw ShapeError("op 'softmax_cross_entropy': " + std::to_string(labels.size()) +
                         " labels for " + std::to_string(m) + " rows");
    for (int lbl : labels) {
        if (lbl < 0 || lbl >= k)
            throw ShapeError("op 'softmax_cross_entropy': label " + std::to_string(lbl) +
                             " outside [0," + std::to_string(k) + ")");
    }
    auto out = new_node({1}, "softmax_cross_entropy");
    auto lv = logits.values();
    std::vector<double> probs(static_cast<std::size_t>(m) * k);
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
        const double* row = lv.data() + static_cast<std::size_t>(i) * k;
        double mx = row[0];
        for (int j = 1; j < k; ++j) mx = std::max(mx, row[j]);
        double z = 0.0;
        for (int j = 0; j < k; ++j) z += std::exp(row[j] - mx);
        double lse = mx + std::log(z);
        loss += lse - row[labels[static_cast<std::size_t>(i)]];
        for (int j = 0; j < k; ++j)
            probs[static_cast<std::size_t>(i) * k + j] = std::exp(row[j] - lse);
    }
    out->values[0] = loss / m;
    NodePtr ln = logits.node_ptr();
    std::vector<int> labels_copy = labels;
    return make_result(std::move(out), {ln},
                       [ln, probs = std::move(probs), labels_copy, m, k](const Node& self) {
                           if (!ln->requires_grad) return;
                           double g = self.grad[0] / m;
                           for (int i = 0; i < m; ++i) {
                               for (int j = 0; j < k; ++j) {
                                   double p = probs[static_cast<std::size_t>(i) * k + j];
                                   double onehot = (j == labels_copy[static_cast<std::size_t>(i)]) ? 1.0 : 0.0;
                                   accum(*ln, static_cast<std::size_t>(i) * k + j, g * (p - onehot));
                               }
                           }
                       });
}

Tensor detach(const Tensor& x) {
    check_defined(x, "detach");
    auto xv = x.values();
    return Tensor::leaf(x.shape(), std::vector<double>(xv.begin(), xv.end()), false);
}

namespace {

// Iterative post-order DFS over requires_grad ancestry.
std::vector<Node*> topo_from(Node* out) {
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(out, 0);
    visited.insert(out);
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            Node* p = node->parents[child].get();
            ++child;
            if (p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    return order;  // post-order: parents before consumers
}

}  // namespace

void backward(const Tensor& out) {
    if (!out.defined()) throw StateError("backward() on undefined tensor; run a forward pass first");
    if (out.size() != 1)
        throw StateError("backward() requires a scalar output, got shape " + shape_str(out.shape()));
    Node* root = out.node();
    if (!root->requires_grad) return;
    std::vector<Node*> order = topo_from(root);
    // Interior gradients are per-call scratch; only leaves accumulate across
    // backward calls.
    for (Node* n : order) {
        n->ensure_grad();
        if (n->backprop) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

std::vector<GraphNode> graph_of(const Tensor& out) {
    if (!out.defined()) throw StateError("graph_of() on undefined tensor");
    std::vector<GraphNode> result;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(out.node(), 0);
    visited.insert(out.node());
    while (!stack.empty()) {
        auto& [node, child] = stack.back();
        if (child < node->parents.size()) {
            Node* p = node->parents[child].get();
            ++child;
            if (!visited.count(p)) {
                visited.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            GraphNode gn;
            gn.op = node->op;
            gn.output = node->id;
            for (const auto& p : node->parents) gn.inputs.push_back(p->id);
            result.push_back(gn);
            stack.pop_back();
        }
    }
    std::sort(result.begin(), result.end(),
              [](const GraphNode& a, const GraphNode& b) { return a.output < b.output; });
    return result;
}

double finite_diff_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                         const std::vector<Tensor>& inputs, double epsilon) {
    if (!(epsilon > 0.0) || epsilon > 1e-2)
        throw StateError("finite_diff_check: epsilon must lie in (0, 1e-2]");
    for (const Tensor& t : inputs) {
        if (!t.defined()) throw StateError("finite_diff_check: undefined input tensor");
    }
    Tensor y = f(inputs);
    if (y.size() != 1)
        throw StateError("finite_diff_check: f must return a scalar, got " + shape_str(y.shape()));
    for (Tensor t : inputs) t.zero_grad();
    backward(y);
    double max_rel = 0.0;
    for (Tensor t : inputs) {
        if (!t.requires_grad()) continue;
        std::vector<double> analytic(static_cast<std::size_t>(t.size()), 0.0);
        if (t.has_grad()) {
            auto g = t.grad();
            analytic.assign(g.begin(), g.end());
        }
        auto vals = t.values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double orig = vals[i];
            vals[i] = orig + epsilon;
            double fp = f(inputs).scalar();
            vals[i] = orig - epsilon;
            double fm = f(inputs).scalar();
            vals[i] = orig;
            double numeric = (fp - fm) / (2.0 * epsilon);
            double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-12});
            max_rel = std::max(max_rel, std::abs(analytic[i] - numeric) / denom);
        }
    }
    return max_rel;
}

}  // namespace ecgan::ad
