#include "ecgan/nn.hpp"

#include <algorithm>
#include <cmath>

#include "ecgan/errors.hpp"

namespace ecgan::nn {

using namespace ecgan::ad;

Tensor init_matrix(Shape shape, int fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan_in)));
    std::vector<double> v(static_cast<std::size_t>(shape_size(shape)));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return Tensor::leaf(std::move(shape), std::move(v), true);
}

LstmCell::LstmCell(int input_size, int hidden_size, Rng& rng)
    : input_size(input_size), hidden_size(hidden_size) {
    auto w = [&] { return init_matrix({input_size, hidden_size}, input_size, rng); };
    auto u = [&] { return init_matrix({hidden_size, hidden_size}, hidden_size, rng); };
    w_i = w(); w_f = w(); w_o = w(); w_c = w();
    u_i = u(); u_f = u(); u_o = u(); u_c = u();
    b_i = Tensor::zeros({hidden_size}, true);
    b_f = Tensor::full({hidden_size}, 1.0, true);  // standard forget-gate bias
    b_o = Tensor::zeros({hidden_size}, true);
    b_c = Tensor::zeros({hidden_size}, true);
}

std::pair<Tensor, Tensor> LstmCell::step(const Tensor& x_t, const Tensor& h_prev,
                                         const Tensor& c_prev) const {
    auto gate = [&](const Tensor& w, const Tensor& u, const Tensor& b) {
        return add(add(matmul(x_t, w), matmul(h_prev, u)), b);
    };
    Tensor i = sigmoid(gate(w_i, u_i, b_i));
    Tensor f = sigmoid(gate(w_f, u_f, b_f));
    Tensor o = sigmoid(gate(w_o, u_o, b_o));
    Tensor c_tilde = tanh_op(gate(w_c, u_c, b_c));
    Tensor c_t = add(mul(f, c_prev), mul(i, c_tilde));
    Tensor h_t = mul(o, tanh_op(c_t));
    return {h_t, c_t};
}

ParamList LstmCell::params(const std::string& prefix) const {
    return {
        {prefix + ".W_i", w_i}, {prefix + ".W_f", w_f}, {prefix + ".W_o", w_o},
        {prefix + ".W_c", w_c}, {prefix + ".U_i", u_i}, {prefix + ".U_f", u_f},
        {prefix + ".U_o", u_o}, {prefix + ".U_c", u_c}, {prefix + ".b_i", b_i},
        {prefix + ".b_f", b_f}, {prefix + ".b_o", b_o}, {prefix + ".b_c", b_c},
    };
}

LstmStack::LstmStack(const std::vector<int>& sizes, Rng& rng) {
    if (sizes.size() < 2) throw StateError("LstmStack needs at least {input, hidden} sizes");
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
        cells.emplace_back(sizes[i], sizes[i + 1], rng);
}

std::vector<Tensor> LstmStack::unroll(const std::vector<Tensor>& steps, const Tensor& h0) const {
    if (steps.empty()) throw StateError("lstm_unroll: empty sequence");
    const int m = steps[0].dim(0);
    std::vector<Tensor> h(cells.size()), c(cells.size());
    for (std::size_t l = 0; l < cells.size(); ++l) {
        if (h0.defined()) {
            if (h0.dim(1) != cells[l].hidden_size)
                throw ShapeError("lstm_unroll: h0 width " + std::to_string(h0.dim(1)) +
                                 " does not match hidden size " +
                                 std::to_string(cells[l].hidden_size));
            h[l] = h0;
        } else {
            h[l] = Tensor::zeros({m, cells[l].hidden_size});
        }
        c[l] = Tensor::zeros({m, cells[l].hidden_size});
    }
    std::vector<Tensor> out;
    out.reserve(steps.size());
    for (const Tensor& x_t : steps) {
        Tensor in = x_t;
        for (std::size_t l = 0; l < cells.size(); ++l) {
            auto [h_t, c_t] = cells[l].step(in, h[l], c[l]);
            h[l] = h_t;
            c[l] = c_t;
            in = h_t;
        }
        out.push_back(in);
    }
    return out;
}

ParamList LstmStack::params(const std::string& prefix) const {
    ParamList all;
    for (std::size_t l = 0; l < cells.size(); ++l) {
        ParamList p = cells[l].params(prefix + ".l" + std::to_string(l));
        all.insert(all.end(), p.begin(), p.end());
    }
    return all;
}

Tensor lstm_unroll(const LstmStack& stack, const Tensor& sequence, const Tensor& h0) {
    const int t_len = sequence.dim(0);
    std::vector<Tensor> steps;
    steps.reserve(static_cast<std::size_t>(t_len));
    for (int t = 0; t < t_len; ++t) steps.push_back(slice(sequence, 0, t, 1));
    std::vector<Tensor> out = stack.unroll(steps, h0);
    return concat(out, 0);  // [T, hidden]
}

Conv1dBlock::Conv1dBlock(int in_channels, int out_channels, int kernel_size, Rng& rng, bool affine)
    : in_channels(in_channels), out_channels(out_channels), kernel_size(kernel_size),
      affine(affine) {
    weight = init_matrix({out_channels, in_channels, kernel_size}, in_channels * kernel_size, rng);
    bias = Tensor::zeros({out_channels}, true);
    gamma = Tensor::full({out_channels}, 1.0, affine);
    beta = Tensor::zeros({out_channels}, affine);
}

Tensor Conv1dBlock::apply(const Tensor& x) const {
    return relu(instance_norm(conv1d(x, weight, bias), gamma, beta, norm_eps));
}

ParamList Conv1dBlock::params(const std::string& prefix) const {
    ParamList out = {{prefix + ".w", weight}, {prefix + ".bias", bias}};
    if (affine) {
        out.emplace_back(prefix + ".gamma", gamma);
        out.emplace_back(prefix + ".beta", beta);
    }
    return out;
}

EmbeddingTable::EmbeddingTable(int num_classes, int dim, Rng& rng)
    : num_classes(num_classes), dim(dim) {
    rows = init_matrix({num_classes, dim}, dim, rng);
}

Tensor EmbeddingTable::lookup(int label) const {
    if (label < 0 || label >= num_classes)
        throw StateError("embedding lookup: unknown label " + std::to_string(label));
    return slice(rows, 0, label, 1);
}

ParamList EmbeddingTable::params(const std::string& prefix) const {
    return {{prefix, rows}};
}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, std::vector<Tensor> params)
    : kind_(kind), lr_(learning_rate), params_(std::move(params)) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(static_cast<std::size_t>(params_[i].size()), 0.0);
        if (kind_ == OptimizerKind::adam)
            v_[i].assign(static_cast<std::size_t>(params_[i].size()), 0.0);
    }
}

void Optimizer::step() {
    ++t_;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) continue;
        auto g = p.grad();
        for (double gv : g) {
            if (!std::isfinite(gv))
                throw NumericError("optimizer_step: non-finite gradient encountered");
        }
        auto vals = p.values_mut();
        if (kind_ == OptimizerKind::adam) {
            const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(t_));
            const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(t_));
            for (std::size_t k = 0; k < vals.size(); ++k) {
                m_[i][k] = kAdamBeta1 * m_[i][k] + (1.0 - kAdamBeta1) * g[k];
                v_[i][k] = kAdamBeta2 * v_[i][k] + (1.0 - kAdamBeta2) * g[k] * g[k];
                double m_hat = m_[i][k] / bc1;
                double v_hat = v_[i][k] / bc2;
                vals[k] -= lr_ * m_hat / (std::sqrt(v_hat) + kEps);
            }
        } else {
            for (std::size_t k = 0; k < vals.size(); ++k) {
                m_[i][k] = kRmspropDecay * m_[i][k] + (1.0 - kRmspropDecay) * g[k] * g[k];
                vals[k] -= lr_ * g[k] / (std::sqrt(m_[i][k]) + kEps);
            }
        }
    }
}

void Optimizer::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

void clip_params(std::vector<Tensor>& params, double c) {
    if (!(c > 0.0)) throw StateError("clip_params: clip bound must be positive");
    for (Tensor& p : params) {
        auto vals = p.values_mut();
        for (double& v : vals) v = std::clamp(v, -c, c);
    }
}

double max_abs_value(const std::vector<Tensor>& params) {
    double mx = 0.0;
    for (const Tensor& p : params)
        for (double v : p.values()) mx = std::max(mx, std::abs(v));
    return mx;
}

std::vector<Tensor> values_of(const ParamList& params) {
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) out.push_back(t);
    return out;
}

}  // namespace ecgan::nn
