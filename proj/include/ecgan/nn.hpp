#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "ecgan/rng.hpp"
#include "ecgan/tensor.hpp"

namespace ecgan::nn {

using ad::Tensor;

// Named view of every trainable tensor in a layer; the order is fixed so
// checkpoints and optimizer state line up deterministically.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) init for all matrices.
Tensor init_matrix(ad::Shape shape, int fan_in, Rng& rng);

struct LstmCell {
    int input_size = 0;
    int hidden_size = 0;
    // input->gate and hidden->gate weights plus biases, gate order i,f,o,c
    Tensor w_i, w_f, w_o, w_c;  // [input,hidden]
    Tensor u_i, u_f, u_o, u_c;  // [hidden,hidden]
    Tensor b_i, b_f, b_o, b_c;  // [hidden]

    LstmCell() = default;
    LstmCell(int input_size, int hidden_size, Rng& rng);

    // x_t [m,input], h_prev/c_prev [m,hidden] -> (h_t, c_t)
    std::pair<Tensor, Tensor> step(const Tensor& x_t, const Tensor& h_prev,
                                   const Tensor& c_prev) const;

    ParamList params(const std::string& prefix) const;
};

struct LstmStack {
    std::vector<LstmCell> cells;

    LstmStack() = default;
    LstmStack(const std::vector<int>& sizes, Rng& rng);  // sizes = {in, h1, h2, ...}

    int output_size() const { return cells.back().hidden_size; }

    // Runs the stack over per-timestep inputs [m,input]. h0, when defined,
    // initializes every layer's hidden state ([m,hidden]); cell states start
    // at zero. Returns the top layer's output per timestep.
    std::vector<Tensor> unroll(const std::vector<Tensor>& steps, const Tensor& h0 = {}) const;

    ParamList params(const std::string& prefix) const;
};

// Single-sample convenience matching the contract "sequence [T,d] in,
// [T,hidden] out".
Tensor lstm_unroll(const LstmStack& stack, const Tensor& sequence, const Tensor& h0 = {});

struct Conv1dBlock {
    int in_channels = 0;
    int out_channels = 0;
    int kernel_size = 0;
    Tensor weight;  // [out,in,k]
    Tensor bias;    // [out]
    Tensor gamma;   // [out], init 1
    Tensor beta;    // [out], init 0
    double norm_eps = 1e-5;
    // Non-affine blocks keep gamma/beta fixed at 1/0 and out of params().
    // Weight-clipped discriminators need this: a clipped gamma rescales
    // activations below the normalization eps floor and the conv path dies.
    bool affine = true;

    Conv1dBlock() = default;
    Conv1dBlock(int in_channels, int out_channels, int kernel_size, Rng& rng, bool affine = true);

    // conv (length-preserving) -> instance norm -> ReLU; x [in,n]
    Tensor apply(const Tensor& x) const;

    ParamList params(const std::string& prefix) const;
};

struct EmbeddingTable {
    int num_classes = 0;
    int dim = 0;
    Tensor rows;  // [num_classes, dim]

    EmbeddingTable() = default;
    EmbeddingTable(int num_classes, int dim, Rng& rng);

    Tensor lookup(int label) const;  // [1,dim]

    ParamList params(const std::string& prefix) const;
};

enum class OptimizerKind { adam, rmsprop };

// Adam / RMSProp over a fixed parameter list. Descends the stored gradients;
// ascent (the discriminator step of the adversarial phase) is expressed by
// the caller minimizing the negated objective.
class Optimizer {
  public:
    Optimizer() = default;
    Optimizer(OptimizerKind kind, double learning_rate, std::vector<Tensor> params);

    // Applies one update from the gradients currently accumulated on the
    // parameters; missing gradients count as zero. Throws NumericError on
    // non-finite gradients.
    void step();

    void zero_grad();

    OptimizerKind kind() const { return kind_; }
    double learning_rate() const { return lr_; }
    const std::vector<Tensor>& params() const { return params_; }

    // Flat state access for checkpointing: (name, buffer) pairs plus the
    // step counter. Buffer order matches the parameter list.
    std::int64_t step_count() const { return t_; }
    void set_step_count(std::int64_t t) { t_ = t; }
    std::vector<std::vector<double>>& moment1() { return m_; }
    std::vector<std::vector<double>>& moment2() { return v_; }
    const std::vector<std::vector<double>>& moment1() const { return m_; }
    const std::vector<std::vector<double>>& moment2() const { return v_; }

    static constexpr double kAdamBeta1 = 0.9;
    static constexpr double kAdamBeta2 = 0.999;
    static constexpr double kRmspropDecay = 0.9;
    static constexpr double kEps = 1e-8;

  private:
    OptimizerKind kind_ = OptimizerKind::adam;
    double lr_ = 0.0;
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;  // Adam first moment / RMSProp mean square
    std::vector<std::vector<double>> v_;  // Adam second moment (unused for RMSProp)
    std::int64_t t_ = 0;
};

// Clamps every value of every tensor into [-c, c].
void clip_params(std::vector<Tensor>& params, double c);

double max_abs_value(const std::vector<Tensor>& params);

std::vector<Tensor> values_of(const ParamList& params);

}  // namespace ecgan::nn
