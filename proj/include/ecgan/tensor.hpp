#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ecgan::ad {

using Shape = std::vector<int>;

int shape_size(const Shape& s);
std::string shape_str(const Shape& s);

struct Node {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Node&)> backprop;  // adds into parents' grads
    const char* op = "leaf";
    std::uint64_t id = 0;  // creation order; parents always have smaller ids

    void ensure_grad();
};

using NodePtr = std::shared_ptr<Node>;

// Value handle over a node of the dynamic graph. Copies share storage; the
// graph is rebuilt every step and dies when the last handle to its output
// goes away. Values are 64-bit floats throughout.
class Tensor {
  public:
    Tensor() = default;

    static Tensor leaf(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double v, bool requires_grad = false);
    static Tensor scalar_of(double v);

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const;
    int size() const;
    int dim(int axis) const;

    std::span<const double> values() const;
    std::span<double> values_mut();  // leaf-only, for parameter updates
    double scalar() const;           // requires size() == 1
    double at(std::initializer_list<int> idx) const;

    bool requires_grad() const;
    void set_requires_grad(bool rg);  // leaf-only
    bool has_grad() const;
    std::span<const double> grad() const;
    void zero_grad();

    Node* node() const { return n_.get(); }
    const NodePtr& node_ptr() const { return n_; }

  private:
    explicit Tensor(NodePtr n) : n_(std::move(n)) {}
    NodePtr n_;
    friend Tensor wrap_node(NodePtr n);
};

// ---- op inventory ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
// stride 1, zero-padded to preserve length; x [Cin,n], w [Cout,Cin,k], b [Cout]
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& b);
// per-channel normalization of x [C,n]; gamma/beta [C]
Tensor instance_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                     double eps = 1e-5);
Tensor relu(const Tensor& x);
Tensor tanh_op(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor global_avg_pool(const Tensor& x);  // [C,n] -> [C,1]
Tensor concat(const std::vector<Tensor>& parts, int axis);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor reshape(const Tensor& x, Shape shape);
Tensor mean(const Tensor& x);  // -> scalar
Tensor sum(const Tensor& x);   // -> scalar
Tensor l1_loss(const Tensor& pred, const Tensor& target);  // mean |p - t|
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// New leaf sharing no graph history with x; never carries gradients.
Tensor detach(const Tensor& x);

// Accumulates gradients into every requires_grad leaf reachable from `out`.
// `out` must be scalar. Gradients add across calls until zero_grad.
void backward(const Tensor& out);

// ---- graph introspection ----
struct GraphNode {
    const char* op;
    std::vector<std::uint64_t> inputs;
    std::uint64_t output;
};
// Nodes reachable from `out`, in topological (creation) order.
std::vector<GraphNode> graph_of(const Tensor& out);

// Central-difference verification oracle. `f` must be a pure function of the
// given leaf inputs and return a scalar. Returns the max over all components
// of all requires_grad inputs of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
double finite_diff_check(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                         const std::vector<Tensor>& inputs, double epsilon = 1e-5);

}  // namespace ecgan::ad
