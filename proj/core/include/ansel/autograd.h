#ifndef ANSEL_AUTOGRAD_H_
#define ANSEL_AUTOGRAD_H_

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ansel/tensor.h"

namespace ansel {

class Rng;

// A trainable tensor together with its gradient and Adam moment estimates.
struct Parameter {
  Tensor value;
  Tensor gradient;
  Tensor adam_m;
  Tensor adam_v;
  std::uint64_t step_count = 0;

  Parameter() = default;
  explicit Parameter(Tensor initial);

  void zero_grad();
  // Clears gradient, Adam moments and step count; the value is kept.
  void reset_optimizer_state();
};

// Ordered (name, parameter) view over a model's parameters. Names are the
// checkpoint keys.
using NamedParameters = std::vector<std::pair<std::string, Parameter*>>;

class Graph;

// Handle to a node on a Graph tape.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  const Tensor& value() const;
  bool valid() const { return graph_ != nullptr; }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so reverse
// insertion order is a valid topological order for backpropagation. A tape
// supports exactly one backward pass.
class Graph {
 public:
  using Backward = std::function<void(Graph&, const Tensor& grad_out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient is added into `param.gradient` by backward().
  Var parameter(Parameter& param);

  // Appends an op node. `backward` is dropped when no input needs a gradient.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs,
             Backward backward);
  Var record(const char* op, Tensor value, std::span<const Var> inputs,
             Backward backward);

  const Tensor& value(Var v) const { return nodes_[v.id()].value; }
  bool requires_grad(Var v) const { return nodes_[v.id()].requires_grad; }
  // Gradient accumulated so far; zeros when none reached the node.
  Tensor grad(Var v) const;
  void accumulate(Var v, const Tensor& g);

  // Seeds d(scalar)/d(scalar) = 1 and propagates to every reachable leaf.
  void backward(Var scalar);
  bool backward_done() const { return backward_done_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool has_grad = false;
    bool requires_grad = false;
    Backward backward;
    Parameter* param = nullptr;
  };

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

// Scalar loss bound to the tape that produced it.
struct LossValue {
  Var var;
  double scalar = 0.0;
  std::size_t batch_size = 1;
};

void backward(const LossValue& loss);

// ---- Differentiable ops -------------------------------------------------

Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b);  // a * b^T
Var add(Var a, Var b);
Var add_row_bias(Var x, Var bias);
Var add_constant(Var x, const Tensor& c);
Var scale(Var x, double factor);
Var multiply(Var a, Var b);  // elementwise
Var softmax_rows(Var x);
Var gelu(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-12);
// Inverted dropout; identity when rate == 0.
Var dropout(Var x, double rate, Rng& rng);
Var gather_rows(Var table, std::span<const int> ids);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_cols(Var x, std::size_t begin, std::size_t end);
Var sum(Var x);

// Mean over rows of -ln(p[row, label]); probabilities are floored at
// kProbabilityFloor before the log so a zero prediction gives a finite loss.
inline constexpr double kProbabilityFloor = 1e-12;
LossValue cross_entropy(Var probabilities, std::span<const int> labels);

}  // namespace ansel

#endif  // ANSEL_AUTOGRAD_H_
