#pragma once

#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "muscle/tensor.hpp"

namespace muscle {

enum class OpKind {
  Input,
  Constant,
  MatMul,
  Add,
  Multiply,
  Relu,
  Softmax,
  Log,
  Sum,
  Mean,
  Transpose,
  ClampMin,
  Conv2d,
  Reshape,
};

const char* op_name(OpKind k);

/// Error tied to a specific graph node (id < 0 for graph-level errors).
struct GraphError : std::runtime_error {
  int node;
  GraphError(int node_id, const std::string& msg)
      : std::runtime_error("node " + std::to_string(node_id) + ": " + msg), node(node_id) {}
};

struct Node {
  OpKind kind;
  std::vector<int> args;
  std::vector<int> shape;  // inferred at construction
  std::string name;        // Input only
  Tensor value;            // Constant only
  double floor = 0.0;      // ClampMin only
  int stride = 1;          // Conv2d only
};

/// Ordered map so iteration order (and therefore any error reporting)
/// is deterministic.
using Bindings = std::map<std::string, Tensor>;

/// A static DAG of primitive tensor operations. Nodes can only reference
/// earlier nodes, so the construction sequence is a stable topological
/// order. Shapes are inferred eagerly; mismatches throw at build time
/// naming the offending node.
///
/// Add and Multiply support two limited broadcast forms: a one-element
/// operand against anything, and an operand whose shape is a trailing
/// suffix of the other's (leading-axis batch semantics, e.g. bias rows).
class ComputeGraph {
 public:
  int input(const std::string& name, std::vector<int> shape);
  int constant(Tensor value);
  int scalar(double v) { return constant(Tensor::scalar(v)); }

  int matmul(int a, int b);
  int add(int a, int b);
  int multiply(int a, int b);
  int relu(int a);
  int softmax(int a);  // over the last axis
  int log(int a);
  int sum(int a);   // full reduction to a 1-element tensor
  int mean(int a);  // likewise
  int transpose(int a);
  int clamp_min(int a, double floor = 1e-9);
  int conv2d(int x, int kernel, int stride = 1);
  int reshape(int a, std::vector<int> shape);  // element count preserved

  void set_output(int node);
  int output() const { return output_; }

  int node_count() const { return static_cast<int>(nodes_.size()); }
  const Node& node(int id) const { return nodes_[static_cast<size_t>(id)]; }
  const std::vector<int>& shape(int id) const { return nodes_[static_cast<size_t>(id)].shape; }
  const std::unordered_map<std::string, int>& inputs() const { return inputs_; }

 private:
  int push(Node n);
  void check_id(int id) const;

  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> inputs_;
  int output_ = -1;
};

/// Forward evaluation of the designated output. Pure and deterministic:
/// identical bindings give bitwise-identical results. Non-finite
/// intermediates and binding shape mismatches throw GraphError naming
/// the node.
Tensor evaluate(const ComputeGraph& g, const Bindings& bindings);

/// Same forward pass, also reporting the values of `extra` nodes.
std::vector<Tensor> evaluate_nodes(const ComputeGraph& g, const Bindings& bindings,
                                   const std::vector<int>& extra);

/// Reverse-mode accumulation of d(output)/d(input) for each requested
/// input name. Requires a one-element output.
std::map<std::string, Tensor> gradients(const ComputeGraph& g, const Bindings& bindings,
                                        const std::set<std::string>& wrt);

/// One combined forward and reverse pass, for callers that want the loss
/// value, selected intermediates and the gradients together.
struct BackpropResult {
  Tensor output;
  std::vector<Tensor> node_values;  // aligned with `extra`
  std::map<std::string, Tensor> grads;
};

BackpropResult backprop(const ComputeGraph& g, const Bindings& bindings,
                        const std::set<std::string>& wrt, const std::vector<int>& extra = {});

}  // namespace muscle
