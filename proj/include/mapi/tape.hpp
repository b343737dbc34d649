#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mapi/matrix.hpp"

namespace mapi {

enum class Activation { identity, sigmoid, tanh, relu, leaky_relu, elu };

Activation activation_from_name(const std::string& name);
std::string activation_name(Activation a);

double activate(Activation a, double x, double slope = 0.2);
void activate_in_place(Activation a, Matrix& m, double slope = 0.2);

// Constant sparse operand for spmm (normalized adjacency).
struct SparseMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  // row_entries[i] = (column, value) pairs, column-sorted.
  std::vector<std::vector<std::pair<int, double>>> row_entries;
};

// Neighborhood structure driving the modulated-attention op. neighbors[i]
// lists every j in N_i including the self-loop (log_weight 0 for self).
struct AttentionTopo {
  std::size_t node_count = 0;
  std::vector<std::vector<std::pair<int, double>>> neighbors;
};

struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Append-only computation tape. Creation order is a topological order, so a
// backward pass is a single reverse sweep that visits each node once.
// backward() accumulates gradients; two calls add their contributions.
class Tape {
 public:
  struct Node {
    Matrix value;
    Matrix grad;  // allocated lazily when a gradient first reaches the node
    std::vector<int> parents;
    std::function<void(Tape&, int)> backprop;
    bool needs_grad = false;
  };

  // Leaves.
  Var param(Matrix value);     // gradient-tracked
  Var constant(Matrix value);  // gradient-free

  // Eq.-level building blocks.
  Var matmul(Var a, Var b);
  Var add(Var a, Var b);  // exact shape or 1x1 scalar broadcast
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var add_rowvec(Var m, Var v);  // m: RxC, v: 1xC broadcast over rows
  Var scale(Var a, double c);
  Var add_scalar(Var a, double c);

  Var sigmoid(Var a);
  Var tanh_(Var a);
  Var relu(Var a);
  Var leaky_relu(Var a, double slope);
  Var elu(Var a);
  Var abs_(Var a);
  Var apply(Var a, Activation act, double slope = 0.2);

  // Masked row-wise softmax: entries outside mask[i] are exactly zero,
  // entries inside form a distribution. Computed with max subtraction.
  Var row_softmax(Var logits,
                  std::shared_ptr<const std::vector<std::vector<int>>> masks);

  Var transpose(Var a);
  Var tile_rows(Var a, std::size_t times);
  Var concat_cols(const std::vector<Var>& parts);
  Var concat_rows(const std::vector<Var>& parts);

  // Column means over each consecutive block of block_rows rows.
  Var block_col_mean(Var a, std::size_t block_rows);
  Var col_mean(Var a);

  Var sum_all(Var a);
  Var mse(Var a, Var b);
  Var add_n(const std::vector<Var>& terms);

  // Constant-sparse times dense.
  Var spmm(std::shared_ptr<const SparseMatrix> a, Var h);

  // Fused modulated graph attention: per node i over N_i,
  //   z_ij  = leaky_relu(s_i + t_j, slope) + log w_ij
  //   alpha = row softmax of z over N_i
  //   out_i = act( sum_j alpha_ij * hw_j )
  // act must be one of identity/sigmoid/tanh/elu (derivative recoverable
  // from the output value).
  Var attend(Var hw, Var s, Var t, std::shared_ptr<const AttentionTopo> topo,
             Activation act, double slope);

  // Mean cross-entropy over the masked rows; softmax applied internally with
  // max subtraction. Gradient is exactly zero on rows outside the mask.
  Var masked_cross_entropy(Var logits, std::shared_ptr<const std::vector<int>> labels,
                           std::shared_ptr<const std::vector<int>> mask);

  void backward(Var scalar_output);

  const Matrix& value(Var v) const { return nodes_[v.id].value; }
  const Matrix& grad(Var v) const { return nodes_[v.id].grad; }
  bool has_grad(Var v) const { return !nodes_[v.id].grad.empty(); }
  double scalar_value(Var v) const { return nodes_[v.id].value.scalar(); }
  std::size_t size() const { return nodes_.size(); }

  Node& node(int id) { return nodes_[id]; }

  // Adds `delta` into the gradient of node id (no-op for gradient-free
  // nodes); backward rules funnel through here.
  void accum(int id, const Matrix& delta);
  void accum_scaled(int id, const Matrix& delta, double factor);

 private:
  Var push(Matrix value, std::vector<int> parents,
           std::function<void(Tape&, int)> backprop);
  Var unary(Var a, Activation act, double slope);
  Var binary(Var a, Var b, int op);

  std::vector<Node> nodes_;
};

// Shared by attend() and the standalone attention-coefficient query: alpha
// values in neighbors order, one flat vector per node, given the per-node
// attention logit sources s (Nx1) and t (Nx1).
std::vector<std::vector<double>> edge_attention_alpha(const Matrix& s,
                                                      const Matrix& t,
                                                      const AttentionTopo& topo,
                                                      double slope);

}  // namespace mapi
