#include "mapi/tape.hpp"

#include <algorithm>
#include <cmath>

namespace mapi {

namespace {

double sigmoid_stable(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

double leaky_slope_at(double x, double slope) { return x > 0.0 ? 1.0 : slope; }

}  // namespace

Activation activation_from_name(const std::string& name) {
  if (name == "identity") return Activation::identity;
  if (name == "sigmoid") return Activation::sigmoid;
  if (name == "tanh") return Activation::tanh;
  if (name == "relu") return Activation::relu;
  if (name == "leaky_relu") return Activation::leaky_relu;
  if (name == "elu") return Activation::elu;
  throw ConfigError("unknown activation '" + name + "'");
}

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::identity: return "identity";
    case Activation::sigmoid: return "sigmoid";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    case Activation::elu: return "elu";
  }
  return "identity";
}

double activate(Activation a, double x, double slope) {
  switch (a) {
    case Activation::identity: return x;
    case Activation::sigmoid: return sigmoid_stable(x);
    case Activation::tanh: return std::tanh(x);
    case Activation::relu: return x > 0.0 ? x : 0.0;
    case Activation::leaky_relu: return x > 0.0 ? x : slope * x;
    case Activation::elu: return x > 0.0 ? x : std::expm1(x);
  }
  return x;
}

void activate_in_place(Activation a, Matrix& m, double slope) {
  for (double& x : m.data) x = activate(a, x, slope);
}

Var Tape::push(Matrix value, std::vector<int> parents,
               std::function<void(Tape&, int)> backprop) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.backprop = std::move(backprop);
  for (int p : n.parents)
    if (nodes_[p].needs_grad) n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Matrix value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

void Tape::accum(int id, const Matrix& delta) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.empty()) n.grad = Matrix(n.value.rows, n.value.cols);
  for (std::size_t i = 0; i < delta.data.size(); ++i)
    n.grad.data[i] += delta.data[i];
}

void Tape::accum_scaled(int id, const Matrix& delta, double factor) {
  Node& n = nodes_[id];
  if (!n.needs_grad) return;
  if (n.grad.empty()) n.grad = Matrix(n.value.rows, n.value.cols);
  for (std::size_t i = 0; i < delta.data.size(); ++i)
    n.grad.data[i] += factor * delta.data[i];
}

Var Tape::matmul(Var a, Var b) {
  Matrix out = mapi::matmul(nodes_[a.id].value, nodes_[b.id].value);
  return push(std::move(out), {a.id, b.id}, [](Tape& t, int self) {
    Node& n = t.node(self);
    const Matrix& g = n.grad;
    int a_id = n.parents[0], b_id = n.parents[1];
    if (t.node(a_id).needs_grad)
      t.accum(a_id, matmul_nt(g, t.node(b_id).value));
    if (t.node(b_id).needs_grad)
      t.accum(b_id, matmul_tn(t.node(a_id).value, g));
  });
}

namespace {
constexpr int kAdd = 0, kSub = 1, kMul = 2;

// Sums grad over all entries when the operand was a broadcast 1x1 scalar.
Matrix reduce_to_shape(const Matrix& g, const Matrix& operand) {
  if (operand.same_shape(g)) return g;
  Matrix r(1, 1);
  for (double x : g.data) r.data[0] += x;
  return r;
}
}  // namespace

// add/sub/mul with exact shapes or 1x1 scalar broadcast on either side.
Var Tape::binary(Var a, Var b, int op) {
  const Matrix& A = nodes_[a.id].value;
  const Matrix& B = nodes_[b.id].value;
  bool a_scalar = A.is_scalar(), b_scalar = B.is_scalar();
  if (!A.same_shape(B) && !a_scalar && !b_scalar)
    throw ShapeError("elementwise: incompatible shapes " + A.shape_str() +
                     " vs " + B.shape_str());
  const Matrix& big = (a_scalar && !b_scalar) ? B : A;
  Matrix out(big.rows, big.cols);
  std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) {
    double x = a_scalar ? A.data[0] : A.data[i];
    double y = b_scalar ? B.data[0] : B.data[i];
    out.data[i] = op == kAdd ? x + y : (op == kSub ? x - y : x * y);
  }
  return push(std::move(out), {a.id, b.id}, [op](Tape& t, int self) {
    Node& n = t.node(self);
    int a_id = n.parents[0], b_id = n.parents[1];
    const Matrix& A = t.node(a_id).value;
    const Matrix& B = t.node(b_id).value;
    const Matrix& g = n.grad;
    if (t.node(a_id).needs_grad) {
      if (op == kMul) {
        Matrix d(g.rows, g.cols);
        bool b_scalar = B.is_scalar() && !g.is_scalar();
        for (std::size_t i = 0; i < g.size(); ++i)
          d.data[i] = g.data[i] * (b_scalar ? B.data[0] : B.data[i % B.size()]);
        t.accum(a_id, reduce_to_shape(d, A));
      } else {
        t.accum(a_id, reduce_to_shape(g, A));
      }
    }
    if (t.node(b_id).needs_grad) {
      if (op == kMul) {
        Matrix d(g.rows, g.cols);
        bool a_scalar = A.is_scalar() && !g.is_scalar();
        for (std::size_t i = 0; i < g.size(); ++i)
          d.data[i] = g.data[i] * (a_scalar ? A.data[0] : A.data[i % A.size()]);
        t.accum(b_id, reduce_to_shape(d, B));
      } else if (op == kSub) {
        t.accum_scaled(b_id, reduce_to_shape(g, B), -1.0);
      } else {
        t.accum(b_id, reduce_to_shape(g, B));
      }
    }
  });
}

Var Tape::add(Var a, Var b) { return binary(a, b, kAdd); }
Var Tape::sub(Var a, Var b) { return binary(a, b, kSub); }
Var Tape::mul(Var a, Var b) { return binary(a, b, kMul); }

Var Tape::add_rowvec(Var m, Var v) {
  const Matrix& M = nodes_[m.id].value;
  const Matrix& V = nodes_[v.id].value;
  if (V.rows != 1 || V.cols != M.cols)
    throw ShapeError("add_rowvec: " + M.shape_str() + " + " + V.shape_str());
  Matrix out = M;
  for (std::size_t i = 0; i < M.rows; ++i)
    for (std::size_t j = 0; j < M.cols; ++j) out.at(i, j) += V.data[j];
  return push(std::move(out), {m.id, v.id}, [](Tape& t, int self) {
    Node& n = t.node(self);
    const Matrix& g = n.grad;
    t.accum(n.parents[0], g);
    if (t.node(n.parents[1]).needs_grad) {
      Matrix dv(1, g.cols);
      for (std::size_t i = 0; i < g.rows; ++i)
        for (std::size_t j = 0; j < g.cols; ++j) dv.data[j] += g.at(i, j);
      t.accum(n.parents[1], dv);
    }
  });
}

Var Tape::scale(Var a, double c) {
  Matrix out = nodes_[a.id].value;
  for (double& x : out.data) x *= c;
  return push(std::move(out), {a.id}, [c](Tape& t, int self) {
    Node& n = t.node(self);
    t.accum_scaled(n.parents[0], n.grad, c);
  });
}

Var Tape::add_scalar(Var a, double c) {
  Matrix out = nodes_[a.id].value;
  for (double& x : out.data) x += c;
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    Node& n = t.node(self);
    t.accum(n.parents[0], n.grad);
  });
}

Var Tape::unary(Var a, Activation act, double slope) {
  Matrix out = nodes_[a.id].value;
  activate_in_place(act, out, slope);
  return push(std::move(out), {a.id}, [act, slope](Tape& t, int self) {
    Node& n = t.node(self);
    int a_id = n.parents[0];
    if (!t.node(a_id).needs_grad) return;
    const Matrix& x = t.node(a_id).value;
    const Matrix& y = n.value;
    Matrix d(y.rows, y.cols);
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      double dd = 0.0;
      switch (act) {
        case Activation::identity: dd = 1.0; break;
        case Activation::sigmoid: dd = y.data[i] * (1.0 - y.data[i]); break;
        case Activation::tanh: dd = 1.0 - y.data[i] * y.data[i]; break;
        case Activation::relu: dd = x.data[i] > 0.0 ? 1.0 : 0.0; break;
        case Activation::leaky_relu: dd = leaky_slope_at(x.data[i], slope); break;
        case Activation::elu: dd = x.data[i] > 0.0 ? 1.0 : y.data[i] + 1.0; break;
      }
      d.data[i] = dd * n.grad.data[i];
    }
    t.accum(a_id, d);
  });
}

Var Tape::sigmoid(Var a) { return unary(a, Activation::sigmoid, 0.0); }
Var Tape::tanh_(Var a) { return unary(a, Activation::tanh, 0.0); }
Var Tape::relu(Var a) { return unary(a, Activation::relu, 0.0); }
Var Tape::leaky_relu(Var a, double slope) { return unary(a, Activation::leaky_relu, slope); }
Var Tape::elu(Var a) { return unary(a, Activation::elu, 0.0); }
Var Tape::apply(Var a, Activation act, double slope) { return unary(a, act, slope); }

Var Tape::abs_(Var a) {
  Matrix out = nodes_[a.id].value;
  for (double& x : out.data) x = std::fabs(x);
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    Node& n = t.node(self);
    int a_id = n.parents[0];
    if (!t.node(a_id).needs_grad) return;
    const Matrix& x = t.node(a_id).value;
    Matrix d(x.rows, x.cols);
    for (std::size_t i = 0; i < d.data.size(); ++i) {
      double s = x.data[i] > 0.0 ? 1.0 : (x.data[i] < 0.0 ? -1.0 : 0.0);
      d.data[i] = s * n.grad.data[i];
    }
    t.accum(a_id, d);
  });
}

Var Tape::row_softmax(
    Var logits, std::shared_ptr<const std::vector<std::vector<int>>> masks) {
  const Matrix& X = nodes_[logits.id].value;
  if (masks->size() != X.rows)
    throw ShapeError("row_softmax: mask count " + std::to_string(masks->size()) +
                     " != row count " + std::to_string(X.rows));
  Matrix out(X.rows, X.cols);
  for (std::size_t i = 0; i < X.rows; ++i) {
    const std::vector<int>& m = (*masks)[i];
    if (m.empty())
      throw ContractError("row_softmax: empty neighborhood in row " +
                          std::to_string(i));
    double hi = X.at(i, m[0]);
    for (int j : m) hi = std::max(hi, X.at(i, j));
    double s = 0.0;
    for (int j : m) {
      double e = std::exp(X.at(i, j) - hi);
      out.at(i, j) = e;
      s += e;
    }
    for (int j : m) out.at(i, j) /= s;
  }
  return push(std::move(out), {logits.id}, [masks](Tape& t, int self) {
    Node& n = t.node(self);
    int a_id = n.parents[0];
    if (!t.node(a_id).needs_grad) return;
    const Matrix& y = n.value;
    const Matrix& g = n.grad;
    Matrix d(y.rows, y.cols);
    for (std::size_t i = 0; i < y.rows; ++i) {
      double dot = 0.0;
      for (int j : (*masks)[i]) dot += g.at(i, j) * y.at(i, j);
      for (int j : (*masks)[i])
        d.at(i, j) = y.at(i, j) * (g.at(i, j) - dot);
    }
    t.accum(a_id, d);
  });
}

Var Tape::transpose(Var a) {
  return push(transposed(nodes_[a.id].value), {a.id}, [](Tape& t, int self) {
    Node& n = t.node(self);
    if (t.node(n.parents[0]).needs_grad)
      t.accum(n.parents[0], transposed(n.grad));
  });
}

Var Tape::tile_rows(Var a, std::size_t times) {
  const Matrix& A = nodes_[a.id].value;
  Matrix out(A.rows * times, A.cols);
  for (std::size_t k = 0; k < times; ++k)
    std::copy(A.data.begin(), A.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(k * A.size()));
  return push(std::move(out), {a.id}, [times](Tape& t, int self) {
    Node& n = t.node(self);
    int a_id = n.parents[0];
    if (!t.node(a_id).needs_grad) return;
    const Matrix& A = t.node(a_id).value;
    Matrix d(A.rows, A.cols);
    for (std::size_t k = 0; k < times; ++k)
      for (std::size_t i = 0; i < A.size(); ++i)
        d.data[i] += n.grad.data[k * A.size() + i];
    t.accum(a_id, d);
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  std::size_t rows = nodes_[parts[0].id].value.rows;
  std::size_t cols = 0;
  std::vector<int> parents;
  for (Var p : parts) {
    const Matrix& m = nodes_[p.id].value;
    if (m.rows != rows)
      throw ShapeError("concat_cols: row mismatch " + m.shape_str());
    cols += m.cols;
    parents.push_back(p.id);
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Matrix& m = nodes_[p.id].value;
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < m.cols; ++j) out.at(i, off + j) = m.at(i, j);
    off += m.cols;
  }
  return push(std::move(out), std::move(parents), [](Tape& t, int self) {
    Node& n = t.node(self);
    std::size_t off = 0;
    for (int pid : n.parents) {
      const Matrix& pv = t.node(pid).value;
      if (t.node(pid).needs_grad) {
        Matrix d(pv.rows, pv.cols);
        for (std::size_t i = 0; i < pv.rows; ++i)
          for (std::size_t j = 0; j < pv.cols; ++j)
            d.at(i, j) = n.grad.at(i, off + j);
        t.accum(pid, d);
      }
      off += pv.cols;
    }
  });
}

Var Tape::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: no operands");
  std::size_t cols = nodes_[parts[0].id].value.cols;
  std::size_t rows = 0;
  std::vector<int> parents;
  for (Var p : parts) {
    const Matrix& m = nodes_[p.id].value;
    if (m.cols != cols)
      throw ShapeError("concat_rows: column mismatch " + m.shape_str());
    rows += m.rows;
    parents.push_back(p.id);
  }
  Matrix out(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Matrix& m = nodes_[p.id].value;
    std::copy(m.data.begin(), m.data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += m.size();
  }
  return push(std::move(out), std::move(parents), [](Tape& t, int self) {
    Node& n = t.node(self);
    std::size_t off = 0;
    for (int pid : n.parents) {
      const Matrix& pv = t.node(pid).value;
      if (t.node(pid).needs_grad) {
        Matrix d(pv.rows, pv.cols);
        std::copy(n.grad.data.begin() + static_cast<std::ptrdiff_t>(off),
                  n.grad.data.begin() + static_cast<std::ptrdiff_t>(off + pv.size()),
                  d.data.begin());
        t.accum(pid, d);
      }
      off += pv.size();
    }
  });
}

Var Tape::block_col_mean(Var a, std::size_t block_rows) {
  const Matrix& A = nodes_[a.id].value;
  if (block_rows == 0 || A.rows % block_rows != 0)
    throw ShapeError("block_col_mean: " + std::to_string(A.rows) +
                     " rows not divisible into blocks of " +
                     std::to_string(block_rows));
  std::size_t blocks = A.rows / block_rows;
  Matrix out(blocks, A.cols);
  for (std::size_t b = 0; b < blocks; ++b)
    for (std::size_t i = 0; i < block_rows; ++i)
      for (std::size_t j = 0; j < A.cols; ++j)
        out.at(b, j) += A.at(b * block_rows + i, j);
  for (double& x : out.data) x /= static_cast<double>(block_rows);
  return push(std::move(out), {a.id}, [block_rows](Tape& t, int self) {
    Node& n = t.node(self);
    int a_id = n.parents[0];
    if (!t.node(a_id).needs_grad) return;
    const Matrix& A = t.node(a_id).value;
    Matrix d(A.rows, A.cols);
    double inv = 1.0 / static_cast<double>(block_rows);
    for (std::size_t i = 0; i < A.rows; ++i)
      for (std::size_t j = 0; j < A.cols; ++j)
        d.at(i, j) = inv * n.grad.at(i / block_rows, j);
    t.accum(a_id, d);
  });
}

Var Tape::col_mean(Var a) {
  return block_col_mean(a, nodes_[a.id].value.rows);
}

Var Tape::sum_all(Var a) {
  const Matrix& A = nodes_[a.id].value;
  double s = 0.0;
  for (double x : A.data) s += x;
  Matrix out(1, 1);
  out.data[0] = s;
  return push(std::move(out), {a.id}, [](Tape& t, int self) {
    Node& n = t.node(self);
    int a_id = n.parents[0];
    if (!t.node(a_id).needs_grad) return;
    const Matrix& A = t.node(a_id).value;
    Matrix d(A.rows, A.cols, n.grad.data[0]);
    t.accum(a_id, d);
  });
}

Var Tape::mse(Var a, Var b) {
  const Matrix& A = nodes_[a.id].value;
  const Matrix& B = nodes_[b.id].value;
  check_same_shape(A, B, "mse");
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) {
    double d = A.data[i] - B.data[i];
    s += d * d;
  }
  Matrix out(1, 1);
  out.data[0] = s / static_cast<double>(A.size());
  return push(std::move(out), {a.id, b.id}, [](Tape& t, int self) {
    Node& n = t.node(self);
    int a_id = n.parents[0], b_id = n.parents[1];
    const Matrix& A = t.node(a_id).value;
    const Matrix& B = t.node(b_id).value;
    double c = 2.0 * n.grad.data[0] / static_cast<double>(A.size());
    Matrix d(A.rows, A.cols);
    for (std::size_t i = 0; i < A.size(); ++i)
      d.data[i] = c * (A.data[i] - B.data[i]);
    t.accum(a_id, d);
    for (double& x : d.data) x = -x;
    t.accum(b_id, d);
  });
}

Var Tape::add_n(const std::vector<Var>& terms) {
  if (terms.empty()) throw ContractError("add_n: no operands");
  const Matrix& first = nodes_[terms[0].id].value;
  Matrix out(first.rows, first.cols);
  std::vector<int> parents;
  for (Var v : terms) {
    const Matrix& m = nodes_[v.id].value;
    check_same_shape(first, m, "add_n");
    for (std::size_t i = 0; i < m.size(); ++i) out.data[i] += m.data[i];
    parents.push_back(v.id);
  }
  return push(std::move(out), std::move(parents), [](Tape& t, int self) {
    Node& n = t.node(self);
    for (int pid : n.parents) t.accum(pid, n.grad);
  });
}

Var Tape::spmm(std::shared_ptr<const SparseMatrix> a, Var h) {
  const Matrix& H = nodes_[h.id].value;
  if (a->cols != H.rows)
    throw ShapeError("spmm: adjacency cols " + std::to_string(a->cols) +
                     " != dense rows " + std::to_string(H.rows));
  Matrix out(a->rows, H.cols);
  for (std::size_t i = 0; i < a->rows; ++i)
    for (auto [j, w] : a->row_entries[i])
      for (std::size_t c = 0; c < H.cols; ++c)
        out.at(i, c) += w * H.at(static_cast<std::size_t>(j), c);
  return push(std::move(out), {h.id}, [a](Tape& t, int self) {
    Node& n = t.node(self);
    int h_id = n.parents[0];
    if (!t.node(h_id).needs_grad) return;
    const Matrix& H = t.node(h_id).value;
    const Matrix& g = n.grad;
    Matrix d(H.rows, H.cols);
    for (std::size_t i = 0; i < a->rows; ++i)
      for (auto [j, w] : a->row_entries[i])
        for (std::size_t c = 0; c < H.cols; ++c)
          d.at(static_cast<std::size_t>(j), c) += w * g.at(i, c);
    t.accum(h_id, d);
  });
}

std::vector<std::vector<double>> edge_attention_alpha(const Matrix& s,
                                                      const Matrix& t,
                                                      const AttentionTopo& topo,
                                                      double slope) {
  std::vector<std::vector<double>> alpha(topo.node_count);
  for (std::size_t i = 0; i < topo.node_count; ++i) {
    const auto& nb = topo.neighbors[i];
    if (nb.empty())
      throw ContractError("attention: empty neighborhood at node " +
                          std::to_string(i));
    std::vector<double>& row = alpha[i];
    row.resize(nb.size());
    double hi = -1e300;
    for (std::size_t e = 0; e < nb.size(); ++e) {
      double z = activate(Activation::leaky_relu,
                          s.data[i] + t.data[static_cast<std::size_t>(nb[e].first)],
                          slope) +
                 nb[e].second;
      row[e] = z;
      hi = std::max(hi, z);
    }
    double sum = 0.0;
    for (double& z : row) {
      z = std::exp(z - hi);
      sum += z;
    }
    for (double& z : row) z /= sum;
  }
  return alpha;
}

Var Tape::attend(Var hw, Var s, Var t, std::shared_ptr<const AttentionTopo> topo,
                 Activation act, double slope) {
  const Matrix& HW = nodes_[hw.id].value;
  const Matrix& S = nodes_[s.id].value;
  const Matrix& T = nodes_[t.id].value;
  if (HW.rows != topo->node_count || S.rows != topo->node_count ||
      T.rows != topo->node_count || S.cols != 1 || T.cols != 1)
    throw ShapeError("attend: operand shapes " + HW.shape_str() + ", " +
                     S.shape_str() + ", " + T.shape_str() + " for " +
                     std::to_string(topo->node_count) + " nodes");
  if (act == Activation::relu || act == Activation::leaky_relu)
    throw ContractError("attend: activation must be smooth (identity/sigmoid/tanh/elu)");

  auto alpha = std::make_shared<std::vector<std::vector<double>>>(
      edge_attention_alpha(S, T, *topo, slope));

  std::size_t n = topo->node_count, d = HW.cols;
  Matrix out(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& nb = topo->neighbors[i];
    const auto& al = (*alpha)[i];
    for (std::size_t e = 0; e < nb.size(); ++e) {
      const double* src = &HW.data[static_cast<std::size_t>(nb[e].first) * d];
      double a = al[e];
      double* dst = &out.data[i * d];
      for (std::size_t c = 0; c < d; ++c) dst[c] += a * src[c];
    }
  }
  activate_in_place(act, out);

  return push(std::move(out), {hw.id, s.id, t.id},
              [topo, alpha, act, slope](Tape& tp, int self) {
    Node& n = tp.node(self);
    int hw_id = n.parents[0], s_id = n.parents[1], t_id = n.parents[2];
    const Matrix& HW = tp.node(hw_id).value;
    const Matrix& S = tp.node(s_id).value;
    const Matrix& T = tp.node(t_id).value;
    const Matrix& Y = n.value;
    const Matrix& G = n.grad;
    std::size_t nn = topo->node_count, d = HW.cols;

    Matrix d_hw(nn, d);
    Matrix d_s(nn, 1);
    Matrix d_t(nn, 1);
    std::vector<double> dpre(d);
    for (std::size_t i = 0; i < nn; ++i) {
      // d(pre) from the output activation, derivative taken from the output.
      for (std::size_t c = 0; c < d; ++c) {
        double y = Y.at(i, c);
        double dd = 1.0;
        switch (act) {
          case Activation::identity: dd = 1.0; break;
          case Activation::sigmoid: dd = y * (1.0 - y); break;
          case Activation::tanh: dd = 1.0 - y * y; break;
          case Activation::elu: dd = y > 0.0 ? 1.0 : y + 1.0; break;
          default: dd = 1.0; break;
        }
        dpre[c] = dd * G.at(i, c);
      }
      const auto& nb = topo->neighbors[i];
      const auto& al = (*alpha)[i];
      // dalpha_e = dpre . HW_j ; softmax backward, then through leaky_relu.
      double dot = 0.0;
      std::vector<double> dal(nb.size());
      for (std::size_t e = 0; e < nb.size(); ++e) {
        const double* src = &HW.data[static_cast<std::size_t>(nb[e].first) * d];
        double v = 0.0;
        for (std::size_t c = 0; c < d; ++c) v += dpre[c] * src[c];
        dal[e] = v;
        dot += v * al[e];
        double* dst = &d_hw.data[static_cast<std::size_t>(nb[e].first) * d];
        for (std::size_t c = 0; c < d; ++c) dst[c] += al[e] * dpre[c];
      }
      for (std::size_t e = 0; e < nb.size(); ++e) {
        double dz = al[e] * (dal[e] - dot);
        double pre_logit = S.data[i] + T.data[static_cast<std::size_t>(nb[e].first)];
        double dlin = dz * leaky_slope_at(pre_logit, slope);
        d_s.data[i] += dlin;
        d_t.data[static_cast<std::size_t>(nb[e].first)] += dlin;
      }
    }
    tp.accum(hw_id, d_hw);
    tp.accum(s_id, d_s);
    tp.accum(t_id, d_t);
  });
}

Var Tape::masked_cross_entropy(Var logits,
                               std::shared_ptr<const std::vector<int>> labels,
                               std::shared_ptr<const std::vector<int>> mask) {
  const Matrix& X = nodes_[logits.id].value;
  if (labels->size() != X.rows)
    throw ShapeError("cross_entropy: label count " +
                     std::to_string(labels->size()) + " != rows " +
                     std::to_string(X.rows));
  if (mask->empty())
    throw ContractError("cross_entropy: empty supervision mask");
  double total = 0.0;
  for (int i : *mask) {
    int y = (*labels)[static_cast<std::size_t>(i)];
    if (y < 0 || static_cast<std::size_t>(y) >= X.cols)
      throw ContractError("cross_entropy: label " + std::to_string(y) +
                          " outside " + std::to_string(X.cols) + " classes");
    double hi = X.at(static_cast<std::size_t>(i), 0);
    for (std::size_t c = 1; c < X.cols; ++c)
      hi = std::max(hi, X.at(static_cast<std::size_t>(i), c));
    double lse = 0.0;
    for (std::size_t c = 0; c < X.cols; ++c)
      lse += std::exp(X.at(static_cast<std::size_t>(i), c) - hi);
    total += hi + std::log(lse) - X.at(static_cast<std::size_t>(i),
                                       static_cast<std::size_t>(y));
  }
  Matrix out(1, 1);
  out.data[0] = total / static_cast<double>(mask->size());
  return push(std::move(out), {logits.id}, [labels, mask](Tape& t, int self) {
    Node& n = t.node(self);
    int x_id = n.parents[0];
    if (!t.node(x_id).needs_grad) return;
    const Matrix& X = t.node(x_id).value;
    Matrix d(X.rows, X.cols);
    double c0 = n.grad.data[0] / static_cast<double>(mask->size());
    for (int i : *mask) {
      std::size_t row = static_cast<std::size_t>(i);
      double hi = X.at(row, 0);
      for (std::size_t c = 1; c < X.cols; ++c) hi = std::max(hi, X.at(row, c));
      double sum = 0.0;
      for (std::size_t c = 0; c < X.cols; ++c) sum += std::exp(X.at(row, c) - hi);
      for (std::size_t c = 0; c < X.cols; ++c) {
        double p = std::exp(X.at(row, c) - hi) / sum;
        double y = (static_cast<int>(c) == (*labels)[row]) ? 1.0 : 0.0;
        d.at(row, c) = c0 * (p - y);
      }
    }
    t.accum(x_id, d);
  });
}

void Tape::backward(Var scalar_output) {
  Node& out = nodes_[scalar_output.id];
  if (!out.value.is_scalar())
    throw ContractError("backward: output must be 1x1, got " +
                        out.value.shape_str());
  if (out.grad.empty()) out.grad = Matrix(1, 1);
  out.grad.data[0] += 1.0;
  // Reverse creation order is a reverse topological order, so each node's
  // gradient is complete when reached. Interior gradients are consumed on
  // propagation: leaves keep accumulating across passes (sum of two losses
  // equals two single-loss passes) and buffers are released early.
  for (int id = scalar_output.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.empty() || !n.backprop) continue;
    n.backprop(*this, id);
    n.grad = Matrix();
  }
}

}  // namespace mapi
