#include "doctest.h"

#include <cmath>
#include <memory>

#include "mapi/random.hpp"
#include "mapi/tape.hpp"

#include "oracles.hpp"

using mapi::Matrix;
using mapi::Tape;
using mapi::Var;

namespace {

Matrix scalar(double v) {
  Matrix m(1, 1);
  m.data[0] = v;
  return m;
}

}  // namespace

TEST_SUITE_BEGIN("tape");

TEST_CASE("elementwise values") {
  Tape t;
  Var x = t.constant(scalar(0.0));
  CHECK(t.scalar_value(t.sigmoid(x)) == doctest::Approx(0.5));

  Var y = t.constant(scalar(-2.0));
  CHECK(t.scalar_value(t.leaky_relu(y, 0.2)) == doctest::Approx(-0.4));

  mapi::Rng rng(5);
  Var v = t.constant(rng.uniform_matrix(3, 2, -1.0, 1.0));
  CHECK(t.scalar_value(t.mse(v, v)) == 0.0);
}

TEST_CASE("scalar broadcast in binary ops") {
  Tape t;
  Var m = t.param(Matrix(2, 2, 3.0));
  Var s = t.param(scalar(2.0));
  Var prod = t.mul(m, s);
  for (double x : t.value(prod).data) CHECK(x == doctest::Approx(6.0));
  Var loss = t.sum_all(prod);
  t.backward(loss);
  CHECK(t.grad(s).data[0] == doctest::Approx(12.0));  // sum of m entries
  for (double g : t.grad(m).data) CHECK(g == doctest::Approx(2.0));
}

TEST_CASE("row_softmax uniform and stability") {
  Tape t;
  auto full = std::make_shared<std::vector<std::vector<int>>>(
      std::vector<std::vector<int>>{{0, 1, 2}});
  Var x = t.constant(Matrix::row_vector({0.0, 0.0, 0.0}));
  Var y = t.row_softmax(x, full);
  for (double v : t.value(y).data) CHECK(v == doctest::Approx(1.0 / 3.0));

  auto full2 = std::make_shared<std::vector<std::vector<int>>>(
      std::vector<std::vector<int>>{{0, 1}});
  Var big = t.constant(Matrix::row_vector({1000.0, 0.0}));
  Var yb = t.row_softmax(big, full2);
  double sum = 0.0;
  for (double v : t.value(yb).data) {
    CHECK(std::isfinite(v));
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0));
}

TEST_CASE("row_softmax matches extended-precision oracle") {
  mapi::Rng rng(6);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> row(7);
    for (double& v : row) v = rng.uniform(-5.0, 5.0);
    Tape t;
    auto mask = std::make_shared<std::vector<std::vector<int>>>(
        std::vector<std::vector<int>>{{0, 1, 2, 3, 4, 5, 6}});
    Var y = t.row_softmax(t.constant(Matrix::row_vector(row)), mask);
    std::vector<double> want = oracles::softmax_longdouble(row);
    for (std::size_t i = 0; i < row.size(); ++i)
      CHECK(std::fabs(t.value(y).data[i] - want[i]) < 1e-12);
  }
}

TEST_CASE("row_softmax masked entries are exactly zero and rows sum to one") {
  mapi::Rng rng(7);
  Tape t;
  auto masks = std::make_shared<std::vector<std::vector<int>>>(
      std::vector<std::vector<int>>{{1, 3}, {0, 2, 4}});
  Var x = t.constant(rng.uniform_matrix(2, 5, -3.0, 3.0));
  Var y = t.row_softmax(x, masks);
  const Matrix& Y = t.value(y);
  CHECK(Y.at(0, 0) == 0.0);
  CHECK(Y.at(0, 2) == 0.0);
  CHECK(Y.at(0, 4) == 0.0);
  CHECK(Y.at(1, 1) == 0.0);
  CHECK(Y.at(1, 3) == 0.0);
  CHECK(Y.at(0, 1) + Y.at(0, 3) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(Y.at(1, 0) + Y.at(1, 2) + Y.at(1, 4) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("row_softmax empty mask row throws") {
  Tape t;
  auto masks = std::make_shared<std::vector<std::vector<int>>>(
      std::vector<std::vector<int>>{{}});
  Var x = t.constant(Matrix::row_vector({1.0, 2.0}));
  CHECK_THROWS_AS(t.row_softmax(x, masks), mapi::ContractError);
}

TEST_CASE("backward of square and of constant") {
  Tape t;
  Var x = t.param(scalar(3.0));
  Var sq = t.mul(x, x);
  t.backward(sq);
  CHECK(t.grad(x).data[0] == doctest::Approx(6.0));

  Tape t2;
  Var c = t2.param(scalar(4.0));
  Var k = t2.constant(scalar(7.0));
  Var loss = t2.mul(k, k);
  t2.backward(loss);
  CHECK(!t2.has_grad(c));
}

TEST_CASE("backward requires scalar output") {
  Tape t;
  Var x = t.param(Matrix(2, 2, 1.0));
  CHECK_THROWS_AS(t.backward(x), mapi::ContractError);
}

TEST_CASE("gradient accumulation is linear over losses") {
  mapi::Rng rng(8);
  Matrix init = rng.uniform_matrix(3, 3, -1.0, 1.0);

  auto run = [&](bool joint) {
    Tape t;
    Var w = t.param(init);
    Var l1 = t.mse(t.sigmoid(w), t.constant(Matrix(3, 3, 0.25)));
    Var l2 = t.sum_all(t.mul(w, w));
    if (joint) {
      t.backward(t.add(l1, l2));
    } else {
      t.backward(l1);
      t.backward(l2);
    }
    return t.grad(w);
  };
  Matrix joint = run(true);
  Matrix split = run(false);
  for (std::size_t i = 0; i < joint.size(); ++i)
    CHECK(joint.data[i] == doctest::Approx(split.data[i]).epsilon(1e-12));
}

TEST_CASE("composed loss passes finite-difference check") {
  mapi::Rng rng(9);
  mapi::ParameterSet ps;
  ps.create("w1", rng.uniform_matrix(4, 3, -1.0, 1.0));
  ps.create("b1", rng.uniform_matrix(1, 3, -0.5, 0.5));
  ps.create("w2", rng.uniform_matrix(3, 2, -1.0, 1.0));
  Matrix x = rng.uniform_matrix(5, 4, -2.0, 2.0);
  Matrix target = rng.uniform_matrix(5, 2, -1.0, 1.0);

  auto build = [&](Tape& t, mapi::BoundParams& bp) {
    Var h = t.tanh_(t.add_rowvec(t.matmul(t.constant(x), bp["w1"]), bp["b1"]));
    Var out = t.elu(t.matmul(h, bp["w2"]));
    return t.mse(out, t.constant(target));
  };
  mapi::Rng coords(10);
  auto res = oracles::finite_diff_check(ps, build, 20, coords);
  CHECK(res.max_rel_err < 1e-4);
  CHECK(res.coords_checked > 0);
}

TEST_CASE("attend aggregates with modulated attention and passes FD check") {
  // 3 activated nodes in a path 0-1-2 plus an isolated node 3 with self-loop.
  auto topo = std::make_shared<mapi::AttentionTopo>();
  topo->node_count = 4;
  topo->neighbors = {
      {{0, 0.0}, {1, std::log(0.5)}},
      {{1, 0.0}, {0, std::log(0.5)}, {2, std::log(2.0)}},
      {{2, 0.0}, {1, std::log(2.0)}},
      {{3, 0.0}},
  };
  mapi::Rng rng(11);
  mapi::ParameterSet ps;
  ps.create("hw", rng.uniform_matrix(4, 3, -1.0, 1.0));
  ps.create("s", rng.uniform_matrix(4, 1, -1.0, 1.0));
  ps.create("t", rng.uniform_matrix(4, 1, -1.0, 1.0));

  auto build = [&](Tape& t, mapi::BoundParams& bp) {
    Var out = t.attend(bp["hw"], bp["s"], bp["t"], topo,
                       mapi::Activation::elu, 0.2);
    return t.sum_all(t.mul(out, out));
  };
  mapi::Rng coords(12);
  auto res = oracles::finite_diff_check(ps, build, 20, coords);
  CHECK(res.max_rel_err < 1e-4);

  // isolated node: alpha_ii = 1, so out = act(hw row).
  Tape t;
  mapi::BoundParams bp(t, ps);
  Var out = t.attend(bp["hw"], bp["s"], bp["t"], topo, mapi::Activation::elu, 0.2);
  const Matrix& hw = ps.value("hw");
  for (std::size_t c = 0; c < 3; ++c)
    CHECK(t.value(out).at(3, c) ==
          doctest::Approx(mapi::activate(mapi::Activation::elu, hw.at(3, c))));
}

TEST_CASE("masked cross entropy: uniform, perfect, and mask gradients") {
  Tape t;
  Matrix logits(3, 2);     // rows 0,1 supervised; row 2 masked out
  logits.at(2, 0) = 5.0;   // arbitrary values on the unsupervised row
  auto labels = std::make_shared<std::vector<int>>(std::vector<int>{0, 1, 0});
  auto mask = std::make_shared<std::vector<int>>(std::vector<int>{0, 1});
  Var x = t.param(logits);
  Var loss = t.masked_cross_entropy(x, labels, mask);
  CHECK(t.scalar_value(loss) == doctest::Approx(std::log(2.0)));
  t.backward(loss);
  CHECK(t.grad(x).at(2, 0) == 0.0);
  CHECK(t.grad(x).at(2, 1) == 0.0);

  Tape t2;
  Matrix sharp(2, 2);
  sharp.at(0, 0) = 30.0;
  sharp.at(1, 1) = 30.0;
  auto labels2 = std::make_shared<std::vector<int>>(std::vector<int>{0, 1});
  auto mask2 = std::make_shared<std::vector<int>>(std::vector<int>{0, 1});
  Var loss2 = t2.masked_cross_entropy(t2.constant(sharp), labels2, mask2);
  CHECK(t2.scalar_value(loss2) < 1e-10);

  // FD check through an upstream linear map.
  mapi::Rng rng(13);
  mapi::ParameterSet ps;
  ps.create("w", rng.uniform_matrix(3, 2, -1.0, 1.0));
  Matrix feats = rng.uniform_matrix(4, 3, -2.0, 2.0);
  auto labels3 = std::make_shared<std::vector<int>>(std::vector<int>{1, 0, 1, 0});
  auto mask3 = std::make_shared<std::vector<int>>(std::vector<int>{0, 2, 3});
  auto build = [&](Tape& tt, mapi::BoundParams& bp) {
    return tt.masked_cross_entropy(tt.matmul(tt.constant(feats), bp["w"]),
                                   labels3, mask3);
  };
  mapi::Rng coords(14);
  auto res = oracles::finite_diff_check(ps, build, 6, coords);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("spmm matches dense product and passes FD check") {
  mapi::Rng rng(15);
  auto sp = std::make_shared<mapi::SparseMatrix>();
  sp->rows = sp->cols = 5;
  sp->row_entries.resize(5);
  Matrix dense(5, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 5; ++j)
      if (rng.uniform(0.0, 1.0) < 0.4) {
        double w = rng.uniform(0.1, 1.0);
        sp->row_entries[i].push_back({static_cast<int>(j), w});
        dense.at(i, j) = w;
      }
  mapi::ParameterSet ps;
  ps.create("h", rng.uniform_matrix(5, 3, -1.0, 1.0));

  Tape t;
  mapi::BoundParams bp(t, ps);
  Var out = t.spmm(sp, bp["h"]);
  Matrix want = oracles::matmul_naive(dense, ps.value("h"));
  for (std::size_t i = 0; i < want.size(); ++i)
    CHECK(t.value(out).data[i] == doctest::Approx(want.data[i]).epsilon(1e-12));

  auto build = [&](Tape& tt, mapi::BoundParams& bpp) {
    return tt.sum_all(tt.mul(tt.spmm(sp, bpp["h"]), tt.spmm(sp, bpp["h"])));
  };
  mapi::Rng coords(16);
  auto res = oracles::finite_diff_check(ps, build, 15, coords);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("structure ops: concat, tile, block means, transpose") {
  mapi::Rng rng(17);
  mapi::ParameterSet ps;
  ps.create("a", rng.uniform_matrix(2, 3, -1.0, 1.0));
  ps.create("b", rng.uniform_matrix(2, 2, -1.0, 1.0));

  Tape t;
  mapi::BoundParams bp(t, ps);
  Var cc = t.concat_cols({bp["a"], bp["b"]});
  CHECK(t.value(cc).cols == 5);
  CHECK(t.value(cc).at(1, 3) == ps.value("b").at(1, 0));

  Var cr = t.concat_rows({bp["a"], bp["a"]});
  CHECK(t.value(cr).rows == 4);

  Var tiled = t.tile_rows(bp["a"], 3);
  CHECK(t.value(tiled).rows == 6);
  CHECK(t.value(tiled).at(4, 1) == ps.value("a").at(0, 1));

  Var bm = t.block_col_mean(tiled, 2);
  CHECK(t.value(bm).rows == 3);

  Var tr = t.transpose(bp["b"]);
  CHECK(t.value(tr).at(0, 1) == ps.value("b").at(1, 0));

  auto build = [&](Tape& tt, mapi::BoundParams& bpp) {
    Var c = tt.concat_cols({bpp["a"], bpp["b"]});
    Var tiles = tt.tile_rows(c, 2);
    Var m = tt.block_col_mean(tiles, 4);
    return tt.mse(m, tt.constant(Matrix(1, 5, 0.3)));
  };
  mapi::Rng coords(18);
  auto res = oracles::finite_diff_check(ps, build, 10, coords);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("forward values stay finite for |x| <= 50 on sigmoid/softmax paths") {
  Tape t;
  Var x = t.constant(Matrix::row_vector({-50.0, -10.0, 0.0, 10.0, 50.0}));
  Var s = t.sigmoid(x);
  for (double v : t.value(s).data) CHECK(std::isfinite(v));
  auto mask = std::make_shared<std::vector<std::vector<int>>>(
      std::vector<std::vector<int>>{{0, 1, 2, 3, 4}});
  Var sm = t.row_softmax(x, mask);
  double sum = 0.0;
  for (double v : t.value(sm).data) {
    CHECK(std::isfinite(v));
    sum += v;
  }
  CHECK(sum == doctest::Approx(1.0));
}

TEST_SUITE_END();
