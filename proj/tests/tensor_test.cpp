#include <gtest/gtest.h>

#include "sgp/layers.hpp"
#include "sgp/optim.hpp"
#include "sgp/tensor.hpp"
#include "support/gradcheck.hpp"

namespace sgp {
namespace {

using testing::check_gradients;

// Every op on one small graph; finite differences over all parameters.
TEST(Graph, AllOpsMatchFiniteDifferences) {
  Rng rng(3);
  ParameterSet<double> ps;
  const auto table = ps.add("table", normal_matrix<double>(6, 8, 0.5, rng));
  const auto block = TransformerBlock::create(ps, "blk", 8, 2, 2, rng);
  const auto head = Linear::create(ps, "head", 8, 5, rng, true, 0.5);
  const auto other = ps.add("other", normal_matrix<double>(3, 8, 0.5, rng));
  const auto ln = LayerNorm::create(ps, "ln", 8);
  // Perturb norm parameters away from their identity init.
  for (std::size_t i = 0; i < ps.size(); ++i) ps.value(i).array() += normal_matrix<double>(ps.value(i).rows(), ps.value(i).cols(), 0.1, rng).array();

  const std::vector<int> ids{0, 3, 3, 5};
  const std::vector<int> targets{1, -1, 4, 0};
  AttentionMask mask = AttentionMask::causal(4);

  auto forward = [&](Graph<double>& g) {
    Var x = g.gather_rows(g.param(table), ids);
    x = block(g, x, mask);
    Var o = g.param(other);
    Var both = g.concat_rows(std::vector<Var>{x, o});
    Var top = g.slice_rows(both, 0, 4);
    Var logits = head(g, ln(g, top));
    Var ptr = g.matmul_nt(top, g.scale(o, 0.3));
    Var joint = g.concat_cols(logits, ptr);
    Var ce = g.cross_entropy_sum(joint, targets);
    return g.add(ce, g.scale(g.sum_squares(g.gelu(o)), 0.1));
  };

  Gradients<double> grads(ps);
  {
    Graph<double> g(ps, &grads);
    g.backward(forward(g));
  }
  auto loss = [&] {
    Graph<double> g(ps);
    return g.scalar(forward(g));
  };
  const auto res = check_gradients(ps, grads.flatten(), loss, 200, 11);
  EXPECT_LT(res.max_relative_error, 1e-6);
}

TEST(Graph, UniformLogitsGiveLogVocab) {
  ParameterSet<double> ps;
  Graph<double> g(ps);
  Var logits = g.constant(Matrix<double>::Zero(3, 17));
  const std::vector<int> t{2, 5, 16};
  EXPECT_NEAR(g.scalar(g.cross_entropy_sum(logits, t)) / 3.0, std::log(17.0), 1e-12);
}

TEST(Graph, MaskedKeysDoNotInfluenceOutputBitwise) {
  Rng rng(5);
  ParameterSet<float> ps;
  Graph<float> g(ps);
  Matrix<float> q = normal_matrix<float>(4, 8, 1.0, rng), k = normal_matrix<float>(4, 8, 1.0, rng),
                v = normal_matrix<float>(4, 8, 1.0, rng);
  const auto mask = AttentionMask::causal(4);
  Matrix<float> a = g.value(g.attention(g.constant(q), g.constant(k), g.constant(v), 2, mask));
  k.row(3).setConstant(7.f);
  v.row(3).setConstant(-3.f);
  Matrix<float> b = g.value(g.attention(g.constant(q), g.constant(k), g.constant(v), 2, mask));
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 8; ++j) EXPECT_EQ(a(i, j), b(i, j));
}

TEST(TransformerBlock, CachedStepMatchesGraphForward) {
  Rng rng(9);
  ParameterSet<double> ps;
  const auto blk = TransformerBlock::create(ps, "b", 8, 2, 4, rng);
  Matrix<double> x = normal_matrix<double>(5, 8, 1.0, rng);
  Graph<double> g(ps);
  const Matrix<double> full = g.value(blk(g, g.constant(x), AttentionMask::causal(5)));
  KvCache<double> cache;
  Matrix<double> first = blk.step(ps, Matrix<double>(x.topRows(2)), cache, true);
  EXPECT_TRUE(first.isApprox(full.topRows(2), 1e-12));
  for (Index r = 2; r < 5; ++r) {
    Matrix<double> row = blk.step(ps, Matrix<double>(x.row(r)), cache, true);
    EXPECT_TRUE(row.isApprox(full.row(r), 1e-12));
  }
}

TEST(Adam, MinimizesQuadratic) {
  ParameterSet<double> ps;
  const auto w = ps.add("w", Matrix<double>::Constant(1, 3, 2.0));
  Adam<double> opt(ps, {.lr = 0.1, .clip_norm = 0});
  for (int i = 0; i < 500; ++i) {
    Gradients<double> gr(ps);
    Graph<double> g(ps, &gr);
    g.backward(g.sum_squares(g.param(w)));
    opt.step(ps, gr, 0.05);
  }
  EXPECT_LT(ps.value(w).norm(), 1e-2);
}

TEST(StaircaseSchedule, DropsAtMilestones) {
  StaircaseSchedule s{.base_lr = 1.0, .milestones = {0.5, 0.75}, .factor = 0.1};
  EXPECT_DOUBLE_EQ(s.at(0, 100), 1.0);
  EXPECT_DOUBLE_EQ(s.at(50, 100), 0.1);
  EXPECT_NEAR(s.at(80, 100), 0.01, 1e-15);
}

}  // namespace
}  // namespace sgp
