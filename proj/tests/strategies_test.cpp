#include <gtest/gtest.h>

#include "sgp/strategies.hpp"
#include "support/gradcheck.hpp"

namespace sgp {
namespace {

const WorldSpec& small_spec() {
  static const WorldSpec spec = [] {
    WorldSpec s;
    s.train_per_task = 80;
    s.val_per_task = 10;
    s.test_per_task = 10;
    return s;
  }();
  return spec;
}

const ContinualBenchmark& bench() {
  static const ContinualBenchmark b = build_function_splits(generate_world(21, small_spec()), 3.0);
  return b;
}

const Vocab& vocab() {
  static const Vocab v = Vocab::from_bank(small_spec().bank);
  return v;
}

UniVqaConfig toy() {
  UniVqaConfig c;
  c.width = 8;
  c.heads = 2;
  c.fusion_layers = 1;
  c.text_layers = 1;
  c.max_text_len = 64;
  return c;
}

std::vector<VqaItem> items(const std::vector<Sample>& s, std::size_t n) {
  std::vector<VqaItem> out;
  for (std::size_t i = 0; i < n && i < s.size(); ++i) {
    auto b = bundle_from_sample(vocab(), s[i], toy());
    auto t = answer_target(vocab(), s[i].answer(), b.ocr_words, toy().max_decode_steps);
    out.push_back({std::move(b), std::move(t)});
  }
  return out;
}

template <class T>
void perturb(UniVqaModel<T>& m, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < m.params.size(); ++i)
    m.params.value(i).array() +=
        normal_matrix<T>(m.params.value(i).rows(), m.params.value(i).cols(), scale, rng).array();
}

TEST(StrategyConfig, DefaultsAndMismatches) {
  const auto sgp = strategy_from_json({{"kind", "sgp"}});
  EXPECT_EQ(sgp.gamma, 1.5);
  EXPECT_EQ(strategy_from_json({{"kind", "ewc"}}).strength, 100.0);
  EXPECT_THROW(strategy_from_json({{"kind", "finetune"}, {"gamma", 1.0}}), ConfigError);
  EXPECT_THROW(strategy_from_json({{"kind", "sgp"}, {"gamma", -1.0}}), ConfigError);
  EXPECT_THROW(strategy_from_json({{"kind", "real_rnd"}, {"budget_bytes", 0}}), ConfigError);
  EXPECT_THROW(strategy_from_json({{"kind", "sgp"}, {"bogus", 1}}), ConfigError);
  EXPECT_THROW(strategy_from_json({{"kind", "lwf"}}), ConfigError);
  EXPECT_EQ(to_json(strategy_from_json(to_json(sgp))), to_json(sgp));
}

TEST(Ewc, PenaltyIsZeroAtAnchorAndWithZeroImportance) {
  auto m = UniVqaModel<double>::create(toy(), vocab().size(), 1);
  const auto data = items(bench().tasks[0].train, 20);
  ImportanceState<double> st(m.params);
  st.merge(ewc_importance(m, data, importance_subset(data.size(), 256, 1)), m.params, 0.9);
  Gradients<double> g(m.params);
  EXPECT_EQ(st.penalty(m.params, &g, 100.0), 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_EQ(g[i].cwiseAbs().maxCoeff(), 0.0);

  perturb(m, 0.1, 2);
  ImportanceState<double> zero(m.params);
  auto m2 = m;
  perturb(m2, 0.1, 3);
  Gradients<double> g2(m2.params);
  EXPECT_EQ(zero.penalty(m2.params, &g2, 100.0), 0.0);
  for (std::size_t i = 0; i < g2.size(); ++i) EXPECT_EQ(g2[i].cwiseAbs().maxCoeff(), 0.0);
}

TEST(Ewc, ImportanceIsNonNegativeAndPenaltyGradientIsExact) {
  auto m = UniVqaModel<double>::create(toy(), vocab().size(), 4);
  perturb(m, 0.1, 5);
  const auto data = items(bench().tasks[2].train, 12);
  const auto imp = ewc_importance(m, data, importance_subset(data.size(), 256, 2));
  double total = 0;
  for (std::size_t i = 0; i < imp.size(); ++i) {
    EXPECT_GE(imp[i].minCoeff(), 0.0);
    total += imp[i].sum();
  }
  EXPECT_GT(total, 0.0);
  ImportanceState<double> st(m.params);
  st.merge(imp, m.params, 0.9);
  perturb(m, 0.05, 6);
  Gradients<double> g(m.params);
  st.penalty(m.params, &g, 3.0);
  auto loss = [&] { return st.penalty(m.params, nullptr, 3.0); };
  const auto res = testing::check_gradients(m.params, g.flatten(), loss, 60, 7);
  EXPECT_LT(res.max_relative_error, 1e-6);
}

TEST(Ewc, OnlineMergeDecaysPreviousImportance) {
  auto m = UniVqaModel<double>::create(toy(), vocab().size(), 4);
  ImportanceState<double> st(m.params);
  Gradients<double> ones(m.params);
  for (std::size_t i = 0; i < ones.size(); ++i) ones[i].setOnes();
  st.merge(ones, m.params, 0.9);
  st.merge(ones, m.params, 0.9);
  EXPECT_DOUBLE_EQ(st.importance()[0](0, 0), 1.9);
}

TEST(Mas, ConstantOutputModelHasZeroImportance) {
  auto m = UniVqaModel<double>::create(toy(), vocab().size(), 8);
  m.params.value(m.classifier.weight).setZero();
  m.params.value(m.classifier.bias).setZero();
  std::vector<InputBundle> in;
  for (const auto& it : items(bench().tasks[1].train, 6)) in.push_back(it.input);
  const auto imp = mas_importance(m, in);
  for (std::size_t i = 0; i < imp.size(); ++i) EXPECT_EQ(imp[i].cwiseAbs().maxCoeff(), 0.0) << m.params.name(i);
}

TEST(Mas, DuplicatedDataLeavesAverageUnchanged) {
  auto m = UniVqaModel<double>::create(toy(), vocab().size(), 9);
  std::vector<InputBundle> in;
  for (const auto& it : items(bench().tasks[3].train, 5)) in.push_back(it.input);
  auto twice = in;
  twice.insert(twice.end(), in.begin(), in.end());
  const auto a = mas_importance(m, in), b = mas_importance(m, twice);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_LT((a[i] - b[i]).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Mas, MatchesBruteForcePerSampleAverage) {
  auto m = UniVqaModel<double>::create(toy(), vocab().size(), 10);
  perturb(m, 0.1, 11);
  std::vector<InputBundle> in;
  for (const auto& it : items(bench().tasks[5].train, 4)) in.push_back(it.input);
  const auto flat = mas_importance(m, in).flatten();
  auto p = m.params.flatten();
  Rng rng(12);
  std::vector<std::size_t> coords;
  for (std::size_t i = 0; i < flat.size(); ++i)
    if (flat[i] != 0) coords.push_back(i);
  ASSERT_GT(coords.size(), 40u);
  double worst = 0;
  for (int c = 0; c < 40; ++c) {
    const std::size_t i = coords[rng.below(coords.size())];
    double avg = 0;
    for (const auto& b : in) {
      auto f = [&](double v) {
        p[i] = v;
        m.params.assign(p);
        Graph<double> g(m.params);
        return g.scalar(m.output_sq_norm(g, b));
      };
      const double orig = p[i];
      const double d = (f(orig + 1e-5) - f(orig - 1e-5)) / 2e-5;
      p[i] = orig;
      m.params.assign(p);
      avg += std::abs(d);
    }
    avg /= static_cast<double>(in.size());
    worst = std::max(worst, testing::relative_error(flat[i], avg));
  }
  EXPECT_LT(worst, 1e-4);
}

// Brute force: every 2-partition of 4 points, lowest within-cluster SSE.
std::vector<std::size_t> brute_force_two_means(const Matrix<double>& pts) {
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> pick;
  for (int mask = 1; mask < 15; ++mask) {
    double sse = 0;
    std::vector<std::size_t> chosen;
    for (int side = 0; side < 2; ++side) {
      std::vector<Index> idx;
      for (Index i = 0; i < 4; ++i)
        if (((mask >> i) & 1) == side) idx.push_back(i);
      Eigen::RowVectorXd c = Eigen::RowVectorXd::Zero(pts.cols());
      for (Index i : idx) c += pts.row(i);
      c /= static_cast<double>(idx.size());
      Index near = idx[0];
      for (Index i : idx) {
        sse += (pts.row(i) - c).squaredNorm();
        if ((pts.row(i) - c).squaredNorm() < (pts.row(near) - c).squaredNorm()) near = i;
      }
      chosen.push_back(static_cast<std::size_t>(near));
    }
    if (sse < best - 1e-12) {
      best = sse;
      pick = chosen;
    }
  }
  std::sort(pick.begin(), pick.end());
  return pick;
}

TEST(KMeans, FourPointsTwoPairsMatchesBruteForce) {
  Matrix<double> pts(4, 2);
  pts << 5.0, 5.1, 0.0, 0.0, 5.0, 5.0, 0.1, 0.05;
  const auto oracle = brute_force_two_means(pts);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    EXPECT_EQ(kmeans_select(pts, 2, rng), oracle) << "seed " << seed;
  }
  Rng rng(1);
  EXPECT_EQ(kmeans_select(pts, 4, rng), (std::vector<std::size_t>{0, 1, 2, 3}));
}

TEST(EpisodicMemory, LargeQuotaStoresWholeTask) {
  EpisodicMemory mem(EpisodicMemory::Policy::rnd, std::nullopt, 10000);
  Rng rng(1);
  mem.add_task("o", bench().tasks[0].train, rng);
  EXPECT_EQ(mem.entries().size(), bench().tasks[0].train.size());
  EpisodicMemory empty(EpisodicMemory::Policy::rnd, 1000, std::nullopt);
  EXPECT_EQ(empty.bytes(), 0u);
}

TEST(EpisodicMemory, BytesNeverExceedBudgetAndMatchReserialization) {
  for (auto policy : {EpisodicMemory::Policy::rnd, EpisodicMemory::Policy::kmeans}) {
    const std::size_t budget = 60000;
    EpisodicMemory mem(policy, budget, std::nullopt);
    Rng rng(3);
    for (const auto& t : bench().tasks) {
      mem.add_task(t.task_tag, t.train, rng, [&](std::size_t i) {
        const auto& s = t.train[i];
        return Eigen::RowVectorXd::Constant(2, static_cast<double>(s.question.size() + s.objects.size()));
      });
      EXPECT_LE(mem.bytes(), budget);
      std::size_t re = 0;
      for (const auto& e : mem.entries()) re += to_json(e.sample).dump().size() +
                                                4 * (e.sample.objects.size() * (kAppearanceDim + kBoxDim) +
                                                     e.sample.ocr_tokens.size() * (kAppearanceDim + kBoxDim + kTrigramDim));
      EXPECT_EQ(mem.bytes(), re);
      for (const auto& [tag, n] : mem.counts()) EXPECT_GT(n, 0u) << tag;
    }
    EXPECT_EQ(mem.counts().size(), 6u);
  }
}

TEST(EpisodicMemory, SampleBudgetIsSharedEvenly) {
  EpisodicMemory mem(EpisodicMemory::Policy::rnd, std::nullopt, 60);
  Rng rng(4);
  for (std::size_t k = 0; k < 4; ++k) {
    mem.add_task(bench().tasks[k].task_tag, bench().tasks[k].train, rng);
    for (const auto& [tag, n] : mem.counts()) EXPECT_EQ(n, 60 / (k + 1));
  }
}

TEST(EpisodicMemory, BudgetBelowOneSampleIsAnError) {
  EpisodicMemory mem(EpisodicMemory::Policy::rnd, 10, std::nullopt);
  Rng rng(1);
  EXPECT_THROW(mem.add_task("o", bench().tasks[0].train, rng), ConfigError);
  EXPECT_THROW(EpisodicMemory(EpisodicMemory::Policy::rnd, std::nullopt, std::nullopt), ConfigError);
}

}  // namespace
}  // namespace sgp
