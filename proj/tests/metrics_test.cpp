#include <gtest/gtest.h>

#include "sgp/metrics.hpp"
#include "sgp/rng.hpp"

namespace sgp {
namespace {

// Oracle: plain nested loops over a dense 1-based array.
struct Oracle {
  double a[7][7] = {};
  double A(int k) const {
    double s = 0;
    for (int j = 1; j <= k; ++j) s += a[k][j];
    return s / k;
  }
  double F(int k) const {
    double s = 0;
    for (int j = 1; j <= k - 1; ++j) {
      double mx = -1e300;
      for (int l = 1; l <= k - 1; ++l)
        if (l >= j && a[l][j] > mx) mx = a[l][j];
      s += mx - a[k][j];
    }
    return s / (k - 1);
  }
  double B(int k) const {
    double s = 0;
    for (int j = 1; j <= k - 1; ++j) s += a[k][j] - a[j][j];
    return s / (k - 1);
  }
};

AccuracyMatrix labelled(std::size_t n) {
  std::vector<std::string> l;
  for (std::size_t i = 0; i < n; ++i) l.push_back(std::string(1, static_cast<char>('a' + i)));
  return AccuracyMatrix(l);
}

TEST(AnswerAccuracy, SoftVoting) {
  EXPECT_EQ(answer_accuracy("red", std::vector<std::string>(10, "red")), 1.0);
  std::vector<std::string> two(10, "blue");
  two[3] = two[7] = "red";
  EXPECT_DOUBLE_EQ(answer_accuracy("red", two), 2.0 / 3.0);
  EXPECT_EQ(answer_accuracy("green", two), 0.0);
  EXPECT_EQ(answer_accuracy("", two), 0.0);
  EXPECT_EQ(answer_accuracy("  The Red ", std::vector<std::string>(10, "red")), 1.0);
  EXPECT_THROW(answer_accuracy("red", {"red"}), DataError);
  EXPECT_EQ(normalize_answer("an apple"), "apple");
  EXPECT_EQ(normalize_answer("the"), "the");
}

TEST(Metrics, WorkedExamples) {
  auto m = labelled(2);
  m.set(0, 0, 0.5);
  m.set(1, 0, 0.4);
  m.set(1, 1, 0.6);
  EXPECT_DOUBLE_EQ(average_accuracy(m, 2), 0.5);
  auto f = labelled(2);
  f.set(0, 0, 0.5);
  f.set(1, 0, 0.3);
  f.set(1, 1, 0.9);
  EXPECT_NEAR(forgetting(f, 2), 0.2, 1e-15);
  EXPECT_NEAR(backward_transfer(f, 2), -0.2, 1e-15);
  EXPECT_THROW(forgetting(f, 1), MetricError);
  EXPECT_THROW(backward_transfer(f, 1), MetricError);
  auto partial = labelled(3);
  partial.set(0, 0, 0.1);
  EXPECT_THROW(average_accuracy(partial, 2), MetricError);
  EXPECT_THROW(partial.set(0, 1, 0.2), MetricError);
  EXPECT_THROW(partial.set(1, 0, 1.2), MetricError);
}

TEST(Metrics, ConstantImprovingAndDiagonalCases) {
  auto c = labelled(4);
  for (std::size_t k = 0; k < 4; ++k)
    for (std::size_t j = 0; j <= k; ++j) c.set(k, j, 0.7);
  for (std::size_t k = 1; k <= 4; ++k) EXPECT_NEAR(average_accuracy(c, k), 0.7, 1e-15);
  for (std::size_t k = 2; k <= 4; ++k) EXPECT_NEAR(backward_transfer(c, k), 0.0, 1e-15);
  auto up = labelled(2);
  up.set(0, 0, 0.3);
  up.set(1, 0, 0.6);
  up.set(1, 1, 0.5);
  EXPECT_LT(forgetting(up, 2), 0.0);
}

TEST(Metrics, RandomMatricesMatchOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    auto m = labelled(6);
    Oracle o;
    for (int k = 1; k <= 6; ++k)
      for (int j = 1; j <= k; ++j) {
        const double v = rng.uniform();
        m.set(static_cast<std::size_t>(k - 1), static_cast<std::size_t>(j - 1), v);
        o.a[k][j] = v;
      }
    for (int k = 1; k <= 6; ++k) {
      EXPECT_NEAR(average_accuracy(m, static_cast<std::size_t>(k)), o.A(k), 1e-12);
      if (k >= 2) {
        EXPECT_NEAR(forgetting(m, static_cast<std::size_t>(k)), o.F(k), 1e-12);
        EXPECT_NEAR(backward_transfer(m, static_cast<std::size_t>(k)), o.B(k), 1e-12);
        EXPECT_LE(std::abs(forgetting(m, static_cast<std::size_t>(k))), 1.0);
      }
    }
  }
}

TEST(Metrics, RelabelingDoesNotChangeMetrics) {
  Rng rng(5);
  auto a = labelled(5);
  AccuracyMatrix b({"v", "w", "x", "y", "z"});
  for (std::size_t k = 0; k < 5; ++k)
    for (std::size_t j = 0; j <= k; ++j) {
      const double v = rng.uniform();
      a.set(k, j, v);
      b.set(k, j, v);
    }
  const auto ra = metric_report(a), rb = metric_report(b);
  EXPECT_EQ(ra.A, rb.A);
  EXPECT_EQ(ra.F, rb.F);
  EXPECT_EQ(ra.B, rb.B);
}

TEST(AccuracyMatrixCsv, RoundTripsExactly) {
  Rng rng(8);
  auto m = labelled(6);
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t j = 0; j <= k; ++j) m.set(k, j, rng.uniform());
  const auto csv = m.to_csv();
  const auto back = AccuracyMatrix::from_csv(csv);
  EXPECT_EQ(back.to_csv(), csv);
  for (std::size_t k = 0; k < 6; ++k)
    for (std::size_t j = 0; j <= k; ++j) EXPECT_EQ(back.at(k, j), m.at(k, j));
  EXPECT_EQ(m.filled_count(), 21u);
  EXPECT_THROW(AccuracyMatrix::from_csv("bad\n"), DataError);
  EXPECT_THROW(AccuracyMatrix::from_csv(""), DataError);
}

TEST(MetricReport, FinalValuesAndJson) {
  auto m = labelled(1);
  m.set(0, 0, 0.4);
  const auto r = metric_report(m);
  EXPECT_EQ(r.final_A, 0.4);
  EXPECT_FALSE(r.final_F.has_value());
  const json j = to_json(r);
  EXPECT_TRUE(j.at("final_F").is_null());
  EXPECT_EQ(j.at("A").size(), 1u);
}

}  // namespace
}  // namespace sgp
