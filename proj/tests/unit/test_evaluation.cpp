#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "fmue/errors.hpp"
#include "fmue/evaluation.hpp"
#include "oracles.hpp"

using namespace fmue;

TEST_CASE("metrics on the three-sample example") {
  std::vector<int> pred{0, 0, 1}, lab{0, 1, 1};
  std::vector<std::vector<double>> scores{{0.9, 0.1}, {0.6, 0.4}, {0.2, 0.8}};
  auto r = compute_metrics(pred, lab, scores, 2);
  CHECK(r.per_class[0].precision == 0.5);
  CHECK(r.per_class[0].sensitivity == 1.0);
  CHECK(r.per_class[0].f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.per_class[1].precision == 1.0);
  CHECK(r.per_class[1].sensitivity == 0.5);
  CHECK(r.per_class[1].f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.accuracy == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(r.confusion == std::vector<std::vector<std::size_t>>{{1, 0}, {1, 1}});
  // class 0 positives: sample 0 (0.9) against negatives 0.6, 0.2
  CHECK(*r.per_class[0].auc == 1.0);
  CHECK(*r.per_class[1].auc == 1.0);
}

TEST_CASE("perfect predictions") {
  std::vector<int> y{0, 1, 2, 2, 1};
  std::vector<std::vector<double>> s;
  for (int v : y) {
    std::vector<double> row(3, 0.0);
    row[v] = 1.0;
    s.push_back(row);
  }
  auto r = compute_metrics(y, y, s, 3);
  CHECK(r.accuracy == 1.0);
  CHECK(r.macro_f1 == 1.0);
  CHECK(*r.macro_auc == 1.0);
  for (int k = 0; k < 3; ++k)
    for (int j = 0; j < 3; ++j) CHECK((r.confusion[k][j] > 0) == (k == j));
}

TEST_CASE("undefined precision is flagged and zero") {
  std::vector<int> pred{0, 0}, lab{0, 1};
  auto r = compute_metrics(pred, lab, {{1, 0}, {1, 0}}, 2);
  CHECK(r.per_class[1].precision == 0.0);
  CHECK(r.per_class[1].precision_undefined);
  CHECK_THROWS_AS(compute_metrics(std::vector<int>{0}, lab, {{1, 0}}, 2), DomainError);
}

TEST_CASE("random metrics against oracles") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 20; ++trial) {
    const int k = 2 + trial % 4;
    std::vector<int> pred(200), lab(200);
    std::vector<std::vector<double>> s(200, std::vector<double>(k));
    for (int i = 0; i < 200; ++i) {
      lab[i] = static_cast<int>(u(rng) * k);
      pred[i] = u(rng) < 0.7 ? lab[i] : static_cast<int>(u(rng) * k);
      // Rounded scores make ties.
      for (double& v : s[i]) v = std::round(u(rng) * 20) / 20;
    }
    auto r = compute_metrics(pred, lab, s, k);
    std::size_t diag = 0;
    double f1 = 0.0;
    for (int c = 0; c < k; ++c) {
      diag += r.confusion[c][c];
      const std::size_t row = std::accumulate(r.confusion[c].begin(), r.confusion[c].end(), std::size_t{0});
      REQUIRE(row == r.per_class[c].support);
      f1 += r.per_class[c].f1;

      std::vector<double> col(200);
      std::vector<bool> pos(200);
      for (int i = 0; i < 200; ++i) {
        col[i] = s[i][c];
        pos[i] = lab[i] == c;
      }
      REQUIRE(std::abs(*r.per_class[c].auc - oracle::pairwise_auc(col, pos)) <= 1e-9);
      // strictly monotone transform
      std::vector<double> t(200);
      for (int i = 0; i < 200; ++i) t[i] = std::exp(3 * col[i]) - 7;
      REQUIRE(*rank_auc(t, pos) == *rank_auc(col, pos));
    }
    REQUIRE(r.accuracy == static_cast<double>(diag) / 200);
    REQUIRE(std::abs(r.macro_f1 - f1 / k) <= 1e-12);
  }
  CHECK_FALSE(rank_auc(std::vector<double>{0.1, 0.2}, {true, true}).has_value());
}

TEST_CASE("coverage curve") {
  auto all = coverage_curve(std::vector<double>{0.3, 0.2, 0.1, 0.4}, {true, true, true, true});
  CHECK(all.auc == 1.0);
  for (auto& p : all.points) CHECK(p.accuracy == 1.0);
  std::vector<double> forty(40);
  for (int i = 0; i < 40; ++i) forty[i] = 0.2 + 0.01 * i;
  CHECK(coverage_curve(forty, std::vector<bool>(40, true)).auc == 1.0);

  auto c = coverage_curve(std::vector<double>{0.9, 0.5, 0.1}, {false, true, true});
  REQUIRE(c.points.size() >= 2);
  CHECK(c.points[0].retained_fraction == 1.0);
  CHECK(c.points[0].accuracy == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(c.points[1].retained_fraction == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(c.points[1].accuracy == 1.0);
  // Prefix oracle: points at 1, 2/3, 1/3 with accuracies 2/3, 1, 1.
  const double area = (1.0 / 3) * (2.0 / 3 + 1) / 2 + (1.0 / 3) * 1.0;
  CHECK(c.auc == doctest::Approx(area / (2.0 / 3)).epsilon(1e-12));

  for (std::size_t i = 1; i < c.points.size(); ++i) CHECK(c.points[i].retained_fraction < c.points[i - 1].retained_fraction);
  CHECK_THROWS_AS(coverage_curve(std::vector<double>{}, {}), DomainError);
}

TEST_CASE("coverage curve without signal stays near base accuracy") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double mean_gap = 0.0;
  for (int t = 0; t < 50; ++t) {
    std::vector<double> unc(400);
    std::vector<bool> ok(400);
    double acc = 0;
    for (int i = 0; i < 400; ++i) {
      unc[i] = u(rng);
      ok[i] = u(rng) < 0.8;
      acc += ok[i];
    }
    acc /= 400;
    auto c = coverage_curve(unc, ok);
    CHECK(c.points[0].accuracy == acc);
    mean_gap += (c.auc - acc) / 50;
  }
  CHECK(std::abs(mean_gap) < 0.02);
}

TEST_CASE("ood detection rate") {
  std::vector<double> u{0.2, 0.6, 0.9};
  CHECK(ood_detection_rate(u, 0.5).detection_rate == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(ood_detection_rate(u, 0.95).detection_rate == 0.0);
  CHECK(ood_detection_rate(u, 0.2).detection_rate == 1.0);
  auto r = ood_detection_rate(u, 0.5);
  CHECK(r.bin_edges.size() == 51);
  double mass = 0.0;
  for (std::size_t b = 0; b < r.densities.size(); ++b) mass += r.densities[b] * (r.bin_edges[b + 1] - r.bin_edges[b]);
  CHECK(std::abs(mass - 1.0) < 1e-9);
  double prev = 2.0;
  for (double th = 0.05; th <= 1.0; th += 0.05) {
    const double rate = ood_detection_rate(u, th).detection_rate;
    CHECK(rate <= prev);
    prev = rate;
  }
  CHECK_THROWS_AS(ood_detection_rate(std::vector<double>{}, 0.5), DomainError);
  CHECK_THROWS_AS(ood_detection_rate(u, 0.0), DomainError);
}

namespace {
std::pair<std::vector<bool>, std::vector<bool>> table(int a, int b, int c, int d) {
  std::vector<bool> high, wrong;
  auto put = [&](int n, bool h, bool w) {
    for (int i = 0; i < n; ++i) {
      high.push_back(h);
      wrong.push_back(w);
    }
  };
  put(a, true, true);
  put(b, true, false);
  put(c, false, true);
  put(d, false, false);
  return {high, wrong};
}
}  // namespace

TEST_CASE("odds ratio") {
  auto [h, w] = table(10, 10, 5, 100);
  auto r = misclassification_association(h, w);
  CHECK(r.odds_ratio == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(r.ci_low == doctest::Approx(5.701446548128606).epsilon(1e-9));
  CHECK(r.ci_high == doctest::Approx(70.15763396594372).epsilon(1e-9));
  CHECK_FALSE(r.corrected);

  auto [h2, w2] = table(7, 7, 7, 7);
  auto s = misclassification_association(h2, w2);
  CHECK(s.odds_ratio == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.ci_low < 1.0);
  CHECK(s.ci_high > 1.0);

  auto [h3, w3] = table(6, 0, 4, 30);
  auto z = misclassification_association(h3, w3);
  CHECK(z.corrected);
  CHECK(std::isfinite(z.odds_ratio));
  CHECK(z.odds_ratio > 1.0);

  std::vector<bool> same(10, true), mixed{true, false, true, false, true, false, true, false, true, false};
  auto dg = misclassification_association(same, mixed);
  CHECK(dg.degenerate);
  CHECK_FALSE(dg.warning.empty());
}

TEST_CASE("odds ratio equals the logistic slope") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<int> cell(1, 60);
  for (int t = 0; t < 200; ++t) {
    auto [h, w] = table(cell(rng), cell(rng), cell(rng), cell(rng));
    auto r = misclassification_association(h, w);
    auto fit = oracle::logistic_newton(h, w);
    REQUIRE(std::abs(r.log_odds_ratio - fit.slope) <= 1e-6);
    REQUIRE(std::abs(r.odds_ratio - std::exp(fit.slope)) <= 1e-6 * r.odds_ratio);
    REQUIRE(std::abs(r.standard_error - fit.se) <= 1e-6);
  }
}
