#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "fmue/errors.hpp"
#include "fmue/evidential.hpp"
#include "fmue/special_functions.hpp"

using namespace fmue;

TEST_CASE("softplus evidence") {
  auto e = evidence_from_logits(std::vector<double>{0, 0, 0});
  for (double v : e.values()) CHECK(v == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  auto sat = evidence_from_logits(std::vector<double>{-100, -100});
  CHECK(sat[0] < 1e-40);
  CHECK(sat[1] < 1e-40);
  CHECK(sat[0] > 0.0);

  // ln(1 + e^x) at 40 digits.
  auto mixed = evidence_from_logits(std::vector<double>{3.7, -1.2, 0.4});
  CHECK(std::abs(mixed[0] - 3.7244228459337791595) < 1e-14);
  CHECK(std::abs(mixed[1] - 0.26328246733803118919) < 1e-15);
  CHECK(std::abs(mixed[2] - 0.91301525239995262367) < 1e-15);

  CHECK(evidence_from_logits(std::vector<double>{800.0, 0.0})[0] == doctest::Approx(800.0));
  CHECK_THROWS_AS(evidence_from_logits(std::vector<double>{NAN, 0.0}), DomainError);
  CHECK_THROWS_AS(evidence_from_logits(std::vector<double>{INFINITY, 0.0}), DomainError);
}

TEST_CASE("evidence vector rejects bad input") {
  CHECK_THROWS_AS(EvidenceVector({1.0}), DomainError);
  CHECK_THROWS_AS(EvidenceVector({1.0, -0.1}), DomainError);
}

TEST_CASE("opinion arithmetic") {
  auto vac = opinion_from_evidence(EvidenceVector({0, 0}));
  CHECK(vac.uncertainty == 1.0);
  CHECK(vac.strength == 2.0);
  CHECK(vac.belief[0] == 0.0);

  auto op = opinion_from_evidence(EvidenceVector({98, 0}));
  CHECK(op.alpha[0] == 99.0);
  CHECK(op.alpha[1] == 1.0);
  CHECK(op.strength == 100.0);
  CHECK(op.belief[0] == doctest::Approx(0.98).epsilon(1e-15));
  CHECK(op.uncertainty == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(op.predicted_class() == 0);
  CHECK(opinion_from_evidence(EvidenceVector({2, 2})).predicted_class() == 0);
}

TEST_CASE("opinions normalise and respond monotonically") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> kdist(2, 11);
  std::exponential_distribution<double> edist(0.2);
  for (int trial = 0; trial < 2000; ++trial) {
    const int k = kdist(rng);
    std::vector<double> e(k);
    for (double& v : e) v = edist(rng);
    auto op = opinion_from_evidence(EvidenceVector(e));
    double sum = op.uncertainty;
    for (double b : op.belief) sum += b;
    REQUIRE(std::abs(sum - 1.0) <= 1e-9);

    const int j = trial % k;
    e[j] += 0.5;
    auto up = opinion_from_evidence(EvidenceVector(e));
    REQUIRE(up.uncertainty < op.uncertainty);
    REQUIRE(up.belief[j] > op.belief[j]);
  }
}

TEST_CASE("special functions") {
  // digamma recurrence and known constants
  const double euler = 0.57721566490153286061;
  CHECK(std::abs(special::digamma(1.0) + euler) < 1e-13);
  CHECK(std::abs(special::digamma(2.0) - special::digamma(1.0) - 1.0) < 1e-13);
  CHECK(std::abs(special::digamma(0.5) - (-euler - 2 * std::log(2.0))) < 1e-13);
  for (double x : {0.3, 1.0, 2.5, 7.0, 33.3, 1e3, 1e6}) {
    CHECK(std::abs(special::log_gamma(x) - std::lgamma(x)) < 1e-12 * std::max(1.0, std::abs(std::lgamma(x))));
    CHECK(std::abs(special::digamma(x + 1) - special::digamma(x) - 1.0 / x) < 1e-12 * std::max(1.0, 1.0 / x));
  }
  CHECK(std::abs(special::trigamma(1.0) - M_PI * M_PI / 6.0) < 1e-12);
}

TEST_CASE("KL to the uniform Dirichlet") {
  CHECK(kl_dirichlet_uniform(std::vector<double>{1, 1, 1, 1}) == 0.0);
  CHECK(std::abs(kl_dirichlet_uniform(std::vector<double>{2, 1}) - (std::log(2.0) - 0.5)) < 1e-9);
  // Double quadrature of the KL integral over the 2-simplex.
  CHECK(std::abs(kl_dirichlet_uniform(std::vector<double>{5, 5, 5}) - 0.9451645923869881) < 1e-6);
  CHECK_THROWS_AS(kl_dirichlet_uniform(std::vector<double>{0.5, 1}), DomainError);

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> a(1.0, 30.0);
  for (int i = 0; i < 500; ++i) {
    std::vector<double> alpha(2 + i % 9);
    for (double& v : alpha) v = a(rng);
    REQUIRE(kl_dirichlet_uniform(alpha) > 0.0);
  }
}

TEST_CASE("evidential loss values") {
  LossConfig cfg;
  auto l0 = edl_loss(EvidenceVector({0, 0}), std::vector<double>{1, 0}, 0, cfg);
  CHECK(std::abs(l0.expected_ce - 1.0) < 1e-9);
  CHECK(l0.lambda == 0.0);
  CHECK(l0.kl_term == 0.0);
  CHECK(std::abs(l0.total - 1.0) < 1e-9);

  // psi(8) - psi(5) and KL of (1, 2, 1), both at 40 digits.
  auto l = edl_loss(EvidenceVector({4, 1, 0}), std::size_t{0}, cfg.anneal_horizon, cfg);
  CHECK(l.lambda == 1.0);
  CHECK(std::abs(l.expected_ce - 0.50952380952380952381) < 1e-12);
  CHECK(std::abs(l.kl_term - 0.26527895533477635806) < 1e-12);
  CHECK(std::abs(l.total - 0.77480276485858588187) < 1e-12);

  CHECK(anneal_lambda(5, cfg) == 0.5);
  CHECK(anneal_lambda(25, cfg) == 1.0);
  CHECK_THROWS_AS(edl_loss(EvidenceVector({1, 1}), std::vector<double>{1, 1}, 0, cfg), DomainError);
  CHECK_THROWS_AS(edl_loss(EvidenceVector({1, 1}), std::vector<double>{0.5, 0.5}, 0, cfg), DomainError);
}

TEST_CASE("expected cross-entropy falls with true-class evidence") {
  LossConfig cfg;
  double prev = std::numeric_limits<double>::infinity();
  for (double e = 0.0; e < 50.0; e += 0.7) {
    const double ce = edl_loss(EvidenceVector({e, 2.0, 1.0}), std::size_t{0}, 0, cfg).expected_ce;
    REQUIRE(ce < prev);
    prev = ce;
  }
}

TEST_CASE("loss gradient matches central differences") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> z(-4.0, 4.0);
  LossConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const int k = 2 + trial % 10;
    std::vector<double> logits(k);
    for (double& v : logits) v = z(rng);
    const std::size_t y = trial % k;
    const int epoch = trial % 15;
    auto g = edl_loss_with_gradient(logits, y, epoch, cfg);
    auto total = [&](const std::vector<double>& x) {
      return edl_loss(evidence_from_logits(x), y, epoch, cfg).total;
    };
    for (int i = 0; i < k; ++i) {
      auto up = logits, dn = logits;
      up[i] += 1e-5;
      dn[i] -= 1e-5;
      const double fd = (total(up) - total(dn)) / 2e-5;
      const double err = std::abs(fd - g.d_logits[i]) / std::max(1e-6, std::max(std::abs(fd), std::abs(g.d_logits[i])));
      REQUIRE(err <= 1e-4);
    }
  }
}
