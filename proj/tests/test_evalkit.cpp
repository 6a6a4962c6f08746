#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sphereflow/error.hpp"
#include "sphereflow/evalkit.hpp"
#include "sphereflow/rng.hpp"

using namespace sphereflow;

namespace {

EvalTable selective(std::vector<double> u, std::vector<std::uint8_t> correct) {
  EvalTable t;
  t.uncertainty = std::move(u);
  t.correct = std::move(correct);
  return t;
}

EvalTable detection(std::vector<double> u, std::vector<std::uint8_t> ood) {
  EvalTable t;
  t.uncertainty = std::move(u);
  t.ood = std::move(ood);
  return t;
}

double base_accuracy(const EvalTable& t) {
  return std::accumulate(t.correct.begin(), t.correct.end(), 0.0) / static_cast<double>(t.size());
}

// Pairs (pos, neg) with pos scoring higher, ties counted half.
double mann_whitney(const EvalTable& t) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!t.ood[i]) continue;
    for (std::size_t j = 0; j < t.size(); ++j) {
      if (t.ood[j]) continue;
      pairs += 1.0;
      if (t.uncertainty[i] > t.uncertainty[j]) wins += 1.0;
      else if (t.uncertainty[i] == t.uncertainty[j]) wins += 0.5;
    }
  }
  return wins / pairs;
}

}  // namespace

TEST_CASE("default grid and fraction counts") {
  const auto grid = default_rejection_grid();
  REQUIRE(grid.size() == 19);
  CHECK(grid.front() == 0.0);
  CHECK(grid.back() == doctest::Approx(0.9));
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] > grid[i - 1]);
  CHECK(fraction_count(0.05, 1000) == 50);
  CHECK(fraction_count(0.15, 100) == 15);
  CHECK(fraction_count(0.9, 10) == 9);
  CHECK(fraction_count(0.91, 10) == 10);
  CHECK(fraction_count(0.0, 10) == 0);
  CHECK(fraction_count(1.0, 7) == 7);
}

TEST_CASE("all-correct table gives a flat curve") {
  const auto t = selective({0.3, 0.1, 0.9, 0.5, 0.2, 0.8, 0.7, 0.4, 0.6, 0.0}, std::vector<std::uint8_t>(10, 1));
  const auto curve = rejection_curve(t);
  for (double a : curve.accuracy) CHECK(a == 1.0);
  const auto s = spearman_s(curve);
  CHECK(s.degenerate);
  CHECK(s.rho == 0.0);
}

TEST_CASE("perfect oracle reaches 1.0 at half rejection and is monotone") {
  Rng rng(1);
  std::vector<double> u;
  std::vector<std::uint8_t> c;
  for (int i = 0; i < 200; ++i) {
    const std::uint8_t bit = i % 2;
    c.push_back(bit);
    u.push_back(1.0 - bit);
  }
  const auto t = selective(u, c);
  const auto curve = rejection_curve(t);
  CHECK(curve.accuracy[0] == doctest::Approx(0.5));
  for (std::size_t i = 0; i < curve.fractions.size(); ++i) {
    if (i > 0) CHECK(curve.accuracy[i] >= curve.accuracy[i - 1]);
    if (curve.fractions[i] >= 0.5 - 1e-12) CHECK(curve.accuracy[i] == 1.0);
  }
  CHECK(acc_at_rejection(t) == 1.0);
  CHECK(acc_at_rejection(t, 0.0) == doctest::Approx(base_accuracy(t)));
}

TEST_CASE("r=0 is the plain accuracy") {
  const auto t = selective({0.1, 0.2, 0.3, 0.4}, {1, 0, 1, 1});
  CHECK(rejection_curve(t, {0.0, 0.25}).accuracy[0] == doctest::Approx(0.75));
}

TEST_CASE("ties drop later sample indices first") {
  // Equal scores keep index order, so the highest-uncertainty prefix is rows 0, 1, ...
  const auto t = selective({1.0, 1.0, 1.0, 1.0}, {0, 1, 1, 1});
  CHECK(rejection_curve(t, {0.25}).accuracy[0] == 1.0);
  CHECK(curation_rank(t.uncertainty, 2) == std::vector<std::size_t>{0, 1});
}

TEST_CASE("random uncertainty leaves accuracy unchanged") {
  Rng rng(2);
  std::vector<double> u;
  std::vector<std::uint8_t> c;
  for (int i = 0; i < 100000; ++i) {
    u.push_back(rng.uniform());
    c.push_back(rng.bernoulli(0.7));
  }
  const auto t = selective(u, c);
  CHECK(std::abs(acc_at_rejection(t) - 0.7) <= 0.01);
}

TEST_CASE("adversarial ordering never beats the base accuracy") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 10 + trial;
    std::vector<double> u;
    std::vector<std::uint8_t> c;
    for (int i = 0; i < n; ++i) {
      c.push_back(rng.bernoulli(0.6));
      u.push_back(c.back());
    }
    if (std::find(c.begin(), c.end(), 1) == c.end()) continue;
    const auto t = selective(u, c);
    CHECK(acc_at_rejection(t) <= base_accuracy(t) + 1e-12);
  }
}

TEST_CASE("rejection errors") {
  CHECK_THROWS_AS(rejection_curve(selective({0.1}, {1}), {0.0, 1.0}), Error);
  CHECK_THROWS_AS(rejection_curve(selective({0.1, 0.2}, {1})), Error);
  CHECK_THROWS_AS(rejection_curve(selective({0.1, NAN}, {1, 1})), Error);
  EvalTable no_bits;
  no_bits.uncertainty = {0.1, 0.2};
  CHECK_THROWS_AS(rejection_curve(no_bits), Error);
  CHECK_THROWS_AS(rejection_curve(selective({0.1, 0.2}, {1, 0}), {0.5, 0.2}), Error);
}

TEST_CASE("spearman fixed cases") {
  const std::vector<double> f{0.0, 0.45, 0.9};
  CHECK(spearman(f, std::vector<double>{0.1, 0.2, 0.3}).rho == doctest::Approx(1.0));
  CHECK(spearman(f, std::vector<double>{0.3, 0.2, 0.1}).rho == doctest::Approx(-1.0));
  CHECK(spearman(f, std::vector<double>{0.5, 0.7, 0.6}).rho == doctest::Approx(0.5));
  // Ranks (1, 2.5, 2.5, 4) against (1, 2, 3, 4).
  const double rho = spearman(std::vector<double>{1, 2, 3, 4}, std::vector<double>{1, 2, 2, 3}).rho;
  CHECK(rho == doctest::Approx(4.5 / std::sqrt(5.0 * 4.5)));
  const auto flat = spearman(f, std::vector<double>{0.4, 0.4, 0.4});
  CHECK(flat.degenerate);
  CHECK(flat.rho == 0.0);
  CHECK_THROWS_AS(spearman(std::vector<double>{1, 2}, std::vector<double>{1, 2}), Error);

  RejectionCurve curve;
  curve.fractions = f;
  curve.accuracy = {0.5, 0.7, 0.6};
  CHECK(spearman_s(curve).rho == doctest::Approx(0.5));
}

TEST_CASE("reversing the accuracies negates spearman") {
  Rng rng(4);
  for (int trial = 0; trial < 100; ++trial) {
    RejectionCurve curve;
    curve.fractions = default_rejection_grid();
    for (std::size_t i = 0; i < curve.fractions.size(); ++i) curve.accuracy.push_back(rng.uniform());
    const double rho = spearman_s(curve).rho;
    std::reverse(curve.accuracy.begin(), curve.accuracy.end());
    CHECK(spearman_s(curve).rho == doctest::Approx(-rho).epsilon(1e-12));
    CHECK(std::abs(rho) <= 1.0);
  }
}

TEST_CASE("roc and pr fixed cases") {
  const auto sep = roc_pr(detection({0.1, 0.2, 0.3, 0.8, 0.9}, {0, 0, 0, 1, 1}));
  CHECK(sep.auroc == doctest::Approx(1.0));
  CHECK(sep.aupr == doctest::Approx(1.0));
  REQUIRE(!sep.roc.empty());
  CHECK(sep.roc.front().x == 0.0);
  CHECK(sep.roc.front().y == 0.0);
  CHECK(sep.roc.back().x == 1.0);
  CHECK(sep.roc.back().y == 1.0);

  const auto tied = roc_pr(detection({2.0, 2.0, 2.0, 2.0}, {0, 1, 0, 1}));
  CHECK(tied.auroc == doctest::Approx(0.5));
  CHECK(tied.aupr == doctest::Approx(0.5));

  const auto hand = roc_pr(detection({1, 2, 3, 4, 5, 6}, {0, 0, 1, 0, 1, 1}));
  CHECK(hand.auroc == doctest::Approx(8.0 / 9.0));
  // Positives at ranks 1, 2, 4 from the top: AP = (1 + 1 + 3/4) / 3.
  CHECK(hand.aupr == doctest::Approx(11.0 / 12.0));

  CHECK_THROWS_AS(roc_pr(detection({1, 2}, {1, 1})), Error);
  CHECK_THROWS_AS(roc_pr(detection({1, 2}, {0, 0})), Error);
}

TEST_CASE("auroc equals the normalized Mann-Whitney statistic") {
  Rng rng(5);
  int checked = 0;
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 2 + static_cast<int>(rng.index(11));
    std::vector<double> u;
    std::vector<std::uint8_t> ood;
    for (int i = 0; i < n; ++i) {
      u.push_back(static_cast<double>(rng.index(5)));  // coarse scores force ties
      ood.push_back(rng.bernoulli(0.5));
    }
    const int pos = static_cast<int>(std::count(ood.begin(), ood.end(), 1));
    if (pos == 0 || pos == n) continue;
    const auto t = detection(u, ood);
    CHECK(roc_pr(t).auroc == doctest::Approx(mann_whitney(t)).epsilon(1e-12));
    ++checked;
  }
  CHECK(checked > 300);
}

TEST_CASE("metrics are invariant under increasing transforms") {
  Rng rng(6);
  EvalTable t;
  for (int i = 0; i < 300; ++i) {
    t.uncertainty.push_back(rng.normal());
    t.correct.push_back(rng.bernoulli(t.uncertainty.back() < 0 ? 0.8 : 0.4));
    t.ood.push_back(rng.bernoulli(t.uncertainty.back() > 0.5 ? 0.7 : 0.2));
  }
  EvalTable e = t;
  for (auto& u : e.uncertainty) u = std::exp(u);
  const auto a = rejection_curve(t), b = rejection_curve(e);
  CHECK(a.accuracy == b.accuracy);
  CHECK(spearman_s(a).rho == spearman_s(b).rho);
  const auto ra = roc_pr(t), rb = roc_pr(e);
  CHECK(ra.auroc == rb.auroc);
  CHECK(ra.aupr == rb.aupr);
  CHECK(curation_rank(t.uncertainty, 30) == curation_rank(e.uncertainty, 30));
}

TEST_CASE("curation ranking") {
  const std::vector<double> u{0.2, 0.9, 0.5, 0.9, 0.1};
  CHECK(curation_rank(u, 5) == std::vector<std::size_t>{1, 3, 2, 0, 4});
  CHECK(curation_rank(u, 0).empty());
  CHECK(curation_rank(u, 2) == std::vector<std::size_t>{1, 3});
  CHECK_THROWS_AS(curation_rank(u, 6), Error);
}

TEST_CASE("csv rendering") {
  RejectionCurve curve;
  curve.fractions = {0.0, 0.5};
  curve.accuracy = {0.75, 1.0};
  const std::string csv = rejection_csv(curve);
  CHECK(csv.rfind("fraction,accuracy\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
  const std::string roc = curve_csv({{0.0, 0.0}, {1.0, 1.0}}, "fpr,tpr");
  CHECK(roc.rfind("fpr,tpr\n", 0) == 0);
}
