#include "sphereflow/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "sphereflow/error.hpp"

namespace sphereflow {

namespace {

// Row indices by descending uncertainty, ties in ascending index order.
std::vector<std::size_t> descending_order(std::span<const double> u) {
  std::vector<std::size_t> order(u.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return u[a] > u[b]; });
  return order;
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

void EvalTable::validate() const {
  const std::size_t n = uncertainty.size();
  if (!correct.empty() && correct.size() != n) {
    fail(ErrorKind::ShapeMismatch, "correctness has " + std::to_string(correct.size()) + " rows, scores have " +
                                       std::to_string(n));
  }
  if (!ood.empty() && ood.size() != n) {
    fail(ErrorKind::ShapeMismatch, "ood flags have " + std::to_string(ood.size()) + " rows, scores have " +
                                       std::to_string(n));
  }
  if (!ids.empty() && ids.size() != n) fail(ErrorKind::ShapeMismatch, "sample ids are not aligned with scores");
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(uncertainty[i])) {
      fail(ErrorKind::InvalidArgument, "non-finite uncertainty at row " + std::to_string(i));
    }
  }
}

std::vector<double> default_rejection_grid() {
  std::vector<double> grid;
  for (int k = 0; k <= 18; ++k) grid.push_back(k / 20.0);
  return grid;
}

std::size_t fraction_count(double fraction, std::size_t n) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) fail(ErrorKind::InvalidArgument, "fraction must lie in [0, 1]");
  const double raw = std::ceil(fraction * static_cast<double>(n) - 1e-9);
  return std::min(n, static_cast<std::size_t>(std::max(0.0, raw)));
}

RejectionCurve rejection_curve(const EvalTable& table, const std::vector<double>& grid) {
  table.validate();
  const std::size_t n = table.size();
  if (table.correct.size() != n || n == 0) fail(ErrorKind::InvalidArgument, "rejection curve needs correctness bits");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0 && grid[i] < 1.0)) fail(ErrorKind::InvalidArgument, "rejection fractions must lie in [0, 1)");
    if (i > 0 && !(grid[i] > grid[i - 1])) {
      fail(ErrorKind::InvalidArgument, "rejection fractions must be strictly increasing");
    }
  }
  const auto order = descending_order(table.uncertainty);
  // suffix[i] = correct count among order[i..n).
  std::vector<std::size_t> suffix(n + 1, 0);
  for (std::size_t i = n; i-- > 0;) suffix[i] = suffix[i + 1] + (table.correct[order[i]] ? 1 : 0);

  RejectionCurve curve;
  curve.fractions = grid;
  for (double r : grid) {
    const std::size_t dropped = fraction_count(r, n);
    const std::size_t kept = n - dropped;
    if (kept == 0) fail(ErrorKind::InvalidArgument, "rejection leaves no samples at fraction " + std::to_string(r));
    curve.accuracy.push_back(static_cast<double>(suffix[dropped]) / static_cast<double>(kept));
  }
  return curve;
}

double acc_at_rejection(const EvalTable& table, double fraction) {
  return rejection_curve(table, {fraction}).accuracy.front();
}

Correlation spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::ShapeMismatch, "spearman inputs differ in length");
  if (x.size() < 3) fail(ErrorKind::InvalidArgument, "spearman needs at least 3 points");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return {0.0, true};
  return {std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0), false};
}

Correlation spearman_s(const RejectionCurve& curve) { return spearman(curve.fractions, curve.accuracy); }

RocPr roc_pr(const EvalTable& table) {
  table.validate();
  const std::size_t n = table.size();
  if (table.ood.size() != n || n == 0) fail(ErrorKind::InvalidArgument, "roc needs ood flags");
  std::size_t pos = 0;
  for (auto f : table.ood) pos += f ? 1 : 0;
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) fail(ErrorKind::InvalidArgument, "roc needs both in- and out-of-distribution samples");

  const auto order = descending_order(table.uncertainty);
  RocPr out;
  out.roc.push_back({0.0, 0.0});
  std::size_t tp = 0, fp = 0;
  double prev_recall = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && table.uncertainty[order[j]] == table.uncertainty[order[i]]) {
      (table.ood[order[j]] ? tp : fp) += 1;
      ++j;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(pos);
    const double fpr = static_cast<double>(fp) / static_cast<double>(neg);
    const CurvePoint last = out.roc.back();
    out.auroc += (fpr - last.x) * (tpr + last.y) * 0.5;
    out.roc.push_back({fpr, tpr});
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    out.pr.push_back({tpr, precision});
    out.aupr += (tpr - prev_recall) * precision;
    prev_recall = tpr;
    i = j;
  }
  return out;
}

std::vector<std::size_t> curation_rank(std::span<const double> uncertainty, std::size_t k) {
  if (k > uncertainty.size()) {
    fail(ErrorKind::InvalidArgument, "requested " + std::to_string(k) + " items from " +
                                         std::to_string(uncertainty.size()) + " scores");
  }
  auto order = descending_order(uncertainty);
  order.resize(k);
  return order;
}

std::string rejection_csv(const RejectionCurve& curve) {
  std::string out = "fraction,accuracy\n";
  char buf[80];
  for (std::size_t i = 0; i < curve.fractions.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", curve.fractions[i], curve.accuracy[i]);
    out += buf;
  }
  return out;
}

std::string curve_csv(const std::vector<CurvePoint>& points, const std::string& header) {
  std::string out = header + "\n";
  char buf[80];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g\n", p.x, p.y);
    out += buf;
  }
  return out;
}

}  // namespace sphereflow
