#pragma once

// Rank-based evaluation metrics over per-sample uncertainty scores.
//
// Tie policy: wherever samples are ordered by uncertainty, equal scores keep
// ascending sample-index order.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sphereflow {

struct EvalTable {
  std::vector<double> uncertainty;
  std::vector<std::uint8_t> correct;  // selective classification; 1 = correct
  std::vector<std::uint8_t> ood;      // detection; 1 = out-of-distribution
  std::vector<std::size_t> ids;       // optional; defaults to row index

  std::size_t size() const { return uncertainty.size(); }
  std::size_t id(std::size_t row) const { return ids.empty() ? row : ids[row]; }
  /// Aligned arrays, finite scores.
  void validate() const;
};

/// {0, 0.05, ..., 0.90}.
std::vector<double> default_rejection_grid();

/// ceil(fraction * n), robust to fractions like 0.15 that are inexact in binary.
std::size_t fraction_count(double fraction, std::size_t n);

struct RejectionCurve {
  std::vector<double> fractions;  // strictly increasing
  std::vector<double> accuracy;   // in [0, 1]
};

RejectionCurve rejection_curve(const EvalTable& table, const std::vector<double>& grid = default_rejection_grid());
double acc_at_rejection(const EvalTable& table, double fraction = 0.90);

struct Correlation {
  double rho = 0.0;
  bool degenerate = false;  // a constant input; rho reported as 0
};

/// Spearman correlation with average ranks for ties.
Correlation spearman(std::span<const double> x, std::span<const double> y);
/// Spearman between the curve's fractions and accuracies.
Correlation spearman_s(const RejectionCurve& curve);

struct CurvePoint {
  double x = 0.0;
  double y = 0.0;
};

struct RocPr {
  std::vector<CurvePoint> roc;  // (false positive rate, true positive rate)
  double auroc = 0.0;           // trapezoidal
  std::vector<CurvePoint> pr;   // (recall, precision), one point per distinct threshold
  double aupr = 0.0;            // step-wise average precision
};

/// OOD samples are the positive class; higher uncertainty predicts OOD.
RocPr roc_pr(const EvalTable& table);

/// Row indices of the k highest-uncertainty samples, highest first.
std::vector<std::size_t> curation_rank(std::span<const double> uncertainty, std::size_t k);

/// "fraction,accuracy" CSV with a header line.
std::string rejection_csv(const RejectionCurve& curve);
/// "x,y" CSV with the given header.
std::string curve_csv(const std::vector<CurvePoint>& points, const std::string& header);

}  // namespace sphereflow
