#include "sphereflow/likelihood.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "sphereflow/bytes.hpp"
#include "sphereflow/error.hpp"
#include "sphereflow/kvconfig.hpp"
#include "sphereflow/parallel.hpp"

namespace sphereflow {

namespace {

Eigen::MatrixXd draw_probes(Eigen::Index d, int m, ProbeDistribution law, Rng& rng) {
  Eigen::MatrixXd eps(d, m);
  for (int j = 0; j < m; ++j) {
    for (Eigen::Index i = 0; i < d; ++i) {
      eps(i, j) = law == ProbeDistribution::Gaussian ? rng.normal() : rng.rademacher();
    }
  }
  return eps;
}

double gaussian_log_density(const Vec& z) {
  const double d = static_cast<double>(z.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * z.squaredNorm();
}

}  // namespace

ProbeDistribution parse_probe_distribution(std::string_view text) {
  if (text == "gaussian") return ProbeDistribution::Gaussian;
  if (text == "rademacher") return ProbeDistribution::Rademacher;
  fail(ErrorKind::InvalidArgument, "probe distribution must be gaussian or rademacher, got '" + std::string(text) + "'");
}

DivergenceMode parse_divergence_mode(std::string_view text) {
  if (text == "hutchinson") return DivergenceMode::Hutchinson;
  if (text == "exact") return DivergenceMode::Exact;
  fail(ErrorKind::InvalidArgument, "divergence mode must be hutchinson or exact, got '" + std::string(text) + "'");
}

std::string_view probe_distribution_name(ProbeDistribution p) {
  return p == ProbeDistribution::Gaussian ? "gaussian" : "rademacher";
}

std::string_view divergence_mode_name(DivergenceMode m) {
  return m == DivergenceMode::Hutchinson ? "hutchinson" : "exact";
}

void IntegratorConfig::validate() const {
  if (steps < 1) fail(ErrorKind::InvalidArgument, "steps must be >= 1");
  if (probes < 1) fail(ErrorKind::InvalidArgument, "probes must be >= 1");
}

FlowEval evaluate_flow(const FieldParamsD& params, const Vec& z, double t, Modality c,
                       const IntegratorConfig& icfg, Rng& rng) {
  const Eigen::Index d = z.size();
  if (d != params.shape.dim) fail(ErrorKind::ShapeMismatch, "point dimension does not match the network");
  const bool sphere = projects_output(params.geometry);

  Eigen::MatrixXd probes;
  if (icfg.mode == DivergenceMode::Exact) {
    probes = Eigen::MatrixXd::Identity(d, d);
  } else {
    probes = draw_probes(d, icfg.probes, icfg.probe, rng);
  }
  if (sphere) probes -= z * (z.transpose() * probes);

  const FieldJet jet = field_jet(params, z, t, c, probes);
  double acc = 0.0;
  for (Eigen::Index j = 0; j < probes.cols(); ++j) acc += probes.col(j).dot(jet.vjps.col(j));

  FlowEval out;
  out.velocity = jet.value;
  out.divergence = icfg.mode == DivergenceMode::Exact ? acc : acc / static_cast<double>(probes.cols());
  if (!std::isfinite(out.divergence)) fail(ErrorKind::Numeric, "non-finite divergence estimate");
  return out;
}

double divergence_estimate(const FieldParamsD& params, const SpherePoint& z, double t, Modality c,
                           const IntegratorConfig& icfg, Rng& rng) {
  return evaluate_flow(params, z.coords(), t, c, icfg, rng).divergence;
}

ScoreRecord reverse_integrate(const FieldParamsD& params, const SpherePoint& z1, Modality c,
                              const IntegratorConfig& icfg, Rng& rng) {
  icfg.validate();
  const bool sphere = projects_output(params.geometry);
  const double dt = 1.0 / icfg.steps;
  Vec z = z1.coords();
  double acc = 0.0;
  for (int k = icfg.steps; k >= 1; --k) {
    const double t = static_cast<double>(k) / icfg.steps;
    FlowEval ev;
    try {
      ev = evaluate_flow(params, z, t, c, icfg, rng);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::Numeric) throw;
      fail(ErrorKind::Numeric, "integration step " + std::to_string(k) + ": " + e.what());
    }
    acc += ev.divergence * dt;
    z -= ev.velocity * dt;
    if (sphere) {
      const double n = z.norm();
      if (!(n > 0.0) || !std::isfinite(n)) {
        fail(ErrorKind::Numeric, "integration step " + std::to_string(k) + ": state left the sphere");
      }
      z /= n;
    } else if (!z.allFinite()) {
      fail(ErrorKind::Numeric, "integration step " + std::to_string(k) + ": non-finite state");
    }
  }

  ScoreRecord rec;
  rec.divergence_integral = acc;
  switch (params.geometry) {
    case Geometry::EuclideanGaussianBase:
      rec.base_log_density = gaussian_log_density(z);
      break;
    case Geometry::Riemannian:
    case Geometry::EuclideanUniformBase:
      rec.base_log_density = log_uniform_density(z.size());
      break;
  }
  rec.log_density = rec.base_log_density - acc;
  rec.uncertainty = -rec.log_density;
  rec.terminal_point = z.normalized();
  rec.steps_used = icfg.steps;
  rec.probes_per_step = icfg.mode == DivergenceMode::Exact ? static_cast<int>(z.size()) : icfg.probes;
  if (!std::isfinite(rec.log_density)) fail(ErrorKind::Numeric, "non-finite log-density");
  return rec;
}

std::vector<ScoreRecord> score_batch(const FieldParamsD& params, const std::vector<ScoreInput>& points,
                                     const IntegratorConfig& icfg, int threads) {
  icfg.validate();
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (points[i].point.dim() != params.shape.dim) {
      fail(ErrorKind::ShapeMismatch, "point " + std::to_string(i) + " has d=" + std::to_string(points[i].point.dim()) +
                                         ", network expects d=" + std::to_string(params.shape.dim));
    }
  }
  std::vector<ScoreRecord> out(points.size());
  std::vector<std::string> errors(points.size());
  std::vector<ErrorKind> kinds(points.size(), ErrorKind::Internal);
  parallel_for(points.size(), threads, [&](std::size_t i) {
    try {
      Rng rng(mix_seed(icfg.seed, i));
      out[i] = reverse_integrate(params, points[i].point, points[i].modality, icfg, rng);
    } catch (const Error& e) {
      errors[i] = e.what();
      kinds[i] = e.kind();
    }
  });
  std::size_t failed = 0;
  std::string summary;
  ErrorKind kind = ErrorKind::Internal;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (errors[i].empty()) continue;
    if (failed == 0) kind = kinds[i];
    if (failed < 5) summary += (failed ? "; " : "") + ("point " + std::to_string(i) + ": " + errors[i]);
    ++failed;
  }
  if (failed > 0) {
    fail(kind, std::to_string(failed) + " of " + std::to_string(points.size()) + " points failed (" + summary + ")");
  }
  return out;
}

void write_scores(const std::filesystem::path& path, const std::vector<ScoreInput>& points,
                  const std::vector<ScoreRecord>& records) {
  if (points.size() != records.size()) fail(ErrorKind::ShapeMismatch, "score rows do not match inputs");
  std::string text = "index\tmodality\tuncertainty\tlog_density\tsteps\tprobes\n";
  char buf[128];
  for (std::size_t i = 0; i < records.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu\t%s\t%.17g\t%.17g\t%d\t%d\n", i,
                  std::string(modality_name(points[i].modality)).c_str(), records[i].uncertainty,
                  records[i].log_density, records[i].steps_used, records[i].probes_per_step);
    text += buf;
  }
  write_file_text(path, text);
}

std::vector<ScoreRow> read_scores(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::istringstream in(std::string(bytes.begin(), bytes.end()));
  std::string line;
  const std::string where = path.string();
  if (!std::getline(in, line) || line != "index\tmodality\tuncertainty\tlog_density\tsteps\tprobes") {
    fail(ErrorKind::BadFormat, where + ": missing score header");
  }
  std::vector<ScoreRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      f.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    const std::string at = where + ":" + std::to_string(lineno);
    if (f.size() != 6) fail(ErrorKind::BadFormat, at + ": expected 6 columns");
    ScoreRow r;
    r.index = static_cast<std::size_t>(parse_int(f[0], at + " index"));
    r.modality = parse_modality(f[1]);
    r.uncertainty = parse_double(f[2], at + " uncertainty");
    r.log_density = parse_double(f[3], at + " log_density");
    r.steps = static_cast<int>(parse_int(f[4], at + " steps"));
    r.probes = static_cast<int>(parse_int(f[5], at + " probes"));
    rows.push_back(r);
  }
  return rows;
}

}  // namespace sphereflow
