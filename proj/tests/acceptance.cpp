// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.
//
// Pipeline criteria drive the command surface in-process through cli::run;
// the rest exercise the library directly against independent oracles.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sphereflow/bytes.hpp"
#include "sphereflow/cli.hpp"
#include "sphereflow/datastore.hpp"
#include "sphereflow/evalkit.hpp"
#include "sphereflow/fieldnet.hpp"
#include "sphereflow/likelihood.hpp"
#include "sphereflow/sphere.hpp"
#include "sphereflow/trainer.hpp"

using namespace sphereflow;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

fs::path g_work;

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
  return buf;
}

std::string path_in(const std::string& sub) {
  const fs::path p = g_work / sub;
  fs::create_directories(p.parent_path());
  return p.string();
}

void cli(std::vector<std::string> args) {
  args.insert(args.begin(), {"sphereflow", "--quiet"});
  const int rc = sphereflow::cli::run(args);
  if (rc != 0) {
    std::string joined;
    for (const auto& a : args) joined += " " + a;
    throw std::runtime_error("command exited " + std::to_string(rc) + ":" + joined);
  }
}

std::string spec_file(const std::string& name, const std::string& text) {
  const std::string p = path_in(name);
  write_file_text(p, text);
  return p;
}

std::vector<double> uncertainties(const std::string& scores) {
  std::vector<double> u;
  for (const auto& r : read_scores(scores)) u.push_back(r.uncertainty);
  return u;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double report_metric(const std::string& report, const std::string& name) {
  std::ifstream in(report);
  std::string line;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    if (j["metric"] == name) return j["value"].get<double>();
  }
  throw std::runtime_error("metric " + name + " missing from " + report);
}

double elapsed_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Shared vMF(kappa=10) task on S^2 --------------------------------------------

const char* kVmfTrainConfig =
    "hidden = 64\ndepth = 6\nfreqs = 256\nlearning_rate = 1e-3\nbatch_size = 256\n"
    "total_steps = 20000\nwarmup_steps = 500\nmetrics_every = 2000\n";

struct VmfTask {
  std::string pairs;
  std::string held_out;
  std::vector<double> analytic;  // log density of each held-out row
  std::string riemannian_model;
  double train_seconds = 0.0;
};

VmfTask& vmf_task() {
  static VmfTask task = [] {
    VmfTask t;
    t.pairs = path_in("vmf/pairs.sfl");
    t.held_out = path_in("vmf/held_out.sfle");
    cli({"synth", "--out", t.pairs, "--spec",
         spec_file("vmf/pairs.spec", "kind = vmf\nd = 3\ncount = 50000\nseed = 1\nformat = pairs\n"
                                     "component.0.mean = 0, 0, 1\ncomponent.0.kappa = 10\n")});
    cli({"synth", "--out", t.held_out, "--spec",
         spec_file("vmf/held_out.spec", "kind = vmf\nd = 3\ncount = 1000\nseed = 2\n"
                                        "component.0.mean = 0, 0, 1\ncomponent.0.kappa = 10\n")});
    const VmfComponent comp{Vec{{0.0, 0.0, 1.0}}, 10.0, 1.0};
    const auto held = load_labeled(t.held_out);
    for (Eigen::Index j = 0; j < held.points.cols(); ++j) {
      t.analytic.push_back(analytic_vmf_logpdf(SpherePoint(held.points.col(j).cast<double>()), comp));
    }
    spec_file("vmf/train.cfg", kVmfTrainConfig);
    return t;
  }();
  return task;
}

const std::string& vmf_riemannian_model() {
  VmfTask& t = vmf_task();
  if (t.riemannian_model.empty()) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::string out = path_in("vmf/riemannian");
    cli({"train", "--config", (g_work / "vmf/train.cfg").string(), "--pairs", t.pairs, "--out", out});
    t.riemannian_model = out + "/model.sfck";
    t.train_seconds = elapsed_since(t0);
  }
  return t.riemannian_model;
}

struct Recovery {
  double mae = 0.0;
  double bias = 0.0;
  double spearman = 0.0;
};

Recovery recovery(const std::string& scores) {
  const auto rows = read_scores(scores);
  const auto& analytic = vmf_task().analytic;
  Recovery r;
  std::vector<double> model;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double diff = rows[i].log_density - analytic[i];
    r.mae += std::abs(diff) / static_cast<double>(rows.size());
    r.bias += diff / static_cast<double>(rows.size());
    model.push_back(rows[i].log_density);
  }
  r.spearman = spearman(model, analytic).rho;
  return r;
}

double g_riemannian_mae = -1.0;
double g_c5_seconds = 0.0;

// 1 --------------------------------------------------------------------------

Verdict c1_uniform_at_init() {
  // log Vol(S^(d-1)) at 30 digits.
  const std::map<int, double> log_vol = {{2, 1.8378770664093454836},
                                         {3, 2.531024246969290793},
                                         {64, -40.767720025574559749},
                                         {512, -867.9681031603942609}};
  double worst = 0.0;
  std::string detail;
  for (const auto& [d, expected] : log_vol) {
    const std::string dir = "c1/d" + std::to_string(d);
    const std::string pairs = path_in(dir + "/pairs.sfl");
    cli({"synth", "--out", pairs, "--spec",
         spec_file(dir + "/pairs.spec", "kind = uniform\nformat = pairs\ncount = 16\nseed = 5\nd = " +
                                            std::to_string(d) + "\n")});
    cli({"train", "--pairs", pairs, "--out", path_in(dir + "/model"), "--set", "total_steps=0"});
    const std::string scores = path_in(dir + "/scores.tsv");
    cli({"score", "--checkpoint", path_in(dir + "/model/model.sfck"), "--input", pairs, "--out", scores});
    double err = 0.0;
    for (double u : uncertainties(scores)) err = std::max(err, std::abs(u - expected));
    worst = std::max(worst, err);
    detail += " d=" + std::to_string(d) + ":" + fmt(err, 2);
  }
  return {worst <= 1e-9, "max |U - log vol| per d" + detail};
}

// 2 --------------------------------------------------------------------------

Verdict c2_geometry() {
  Rng rng(202);
  const double h = 1e-5;
  double endpoint = 0.0, norm = 0.0, symmetry = 0.0, speed = 0.0, tangency = 0.0, fd = 0.0;
  long failures = 0;
  for (Eigen::Index d : {3, 16, 512}) {
    for (int trial = 0; trial < 10000; ++trial) {
      const SpherePoint z0 = sample_uniform(d, rng);
      const SpherePoint z1 = sample_uniform(d, rng);
      const double t = h + (1.0 - 2.0 * h) * rng.uniform();
      const SpherePoint zt = slerp(z0, z1, t);
      const double theta = geodesic_distance(z0, z1);
      const auto u = target_velocity(z0, z1, t);
      const Vec dz = (slerp(z0, z1, t + h).coords() - slerp(z0, z1, t - h).coords()) / (2 * h);

      const double e = std::max((slerp(z0, z1, 0.0).coords() - z0.coords()).lpNorm<Eigen::Infinity>(),
                                (slerp(z0, z1, 1.0).coords() - z1.coords()).lpNorm<Eigen::Infinity>());
      const double n = std::abs(zt.coords().norm() - 1.0);
      const double s = (slerp(z1, z0, 1.0 - t).coords() - zt.coords()).lpNorm<Eigen::Infinity>();
      const double sp = std::abs(u.vec.norm() - theta);
      const double tg = std::abs(u.vec.dot(zt.coords()));
      const double f = (dz - u.vec).lpNorm<Eigen::Infinity>();
      endpoint = std::max(endpoint, e);
      norm = std::max(norm, n);
      symmetry = std::max(symmetry, s);
      speed = std::max(speed, sp);
      tangency = std::max(tangency, tg);
      fd = std::max(fd, f);
      failures += !(e == 0.0 && n <= 1e-12 && s <= 1e-9 && sp <= 1e-7 && tg <= 1e-9 && f <= 1e-6);
    }
  }
  return {failures == 0, "3x10^4 triples, " + std::to_string(failures) + " failing; max endpoint " + fmt(endpoint, 2) +
                             " norm " + fmt(norm, 2) + " symmetry " + fmt(symmetry, 2) + " speed " + fmt(speed, 2) +
                             " tangency " + fmt(tangency, 2) + " fd " + fmt(fd, 2)};
}

// 3 --------------------------------------------------------------------------

double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

Verdict c3_gradients() {
  const FieldShape shape{5, 16, 2, 8};
  const Geometry geoms[] = {Geometry::Riemannian, Geometry::EuclideanUniformBase, Geometry::EuclideanGaussianBase};
  const double h = 1e-4;
  double worst_param = 0.0, worst_input = 0.0;
  long checked = 0;
  for (int config = 0; config < 20; ++config) {
    const Geometry g = geoms[config % 3];
    FieldParamsD p = FieldParamsD::initialized(shape, 3000 + config, g);
    Rng rng(4000 + config);
    for (Eigen::Index i = 0; i < p.out_w.size(); ++i) p.out_w.data()[i] = 0.5 * rng.normal();
    for (Eigen::Index i = 0; i < p.out_b.size(); ++i) p.out_b.data()[i] = 0.5 * rng.normal();

    FieldBatch<double> batch;
    const int n = 3;
    batch.z.resize(shape.dim, n);
    batch.u.resize(shape.dim, n);
    for (int j = 0; j < n; ++j) {
      const SpherePoint z0 = sample_uniform(5, rng);
      const SpherePoint z1 = sample_uniform(5, rng);
      const double t = rng.uniform();
      const auto u = target_velocity(z0, z1, t);
      batch.z.col(j) = u.base.coords();
      batch.u.col(j) = u.vec;
      batch.t.push_back(t);
      batch.c.push_back(rng.bernoulli(0.5) ? Modality::Text : Modality::Image);
    }

    const auto lg = loss_and_param_grad(p, batch);
    auto params = p.tensors();
    auto grads = lg.grad.tensors();
    for (std::size_t i = 0; i < params.size(); ++i) {
      for (std::size_t k = 0; k < params[i].data.size(); ++k) {
        double& w = params[i].data[k];
        const double saved = w;
        w = saved + h;
        const double up = loss_and_param_grad(p, batch).loss;
        w = saved - h;
        const double down = loss_and_param_grad(p, batch).loss;
        w = saved;
        worst_param = std::max(worst_param, rel_err(grads[i].data[k], (up - down) / (2 * h)));
        ++checked;
      }
    }

    // Input VJPs through the shared jet, one cotangent per column.
    const Vec z = batch.z.col(0);
    const double t = batch.t[0];
    const Modality c = batch.c[0];
    Eigen::MatrixXd probes(5, 3);
    for (int j = 0; j < 3; ++j) {
      Vec e(5);
      for (int i = 0; i < 5; ++i) e[i] = rng.normal();
      probes.col(j) = projects_output(g) ? project_tangent(SpherePoint::from_unit(z), e).vec : e;
    }
    const FieldJet jet = field_jet(p, z, t, c, probes);
    const double ts[1] = {t};
    const Modality cs[1] = {c};
    for (int dir = 0; dir < 5; ++dir) {
      Vec w(5);
      for (int i = 0; i < 5; ++i) w[i] = rng.normal();
      w.normalize();
      const Eigen::MatrixXd zp = z + h * w, zm = z - h * w;
      const Eigen::MatrixXd vp = forward_batch<double>(p, zp, ts, cs), vm = forward_batch<double>(p, zm, ts, cs);
      for (int j = 0; j < 3; ++j) {
        const double fdv = (vp.col(0).dot(probes.col(j)) - vm.col(0).dot(probes.col(j))) / (2 * h);
        worst_input = std::max(worst_input, rel_err(jet.vjps.col(j).dot(w), fdv));
        ++checked;
      }
    }
  }
  return {worst_param <= 1e-4 && worst_input <= 1e-4,
          std::to_string(checked) + " derivatives over 20 configurations; worst relative error params " +
              fmt(worst_param, 2) + ", input " + fmt(worst_input, 2)};
}

// 4 --------------------------------------------------------------------------

// tr(P J P) = sum_i (P e_i)^T J (P e_i), each term a central difference along
// a tangent direction of the field restricted to the sphere.
double fd_tangential_trace(const FieldParamsD& p, const SpherePoint& z, double t, Modality c) {
  const double h = 1e-5;
  const Eigen::Index d = z.dim();
  double tr = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) {
    Vec e = Vec::Zero(d);
    e[i] = 1.0;
    const Vec w = project_tangent(z, e).vec;
    const Vec up = forward(p, SpherePoint(z.coords() + h * w), t, c).vec;
    const Vec down = forward(p, SpherePoint(z.coords() - h * w), t, c).vec;
    tr += w.dot(up - down) / (2 * h);
  }
  return tr;
}

Verdict c4_hutchinson() {
  SyntheticSpec spec;
  spec.kind = SyntheticKind::VmfMixture;
  spec.dim = 4;
  spec.count = 4000;
  spec.seed = 41;
  spec.components = {{Vec{{1.0, 0.0, 0.0, 0.0}}, 6.0, 0.5}, {Vec{{0.0, 0.6, 0.8, 0.0}}, 12.0, 0.5}};
  EmbeddingPairSet pairs;
  pairs.image = generate_synthetic(spec).points;
  spec.seed = 42;
  pairs.text = generate_synthetic(spec).points;

  FlowConfig cfg;
  cfg.shape = {4, 32, 3, 16};
  cfg.learning_rate = 2e-3;
  cfg.batch_size = 128;
  cfg.total_steps = 3000;
  cfg.warmup_steps = 100;
  cfg.seed = 43;
  const FieldParamsD p = fit<float>(pairs, cfg).cast<double>();

  Rng site_rng(44);
  IntegratorConfig exact_cfg;
  exact_cfg.mode = DivergenceMode::Exact;
  int within = 0;
  double worst_z = 0.0, oracle_gap = 0.0, field_scale = 0.0;
  const std::vector<int> ms = {1, 4, 16, 64, 256, 1024};
  std::vector<double> mse(ms.size(), 0.0);
  const int sites = 10, reps = 100;
  for (int s = 0; s < sites; ++s) {
    const SpherePoint z = sample_uniform(4, site_rng);
    const double t = site_rng.uniform();
    const Modality c = s % 2 ? Modality::Text : Modality::Image;
    const double oracle = fd_tangential_trace(p, z, t, c);
    Rng unused(0);
    oracle_gap = std::max(oracle_gap, std::abs(divergence_estimate(p, z, t, c, exact_cfg, unused) - oracle));
    field_scale = std::max(field_scale, std::abs(oracle));

    // Single-probe draws give the standard error of the M-probe average.
    IntegratorConfig one;
    Rng draw_rng(mix_seed(45, s));
    std::vector<double> draws;
    for (int k = 0; k < 20000; ++k) draws.push_back(divergence_estimate(p, z, t, c, one, draw_rng));
    const double se = sample_sd(draws) / std::sqrt(20000.0);
    IntegratorConfig many;
    many.probes = 20000;
    Rng many_rng(mix_seed(46, s));
    const double zscore = std::abs(divergence_estimate(p, z, t, c, many, many_rng) - oracle) / se;
    worst_z = std::max(worst_z, zscore);
    within += zscore <= 3.0;

    for (std::size_t mi = 0; mi < ms.size(); ++mi) {
      IntegratorConfig m;
      m.probes = ms[mi];
      Rng rep_rng(mix_seed(47, s * 100 + static_cast<int>(mi)));
      for (int r = 0; r < reps; ++r) {
        const double err = divergence_estimate(p, z, t, c, m, rep_rng) - oracle;
        mse[mi] += err * err / (sites * reps);
      }
    }
  }
  // Least-squares slope of log RMS error against log M.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const double k = static_cast<double>(ms.size());
  for (std::size_t i = 0; i < ms.size(); ++i) {
    const double x = std::log(static_cast<double>(ms[i])), y = 0.5 * std::log(mse[i]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  const bool pass = within == sites && std::abs(slope + 0.5) <= 0.1 && oracle_gap <= 1e-6 && field_scale > 1e-2;
  return {pass, std::to_string(within) + "/10 sites within 3 SE at M=20000 (worst " + fmt(worst_z, 3) +
                    " SE); log-log slope " + fmt(slope, 4) + "; exact vs finite-difference trace gap " +
                    fmt(oracle_gap, 2) + "; max |div| " + fmt(field_scale, 3)};
}

// 5 --------------------------------------------------------------------------

Verdict c5_density_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const VmfTask& task = vmf_task();
  const std::string model = vmf_riemannian_model();
  const std::string scores = path_in("vmf/riemannian_k64_exact.tsv");
  cli({"score", "--checkpoint", model, "--input", task.held_out, "--out", scores, "--steps", "64", "--divergence",
       "exact"});
  const Recovery r = recovery(scores);
  g_riemannian_mae = r.mae;

  // Quadrature over a Fibonacci lattice.
  const int nodes = 10000;
  LabeledEmbeddingSet grid;
  grid.points.resize(3, nodes);
  const auto lattice = fibonacci_sphere(nodes);
  for (int j = 0; j < nodes; ++j) grid.points.col(j) = lattice[static_cast<std::size_t>(j)].coords().cast<float>();
  grid.labels.assign(nodes, 0);
  const std::string grid_path = path_in("vmf/fibonacci.sfle");
  save_labeled(grid_path, grid);
  const std::string grid_scores = path_in("vmf/fibonacci_scores.tsv");
  cli({"score", "--checkpoint", model, "--input", grid_path, "--out", grid_scores, "--steps", "64", "--divergence",
       "exact"});
  double mass = 0.0;
  for (const auto& row : read_scores(grid_scores)) mass += std::exp(row.log_density);
  mass *= 4.0 * std::numbers::pi / nodes;

  g_c5_seconds = elapsed_since(t0);
  const bool pass = r.mae <= 0.15 && r.spearman >= 0.95 && std::abs(mass - 1.0) <= 0.05 && g_c5_seconds < 900.0;
  return {pass, "MAE " + fmt(r.mae) + " nats (bias " + fmt(r.bias, 3) + "), Spearman " + fmt(r.spearman) +
                    ", integral " + fmt(mass, 5) + " over 10^4 nodes; training " + fmt(task.train_seconds, 3) + " s"};
}

// 6 --------------------------------------------------------------------------

Verdict c6_selective() {
  // Two antipodal classes; P(correct) = sigmoid(2.5 + log p(z)) rises with density.
  const std::string mixture =
      "kind = vmf_mixture\nd = 3\n"
      "component.0.mean = 0, 0, 1\ncomponent.0.kappa = 4\ncomponent.0.weight = 0.5\n"
      "component.1.mean = 0, 0, -1\ncomponent.1.kappa = 4\ncomponent.1.weight = 0.5\n";
  const std::string pairs = path_in("c6/pairs.sfl");
  const std::string eval_set = path_in("c6/eval.sfle");
  cli({"synth", "--out", pairs, "--spec",
       spec_file("c6/pairs.spec", mixture + "count = 20000\nseed = 61\nformat = pairs\n")});
  cli({"synth", "--out", eval_set, "--spec",
       spec_file("c6/eval.spec", mixture + "count = 10000\nseed = 62\ncorrectness.offset = 2.5\n"
                                           "correctness.slope = 1.0\n")});
  const std::string model_dir = path_in("c6/model");
  cli({"train", "--pairs", pairs, "--out", model_dir, "--set", "hidden=64", "--set", "depth=6", "--set", "freqs=256",
       "--set", "learning_rate=1e-3", "--set", "batch_size=256", "--set", "total_steps=10000", "--set",
       "warmup_steps=500", "--set", "metrics_every=2000"});
  const std::string scores = path_in("c6/scores.tsv");
  cli({"score", "--checkpoint", model_dir + "/model.sfck", "--input", eval_set, "--out", scores});
  const std::string report_dir = path_in("c6/eval");
  cli({"eval", "--scores", scores, "--labels", eval_set, "--mode", "selective", "--out", report_dir});
  const std::string report = report_dir + "/report.jsonl";
  const double s = report_metric(report, "spearman_s");
  const double acc90 = report_metric(report, "acc_at_90_rejection");
  const double base = report_metric(report, "base_accuracy");

  std::ifstream in(report);
  std::string line;
  int drops = 0;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    if (j["metric"] != "rejection_curve") continue;
    const auto acc = j["accuracy"].get<std::vector<double>>();
    for (std::size_t i = 1; i < acc.size(); ++i) drops += acc[i] < acc[i - 1];
  }
  return {s >= 0.9 && acc90 >= base + 0.05,
          "S " + fmt(s) + ", Acc@90% " + fmt(acc90) + " vs base " + fmt(base) + " (" + fmt(100 * (acc90 - base), 3) +
              " pp), " + std::to_string(drops) + " local decreases on the 19-point grid"};
}

// 7 --------------------------------------------------------------------------

Verdict c7_step_ablation() {
  const VmfTask& task = vmf_task();
  const std::string model = vmf_riemannian_model();
  std::map<int, double> hutch_mean;
  std::vector<double> h8, e8;
  for (int k : {1, 5, 8}) {
    const std::string tag = "vmf/ablation_k" + std::to_string(k);
    cli({"score", "--checkpoint", model, "--input", task.held_out, "--out", path_in(tag + "_h.tsv"), "--steps",
         std::to_string(k), "--seed", "11"});
    const auto u = uncertainties(path_in(tag + "_h.tsv"));
    hutch_mean[k] = mean(u);
    if (k == 8) {
      h8 = u;
      cli({"score", "--checkpoint", model, "--input", task.held_out, "--out", path_in(tag + "_e.tsv"), "--steps",
           "8", "--divergence", "exact"});
      e8 = uncertainties(path_in(tag + "_e.tsv"));
    }
  }
  // Hutchinson standard error of the mean uncertainty at K=8, from the per-point
  // deviation of the one-probe estimate from the exact-trace integral.
  std::vector<double> noise;
  for (std::size_t i = 0; i < h8.size(); ++i) noise.push_back(h8[i] - e8[i]);
  const double se = sample_sd(noise) / std::sqrt(static_cast<double>(noise.size()));
  const double gap58 = std::abs(hutch_mean[5] - hutch_mean[8]);
  const double gap18 = std::abs(hutch_mean[1] - hutch_mean[8]);
  return {gap58 <= 2.0 * se && gap18 > 2.0 * se,
          "mean U: K=1 " + fmt(hutch_mean[1]) + ", K=5 " + fmt(hutch_mean[5]) + ", K=8 " + fmt(hutch_mean[8]) +
              "; |U5-U8| " + fmt(gap58, 3) + ", |U1-U8| " + fmt(gap18, 3) + ", 2 SE band " + fmt(2.0 * se, 3)};
}

// 8 --------------------------------------------------------------------------

Verdict c8_geometry_ablation() {
  const auto t0 = std::chrono::steady_clock::now();
  const VmfTask& task = vmf_task();
  if (g_riemannian_mae < 0.0) {
    const std::string scores = path_in("vmf/riemannian_k64_exact.tsv");
    cli({"score", "--checkpoint", vmf_riemannian_model(), "--input", task.held_out, "--out", scores, "--steps", "64",
         "--divergence", "exact"});
    g_riemannian_mae = recovery(scores).mae;
  }
  const std::string out = path_in("vmf/euclidean_gaussian");
  cli({"train", "--config", (g_work / "vmf/train.cfg").string(), "--pairs", task.pairs, "--out", out, "--set",
       "geometry=euclidean_gaussian_base"});
  const std::string scores = path_in("vmf/euclidean_gaussian_k64_exact.tsv");
  cli({"score", "--checkpoint", out + "/model.sfck", "--input", task.held_out, "--out", scores, "--steps", "64",
       "--divergence", "exact"});
  const Recovery eg = recovery(scores);
  const double combined = g_c5_seconds + elapsed_since(t0);
  return {g_riemannian_mae < eg.mae && combined < 1800.0,
          "held-out MAE riemannian " + fmt(g_riemannian_mae) + " < euclidean_gaussian_base " + fmt(eg.mae) +
              " nats; combined with criterion 5 " + fmt(combined, 3) + " s"};
}

// 9 --------------------------------------------------------------------------

Verdict c9_ood() {
  const std::string pairs = path_in("c9/pairs.sfl");
  cli({"synth", "--out", pairs, "--spec",
       spec_file("c9/pairs.spec", "kind = vmf\nd = 3\ncount = 20000\nseed = 91\nformat = pairs\n"
                                  "component.0.mean = 0.6, 0, 0.8\ncomponent.0.kappa = 50\n")});
  const std::string model_dir = path_in("c9/model");
  cli({"train", "--pairs", pairs, "--out", model_dir, "--set", "hidden=64", "--set", "depth=6", "--set", "freqs=256",
       "--set", "learning_rate=1e-3", "--set", "batch_size=256", "--set", "total_steps=10000", "--set",
       "warmup_steps=500", "--set", "metrics_every=2000"});

  SyntheticSpec inlier;
  inlier.kind = SyntheticKind::Vmf;
  inlier.dim = 3;
  inlier.count = 1000;
  inlier.seed = 92;
  inlier.components = {{Vec{{0.6, 0.0, 0.8}}, 50.0, 1.0}};
  SyntheticSpec outlier = inlier;
  outlier.kind = SyntheticKind::Uniform;
  outlier.components.clear();
  outlier.seed = 93;
  const auto in = generate_synthetic(inlier);
  const auto out = generate_synthetic(outlier);
  LabeledEmbeddingSet mixed;
  mixed.points.resize(3, 2000);
  mixed.points << in.points, out.points;
  mixed.labels.assign(1000, 0);
  mixed.labels.resize(2000, 1);
  const std::string mixed_path = path_in("c9/id_ood.sfle");
  save_labeled(mixed_path, mixed);

  const std::string scores = path_in("c9/scores.tsv");
  cli({"score", "--checkpoint", model_dir + "/model.sfck", "--input", mixed_path, "--out", scores});
  const std::string report_dir = path_in("c9/eval");
  cli({"eval", "--scores", scores, "--labels", mixed_path, "--mode", "ood", "--out", report_dir});
  const double auroc = report_metric(report_dir + "/report.jsonl", "auroc");
  const double aupr = report_metric(report_dir + "/report.jsonl", "aupr");

  // Same model under the exact trace, for reference; the default one-probe scores gate.
  const std::string exact_scores = path_in("c9/scores_exact.tsv");
  cli({"score", "--checkpoint", model_dir + "/model.sfck", "--input", mixed_path, "--out", exact_scores,
       "--divergence", "exact"});
  cli({"eval", "--scores", exact_scores, "--labels", mixed_path, "--mode", "ood", "--out", path_in("c9/eval_exact")});
  const double exact_auroc = report_metric(path_in("c9/eval_exact/report.jsonl"), "auroc");
  return {auroc >= 0.95, "AUROC " + fmt(auroc) + ", AUPR " + fmt(aupr) + " at K=5, M=1 (exact trace: AUROC " +
                             fmt(exact_auroc) + "); 1000 vMF inliers, 1000 uniform outliers"};
}

// 10 -------------------------------------------------------------------------

std::vector<std::string> with_threads(std::vector<std::string> argv, const std::string& threads) {
  for (std::size_t i = 0; i + 1 < argv.size(); ++i) {
    if (argv[i] == "--threads") {
      argv[i + 1] = threads;
      return argv;
    }
  }
  argv.push_back("--threads");
  argv.push_back(threads);
  return argv;
}

Verdict c10_determinism() {
  const std::string pairs = path_in("c10/pairs.sfl");
  const std::string points = path_in("c10/points.sfle");
  const std::string mixture =
      "kind = vmf_mixture\nd = 8\ncomponent.0.mean = 1, 0, 0, 0, 0, 0, 0, 0\ncomponent.0.kappa = 12\n"
      "component.0.weight = 0.5\ncomponent.1.mean = 0, 1, 1, 0, 0, 0, 0, 0\ncomponent.1.kappa = 6\n"
      "component.1.weight = 0.5\n";
  const std::string model_dir = path_in("c10/model");
  const std::string scores = path_in("c10/scores.tsv");
  const std::string report_dir = path_in("c10/eval");
  const std::string ranked = path_in("c10/ranked.tsv");
  const std::vector<std::string> manifests = {pairs + ".manifest.json", points + ".manifest.json",
                                              model_dir + "/manifest.json", scores + ".manifest.json",
                                              report_dir + "/manifest.json", ranked + ".manifest.json"};

  cli({"--threads", "1", "synth", "--out", pairs, "--spec",
       spec_file("c10/pairs.spec", mixture + "count = 3000\nseed = 101\nformat = pairs\n")});
  cli({"--threads", "1", "synth", "--out", points, "--spec",
       spec_file("c10/points.spec", mixture + "count = 700\nseed = 102\ncorrectness.offset = 1\n")});
  cli({"--threads", "1", "train", "--pairs", pairs, "--out", model_dir, "--set", "hidden=32", "--set", "depth=3",
       "--set", "freqs=32", "--set", "batch_size=1100", "--set", "total_steps=60", "--set", "warmup_steps=10",
       "--set", "learning_rate=3e-3", "--set", "checkpoint_every=25", "--set", "metrics_every=5"});
  cli({"--threads", "1", "score", "--checkpoint", model_dir + "/model.sfck", "--input", points, "--out", scores,
       "--probes", "2"});
  cli({"--threads", "1", "eval", "--scores", scores, "--labels", points, "--out", report_dir});
  cli({"--threads", "1", "curate", "--scores", scores, "--fraction", "0.1", "--out", ranked});

  struct Recorded {
    std::vector<std::string> argv;
    std::vector<std::pair<std::string, std::string>> outputs;  // path, fnv1a64 hex
  };
  std::vector<Recorded> recorded;
  for (const auto& m : manifests) {
    const json j = json::parse(std::ifstream(m));
    Recorded r;
    r.argv = j["argv"].get<std::vector<std::string>>();
    for (const auto& o : j["outputs"]) r.outputs.emplace_back(o["path"], o["fnv1a64"]);
    recorded.push_back(std::move(r));
  }

  int files = 0, mismatches = 0;
  for (const std::string threads : {"1", "8"}) {
    for (const auto& r : recorded) {
      const auto argv = with_threads(r.argv, threads);
      if (sphereflow::cli::run(argv) != 0) throw std::runtime_error("manifest re-run failed: " + argv.at(2));
      for (const auto& [p, hex] : r.outputs) {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(file_checksum(p)));
        ++files;
        if (hex != buf) {
          ++mismatches;
          std::cerr << "  checksum changed at --threads " << threads << ": " << p << "\n";
        }
      }
    }
  }
  return {mismatches == 0 && files > 0, std::to_string(recorded.size()) + " manifests re-run at --threads 1 and 8, " +
                                            std::to_string(files - mismatches) + "/" + std::to_string(files) +
                                            " output checksums reproduced"};
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;  // 0: no runtime bound
  std::function<Verdict()> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sphereflow acceptance suite"};
  std::string workdir = "acceptance_work";
  std::vector<int> only;
  app.add_option("--workdir", workdir, "Scratch directory (recreated)");
  app.add_option("--only", only, "Run only these criterion numbers")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  g_work = fs::absolute(workdir);
  fs::remove_all(g_work);
  fs::create_directories(g_work);
  std::cerr.setf(std::ios::unitbuf);

  const std::vector<Criterion> criteria = {
      {1, "uniform-at-init exactness", 5, c1_uniform_at_init},
      {2, "geometry suite", 30, c2_geometry},
      {3, "gradient correctness", 60, c3_gradients},
      {4, "hutchinson unbiasedness", 300, c4_hutchinson},
      {5, "density recovery oracle", 900, c5_density_recovery},
      {6, "selective-classification pipeline", 1200, c6_selective},
      {7, "integration-step ablation", 600, c7_step_ablation},
      {8, "geometry-mode ablation", 0, c8_geometry_ablation},
      {9, "ood detection", 600, c9_ood},
      {10, "determinism", 0, c10_determinism},
  };

  int failed = 0, ran = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    ++ran;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = elapsed_since(t0);
    if (c.budget_seconds > 0 && secs >= c.budget_seconds) {
      v.pass = false;
      v.detail += "; over the " + fmt(c.budget_seconds) + " s budget";
    }
    failed += !v.pass;
    std::printf("%s criterion %d (%s) [%.1f s]: %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", ran - failed, ran);
  return failed == 0 ? 0 : 1;
}
