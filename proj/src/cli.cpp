#include "sphereflow/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "sphereflow/bytes.hpp"
#include "sphereflow/checkpoint.hpp"
#include "sphereflow/datastore.hpp"
#include "sphereflow/evalkit.hpp"
#include "sphereflow/kvconfig.hpp"
#include "sphereflow/likelihood.hpp"
#include "sphereflow/parallel.hpp"
#include "sphereflow/trainer.hpp"

namespace sphereflow::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

struct Context {
  std::vector<std::string> argv;
  std::chrono::system_clock::time_point started = std::chrono::system_clock::now();
  std::chrono::steady_clock::time_point started_mono = std::chrono::steady_clock::now();
  int threads = 1;
  bool quiet = false;
};

void progress(const Context& ctx, const std::string& line) {
  if (!ctx.quiet) std::cerr << line << "\n";
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string iso_utc(std::chrono::system_clock::time_point tp) {
  const std::time_t t = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json file_entry(const fs::path& p) {
  return json{{"path", p.string()}, {"fnv1a64", hex64(file_checksum(p))}};
}

void write_manifest(const fs::path& path, const Context& ctx, const std::string& command, const KvConfig& resolved,
                    const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs, std::uint64_t seed) {
  json m;
  m["command"] = command;
  m["argv"] = ctx.argv;
  json cfg = json::object();
  for (const auto& [k, v] : resolved.entries()) cfg[k] = v;
  m["resolved_config"] = cfg;
  m["seed"] = seed;
  m["threads"] = ctx.threads;
  m["engine_version"] = kVersion;
  json in = json::array();
  for (const auto& p : inputs) in.push_back(file_entry(p));
  m["inputs"] = in;
  json out = json::array();
  for (const auto& p : outputs) out.push_back(file_entry(p));
  m["outputs"] = out;
  const double elapsed =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - ctx.started_mono).count();
  m["wall_clock"] = json{{"started_utc", iso_utc(ctx.started)}, {"elapsed_seconds", elapsed}};
  write_file_text(path, m.dump(2) + "\n");
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) {
  fs::path out = p;
  out += suffix;
  return out;
}

void ensure_parent(const fs::path& p) {
  const fs::path parent = p.parent_path();
  if (parent.empty()) return;
  std::error_code ec;
  fs::create_directories(parent, ec);
  if (ec) fail(ErrorKind::Io, "cannot create directory " + parent.string() + ": " + ec.message());
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) fail(ErrorKind::Io, "cannot create directory " + p.string() + ": " + ec.message());
}

/// Config file (optional) with --set key=value overrides applied in order.
KvConfig layered_config(const std::string& path, const std::vector<std::string>& overrides) {
  KvConfig cfg = path.empty() ? KvConfig{} : KvConfig::load(path);
  for (const auto& kv : overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      fail(ErrorKind::InvalidArgument, "--set expects key=value, got '" + kv + "'");
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

std::array<char, 4> peek_magic(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  std::array<char, 4> m{};
  if (bytes.size() >= 4) std::memcpy(m.data(), bytes.data(), 4);
  return m;
}

bool has_magic(const std::array<char, 4>& m, const char* want) { return std::memcmp(m.data(), want, 4) == 0; }

// train ----------------------------------------------------------------------

const std::set<std::string> kTrainKeys = {
    "d",          "hidden",       "depth",      "freqs",      "learning_rate", "weight_decay",  "batch_size",
    "total_steps", "warmup_steps", "seed",       "geometry",   "adam_beta1",    "adam_beta2",    "adam_eps",
    "grad_clip",  "max_pairs",    "precision",  "metrics_every", "checkpoint_every"};

struct TrainOptions {
  std::string config;
  std::string pairs;
  std::string out;
  std::vector<std::string> overrides;
};

FlowConfig resolve_flow_config(const KvConfig& kv, int data_dim, KvConfig& resolved) {
  kv.require_known(kTrainKeys);
  FlowConfig c;
  const auto d = kv.get_int("d", data_dim);
  if (d != data_dim) {
    fail(ErrorKind::ShapeMismatch, "config d=" + std::to_string(d) + " but pairs have d=" + std::to_string(data_dim));
  }
  c.shape.dim = data_dim;
  c.shape.hidden = static_cast<int>(kv.get_int("hidden", c.shape.hidden));
  c.shape.depth = static_cast<int>(kv.get_int("depth", c.shape.depth));
  c.shape.freqs = static_cast<int>(kv.get_int("freqs", c.shape.freqs));
  c.learning_rate = kv.get_double("learning_rate", c.learning_rate);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.total_steps = kv.get_int("total_steps", c.total_steps);
  c.warmup_steps = kv.get_int("warmup_steps", c.warmup_steps);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  c.geometry = parse_geometry(kv.get_string("geometry", "riemannian"));
  c.adam_beta1 = kv.get_double("adam_beta1", c.adam_beta1);
  c.adam_beta2 = kv.get_double("adam_beta2", c.adam_beta2);
  c.adam_eps = kv.get_double("adam_eps", c.adam_eps);
  c.grad_clip = kv.get_double("grad_clip", c.grad_clip);
  const auto max_pairs = kv.get_int("max_pairs", 0);
  if (max_pairs < 0) fail(ErrorKind::InvalidArgument, "max_pairs must be >= 0");
  c.max_pairs = static_cast<std::size_t>(max_pairs);
  const std::string precision = kv.get_string("precision", "f32");
  if (precision == "f32") {
    c.precision = Precision::F32;
  } else if (precision == "f64") {
    c.precision = Precision::F64;
  } else {
    fail(ErrorKind::InvalidArgument, "precision must be f32 or f64, got '" + precision + "'");
  }
  c.validate();

  resolved.set("d", std::to_string(c.shape.dim));
  resolved.set("hidden", std::to_string(c.shape.hidden));
  resolved.set("depth", std::to_string(c.shape.depth));
  resolved.set("freqs", std::to_string(c.shape.freqs));
  resolved.set("learning_rate", fmt17(c.learning_rate));
  resolved.set("weight_decay", fmt17(c.weight_decay));
  resolved.set("batch_size", std::to_string(c.batch_size));
  resolved.set("total_steps", std::to_string(c.total_steps));
  resolved.set("warmup_steps", std::to_string(c.warmup_steps));
  resolved.set("seed", std::to_string(c.seed));
  resolved.set("geometry", std::string(geometry_name(c.geometry)));
  resolved.set("adam_beta1", fmt17(c.adam_beta1));
  resolved.set("adam_beta2", fmt17(c.adam_beta2));
  resolved.set("adam_eps", fmt17(c.adam_eps));
  resolved.set("grad_clip", fmt17(c.grad_clip));
  resolved.set("max_pairs", std::to_string(c.max_pairs));
  resolved.set("precision", precision);
  return c;
}

std::string without_newlines(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  return s;
}

template <typename T>
void train_with(const Context& ctx, const EmbeddingPairSet& pairs, const FlowConfig& fc, const KvConfig& resolved,
                std::int64_t metrics_every, std::int64_t checkpoint_every, const fs::path& out_dir,
                std::vector<fs::path>& written) {
  const fs::path metrics_path = out_dir / "metrics.jsonl";
  std::ofstream metrics(metrics_path, std::ios::trunc);
  if (!metrics) fail(ErrorKind::Io, "cannot create " + metrics_path.string());
  double last_loss = 0.0;

  TrainCallbacks<T> cb;
  cb.metrics_every = metrics_every;
  cb.on_metrics = [&](const StepMetrics& m) {
    json rec{{"step", m.step}, {"loss", m.loss}, {"lr", m.lr}, {"grad_norm", m.grad_norm}};
    if (m.loss_image >= 0.0) rec["loss_image"] = m.loss_image;
    if (m.loss_text >= 0.0) rec["loss_text"] = m.loss_text;
    metrics << rec.dump() << "\n";
    metrics.flush();
    last_loss = m.loss;
    progress(ctx, "step " + std::to_string(m.step) + "/" + std::to_string(fc.total_steps) + " loss " + fmt17(m.loss));
  };
  cb.checkpoint_every = checkpoint_every;
  cb.on_checkpoint = [&](const TrainState<T>& state) {
    const bool final = state.step == fc.total_steps;
    const fs::path ckpt =
        final ? out_dir / "model.sfck" : out_dir / ("checkpoint-" + std::to_string(state.step) + ".sfck");
    save_checkpoint(ckpt, state.params);
    KvConfig meta = resolved;
    meta.set("step", std::to_string(state.step));
    meta.set("loss", fmt17(last_loss));
    meta.set("rng_state", without_newlines(state.rng.state()));
    meta.save(sidecar_path(ckpt));
    if (final) {
      written.push_back(ckpt);
      written.push_back(sidecar_path(ckpt));
    }
  };
  fit<T>(pairs, fc, cb, ctx.threads);
  metrics.close();
  if (!metrics) fail(ErrorKind::Io, "write failed: " + metrics_path.string());
  written.insert(written.begin(), metrics_path);
}

int cmd_train(const Context& ctx, const TrainOptions& opt) {
  const EmbeddingPairSet pairs = load_pairs(opt.pairs);
  const KvConfig kv = layered_config(opt.config, opt.overrides);
  KvConfig resolved;
  const FlowConfig fc = resolve_flow_config(kv, pairs.dim(), resolved);
  const std::int64_t metrics_every = kv.get_int("metrics_every", 100);
  const std::int64_t checkpoint_every = kv.get_int("checkpoint_every", 0);
  if (metrics_every < 0 || checkpoint_every < 0) {
    fail(ErrorKind::InvalidArgument, "metrics_every and checkpoint_every must be >= 0");
  }
  resolved.set("metrics_every", std::to_string(metrics_every));
  resolved.set("checkpoint_every", std::to_string(checkpoint_every));

  const fs::path out_dir = opt.out;
  ensure_dir(out_dir);
  progress(ctx, "training on " + std::to_string(pairs.size()) + " pairs, d=" + std::to_string(pairs.dim()) + ", " +
                    std::to_string(FieldParamsF::zeros(fc.shape).parameter_count()) + " parameters, " +
                    std::to_string(forward_flops(fc.shape)) + " flops per forward");
  std::vector<fs::path> written;
  if (fc.precision == Precision::F64) {
    train_with<double>(ctx, pairs, fc, resolved, metrics_every, checkpoint_every, out_dir, written);
  } else {
    train_with<float>(ctx, pairs, fc, resolved, metrics_every, checkpoint_every, out_dir, written);
  }
  write_manifest(out_dir / "manifest.json", ctx, "train", resolved, {opt.pairs}, written, fc.seed);
  return kExitOk;
}

// score ----------------------------------------------------------------------

const std::set<std::string> kScoreKeys = {"steps", "probes", "probe_distribution", "divergence_mode", "seed",
                                          "modality"};

struct ScoreOptions {
  std::string config;
  std::string checkpoint;
  std::string input;
  std::string out;
  std::vector<std::string> overrides;
  std::optional<std::string> modality;
  std::optional<int> steps;
  std::optional<int> probes;
  std::optional<std::string> probe_law;
  std::optional<std::string> divergence;
  std::optional<std::uint64_t> seed;
};

int cmd_score(const Context& ctx, const ScoreOptions& opt) {
  KvConfig kv = layered_config(opt.config, opt.overrides);
  if (opt.modality) kv.set("modality", *opt.modality);
  if (opt.steps) kv.set("steps", std::to_string(*opt.steps));
  if (opt.probes) kv.set("probes", std::to_string(*opt.probes));
  if (opt.probe_law) kv.set("probe_distribution", *opt.probe_law);
  if (opt.divergence) kv.set("divergence_mode", *opt.divergence);
  if (opt.seed) kv.set("seed", std::to_string(*opt.seed));
  kv.require_known(kScoreKeys);

  IntegratorConfig icfg;
  icfg.steps = static_cast<int>(kv.get_int("steps", icfg.steps));
  icfg.probes = static_cast<int>(kv.get_int("probes", icfg.probes));
  icfg.probe = parse_probe_distribution(kv.get_string("probe_distribution", "gaussian"));
  icfg.mode = parse_divergence_mode(kv.get_string("divergence_mode", "hutchinson"));
  icfg.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  icfg.validate();
  const Modality modality = parse_modality(kv.get_string("modality", "image"));

  KvConfig resolved;
  resolved.set("steps", std::to_string(icfg.steps));
  resolved.set("probes", std::to_string(icfg.probes));
  resolved.set("probe_distribution", std::string(probe_distribution_name(icfg.probe)));
  resolved.set("divergence_mode", std::string(divergence_mode_name(icfg.mode)));
  resolved.set("seed", std::to_string(icfg.seed));
  resolved.set("modality", std::string(modality_name(modality)));

  const FieldParamsD params = load_checkpoint(opt.checkpoint).cast<double>();
  resolved.set("geometry", std::string(geometry_name(params.geometry)));

  Eigen::MatrixXf points;
  const auto magic = peek_magic(opt.input);
  if (has_magic(magic, "SFL1")) {
    points = load_pairs(opt.input).side(modality);
  } else {
    points = load_labeled(opt.input).points;
  }
  if (points.rows() != params.shape.dim) {
    fail(ErrorKind::ShapeMismatch, "embeddings have d=" + std::to_string(points.rows()) + " but the checkpoint has d=" +
                                       std::to_string(params.shape.dim));
  }
  std::vector<ScoreInput> inputs;
  inputs.reserve(static_cast<std::size_t>(points.cols()));
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    inputs.push_back({SpherePoint(points.col(i).cast<double>()), modality});
  }
  progress(ctx, "scoring " + std::to_string(inputs.size()) + " points with K=" + std::to_string(icfg.steps));
  const auto records = score_batch(params, inputs, icfg, ctx.threads);
  const fs::path out = opt.out;
  ensure_parent(out);
  write_scores(out, inputs, records);
  write_manifest(with_suffix(out, ".manifest.json"), ctx, "score", resolved, {opt.checkpoint, opt.input}, {out},
                 icfg.seed);
  return kExitOk;
}

// eval -----------------------------------------------------------------------

struct EvalOptions {
  std::string scores;
  std::string labels;
  std::string mode = "selective";
  std::string out;
  std::vector<double> grid;
};

void write_lines(const fs::path& path, const std::vector<json>& records) {
  std::string text;
  for (const auto& r : records) text += r.dump() + "\n";
  write_file_text(path, text);
}

int cmd_eval(const Context& ctx, const EvalOptions& opt) {
  const auto rows = read_scores(opt.scores);
  const LabeledEmbeddingSet labels = load_labeled(opt.labels);
  if (rows.size() != labels.size()) {
    fail(ErrorKind::ShapeMismatch, "scores have " + std::to_string(rows.size()) + " rows but labels have " +
                                       std::to_string(labels.size()));
  }
  EvalTable table;
  for (const auto& r : rows) {
    table.uncertainty.push_back(r.uncertainty);
    table.ids.push_back(r.index);
  }
  const fs::path out_dir = opt.out;
  ensure_dir(out_dir);
  KvConfig resolved;
  resolved.set("mode", opt.mode);
  std::vector<json> report;
  std::vector<fs::path> outputs;

  if (opt.mode == "selective") {
    if (!labels.has_correctness()) fail(ErrorKind::InvalidArgument, opt.labels + ": no correctness bits for selective mode");
    table.correct = labels.correct;
    const std::vector<double> grid = opt.grid.empty() ? default_rejection_grid() : opt.grid;
    const RejectionCurve curve = rejection_curve(table, grid);
    const double acc90 = acc_at_rejection(table, 0.90);
    const Correlation s = spearman_s(curve);
    const double base = acc_at_rejection(table, 0.0);
    std::string grid_text;
    for (std::size_t i = 0; i < grid.size(); ++i) grid_text += (i ? "," : "") + fmt17(grid[i]);
    resolved.set("grid", grid_text);
    report.push_back({{"metric", "base_accuracy"}, {"value", base}});
    report.push_back({{"metric", "acc_at_90_rejection"}, {"value", acc90}});
    report.push_back({{"metric", "spearman_s"}, {"value", s.rho}, {"degenerate", s.degenerate}});
    report.push_back({{"metric", "rejection_curve"}, {"fractions", curve.fractions}, {"accuracy", curve.accuracy}});
    write_file_text(out_dir / "curve.csv", rejection_csv(curve));
    outputs.push_back(out_dir / "curve.csv");
    progress(ctx, "acc@90%=" + fmt17(acc90) + " S=" + fmt17(s.rho) + " base=" + fmt17(base));
  } else if (opt.mode == "ood") {
    for (auto l : labels.labels) table.ood.push_back(l != 0 ? 1 : 0);
    const RocPr r = roc_pr(table);
    std::size_t pos = 0;
    for (auto f : table.ood) pos += f;
    report.push_back({{"metric", "auroc"}, {"value", r.auroc}});
    report.push_back({{"metric", "aupr"}, {"value", r.aupr}});
    report.push_back({{"metric", "counts"}, {"ood", pos}, {"in_distribution", table.size() - pos}});
    write_file_text(out_dir / "roc.csv", curve_csv(r.roc, "fpr,tpr"));
    write_file_text(out_dir / "pr.csv", curve_csv(r.pr, "recall,precision"));
    outputs.push_back(out_dir / "roc.csv");
    outputs.push_back(out_dir / "pr.csv");
    progress(ctx, "auroc=" + fmt17(r.auroc) + " aupr=" + fmt17(r.aupr));
  } else {
    fail(ErrorKind::InvalidArgument, "mode must be selective or ood, got '" + opt.mode + "'");
  }
  write_lines(out_dir / "report.jsonl", report);
  outputs.insert(outputs.begin(), out_dir / "report.jsonl");
  write_manifest(out_dir / "manifest.json", ctx, "eval", resolved, {opt.scores, opt.labels}, outputs, 0);
  return kExitOk;
}

// synth ----------------------------------------------------------------------

Vec parse_vector(const std::string& text, const std::string& what) {
  std::vector<double> vals;
  std::size_t start = 0;
  for (;;) {
    const auto comma = text.find(',', start);
    std::string tok = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    tok.erase(0, tok.find_first_not_of(' '));
    tok.erase(tok.find_last_not_of(' ') + 1);
    vals.push_back(parse_double(tok, what));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return Eigen::Map<Vec>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

std::vector<VmfComponent> parse_components(const KvConfig& kv, const std::string& prefix, std::set<std::string>& used) {
  std::vector<VmfComponent> comps;
  for (int i = 0;; ++i) {
    const std::string base = prefix + std::to_string(i) + ".";
    if (!kv.has(base + "mean") && !kv.has(base + "kappa") && !kv.has(base + "weight")) break;
    VmfComponent c;
    const auto mean = kv.get(base + "mean");
    if (!mean) fail(ErrorKind::InvalidArgument, "mean: missing " + base + "mean");
    c.mean = parse_vector(*mean, base + "mean");
    const double norm = c.mean.norm();
    if (!(norm > 0.0) || !std::isfinite(norm)) fail(ErrorKind::InvalidArgument, "mean: " + base + "mean must be nonzero");
    c.mean /= norm;
    c.kappa = kv.get_double(base + "kappa", 0.0);
    c.weight = kv.get_double(base + "weight", 1.0);
    used.insert({base + "mean", base + "kappa", base + "weight"});
    comps.push_back(std::move(c));
  }
  return comps;
}

SyntheticSpec parse_synth_spec(const KvConfig& kv, const std::string& prefix, std::set<std::string>& used) {
  SyntheticSpec s;
  s.kind = parse_synthetic_kind(kv.get_string("kind", "uniform"));
  s.dim = static_cast<int>(kv.get_int("d", 3));
  const auto count = kv.get_int("count", 0);
  if (count <= 0) fail(ErrorKind::InvalidArgument, "count: must be positive");
  s.count = static_cast<std::size_t>(count);
  s.seed = static_cast<std::uint64_t>(kv.get_int("seed", 0));
  s.components = parse_components(kv, prefix, used);
  if (kv.has("correctness.slope") || kv.has("correctness.offset")) {
    s.correctness = CorrectnessModel{kv.get_double("correctness.offset", 0.0), kv.get_double("correctness.slope", 1.0)};
  }
  used.insert({"kind", "d", "count", "seed", "format", "correctness.slope", "correctness.offset"});
  s.validate();
  return s;
}

int cmd_synth(const Context& ctx, const std::string& spec_path, const std::string& out_text) {
  const KvConfig kv = KvConfig::load(spec_path);
  std::set<std::string> used;
  const SyntheticSpec spec = parse_synth_spec(kv, "component.", used);
  const std::string format = kv.get_string("format", "labeled");
  const fs::path out = out_text;
  ensure_parent(out);
  const LabeledEmbeddingSet image = generate_synthetic(spec);
  if (format == "labeled") {
    save_labeled(out, image);
  } else if (format == "pairs") {
    SyntheticSpec text_spec = spec;
    text_spec.seed = mix_seed(spec.seed, 1);
    text_spec.correctness.reset();
    auto text_components = parse_components(kv, "text.component.", used);
    if (!text_components.empty()) {
      text_spec.components = std::move(text_components);
      if (text_spec.kind == SyntheticKind::Vmf && text_spec.components.size() > 1) {
        text_spec.kind = SyntheticKind::VmfMixture;
      }
      text_spec.validate();
    }
    EmbeddingPairSet pairs;
    pairs.image = image.points;
    pairs.text = generate_synthetic(text_spec).points;
    save_pairs(out, pairs);
  } else {
    fail(ErrorKind::InvalidArgument, "format: must be labeled or pairs, got '" + format + "'");
  }
  kv.require_known(used);
  progress(ctx, "wrote " + std::to_string(spec.count) + " " + format + " rows to " + out.string());
  write_manifest(with_suffix(out, ".manifest.json"), ctx, "synth", kv, {spec_path}, {out}, spec.seed);
  return kExitOk;
}

// curate ---------------------------------------------------------------------

int cmd_curate(const Context& ctx, const std::string& scores_path, std::optional<std::size_t> k,
               std::optional<double> fraction, const std::string& out_text) {
  const auto rows = read_scores(scores_path);
  std::vector<double> u;
  for (const auto& r : rows) u.push_back(r.uncertainty);
  KvConfig resolved;
  std::size_t count = 0;
  if (k) {
    count = *k;
    resolved.set("k", std::to_string(count));
  } else {
    count = fraction_count(*fraction, u.size());
    resolved.set("fraction", fmt17(*fraction));
  }
  const auto ranked = curation_rank(u, count);
  std::string text = "rank\tindex\tuncertainty\n";
  for (std::size_t i = 0; i < ranked.size(); ++i) {
    const auto& r = rows[ranked[i]];
    text += std::to_string(i) + "\t" + std::to_string(r.index) + "\t" + fmt17(r.uncertainty) + "\n";
  }
  const fs::path out = out_text;
  ensure_parent(out);
  write_file_text(out, text);
  progress(ctx, "ranked " + std::to_string(ranked.size()) + " of " + std::to_string(rows.size()) + " samples");
  write_manifest(with_suffix(out, ".manifest.json"), ctx, "curate", resolved, {scores_path}, {out}, 0);
  return kExitOk;
}

}  // namespace

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InputNotFound:
    case ErrorKind::InvalidArgument:
    case ErrorKind::ShapeMismatch:
    case ErrorKind::BadFormat:
    case ErrorKind::Io:
      return kExitInput;
    case ErrorKind::Degenerate:
    case ErrorKind::Numeric:
      return kExitNumeric;
    case ErrorKind::Internal:
      return kExitInternal;
  }
  return kExitInternal;
}

int run(const std::vector<std::string>& args) {
  Context ctx;
  ctx.argv = args;

  CLI::App app{"Flow-matching density and uncertainty estimation on the hypersphere"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);
  app.fallthrough();
  int threads = 0;
  app.add_option("--threads", threads, "Worker threads (default: SPHEREFLOW_THREADS, else all cores)");
  app.add_flag("--quiet", ctx.quiet, "Suppress progress output");

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train", "Fit the vector field to an embedding-pair store");
  train_cmd->add_option("--config", train.config, "key=value config file");
  train_cmd->add_option("--pairs", train.pairs, "SFL1 pair store")->required();
  train_cmd->add_option("--out", train.out, "Output directory")->required();
  train_cmd->add_option("--set", train.overrides, "Override one config key (key=value)");

  ScoreOptions score;
  auto* score_cmd = app.add_subcommand("score", "Per-point log-density and uncertainty");
  score_cmd->add_option("--config", score.config, "key=value config file");
  score_cmd->add_option("--checkpoint", score.checkpoint, "Checkpoint file")->required();
  score_cmd->add_option("--input", score.input, "SFLE labeled set or SFL1 pair store")->required();
  score_cmd->add_option("--out", score.out, "Score file")->required();
  score_cmd->add_option("--modality", score.modality, "image|text|0|1 (default image)");
  score_cmd->add_option("--steps", score.steps, "Euler steps (default 5)");
  score_cmd->add_option("--probes", score.probes, "Probes per step (default 1)");
  score_cmd->add_option("--probe-law", score.probe_law, "gaussian|rademacher (default gaussian)");
  score_cmd->add_option("--divergence", score.divergence, "hutchinson|exact (default hutchinson)");
  score_cmd->add_option("--seed", score.seed, "Master probe seed (default 0)");
  score_cmd->add_option("--set", score.overrides, "Override one config key (key=value)");

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Selective-classification or OOD metrics");
  eval_cmd->add_option("--scores", eval.scores, "Score file")->required();
  eval_cmd->add_option("--labels", eval.labels, "SFLE labeled set")->required();
  eval_cmd->add_option("--mode", eval.mode, "selective|ood")->capture_default_str();
  eval_cmd->add_option("--out", eval.out, "Output directory")->required();
  eval_cmd->add_option("--grid", eval.grid, "Rejection fractions")->delimiter(',');

  std::string synth_spec, synth_out;
  auto* synth_cmd = app.add_subcommand("synth", "Generate synthetic spherical data");
  synth_cmd->add_option("--spec", synth_spec, "key=value synthetic spec")->required();
  synth_cmd->add_option("--out", synth_out, "Output file")->required();

  std::string curate_scores, curate_out;
  std::optional<std::size_t> curate_k;
  std::optional<double> curate_fraction;
  auto* curate_cmd = app.add_subcommand("curate", "Rank samples by uncertainty");
  curate_cmd->add_option("--scores", curate_scores, "Score file")->required();
  auto* k_opt = curate_cmd->add_option("--k", curate_k, "Number of samples");
  auto* f_opt = curate_cmd->add_option("--fraction", curate_fraction, "Fraction of samples, rounded up");
  k_opt->excludes(f_opt);
  curate_cmd->add_option("--out", curate_out, "Ranked id file")->required();

  try {
    std::vector<std::string> rev(args.begin() + (args.empty() ? 0 : 1), args.end());
    std::reverse(rev.begin(), rev.end());
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    std::cout << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion&) {
    std::cout << kVersion << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    for (char& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::cerr << "error: " << category_name(ErrorKind::InvalidArgument) << ": " << msg << "\n";
    return kExitInput;
  }

  try {
    ctx.threads = resolve_threads(threads);
    if (*train_cmd) return cmd_train(ctx, train);
    if (*score_cmd) return cmd_score(ctx, score);
    if (*eval_cmd) return cmd_eval(ctx, eval);
    if (*synth_cmd) return cmd_synth(ctx, synth_spec, synth_out);
    if (*curate_cmd) {
      if (!curate_k && !curate_fraction) fail(ErrorKind::InvalidArgument, "curate needs --k or --fraction");
      return cmd_curate(ctx, curate_scores, curate_k, curate_fraction, curate_out);
    }
    fail(ErrorKind::Internal, "no command dispatched");
  } catch (const Error& e) {
    std::string msg = e.what();
    for (char& ch : msg) {
      if (ch == '\n') ch = ' ';
    }
    std::cerr << "error: " << category_name(e.kind()) << ": " << msg << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << category_name(ErrorKind::Internal) << ": " << e.what() << "\n";
    return kExitInternal;
  }
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv, argv + argc);
  return run(args);
}

}  // namespace sphereflow::cli
