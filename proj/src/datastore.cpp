#include "sphereflow/datastore.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <sstream>

#include "sphereflow/bytes.hpp"
#include "sphereflow/error.hpp"

namespace sphereflow {

namespace {

constexpr char kPairsMagic[4] = {'S', 'F', 'L', '1'};
constexpr char kLabeledMagic[4] = {'S', 'F', 'L', 'E'};

// Rows deviating from unit norm by more than this are rejected at load.
constexpr double kNormRejectTolerance = 1e-2;

void append_rows(ByteWriter& w, const Eigen::MatrixXf& cols) {
  // Column-major d x n storage is row-major n x d on disk.
  for (Eigen::Index i = 0; i < cols.size(); ++i) w.f32(cols.data()[i]);
}

void read_rows(ByteReader& r, Eigen::MatrixXf& cols, std::uint32_t d, std::uint64_t n) {
  cols.resize(d, static_cast<Eigen::Index>(n));
  for (Eigen::Index i = 0; i < cols.size(); ++i) cols.data()[i] = r.f32();
}

// Rejects non-finite and badly scaled rows, then renormalizes in 64-bit.
void validate_and_normalize(Eigen::MatrixXf& cols, const std::string& what) {
  std::vector<Eigen::Index> non_finite, off_norm;
  for (Eigen::Index j = 0; j < cols.cols(); ++j) {
    const Eigen::VectorXd row = cols.col(j).cast<double>();
    if (!row.allFinite()) {
      non_finite.push_back(j);
      continue;
    }
    const double norm = row.norm();
    if (std::abs(norm - 1.0) > kNormRejectTolerance) {
      off_norm.push_back(j);
      continue;
    }
    cols.col(j) = (row / norm).cast<float>();
  }
  auto list = [](const std::vector<Eigen::Index>& idx) {
    std::ostringstream out;
    for (std::size_t i = 0; i < idx.size() && i < 10; ++i) out << (i ? "," : "") << idx[i];
    if (idx.size() > 10) out << ",... (" << idx.size() << " total)";
    return out.str();
  };
  if (!non_finite.empty()) {
    fail(ErrorKind::BadFormat, what + ": non-finite values in row(s) " + list(non_finite));
  }
  if (!off_norm.empty()) {
    fail(ErrorKind::BadFormat, what + ": row(s) " + list(off_norm) + " deviate from unit norm by more than 1e-2");
  }
}

struct StoreHeader {
  std::uint32_t d = 0;
  std::uint64_t n = 0;
};

StoreHeader read_header(ByteReader& r, const char (&magic)[4], const std::string& what) {
  char got[4];
  r.raw(got, 4);
  if (std::memcmp(got, magic, 4) != 0) {
    fail(ErrorKind::BadFormat, what + ": bad magic (expected " + std::string(magic, 4) + ")");
  }
  const std::uint32_t version = r.u32();
  if (version != kStoreVersion) {
    fail(ErrorKind::BadFormat, what + ": unsupported version " + std::to_string(version));
  }
  StoreHeader h;
  h.d = r.u32();
  h.n = r.u64();
  if (h.d == 0) fail(ErrorKind::BadFormat, what + ": dimension 0");
  if (h.n == 0) fail(ErrorKind::BadFormat, what + ": zero rows");
  return h;
}

void require_size(const std::vector<std::uint8_t>& bytes, std::uint64_t expected, const std::string& what) {
  if (bytes.size() < expected) {
    fail(ErrorKind::BadFormat, what + ": truncated file (expected " + std::to_string(expected) +
                                   " bytes, found " + std::to_string(bytes.size()) + ")");
  }
  if (bytes.size() > expected) {
    fail(ErrorKind::BadFormat, what + ": trailing bytes after checksum");
  }
}

void check_trailer(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  const std::size_t body = bytes.size() - 8;
  ByteReader tail(std::span<const std::uint8_t>(bytes).subspan(body), what);
  if (tail.u64() != fnv1a64(std::span(bytes).first(body))) {
    fail(ErrorKind::BadFormat, what + ": checksum mismatch");
  }
}

Vec orthogonal_unit(const Vec& mu, Rng& rng) {
  for (;;) {
    Vec v(mu.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
    v -= v.dot(mu) * mu;
    const double n = v.norm();
    if (n > 1e-12) return v / n;
  }
}

double log_sinh(double x) {
  // x > 0
  return x + std::log1p(-std::exp(-2.0 * x)) - std::numbers::ln2;
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
  return fnv1a64(read_file_bytes(path));
}

void save_pairs(const std::filesystem::path& path, const EmbeddingPairSet& set) {
  if (set.image.rows() != set.text.rows() || set.image.cols() != set.text.cols()) {
    fail(ErrorKind::ShapeMismatch, "save_pairs: image and text sides differ in shape");
  }
  ByteWriter w;
  w.raw(kPairsMagic, 4);
  w.u32(kStoreVersion);
  w.u32(static_cast<std::uint32_t>(set.dim()));
  w.u64(set.size());
  append_rows(w, set.image);
  append_rows(w, set.text);
  w.u64(fnv1a64(w.bytes()));
  write_file_bytes(path, w.bytes());
}

EmbeddingPairSet load_pairs(const std::filesystem::path& path) {
  const std::string what = path.string();
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes, what);
  const StoreHeader h = read_header(r, kPairsMagic, what);
  require_size(bytes, 20 + 2 * 4ULL * h.d * h.n + 8, what);
  check_trailer(bytes, what);
  EmbeddingPairSet set;
  read_rows(r, set.image, h.d, h.n);
  read_rows(r, set.text, h.d, h.n);
  validate_and_normalize(set.image, what + " (image side)");
  validate_and_normalize(set.text, what + " (text side)");
  return set;
}

void save_labeled(const std::filesystem::path& path, const LabeledEmbeddingSet& set) {
  if (set.labels.size() != set.size()) fail(ErrorKind::ShapeMismatch, "save_labeled: labels length != rows");
  if (set.has_correctness() && set.correct.size() != set.size()) {
    fail(ErrorKind::ShapeMismatch, "save_labeled: correctness length != rows");
  }
  ByteWriter w;
  w.raw(kLabeledMagic, 4);
  w.u32(kStoreVersion);
  w.u32(static_cast<std::uint32_t>(set.dim()));
  w.u64(set.size());
  w.u32(set.has_correctness() ? 1u : 0u);
  append_rows(w, set.points);
  for (std::int32_t l : set.labels) w.u32(static_cast<std::uint32_t>(l));
  for (std::uint8_t c : set.correct) w.u8(c);
  w.u64(fnv1a64(w.bytes()));
  write_file_bytes(path, w.bytes());
}

LabeledEmbeddingSet load_labeled(const std::filesystem::path& path) {
  const std::string what = path.string();
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  ByteReader r(bytes, what);
  const StoreHeader h = read_header(r, kLabeledMagic, what);
  const std::uint32_t flags = r.u32();
  if (flags & ~1u) fail(ErrorKind::BadFormat, what + ": unknown flags");
  const bool has_correct = flags & 1u;
  require_size(bytes, 24 + 4ULL * h.d * h.n + 4 * h.n + (has_correct ? h.n : 0) + 8, what);
  check_trailer(bytes, what);
  LabeledEmbeddingSet set;
  read_rows(r, set.points, h.d, h.n);
  set.labels.resize(h.n);
  for (auto& l : set.labels) l = static_cast<std::int32_t>(r.u32());
  if (has_correct) {
    set.correct.resize(h.n);
    for (auto& c : set.correct) {
      c = r.u8();
      if (c > 1) fail(ErrorKind::BadFormat, what + ": correctness bits must be 0 or 1");
    }
  }
  validate_and_normalize(set.points, what);
  return set;
}

SyntheticKind parse_synthetic_kind(const std::string& text) {
  if (text == "vmf") return SyntheticKind::Vmf;
  if (text == "vmf_mixture") return SyntheticKind::VmfMixture;
  if (text == "uniform") return SyntheticKind::Uniform;
  fail(ErrorKind::InvalidArgument, "kind: unknown synthetic kind '" + text + "'");
}

void SyntheticSpec::validate() const {
  if (dim < 2) fail(ErrorKind::InvalidArgument, "d: must be >= 2");
  if (count == 0) fail(ErrorKind::InvalidArgument, "count: must be positive");
  if (kind == SyntheticKind::Uniform) return;
  if (components.empty()) fail(ErrorKind::InvalidArgument, "components: at least one component required");
  if (kind == SyntheticKind::Vmf && components.size() != 1) {
    fail(ErrorKind::InvalidArgument, "components: kind vmf takes exactly one component");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < components.size(); ++i) {
    const auto& c = components[i];
    const std::string at = " (component " + std::to_string(i) + ")";
    if (c.mean.size() != dim) fail(ErrorKind::InvalidArgument, "mean: dimension differs from d" + at);
    if (!c.mean.allFinite() || std::abs(c.mean.norm() - 1.0) > 1e-9) {
      fail(ErrorKind::InvalidArgument, "mean: must be unit-norm" + at);
    }
    if (!(c.kappa >= 0.0) || !std::isfinite(c.kappa)) {
      fail(ErrorKind::InvalidArgument, "kappa: must be finite and >= 0" + at);
    }
    if (!(c.weight > 0.0)) fail(ErrorKind::InvalidArgument, "weight: must be positive" + at);
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-9) fail(ErrorKind::InvalidArgument, "weight: component weights must sum to 1");
}

Vec sample_vmf(const VmfComponent& comp, Rng& rng) {
  const Eigen::Index d = comp.mean.size();
  if (comp.kappa == 0.0) return sample_uniform(d, rng).coords();
  const double kappa = comp.kappa;
  double w;
  if (d == 3) {
    const double u = rng.uniform();
    w = 1.0 + std::log(u + (1.0 - u) * std::exp(-2.0 * kappa)) / kappa;
    w = std::clamp(w, -1.0, 1.0);
  } else {
    const double m1 = static_cast<double>(d - 1);
    const double b = (-2.0 * kappa + std::sqrt(4.0 * kappa * kappa + m1 * m1)) / m1;
    const double x0 = (1.0 - b) / (1.0 + b);
    const double c = kappa * x0 + m1 * std::log(1.0 - x0 * x0);
    for (;;) {
      const double ga = rng.gamma(0.5 * m1);
      const double gb = rng.gamma(0.5 * m1);
      const double z = ga / (ga + gb);
      w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
      const double u = rng.uniform();
      if (kappa * w + m1 * std::log(1.0 - x0 * w) - c >= std::log(u)) break;
    }
  }
  const Vec v = orthogonal_unit(comp.mean, rng);
  Vec x = w * comp.mean + std::sqrt(std::max(0.0, 1.0 - w * w)) * v;
  return x / x.norm();
}

LabeledEmbeddingSet generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  LabeledEmbeddingSet set;
  set.points.resize(spec.dim, static_cast<Eigen::Index>(spec.count));
  set.labels.resize(spec.count);

  std::vector<double> cumulative;
  double acc = 0.0;
  for (const auto& c : spec.components) cumulative.push_back(acc += c.weight);

  for (std::size_t i = 0; i < spec.count; ++i) {
    Vec x;
    std::int32_t label = 0;
    if (spec.kind == SyntheticKind::Uniform) {
      x = sample_uniform(spec.dim, rng).coords();
    } else {
      const double u = rng.uniform() * acc;
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      label = static_cast<std::int32_t>(std::min<std::size_t>(it - cumulative.begin(), cumulative.size() - 1));
      x = sample_vmf(spec.components[label], rng);
    }
    set.points.col(static_cast<Eigen::Index>(i)) = x.cast<float>();
    set.labels[i] = label;
  }

  if (spec.correctness) {
    set.correct.resize(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
      const SpherePoint z(set.points.col(static_cast<Eigen::Index>(i)).cast<double>());
      const double logit = spec.correctness->offset + spec.correctness->slope * mixture_logpdf(z, spec);
      const double p = 1.0 / (1.0 + std::exp(-logit));
      set.correct[i] = rng.bernoulli(p) ? 1 : 0;
    }
  }
  return set;
}

double log_bessel_i(double nu, double x) {
  if (nu < 0.0 || !(x > 0.0)) fail(ErrorKind::InvalidArgument, "log_bessel_i: need nu >= 0 and x > 0");
  const double log_half_x = std::log(0.5 * x);
  auto term = [&](double k) { return (2.0 * k + nu) * log_half_x - std::lgamma(k + 1.0) - std::lgamma(k + nu + 1.0); };
  // Terms peak near k* solving k(k + nu) = x^2 / 4.
  const double k_peak = std::max(0.0, std::floor(0.5 * (-nu + std::sqrt(nu * nu + x * x))));
  const double top = term(k_peak);
  double sum = 0.0;
  for (double k = k_peak; k >= 0.0; k -= 1.0) {
    const double r = std::exp(term(k) - top);
    sum += r;
    if (r < 1e-18) break;
  }
  for (double k = k_peak + 1.0;; k += 1.0) {
    const double r = std::exp(term(k) - top);
    sum += r;
    if (r < 1e-18) break;
  }
  return top + std::log(sum);
}

double analytic_vmf_logpdf(const SpherePoint& z, const VmfComponent& comp) {
  if (comp.kappa < 0.0) fail(ErrorKind::InvalidArgument, "kappa: must be >= 0");
  if (comp.mean.size() != z.dim()) fail(ErrorKind::ShapeMismatch, "vMF mean dimension differs from the point");
  const double kappa = comp.kappa;
  const double cosine = z.coords().dot(comp.mean);
  const Eigen::Index d = z.dim();
  if (kappa < 1e-12) return log_uniform_density(d) + kappa * cosine;
  if (d == 3) {
    return std::log(kappa) - std::log(4.0 * std::numbers::pi) - log_sinh(kappa) + kappa * cosine;
  }
  const double nu = 0.5 * static_cast<double>(d) - 1.0;
  const double log_norm = nu * std::log(kappa) - 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) -
                          log_bessel_i(nu, kappa);
  return log_norm + kappa * cosine;
}

double mixture_logpdf(const SpherePoint& z, const SyntheticSpec& spec) {
  if (spec.kind == SyntheticKind::Uniform || spec.components.empty()) return log_uniform_density(z.dim());
  std::vector<double> terms;
  terms.reserve(spec.components.size());
  for (const auto& c : spec.components) terms.push_back(std::log(c.weight) + analytic_vmf_logpdf(z, c));
  const double top = *std::max_element(terms.begin(), terms.end());
  double sum = 0.0;
  for (double t : terms) sum += std::exp(t - top);
  return top + std::log(sum);
}

std::vector<SpherePoint> fibonacci_sphere(std::size_t n) {
  std::vector<SpherePoint> nodes;
  nodes.reserve(n);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (std::size_t i = 0; i < n; ++i) {
    const double y = 1.0 - (2.0 * static_cast<double>(i) + 1.0) / static_cast<double>(n);
    const double r = std::sqrt(std::max(0.0, 1.0 - y * y));
    const double phi = golden * static_cast<double>(i);
    nodes.emplace_back(Vec{{r * std::cos(phi), y, r * std::sin(phi)}});
  }
  return nodes;
}

}  // namespace sphereflow
