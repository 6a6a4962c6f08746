#include "sphereflow/checkpoint.hpp"

#include <cstring>

#include "sphereflow/bytes.hpp"
#include "sphereflow/datastore.hpp"
#include "sphereflow/error.hpp"

namespace sphereflow {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'C', 'K'};

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const FieldParams<T>& params) {
  if (!params.all_finite()) fail(ErrorKind::Numeric, "refusing to save non-finite parameters to " + path.string());
  ByteWriter w;
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(params.shape.dim));
  w.u32(static_cast<std::uint32_t>(params.shape.hidden));
  w.u32(static_cast<std::uint32_t>(params.shape.depth));
  w.u32(static_cast<std::uint32_t>(params.shape.freqs));
  w.u32(static_cast<std::uint32_t>(params.geometry));
  for (const auto& t : params.tensors()) {
    for (T v : t.data) w.f32(static_cast<float>(v));
  }
  w.u64(fnv1a64(w.bytes()));
  write_file_bytes(path, w.bytes());
}

FieldParamsF load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  const std::string what = path.string();
  ByteReader r(bytes, what);
  char magic[4];
  r.raw(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) fail(ErrorKind::BadFormat, what + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    fail(ErrorKind::BadFormat, what + ": unsupported checkpoint version " + std::to_string(version));
  }
  FieldShape shape;
  shape.dim = static_cast<int>(r.u32());
  shape.hidden = static_cast<int>(r.u32());
  shape.depth = static_cast<int>(r.u32());
  shape.freqs = static_cast<int>(r.u32());
  const std::uint32_t geometry = r.u32();
  if (geometry > static_cast<std::uint32_t>(Geometry::EuclideanGaussianBase)) {
    fail(ErrorKind::BadFormat, what + ": unknown geometry code " + std::to_string(geometry));
  }
  try {
    shape.validate();
  } catch (const Error& e) {
    fail(ErrorKind::BadFormat, what + ": " + e.what());
  }
  FieldParamsF params = FieldParamsF::zeros(shape, static_cast<Geometry>(geometry));
  std::size_t count = 0;
  for (const auto& t : params.tensors()) count += t.data.size();
  if (r.remaining() != count * sizeof(float) + sizeof(std::uint64_t)) {
    fail(ErrorKind::BadFormat, what + ": expected " + std::to_string(count) + " parameters for the header shape, " +
                                   "file size disagrees (truncated or trailing bytes)");
  }
  for (auto& t : params.tensors()) {
    for (float& v : t.data) v = r.f32();
  }
  const std::size_t body = r.offset();
  const std::uint64_t stored = r.u64();
  if (stored != fnv1a64(std::span(bytes.data(), body))) fail(ErrorKind::BadFormat, what + ": checksum mismatch");
  if (!params.all_finite()) fail(ErrorKind::BadFormat, what + ": non-finite parameter values");
  return params;
}

std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint) {
  std::filesystem::path p = checkpoint;
  p += ".meta";
  return p;
}

template void save_checkpoint<float>(const std::filesystem::path&, const FieldParamsF&);
template void save_checkpoint<double>(const std::filesystem::path&, const FieldParamsD&);

}  // namespace sphereflow
