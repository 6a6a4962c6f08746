#include "sphereflow/bytes.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "sphereflow/error.hpp"

namespace sphereflow {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

void ByteWriter::raw(const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  bytes_.insert(bytes_.end(), p, p + n);
}

void ByteWriter::u32(std::uint32_t v) { raw(&v, sizeof v); }
void ByteWriter::u64(std::uint64_t v) { raw(&v, sizeof v); }
void ByteWriter::f32(float v) { raw(&v, sizeof v); }

void ByteReader::raw(void* out, std::size_t n) {
  if (n > remaining()) {
    fail(ErrorKind::BadFormat, what_ + ": truncated file (needed " + std::to_string(n) + " bytes at offset " +
                                   std::to_string(pos_) + ")");
  }
  std::memcpy(out, bytes_.data() + pos_, n);
  pos_ += n;
}

std::uint8_t ByteReader::u8() {
  std::uint8_t v;
  raw(&v, 1);
  return v;
}

std::uint32_t ByteReader::u32() {
  std::uint32_t v;
  raw(&v, sizeof v);
  return v;
}

std::uint64_t ByteReader::u64() {
  std::uint64_t v;
  raw(&v, sizeof v);
  return v;
}

float ByteReader::f32() {
  float v;
  raw(&v, sizeof v);
  return v;
}

bool is_gzip_path(const std::filesystem::path& path) { return path.extension() == ".gz"; }

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(path, ec)) {
    fail(ErrorKind::InputNotFound, "no such file: " + path.string());
  }
  std::vector<std::uint8_t> out;
  if (is_gzip_path(path)) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) fail(ErrorKind::InputNotFound, "cannot open " + path.string());
    std::uint8_t buf[1 << 16];
    for (;;) {
      const int n = gzread(f, buf, sizeof buf);
      if (n < 0) {
        gzclose(f);
        fail(ErrorKind::BadFormat, path.string() + ": corrupt gzip stream");
      }
      if (n == 0) break;
      out.insert(out.end(), buf, buf + n);
    }
    gzclose(f);
    return out;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::InputNotFound, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  out.resize(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!in) fail(ErrorKind::Io, "read failed: " + path.string());
  return out;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  if (is_gzip_path(path)) {
    gzFile f = gzopen(tmp.c_str(), "wb9");
    if (!f) fail(ErrorKind::Io, "cannot create " + tmp.string());
    std::size_t done = 0;
    while (done < bytes.size()) {
      const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(bytes.size() - done, 1u << 30));
      if (gzwrite(f, bytes.data() + done, chunk) != static_cast<int>(chunk)) {
        gzclose(f);
        fail(ErrorKind::Io, "write failed: " + tmp.string());
      }
      done += chunk;
    }
    if (gzclose(f) != Z_OK) fail(ErrorKind::Io, "write failed: " + tmp.string());
  } else {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot create " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.close();
    if (!out) fail(ErrorKind::Io, "write failed: " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) fail(ErrorKind::Io, "cannot move " + tmp.string() + " into place: " + ec.message());
}

void write_file_text(const std::filesystem::path& path, std::string_view text) {
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

}  // namespace sphereflow
