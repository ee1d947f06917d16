#include "fedzo/checkpoint.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "fedzo/error.hpp"

namespace fedzo {

DescriptorHash descriptor_hash(const ModelSpec& spec) {
  const std::string text = describe(spec);
  DescriptorHash h{};
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), h.data(), &len, EVP_sha256(), nullptr) != 1 || len != h.size()) {
    throw Error("crypto", "SHA-256 failed");
  }
  return h;
}

std::vector<std::uint8_t> pack_mask(const Mask& mask) {
  std::vector<std::uint8_t> out((mask.size() + 7) / 8, 0);
  for (std::size_t j = 0; j < mask.size(); ++j) {
    if (mask.test(j)) out[j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
  }
  return out;
}

Mask unpack_mask(std::span<const std::uint8_t> bytes, std::size_t n) {
  if (bytes.size() != (n + 7) / 8) throw CorruptDataError("packed mask has the wrong length");
  std::vector<std::uint8_t> bits(n);
  for (std::size_t j = 0; j < n; ++j) bits[j] = (bytes[j / 8] >> (j % 8)) & 1u;
  if (n % 8 != 0 && (bytes.back() >> (n % 8)) != 0) throw CorruptDataError("packed mask has stray padding bits");
  return Mask(std::move(bits));
}

namespace {

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const std::uint8_t> b, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[off + i]) << (8 * i);
  return v;
}

void check_hash(const ModelSpec& spec, std::span<const std::uint8_t> got, const std::string& source) {
  const DescriptorHash want = descriptor_hash(spec);
  if (!std::equal(want.begin(), want.end(), got.begin())) {
    throw CorruptDataError(source + ": descriptor hash does not match the model");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_mask(const ModelSpec& spec, const Mask& mask) {
  validate_mask(spec, mask);
  std::vector<std::uint8_t> out;
  put_u64(out, mask.size());
  const auto packed = pack_mask(mask);
  out.insert(out.end(), packed.begin(), packed.end());
  const auto h = descriptor_hash(spec);
  out.insert(out.end(), h.begin(), h.end());
  return out;
}

Mask decode_mask(const ModelSpec& spec, std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() < 8) throw CorruptDataError(source + ": truncated at byte offset " + std::to_string(bytes.size()));
  const std::uint64_t n = get_u64(bytes, 0);
  const std::size_t packed = (n + 7) / 8;
  if (n > bytes.size() * 8 || bytes.size() != 8 + packed + 32) {
    throw CorruptDataError(source + ": size " + std::to_string(bytes.size()) + " does not fit a mask of " +
                           std::to_string(n) + " entries");
  }
  check_hash(spec, bytes.subspan(8 + packed, 32), source);
  Mask m = unpack_mask(bytes.subspan(8, packed), n);
  validate_mask(spec, m);
  return m;
}

std::vector<std::uint8_t> encode_checkpoint(const ModelSpec& spec, const ModelParams& params, const Mask& mask) {
  validate_mask(spec, mask);
  if (params.size() != mask.size()) throw ShapeError("parameters and mask differ in length");
  const auto h = descriptor_hash(spec);
  std::vector<std::uint8_t> out(h.begin(), h.end());
  put_u64(out, params.size());
  for (double v : params.flat()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  const auto packed = pack_mask(mask);
  out.insert(out.end(), packed.begin(), packed.end());
  return out;
}

Checkpoint decode_checkpoint(const ModelSpec& spec, std::span<const std::uint8_t> bytes, const std::string& source) {
  if (bytes.size() < 40) throw CorruptDataError(source + ": truncated at byte offset " + std::to_string(bytes.size()));
  check_hash(spec, bytes.subspan(0, 32), source);
  const std::uint64_t n = get_u64(bytes, 32);
  if (n != param_count(spec) || bytes.size() != 40 + 8 * n + (n + 7) / 8) {
    throw CorruptDataError(source + ": size " + std::to_string(bytes.size()) + " does not fit " + std::to_string(n) +
                           " parameters");
  }
  std::vector<double> flat(n);
  for (std::size_t j = 0; j < n; ++j) flat[j] = std::bit_cast<double>(get_u64(bytes, 40 + 8 * j));
  Checkpoint c{ModelParams(spec, std::move(flat)), unpack_mask(bytes.subspan(40 + 8 * n), n)};
  validate_mask(spec, c.mask);
  return c;
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(tmp.string() + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError(tmp.string() + ": write failed");
  }
  std::filesystem::rename(tmp, path);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void save_mask(const std::filesystem::path& path, const ModelSpec& spec, const Mask& mask) {
  write_file_atomic(path, encode_mask(spec, mask));
}

Mask load_mask(const std::filesystem::path& path, const ModelSpec& spec) {
  return decode_mask(spec, read_file(path), path.string());
}

void save_checkpoint(const std::filesystem::path& path, const ModelSpec& spec, const ModelParams& params,
                     const Mask& mask) {
  write_file_atomic(path, encode_checkpoint(spec, params, mask));
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelSpec& spec) {
  return decode_checkpoint(spec, read_file(path), path.string());
}

}  // namespace fedzo
