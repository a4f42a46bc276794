#include "xsgen/serialize.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>

#include "json.hpp"
#include "xsgen/common.hpp"

namespace xsg {

namespace {

constexpr char kMagic[8] = {'X', 'S', 'G', 'T', 'N', 'S', '1', '\n'};

std::vector<uint8_t> deflate_bytes(const uint8_t* src, size_t n) {
  uLongf bound = compressBound(static_cast<uLong>(n));
  std::vector<uint8_t> out(bound);
  XSG_CHECK(compress(out.data(), &bound, src, static_cast<uLong>(n)) == Z_OK,
            "zlib compress failed");
  out.resize(bound);
  return out;
}

std::vector<uint8_t> inflate_bytes(const uint8_t* src, size_t n, size_t raw_size) {
  std::vector<uint8_t> out(raw_size);
  uLongf dst = static_cast<uLongf>(raw_size);
  if (uncompress(out.data(), &dst, src, static_cast<uLong>(n)) != Z_OK ||
      dst != raw_size)
    throw IoError("tensor container: corrupt compressed block");
  return out;
}

template <typename T>
void write_pod(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T read_pod(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw IoError("tensor container: truncated file");
  return v;
}

void write_string(std::ofstream& f, const std::string& s) {
  write_pod<uint32_t>(f, static_cast<uint32_t>(s.size()));
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}
std::string read_string(std::ifstream& f) {
  const uint32_t n = read_pod<uint32_t>(f);
  XSG_CHECK(n < (1u << 24), "tensor container: absurd string length");
  std::string s(n, '\0');
  f.read(s.data(), n);
  if (!f) throw IoError("tensor container: truncated string");
  return s;
}

void write_blob(std::ofstream& f, const uint8_t* raw, size_t raw_size) {
  auto comp = deflate_bytes(raw, raw_size);
  write_pod<uint64_t>(f, raw_size);
  write_pod<uint64_t>(f, comp.size());
  f.write(reinterpret_cast<const char*>(comp.data()),
          static_cast<std::streamsize>(comp.size()));
}
std::vector<uint8_t> read_blob(std::ifstream& f) {
  const uint64_t raw_size = read_pod<uint64_t>(f);
  const uint64_t comp_size = read_pod<uint64_t>(f);
  std::vector<uint8_t> comp(comp_size);
  f.read(reinterpret_cast<char*>(comp.data()), static_cast<std::streamsize>(comp_size));
  if (!f) throw IoError("tensor container: truncated blob");
  return inflate_bytes(comp.data(), comp.size(), raw_size);
}

}  // namespace

void TensorFile::save(const std::string& path) const {
  std::ofstream f(path, std::ios::binary);
  XSG_CHECK(f.good(), "cannot open for writing: " + path);
  f.write(kMagic, sizeof(kMagic));
  write_pod<uint32_t>(f, static_cast<uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    write_string(f, k);
    write_string(f, v);
  }
  write_pod<uint32_t>(f, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    write_string(f, name);
    write_pod<uint32_t>(f, static_cast<uint32_t>(t.ndim()));
    for (int i = 0; i < t.ndim(); ++i) write_pod<int64_t>(f, t.dim(i));
    write_blob(f, reinterpret_cast<const uint8_t*>(t.data()),
               static_cast<size_t>(t.numel()) * sizeof(double));
  }
  write_pod<uint32_t>(f, static_cast<uint32_t>(bytes.size()));
  for (const auto& [name, b] : bytes) {
    write_string(f, name);
    write_blob(f, b.data(), b.size());
  }
  XSG_CHECK(f.good(), "write failed: " + path);
}

TensorFile TensorFile::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f.good()) throw IoError("cannot open: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not a tensor container: " + path);
  TensorFile tf;
  const uint32_t nmeta = read_pod<uint32_t>(f);
  for (uint32_t i = 0; i < nmeta; ++i) {
    auto k = read_string(f);
    tf.meta[k] = read_string(f);
  }
  const uint32_t nt = read_pod<uint32_t>(f);
  for (uint32_t i = 0; i < nt; ++i) {
    auto name = read_string(f);
    const uint32_t nd = read_pod<uint32_t>(f);
    XSG_CHECK(nd <= 8, "tensor container: absurd rank");
    std::vector<int64_t> shape(nd);
    for (uint32_t d = 0; d < nd; ++d) shape[d] = read_pod<int64_t>(f);
    auto raw = read_blob(f);
    Tensor t(shape);
    if (raw.size() != static_cast<size_t>(t.numel()) * sizeof(double))
      throw IoError("tensor container: payload size mismatch for " + name);
    std::memcpy(t.data(), raw.data(), raw.size());
    tf.tensors.emplace(std::move(name), std::move(t));
  }
  const uint32_t nb = read_pod<uint32_t>(f);
  for (uint32_t i = 0; i < nb; ++i) {
    auto name = read_string(f);
    tf.bytes.emplace(std::move(name), read_blob(f));
  }
  return tf;
}

void save_checkpoint(const std::string& path, const std::string& manifest_json,
                     const nn::ParamMap& params) {
  TensorFile tf;
  tf.meta["manifest"] = manifest_json;
  for (const auto& [name, v] : params.items) tf.tensors[name] = v->val.clone();
  tf.save(path);
}

Checkpoint load_checkpoint(const std::string& path) {
  auto tf = TensorFile::load(path);
  auto it = tf.meta.find("manifest");
  if (it == tf.meta.end()) throw IoError("checkpoint without manifest: " + path);
  Checkpoint ck;
  ck.manifest_json = it->second;
  auto j = nlohmann::json::parse(ck.manifest_json, nullptr, false);
  if (j.is_discarded()) throw IoError("checkpoint manifest is not valid JSON");
  if (!j.contains("convention") || j["convention"] != kConventionVersion)
    throw IoError("checkpoint convention version mismatch (want " +
                  std::string(kConventionVersion) + ")");
  ck.tensors = std::move(tf.tensors);
  return ck;
}

void apply_checkpoint(const Checkpoint& ck, nn::ParamMap& params) {
  for (auto& [name, v] : params.items) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw IoError("checkpoint missing tensor: " + name);
    if (!(it->second.shape() == v->val.shape()))
      throw IoError("checkpoint tensor shape mismatch: " + name);
    v->val = it->second.clone();
  }
}

}  // namespace xsg
