#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mebt/autograd.hpp"
#include "mebt/nn.hpp"
#include "mebt/tensor_io.hpp"

// Checkpoint container: "MBTC" magic, format version, a JSON header (run
// metadata plus a tensor directory with byte lengths), then one serialized
// tensor blob per directory entry, back to back in order.

namespace mebt::ckpt {

inline constexpr std::uint8_t kVersion = 1;

struct TensorEntry {
  std::string name;
  NdArray<float> data;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<TensorEntry> tensors;
};

inline std::string serialize_checkpoint(const Checkpoint& c) {
  nlohmann::json dir = nlohmann::json::array();
  std::vector<std::string> blobs;
  blobs.reserve(c.tensors.size());
  for (const auto& t : c.tensors) {
    blobs.push_back(io::serialize_tensor(t.data));
    dir.push_back({{"name", t.name}, {"bytes", blobs.back().size()}});
  }
  const nlohmann::json header = {{"meta", c.meta}, {"tensors", dir}};
  const std::string htext = header.dump();

  std::string out;
  out += "MBTC";
  out.push_back(static_cast<char>(kVersion));
  io::detail::put_le(out, static_cast<std::uint32_t>(htext.size()));
  out += htext;
  for (const auto& blob : blobs) out += blob;
  return out;
}

inline Checkpoint deserialize_checkpoint(const std::string& bytes) {
  {
    std::uint64_t off = 0;
    while (off < 4 && off < bytes.size() && bytes[off] == "MBTC"[off]) ++off;
    if (off < 4) throw FormatError("not a checkpoint file, expected MBTC magic", off);
  }
  if (bytes.size() < 9) throw FormatError("checkpoint truncated in header", bytes.size());
  if (static_cast<std::uint8_t>(bytes[4]) != kVersion)
    throw FormatError("unsupported checkpoint version " +
                          std::to_string(static_cast<int>(bytes[4])),
                      4);
  const auto hlen = io::detail::get_le<std::uint32_t>(bytes, 5);
  std::uint64_t off = 9;
  if (bytes.size() < off + hlen)
    throw FormatError("checkpoint truncated in JSON header", bytes.size());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(off, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad checkpoint header JSON: ") + e.what(), off);
  }
  off += hlen;

  Checkpoint c;
  if (!header.contains("meta") || !header.contains("tensors") || !header["tensors"].is_array())
    throw FormatError("checkpoint header missing meta/tensors", 9);
  c.meta = header["meta"];
  for (const auto& entry : header["tensors"]) {
    if (!entry.contains("name") || !entry.contains("bytes") || !entry["name"].is_string())
      throw FormatError("checkpoint tensor directory entry incomplete", 9);
    const auto len = entry["bytes"].get<std::uint64_t>();
    if (bytes.size() < off + len) throw FormatError("truncated tensor blob", bytes.size());
    TensorEntry t;
    t.name = entry["name"].get<std::string>();
    try {
      t.data = io::deserialize_tensor<float>(bytes.substr(off, len));
    } catch (const FormatError& e) {
      throw FormatError("tensor '" + t.name + "': " + e.what(), off + e.offset);
    }
    c.tensors.push_back(std::move(t));
    off += len;
  }
  if (off != bytes.size()) throw FormatError("trailing bytes after checkpoint", off);
  return c;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& c) {
  io::write_file(path, serialize_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(io::read_file(path));
}

// Parameter matrices <-> checkpoint tensors, by collected name.
template <typename S>
void append_params(Checkpoint& c, const nn::NamedParams<S>& params) {
  for (const auto& [name, p] : params) {
    NdArray<float> nd({p->val.rows(), p->val.cols()});
    for (Index i = 0; i < p->val.rows(); ++i)
      for (Index j = 0; j < p->val.cols(); ++j)
        nd.at({i, j}) = static_cast<float>(p->val(i, j));
    c.tensors.push_back({name, std::move(nd)});
  }
}

// Loads values into existing parameter nodes; every parameter must be present
// with matching shape (extra checkpoint tensors are ignored by this call).
template <typename S>
void restore_params(const Checkpoint& c, const nn::NamedParams<S>& params) {
  for (const auto& [name, p] : params) {
    const TensorEntry* found = nullptr;
    for (const auto& t : c.tensors)
      if (t.name == name) {
        found = &t;
        break;
      }
    if (found == nullptr) throw FormatError("checkpoint missing tensor '" + name + "'", 0);
    if (found->data.dims.size() != 2 || found->data.dims[0] != p->val.rows() ||
        found->data.dims[1] != p->val.cols())
      throw FormatError("checkpoint tensor '" + name + "' has wrong shape", 0);
    for (Index i = 0; i < p->val.rows(); ++i)
      for (Index j = 0; j < p->val.cols(); ++j)
        p->val(i, j) = static_cast<S>(found->data.at({i, j}));
  }
}

}  // namespace mebt::ckpt
