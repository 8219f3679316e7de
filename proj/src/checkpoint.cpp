#include "utr/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <vector>

namespace utr {

namespace {

constexpr const char* kMagic = "UTRCKPT";

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data), chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

void append_f32(std::string& out, const Tensor& t) {
  const std::size_t start = out.size();
  out.resize(start + static_cast<std::size_t>(t.numel()) * 4);
  char* dst = out.data() + start;
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(t[i]));
    for (int b = 0; b < 4; ++b) dst[i * 4 + b] = static_cast<char>((bits >> (8 * b)) & 0xFFu);
  }
}

std::string hex32(std::uint32_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(8) << std::setfill('0') << v;
  return os.str();
}

void check_token(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos) {
    throw CheckpointError(std::string("invalid ") + what + " '" + s + "' (must be non-empty, no whitespace)");
  }
}

}  // namespace

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ostringstream manifest;
  std::string payload;
  manifest << kMagic << ' ' << ckpt.version << '\n';
  for (const auto& [key, value] : ckpt.meta) {
    check_token(key, "meta key");
    if (value.find('\n') != std::string::npos) throw CheckpointError("meta value for " + key + " contains a newline");
    manifest << "meta " << key << ' ' << value << '\n';
  }
  {
    const std::size_t off = payload.size();
    payload += ckpt.config_text;
    manifest << "blob config " << off << ' ' << ckpt.config_text.size() << ' '
             << hex32(crc_of(ckpt.config_text.data(), ckpt.config_text.size())) << '\n';
  }
  for (const auto& [name, t] : ckpt.tensors) {
    check_token(name, "tensor name");
    const std::size_t off = payload.size();
    append_f32(payload, t);
    const std::size_t len = payload.size() - off;
    manifest << "tensor " << name << " f32 " << t.rank();
    for (auto d : t.shape()) manifest << ' ' << d;
    manifest << ' ' << off << ' ' << len << ' ' << hex32(crc_of(payload.data() + off, len)) << '\n';
  }
  manifest << "end " << payload.size() << '\n';

  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + tmp + " for writing");
    const std::string head = manifest.str();
    out.write(head.data(), static_cast<std::streamsize>(head.size()));
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError("write failed for " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("cannot move checkpoint into " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  struct Entry {
    std::string kind, name;
    Shape shape;
    std::size_t offset = 0, length = 0;
    std::uint32_t crc = 0;
  };
  std::vector<Entry> entries;
  Checkpoint ckpt;
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string {
    const std::size_t nl = content.find('\n', pos);
    if (nl == std::string::npos) throw CheckpointError(path + ": truncated manifest");
    std::string line = content.substr(pos, nl - pos);
    pos = nl + 1;
    return line;
  };

  {
    std::istringstream head(next_line());
    std::string magic;
    int version = 0;
    head >> magic >> version;
    if (magic != kMagic) throw CheckpointError(path + ": not a checkpoint file");
    if (version != kCheckpointVersion) {
      throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version) + " (expected " +
                            std::to_string(kCheckpointVersion) + ")");
    }
    ckpt.version = version;
  }
  std::size_t data_len = 0;
  bool ended = false;
  while (!ended) {
    const std::string line = next_line();
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ckpt.meta[key] = value;
    } else if (kind == "blob" || kind == "tensor") {
      Entry e;
      e.kind = kind;
      ls >> e.name;
      if (kind == "tensor") {
        std::string dtype;
        int rank = -1;
        ls >> dtype >> rank;
        if (dtype != "f32") throw CheckpointError(path + ": unsupported dtype " + dtype + " for " + e.name);
        if (rank < 0 || rank > 8) throw CheckpointError(path + ": corrupt manifest (rank) for " + e.name);
        e.shape.resize(static_cast<std::size_t>(rank));
        for (auto& d : e.shape) ls >> d;
      }
      std::string crc_hex;
      ls >> e.offset >> e.length >> crc_hex;
      if (!ls) throw CheckpointError(path + ": corrupt manifest line: " + line);
      e.crc = static_cast<std::uint32_t>(std::stoul(crc_hex, nullptr, 16));
      if (kind == "tensor" && static_cast<std::size_t>(shape_numel(e.shape)) * 4 != e.length) {
        throw CheckpointError(path + ": corrupt manifest, length does not match shape for " + e.name);
      }
      entries.push_back(std::move(e));
    } else if (kind == "end") {
      ls >> data_len;
      if (!ls) throw CheckpointError(path + ": corrupt manifest end line");
      ended = true;
    } else {
      throw CheckpointError(path + ": corrupt manifest line: " + line);
    }
  }
  if (content.size() - pos != data_len) {
    throw CheckpointError(path + ": payload length " + std::to_string(content.size() - pos) + " does not match manifest (" +
                          std::to_string(data_len) + " bytes); file truncated or corrupt");
  }
  const char* data = content.data() + pos;
  for (const auto& e : entries) {
    if (e.offset + e.length > data_len) throw CheckpointError(path + ": entry " + e.name + " exceeds payload");
    if (crc_of(data + e.offset, e.length) != e.crc) throw CheckpointError(path + ": checksum mismatch for " + e.name);
    if (e.kind == "blob") {
      if (e.name == "config") ckpt.config_text.assign(data + e.offset, e.length);
      continue;
    }
    Tensor t(e.shape);
    const auto* src = reinterpret_cast<const unsigned char*>(data + e.offset);
    for (std::int64_t i = 0; i < t.numel(); ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(src[i * 4 + b]) << (8 * b);
      t[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    ckpt.tensors.emplace(e.name, std::move(t));
  }
  return ckpt;
}

}  // namespace utr
