#include "pbdr/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace pbdr {

namespace {

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
}

}  // namespace

const CheckpointEntry* Checkpoint::find(const std::string& name) const {
  for (const auto& e : manifest) {
    if (e.name == name) return &e;
  }
  return nullptr;
}

void write_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  out << kCheckpointMagic << '\n';
  for (const auto& [key, value] : ckpt.meta) out << "meta " << key << ' ' << value << '\n';
  for (const auto& e : ckpt.manifest) {
    out << "param " << e.name << ' ' << e.rows << 'x' << e.cols << ' ' << e.offset << '\n';
  }
  out << "blob " << ckpt.blob.size() << '\n';
  for (float f : ckpt.blob) {
    const std::uint32_t bits = to_little_endian(std::bit_cast<std::uint32_t>(f));
    out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  if (!out) throw CheckpointError("write failed for " + path);
}

Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  std::string line;
  if (!std::getline(in, line) || line != kCheckpointMagic) {
    throw CheckpointError(path + ": missing " + std::string(kCheckpointMagic) + " header");
  }
  Checkpoint ckpt;
  std::size_t count = 0;
  bool have_blob = false;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string kind;
    fields >> kind;
    if (kind == "meta") {
      std::string key;
      fields >> key;
      std::string value;
      std::getline(fields >> std::ws, value);
      ckpt.meta[key] = value;
    } else if (kind == "param") {
      CheckpointEntry e;
      std::string shape;
      fields >> e.name >> shape >> e.offset;
      const auto x = shape.find('x');
      if (!fields || x == std::string::npos) throw CheckpointError(path + ": malformed manifest line: " + line);
      e.rows = std::stol(shape.substr(0, x));
      e.cols = std::stol(shape.substr(x + 1));
      ckpt.manifest.push_back(e);
    } else if (kind == "blob") {
      fields >> count;
      if (!fields) throw CheckpointError(path + ": malformed blob line");
      have_blob = true;
      break;
    } else {
      throw CheckpointError(path + ": unexpected line: " + line);
    }
  }
  if (!have_blob) throw CheckpointError(path + ": missing blob");
  ckpt.blob.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    if (!in.read(reinterpret_cast<char*>(&bits), sizeof bits)) throw CheckpointError(path + ": truncated blob");
    ckpt.blob[i] = std::bit_cast<float>(to_little_endian(bits));
  }
  for (const auto& e : ckpt.manifest) {
    if (e.offset + static_cast<std::size_t>(e.rows * e.cols) > count) {
      throw CheckpointError(path + ": parameter " + e.name + " exceeds blob");
    }
  }
  return ckpt;
}

}  // namespace pbdr
