// Copyright 2026 The echomae Authors
// SPDX-License-Identifier: Apache-2.0

#include "echomae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace echomae {

namespace {

constexpr char kMagic[4] = {'E', 'A', 'I', 'W'};

void put_u32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

class Reader {
 public:
  Reader(std::string buf, std::string path) : buf_(std::move(buf)), path_(std::move(path)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
      v = (v << 8) | static_cast<unsigned char>(buf_[off_ + static_cast<std::size_t>(i)]);
    }
    off_ += 4;
    return v;
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(
        static_cast<unsigned char>(buf_[off_]) |
        (static_cast<unsigned char>(buf_[off_ + 1]) << 8));
    off_ += 2;
    return v;
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[off_++]);
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(off_, n);
    off_ += n;
    return s;
  }
  void floats(float* dst, std::size_t count) {
    need(count * 4);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(dst, buf_.data() + off_, count * 4);
    } else {
      for (std::size_t i = 0; i < count; ++i) {
        std::uint32_t v = 0;
        for (int b = 3; b >= 0; --b) {
          v = (v << 8) | static_cast<unsigned char>(buf_[off_ + i * 4 + static_cast<std::size_t>(b)]);
        }
        dst[i] = std::bit_cast<float>(v);
      }
    }
    off_ += count * 4;
  }
  bool at_end() const { return off_ == buf_.size(); }

 private:
  void need(std::size_t n) const {
    if (off_ + n > buf_.size()) throw FormatError(path_ + ": truncated checkpoint");
  }
  std::string buf_;
  std::string path_;
  std::size_t off_ = 0;
};

}  // namespace

void save_checkpoint(const std::string& path, std::span<Variable* const> tensors) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, 1);
  put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
  for (const Variable* v : tensors) {
    if (v->name.size() > 0xffff) throw ContractError("tensor name too long: " + v->name);
    put_u16(buf, static_cast<std::uint16_t>(v->name.size()));
    buf.append(v->name);
    buf.push_back(static_cast<char>(v->shape.size()));
    for (int d : v->shape) put_u32(buf, static_cast<std::uint32_t>(d));
    if constexpr (std::endian::native == std::endian::little) {
      buf.append(reinterpret_cast<const char*>(v->value.data()), v->value.size() * 4);
    } else {
      for (float f : v->value) put_u32(buf, std::bit_cast<std::uint32_t>(f));
    }
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!f) throw IoError("short write: " + path);
}

std::vector<NamedTensor> load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  Reader r(ss.str(), path);

  const std::string magic = r.bytes(4);
  if (std::memcmp(magic.data(), kMagic, 4) != 0) {
    throw FormatError(path + ": bad magic (want \"EAIW\")");
  }
  const std::uint32_t version = r.u32();
  if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();

  std::vector<NamedTensor> out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = r.bytes(r.u16());
    const int ndim = r.u8();
    std::int64_t n = 1;
    for (int d = 0; d < ndim; ++d) {
      const std::uint32_t ext = r.u32();
      if (ext == 0) throw FormatError(path + ": zero extent in tensor " + t.name);
      t.shape.push_back(static_cast<int>(ext));
      n *= ext;
    }
    t.values.resize(static_cast<std::size_t>(n));
    r.floats(t.values.data(), t.values.size());
    out.push_back(std::move(t));
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after tensors");
  return out;
}

void restore_variables(std::span<Variable* const> variables,
                       const std::vector<NamedTensor>& tensors, RestorePolicy policy) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const auto& t : tensors) by_name[t.name] = &t;

  std::vector<std::string> missing, mismatched;
  for (Variable* v : variables) {
    auto it = by_name.find(v->name);
    if (it == by_name.end()) {
      missing.push_back(v->name);
      continue;
    }
    if (it->second->shape != v->shape) {
      mismatched.push_back(v->name + " (checkpoint " + shape_str(it->second->shape) +
                           ", model " + shape_str(v->shape) + ")");
    }
  }

  std::vector<std::string> extra;
  if (policy == RestorePolicy::kExact) {
    for (const auto& t : tensors) {
      bool used = false;
      for (Variable* v : variables) {
        if (v->name == t.name) {
          used = true;
          break;
        }
      }
      if (!used) extra.push_back(t.name);
    }
  }

  if (!missing.empty() || !mismatched.empty() || !extra.empty()) {
    std::string msg = "checkpoint schema mismatch:";
    auto join = [&msg](const char* label, const std::vector<std::string>& v) {
      if (v.empty()) return;
      msg += std::string(" ") + label + ":";
      for (const auto& s : v) msg += " " + s;
    };
    join("missing", missing);
    join("shape", mismatched);
    join("extra", extra);
    throw SchemaError(msg);
  }

  for (Variable* v : variables) v->value = by_name.at(v->name)->values;
}

}  // namespace echomae
