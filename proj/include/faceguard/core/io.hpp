// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "faceguard/common.hpp"
#include "faceguard/core/tensor.hpp"

namespace faceguard {

// Flat binary container of named entries, all little-endian. Checkpoints and
// the dataset cache are instances of this format. Entry order is preserved,
// so writing what was read reproduces the file byte-for-byte.
//
// Layout:
//   magic   "FGBIN001" (8 bytes)
//   u64     entry count
//   entry*: u32 name length, name bytes,
//           u8  dtype (0 = f32 tensor, 1 = u64 vector, 2 = utf-8 string),
//           f32 tensor: u32 rank, u64 dims[rank], payload
//           u64 vector: u64 count, payload
//           string:     u64 byte count, payload
class BlobFile {
 public:
  static constexpr char kMagic[8] = {'F', 'G', 'B', 'I', 'N', '0', '0', '1'};

  void put_tensor(const std::string& name, const Tensor<float>& t) {
    Entry e;
    e.name = name;
    e.dtype = 0;
    e.dims.assign(t.shape().begin(), t.shape().end());
    e.f32 = t.vec();
    add(std::move(e));
  }

  void put_u64s(const std::string& name, const std::vector<std::uint64_t>& v) {
    Entry e;
    e.name = name;
    e.dtype = 1;
    e.u64 = v;
    add(std::move(e));
  }

  void put_u64(const std::string& name, std::uint64_t v) { put_u64s(name, {v}); }

  void put_string(const std::string& name, const std::string& s) {
    Entry e;
    e.name = name;
    e.dtype = 2;
    e.str = s;
    add(std::move(e));
  }

  bool has(const std::string& name) const { return index_.count(name) > 0; }

  Tensor<float> tensor(const std::string& name) const {
    const Entry& e = find(name, 0);
    std::vector<std::size_t> shape(e.dims.begin(), e.dims.end());
    Tensor<float> t(shape);
    t.vec() = e.f32;
    return t;
  }

  const std::vector<std::uint64_t>& u64s(const std::string& name) const {
    return find(name, 1).u64;
  }

  std::uint64_t u64(const std::string& name) const {
    const auto& v = u64s(name);
    if (v.size() != 1) throw FormatError("entry '" + name + "' is not a single u64");
    return v[0];
  }

  const std::string& string(const std::string& name) const { return find(name, 2).str; }

  void save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(kMagic, 8);
    write_u64(out, entries_.size());
    for (const Entry& e : entries_) {
      write_u32(out, static_cast<std::uint32_t>(e.name.size()));
      out.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      const char dt = static_cast<char>(e.dtype);
      out.write(&dt, 1);
      if (e.dtype == 0) {
        write_u32(out, static_cast<std::uint32_t>(e.dims.size()));
        for (auto d : e.dims) write_u64(out, d);
        out.write(reinterpret_cast<const char*>(e.f32.data()),
                  static_cast<std::streamsize>(e.f32.size() * sizeof(float)));
      } else if (e.dtype == 1) {
        write_u64(out, e.u64.size());
        out.write(reinterpret_cast<const char*>(e.u64.data()),
                  static_cast<std::streamsize>(e.u64.size() * sizeof(std::uint64_t)));
      } else {
        write_u64(out, e.str.size());
        out.write(e.str.data(), static_cast<std::streamsize>(e.str.size()));
      }
    }
    if (!out) throw IoError("write failed: " + path.string());
  }

  static BlobFile load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) {
      throw FormatError("not a faceguard binary file: " + path.string());
    }
    BlobFile blob;
    const std::uint64_t n = read_u64(in);
    for (std::uint64_t i = 0; i < n; ++i) {
      Entry e;
      const std::uint32_t name_len = read_u32(in);
      e.name.resize(name_len);
      in.read(e.name.data(), name_len);
      char dt;
      in.read(&dt, 1);
      e.dtype = static_cast<std::uint8_t>(dt);
      if (e.dtype == 0) {
        const std::uint32_t rank = read_u32(in);
        e.dims.resize(rank);
        std::size_t count = 1;
        for (auto& d : e.dims) {
          d = read_u64(in);
          count *= d;
        }
        e.f32.resize(count);
        in.read(reinterpret_cast<char*>(e.f32.data()),
                static_cast<std::streamsize>(count * sizeof(float)));
      } else if (e.dtype == 1) {
        e.u64.resize(read_u64(in));
        in.read(reinterpret_cast<char*>(e.u64.data()),
                static_cast<std::streamsize>(e.u64.size() * sizeof(std::uint64_t)));
      } else if (e.dtype == 2) {
        e.str.resize(read_u64(in));
        in.read(e.str.data(), static_cast<std::streamsize>(e.str.size()));
      } else {
        throw FormatError("unknown entry dtype in " + path.string());
      }
      if (!in) throw FormatError("truncated file: " + path.string());
      blob.add(std::move(e));
    }
    return blob;
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

 private:
  struct Entry {
    std::string name;
    std::uint8_t dtype = 0;
    std::vector<std::uint64_t> dims;
    std::vector<float> f32;
    std::vector<std::uint64_t> u64;
    std::string str;
  };

  void add(Entry e) {
    if (index_.count(e.name)) throw FormatError("duplicate entry name: " + e.name);
    index_[e.name] = entries_.size();
    entries_.push_back(std::move(e));
  }

  const Entry& find(const std::string& name, std::uint8_t dtype) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw FormatError("missing entry: " + name);
    const Entry& e = entries_[it->second];
    if (e.dtype != dtype) throw FormatError("entry '" + name + "' has unexpected type");
    return e;
  }

  static void write_u32(std::ostream& out, std::uint32_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_u64(std::ostream& out, std::uint64_t v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }
  static std::uint64_t read_u64(std::istream& in) {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), sizeof(v));
    return v;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// FNV-1a over a string; used for config fingerprints.
inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace faceguard
