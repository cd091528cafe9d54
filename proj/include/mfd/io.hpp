#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfd/tensor.hpp"

namespace mfd {

static_assert(std::endian::native == std::endian::little, "MVT1 I/O assumes a little-endian host");

enum class IoStatus {
  ok = 0,
  bad_magic = 1,
  truncated_payload = 2,
  length_mismatch = 3,
  bad_header = 4,
};

class IoError : public std::runtime_error {
 public:
  IoError(IoStatus status, const std::string& msg) : std::runtime_error(msg), status_(status) {}
  IoStatus status() const { return status_; }

 private:
  IoStatus status_;
};

namespace detail {

inline void put_bytes(std::string& out, const void* p, size_t n) {
  out.append(static_cast<const char*>(p), n);
}

template <typename U>
U read_pod(const std::string& buf, size_t& pos, const char* what) {
  if (pos + sizeof(U) > buf.size()) throw IoError(IoStatus::truncated_payload, std::string("truncated while reading ") + what);
  U v;
  std::memcpy(&v, buf.data() + pos, sizeof(U));
  pos += sizeof(U);
  return v;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(IoStatus::truncated_payload, "cannot open " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

inline void write_file(const std::filesystem::path& path, const std::string& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

template <typename T>
const char* dtype_name();
template <>
inline const char* dtype_name<float>() {
  return "f32";
}
template <>
inline const char* dtype_name<double>() {
  return "f64";
}

}  // namespace detail

// MVT1 tensor file: magic "MVT1", u32 little-endian header length, UTF-8 JSON
// header {dtype, shape, order}, then raw little-endian element data.
template <typename T>
std::string encode_tensor(const Tensor<T>& t) {
  nlohmann::json header;
  header["dtype"] = detail::dtype_name<T>();
  header["shape"] = t.shape();
  header["order"] = "row-major";
  const std::string htext = header.dump();

  std::string out;
  out.reserve(8 + htext.size() + static_cast<size_t>(t.numel()) * sizeof(T));
  detail::put_bytes(out, "MVT1", 4);
  const uint32_t hlen = static_cast<uint32_t>(htext.size());
  detail::put_bytes(out, &hlen, 4);
  out += htext;
  detail::put_bytes(out, t.data(), static_cast<size_t>(t.numel()) * sizeof(T));
  return out;
}

template <typename T>
Tensor<T> decode_tensor(const std::string& buf) {
  size_t pos = 0;
  if (buf.size() < 4 || buf.compare(0, 4, "MVT1") != 0) throw IoError(IoStatus::bad_magic, "bad MVT1 magic");
  pos = 4;
  const uint32_t hlen = detail::read_pod<uint32_t>(buf, pos, "header length");
  if (pos + hlen > buf.size()) throw IoError(IoStatus::truncated_payload, "truncated MVT1 header");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(pos, hlen));
  } catch (const nlohmann::json::exception&) {
    throw IoError(IoStatus::bad_header, "unparseable MVT1 header");
  }
  pos += hlen;
  if (!header.contains("dtype") || !header.contains("shape")) throw IoError(IoStatus::bad_header, "MVT1 header missing fields");
  const std::string dtype = header["dtype"].get<std::string>();
  if (dtype != detail::dtype_name<T>())
    throw IoError(IoStatus::bad_header, "MVT1 dtype is " + dtype + ", expected " + detail::dtype_name<T>());
  const std::vector<int> shape = header["shape"].get<std::vector<int>>();

  const size_t expected = static_cast<size_t>(Tensor<T>::count(shape)) * sizeof(T);
  const size_t have = buf.size() - pos;
  if (have < expected) throw IoError(IoStatus::truncated_payload, "MVT1 payload truncated");
  if (have > expected) throw IoError(IoStatus::length_mismatch, "MVT1 header/payload length mismatch");

  Tensor<T> t(shape);
  std::memcpy(t.data(), buf.data() + pos, expected);
  return t;
}

template <typename T>
void write_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
  if (!t.all_finite()) throw std::invalid_argument("write_tensor: non-finite values in " + path.string());
  detail::write_file(path, encode_tensor(t));
}

template <typename T>
Tensor<T> read_tensor(const std::filesystem::path& path) {
  return decode_tensor<T>(detail::read_file(path));
}

// Peek at the stored dtype without decoding the payload.
inline std::string tensor_file_dtype(const std::filesystem::path& path) {
  const std::string buf = detail::read_file(path);
  if (buf.size() < 8 || buf.compare(0, 4, "MVT1") != 0) throw IoError(IoStatus::bad_magic, "bad MVT1 magic");
  uint32_t hlen;
  std::memcpy(&hlen, buf.data() + 4, 4);
  if (8 + static_cast<size_t>(hlen) > buf.size()) throw IoError(IoStatus::truncated_payload, "truncated MVT1 header");
  return nlohmann::json::parse(buf.substr(8, hlen)).at("dtype").get<std::string>();
}

// MVZ1 archive: a flat named-entry container used for checkpoints.
// Layout: magic "MVZ1", u64 entry count, then per entry
// {u32 name length, name bytes, u64 payload length, payload bytes}.
class Archive {
 public:
  void add_entry(const std::string& name, std::string payload) {
    if (index_.count(name)) throw std::invalid_argument("Archive: duplicate entry " + name);
    index_[name] = entries_.size();
    entries_.push_back({name, std::move(payload)});
  }

  template <typename T>
  void add_tensor(const std::string& name, const Tensor<T>& t) {
    add_entry(name, encode_tensor(t));
  }

  void add_text(const std::string& name, const std::string& text) { add_entry(name, text); }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  const std::string& payload(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("Archive: no entry " + name);
    return entries_[it->second].payload;
  }

  template <typename T>
  Tensor<T> tensor(const std::string& name) const {
    return decode_tensor<T>(payload(name));
  }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(e.name);
    return out;
  }

  void save(const std::filesystem::path& path) const {
    std::string out;
    detail::put_bytes(out, "MVZ1", 4);
    const uint64_t n = entries_.size();
    detail::put_bytes(out, &n, 8);
    for (const auto& e : entries_) {
      const uint32_t nl = static_cast<uint32_t>(e.name.size());
      detail::put_bytes(out, &nl, 4);
      out += e.name;
      const uint64_t pl = e.payload.size();
      detail::put_bytes(out, &pl, 8);
      out += e.payload;
    }
    detail::write_file(path, out);
  }

  static Archive load(const std::filesystem::path& path) {
    const std::string buf = detail::read_file(path);
    if (buf.size() < 4 || buf.compare(0, 4, "MVZ1") != 0) throw IoError(IoStatus::bad_magic, "bad MVZ1 magic");
    size_t pos = 4;
    const uint64_t n = detail::read_pod<uint64_t>(buf, pos, "entry count");
    Archive ar;
    for (uint64_t i = 0; i < n; ++i) {
      const uint32_t nl = detail::read_pod<uint32_t>(buf, pos, "name length");
      if (pos + nl > buf.size()) throw IoError(IoStatus::truncated_payload, "truncated entry name");
      std::string name = buf.substr(pos, nl);
      pos += nl;
      const uint64_t pl = detail::read_pod<uint64_t>(buf, pos, "payload length");
      if (pos + pl > buf.size()) throw IoError(IoStatus::truncated_payload, "truncated entry payload");
      ar.add_entry(name, buf.substr(pos, pl));
      pos += pl;
    }
    if (pos != buf.size()) throw IoError(IoStatus::length_mismatch, "MVZ1 trailing bytes");
    return ar;
  }

 private:
  struct Entry {
    std::string name;
    std::string payload;
  };
  std::vector<Entry> entries_;
  std::map<std::string, size_t> index_;
};

inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const uint8_t*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hash_hex(uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[static_cast<size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return s;
}

inline std::string file_hash(const std::filesystem::path& path) {
  const std::string buf = detail::read_file(path);
  return hash_hex(fnv1a64(buf.data(), buf.size()));
}

}  // namespace mfd
