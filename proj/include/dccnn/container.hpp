#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <variant>
#include <vector>

#include "dccnn/errors.hpp"

namespace dccnn {

/// Named-array container file.
///
///   "CSDT"  u16 version  u32 entry_count
///   per entry: u32 name_len, name bytes (UTF-8), u8 dtype (1 = f32, 2 = f64),
///              u8 rank, rank x u64 extents, row-major payload
///
/// All integers and payload values are little-endian.
class ArrayContainer {
 public:
  static constexpr std::uint16_t kVersion = 1;
  enum class DType : std::uint8_t { kF32 = 1, kF64 = 2 };

  struct Entry {
    std::string name;
    std::vector<std::uint64_t> extents;
    std::variant<std::vector<float>, std::vector<double>> values;

    DType dtype() const { return values.index() == 0 ? DType::kF32 : DType::kF64; }
    std::size_t size() const {
      return std::visit([](const auto& v) { return v.size(); }, values);
    }
  };

  void add(std::string name, std::vector<std::uint64_t> extents, std::vector<double> values) {
    insert(Entry{std::move(name), std::move(extents), std::move(values)});
  }
  void add(std::string name, std::vector<std::uint64_t> extents, std::vector<float> values) {
    insert(Entry{std::move(name), std::move(extents), std::move(values)});
  }

  bool has(const std::string& name) const { return find(name) != nullptr; }
  const std::vector<Entry>& entries() const { return entries_; }

  const Entry& at(const std::string& name) const {
    const Entry* e = find(name);
    if (!e) throw DataError("container has no entry '" + name + "'");
    return *e;
  }

  /// Values of an entry converted to double.
  std::vector<double> get(const std::string& name) const {
    return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, at(name).values);
  }
  const std::vector<std::uint64_t>& extents(const std::string& name) const { return at(name).extents; }

  void write(const std::string& path) const {
    std::vector<unsigned char> buf;
    buf.insert(buf.end(), {'C', 'S', 'D', 'T'});
    put(buf, kVersion);
    put(buf, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& e : entries_) {
      put(buf, static_cast<std::uint32_t>(e.name.size()));
      buf.insert(buf.end(), e.name.begin(), e.name.end());
      buf.push_back(static_cast<unsigned char>(e.dtype()));
      buf.push_back(static_cast<unsigned char>(e.extents.size()));
      for (auto x : e.extents) put(buf, x);
      std::visit(
          [&buf](const auto& v) {
            for (auto x : v) {
              using U = std::conditional_t<sizeof(x) == 4, std::uint32_t, std::uint64_t>;
              put(buf, std::bit_cast<U>(x));
            }
          },
          e.values);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + path);
    out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!out) throw DataError("write failed for " + path);
  }

  static ArrayContainer read(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    const std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    Reader r{buf, 0, path};
    if (buf.size() < 4 || std::memcmp(buf.data(), "CSDT", 4) != 0) throw DataError(path + ": not a CSDT container");
    r.pos = 4;
    const auto version = r.template get<std::uint16_t>();
    if (version != kVersion) {
      throw DataError(path + ": unsupported container version " + std::to_string(version));
    }
    ArrayContainer c;
    const auto count = r.template get<std::uint32_t>();
    for (std::uint32_t k = 0; k < count; ++k) {
      Entry e;
      const auto len = r.template get<std::uint32_t>();
      r.need(len);
      e.name.assign(reinterpret_cast<const char*>(buf.data() + r.pos), len);
      r.pos += len;
      const auto dtype = r.template get<std::uint8_t>();
      const auto rank = r.template get<std::uint8_t>();
      std::uint64_t n = 1;
      for (std::uint8_t i = 0; i < rank; ++i) {
        e.extents.push_back(r.template get<std::uint64_t>());
        n *= e.extents.back();
      }
      if (dtype == static_cast<std::uint8_t>(DType::kF32)) {
        r.need(n * 4);
        std::vector<float> v(n);
        for (auto& x : v) x = std::bit_cast<float>(r.template get<std::uint32_t>());
        e.values = std::move(v);
      } else if (dtype == static_cast<std::uint8_t>(DType::kF64)) {
        r.need(n * 8);
        std::vector<double> v(n);
        for (auto& x : v) x = std::bit_cast<double>(r.template get<std::uint64_t>());
        e.values = std::move(v);
      } else {
        throw DataError(path + ": unknown dtype code " + std::to_string(dtype) + " in entry '" + e.name + "'");
      }
      c.insert(std::move(e));
    }
    if (r.pos != buf.size()) throw DataError(path + ": trailing bytes after last entry");
    return c;
  }

 private:
  struct Reader {
    const std::vector<unsigned char>& buf;
    std::size_t pos;
    const std::string& path;

    void need(std::uint64_t n) const {
      if (n > buf.size() - pos) throw DataError(path + ": truncated container");
    }
    template <class U>
    U get() {
      need(sizeof(U));
      U v = 0;
      for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(buf[pos + i]) << (8 * i));
      pos += sizeof(U);
      return v;
    }
  };

  template <class U>
  static void put(std::vector<unsigned char>& buf, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }

  const Entry* find(const std::string& name) const {
    for (const auto& e : entries_)
      if (e.name == name) return &e;
    return nullptr;
  }

  void insert(Entry e) {
    if (has(e.name)) throw std::invalid_argument("container: duplicate entry '" + e.name + "'");
    if (e.extents.size() > 255) throw std::invalid_argument("container: rank above 255");
    std::uint64_t n = 1;
    for (auto x : e.extents) n *= x;
    if (n != e.size()) throw ShapeError("container: entry '" + e.name + "' extents do not match its data");
    entries_.push_back(std::move(e));
  }

  std::vector<Entry> entries_;
};

}  // namespace dccnn
