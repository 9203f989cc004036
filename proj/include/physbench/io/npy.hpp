#pragma once

// NPY v1.0 encoding and decoding for the handful of dtypes datasets use.
// Encoding is byte-compatible with numpy.save for little-endian C-order
// arrays; decoding also accepts version 2.0 and 3.0 headers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "physbench/errors.hpp"

namespace physbench::io {

static_assert(std::endian::native == std::endian::little,
              "array encoding assumes a little-endian host");

enum class DType { Float64, Int64, Bool, Float32, Int32 };

inline std::string_view descr(DType d) {
  switch (d) {
    case DType::Float64: return "<f8";
    case DType::Int64: return "<i8";
    case DType::Bool: return "|b1";
    case DType::Float32: return "<f4";
    case DType::Int32: return "<i4";
  }
  return "?";
}

inline std::string_view dtype_name(DType d) {
  switch (d) {
    case DType::Float64: return "float64";
    case DType::Int64: return "int64";
    case DType::Bool: return "bool";
    case DType::Float32: return "float32";
    case DType::Int32: return "int32";
  }
  return "?";
}

/// Failure categories surfaced by dataset reading.
enum class FormatErrorKind { MissingFile, MalformedHeader, DanglingReference, ShapeMismatch, DtypeMismatch, Io };

inline std::string_view to_string(FormatErrorKind k) {
  switch (k) {
    case FormatErrorKind::MissingFile: return "missing-file";
    case FormatErrorKind::MalformedHeader: return "malformed-header";
    case FormatErrorKind::DanglingReference: return "dangling-reference";
    case FormatErrorKind::ShapeMismatch: return "shape-mismatch";
    case FormatErrorKind::DtypeMismatch: return "dtype-mismatch";
    case FormatErrorKind::Io: return "io";
  }
  return "?";
}

class FormatError : public Error {
 public:
  FormatError(FormatErrorKind kind, const std::string& what) : Error(what), kind_(kind) {}
  FormatErrorKind kind() const { return kind_; }

 private:
  FormatErrorKind kind_;
};

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "(";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(s[i]);
  }
  if (s.size() == 1) out += ",";
  return out + ")";
}

/// Dense row-major array. Bools are stored one byte each.
struct NdArray {
  using Storage = std::variant<std::vector<double>, std::vector<std::int64_t>,
                               std::vector<std::uint8_t>, std::vector<float>,
                               std::vector<std::int32_t>>;

  Shape shape;
  Storage data;

  static NdArray f64(Shape shape, std::vector<double> v) { return make(std::move(shape), std::move(v)); }
  static NdArray i64(Shape shape, std::vector<std::int64_t> v) { return make(std::move(shape), std::move(v)); }
  static NdArray boolean(Shape shape, std::vector<std::uint8_t> v) { return make(std::move(shape), std::move(v)); }
  static NdArray f32(Shape shape, std::vector<float> v) { return make(std::move(shape), std::move(v)); }
  static NdArray i32(Shape shape, std::vector<std::int32_t> v) { return make(std::move(shape), std::move(v)); }

  DType dtype() const { return static_cast<DType>(data.index()); }
  std::size_t size() const {
    return std::visit([](const auto& v) { return v.size(); }, data);
  }

  const std::vector<double>& as_f64() const { return std::get<std::vector<double>>(data); }
  const std::vector<std::int64_t>& as_i64() const { return std::get<std::vector<std::int64_t>>(data); }
  const std::vector<std::uint8_t>& as_bool() const { return std::get<std::vector<std::uint8_t>>(data); }

  /// Element-exact equality; NaNs compare by bit pattern.
  bool operator==(const NdArray& o) const {
    if (shape != o.shape || data.index() != o.data.index()) return false;
    return std::visit(
        [&](const auto& a) {
          using V = std::decay_t<decltype(a)>;
          const auto& b = std::get<V>(o.data);
          return a.size() == b.size() &&
                 (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(a[0])) == 0);
        },
        data);
  }

 private:
  template <class V>
  static NdArray make(Shape shape, V v) {
    if (element_count(shape) != v.size()) {
      throw FormatError(FormatErrorKind::ShapeMismatch,
                        "array of " + std::to_string(v.size()) + " elements does not fit shape " +
                            shape_string(shape));
    }
    NdArray a;
    a.shape = std::move(shape);
    a.data = std::move(v);
    return a;
  }
};

namespace detail {

inline constexpr std::string_view kMagic = "\x93NUMPY";
inline constexpr std::size_t kAlign = 64;

inline std::string header_dict(const NdArray& a) {
  std::string h = "{'descr': '";
  h += descr(a.dtype());
  h += "', 'fortran_order': False, 'shape': ";
  h += shape_string(a.shape);
  h += ", }";
  return h;
}

inline FormatError malformed(const std::string& what) {
  return FormatError(FormatErrorKind::MalformedHeader, "npy: " + what);
}

inline std::string_view skip_ws(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\n')) s.remove_prefix(1);
  return s;
}

// Minimal parser for the Python dict literal numpy writes. Keys may come in
// any order; anything else is rejected.
struct ParsedHeader {
  std::string descr;
  bool fortran = false;
  Shape shape;
};

inline ParsedHeader parse_header(std::string_view h) {
  ParsedHeader out;
  bool have_descr = false, have_order = false, have_shape = false;
  h = skip_ws(h);
  if (h.empty() || h.front() != '{') throw malformed("header is not a dict");
  h.remove_prefix(1);
  auto quoted = [&](std::string_view& s) {
    s = skip_ws(s);
    if (s.empty() || (s.front() != '\'' && s.front() != '"')) throw malformed("expected string");
    const char q = s.front();
    s.remove_prefix(1);
    const auto end = s.find(q);
    if (end == std::string_view::npos) throw malformed("unterminated string");
    std::string v(s.substr(0, end));
    s.remove_prefix(end + 1);
    return v;
  };
  auto expect = [&](std::string_view& s, char c) {
    s = skip_ws(s);
    if (s.empty() || s.front() != c) throw malformed(std::string("expected '") + c + "'");
    s.remove_prefix(1);
  };
  for (;;) {
    h = skip_ws(h);
    if (h.empty()) throw malformed("unterminated dict");
    if (h.front() == '}') break;
    const std::string key = quoted(h);
    expect(h, ':');
    h = skip_ws(h);
    if (key == "descr") {
      out.descr = quoted(h);
      have_descr = true;
    } else if (key == "fortran_order") {
      if (h.starts_with("False")) {
        out.fortran = false;
        h.remove_prefix(5);
      } else if (h.starts_with("True")) {
        out.fortran = true;
        h.remove_prefix(4);
      } else {
        throw malformed("bad fortran_order");
      }
      have_order = true;
    } else if (key == "shape") {
      expect(h, '(');
      for (;;) {
        h = skip_ws(h);
        if (h.empty()) throw malformed("unterminated shape");
        if (h.front() == ')') {
          h.remove_prefix(1);
          break;
        }
        std::size_t v = 0;
        std::size_t digits = 0;
        while (!h.empty() && h.front() >= '0' && h.front() <= '9') {
          v = v * 10 + static_cast<std::size_t>(h.front() - '0');
          h.remove_prefix(1);
          ++digits;
        }
        if (!digits) throw malformed("bad shape entry");
        h = skip_ws(h);
        if (h.starts_with("L")) h.remove_prefix(1);
        out.shape.push_back(v);
        h = skip_ws(h);
        if (!h.empty() && h.front() == ',') h.remove_prefix(1);
      }
      have_shape = true;
    } else {
      throw malformed("unexpected key '" + key + "'");
    }
    h = skip_ws(h);
    if (!h.empty() && h.front() == ',') h.remove_prefix(1);
  }
  if (!have_descr || !have_order || !have_shape) throw malformed("header missing a key");
  return out;
}

template <class T>
std::vector<T> copy_elements(std::string_view body, std::size_t n) {
  std::vector<T> v(n);
  if (n) std::memcpy(v.data(), body.data(), n * sizeof(T));
  return v;
}

}  // namespace detail

/// numpy.save byte layout: magic, version 1.0, header padded with spaces to
/// a 64-byte boundary and closed by one newline, then raw data.
inline std::string npy_encode(const NdArray& a) {
  const std::string dict = detail::header_dict(a);
  const std::size_t prefix = detail::kMagic.size() + 2 + 2;
  const std::size_t pad = detail::kAlign - (prefix + dict.size() + 1) % detail::kAlign;
  const std::size_t header_len = dict.size() + pad + 1;
  if (header_len > 0xFFFF) throw Error("npy: header too long for version 1.0");

  std::string out;
  const std::size_t bytes = std::visit(
      [](const auto& v) { return v.size() * sizeof(v[0]); }, a.data);
  out.reserve(prefix + header_len + bytes);
  out += detail::kMagic;
  out += '\x01';
  out += '\x00';
  out += static_cast<char>(header_len & 0xFF);
  out += static_cast<char>((header_len >> 8) & 0xFF);
  out += dict;
  out.append(pad, ' ');
  out += '\n';
  std::visit(
      [&](const auto& v) {
        if (!v.empty()) out.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(v[0]));
      },
      a.data);
  return out;
}

inline NdArray npy_decode(std::string_view bytes) {
  using detail::malformed;
  if (bytes.size() < 10 || bytes.substr(0, 6) != detail::kMagic) throw malformed("bad magic");
  const auto major = static_cast<unsigned char>(bytes[6]);
  std::size_t header_len = 0;
  std::size_t offset = 0;
  if (major == 1) {
    header_len = static_cast<unsigned char>(bytes[8]) |
                 (static_cast<std::size_t>(static_cast<unsigned char>(bytes[9])) << 8);
    offset = 10;
  } else if (major == 2 || major == 3) {
    if (bytes.size() < 12) throw malformed("truncated header");
    for (int i = 3; i >= 0; --i) {
      header_len = (header_len << 8) | static_cast<unsigned char>(bytes[8 + static_cast<std::size_t>(i)]);
    }
    offset = 12;
  } else {
    throw malformed("unsupported version " + std::to_string(major));
  }
  if (bytes.size() < offset + header_len) throw malformed("truncated header");
  const auto parsed = detail::parse_header(bytes.substr(offset, header_len));
  if (parsed.fortran) throw malformed("fortran-order arrays are not supported");

  const std::size_t n = element_count(parsed.shape);
  const std::string_view body = bytes.substr(offset + header_len);
  auto check = [&](std::size_t item) {
    if (body.size() != n * item) {
      throw malformed("data length " + std::to_string(body.size()) + " does not match shape " +
                      shape_string(parsed.shape));
    }
  };
  const std::string& d = parsed.descr;
  if (d == "<f8") {
    check(8);
    return NdArray::f64(parsed.shape, detail::copy_elements<double>(body, n));
  }
  if (d == "<i8") {
    check(8);
    return NdArray::i64(parsed.shape, detail::copy_elements<std::int64_t>(body, n));
  }
  if (d == "|b1") {
    check(1);
    return NdArray::boolean(parsed.shape, detail::copy_elements<std::uint8_t>(body, n));
  }
  if (d == "<f4") {
    check(4);
    return NdArray::f32(parsed.shape, detail::copy_elements<float>(body, n));
  }
  if (d == "<i4") {
    check(4);
    return NdArray::i32(parsed.shape, detail::copy_elements<std::int32_t>(body, n));
  }
  throw FormatError(FormatErrorKind::DtypeMismatch, "npy: unsupported dtype '" + d + "'");
}

}  // namespace physbench::io
