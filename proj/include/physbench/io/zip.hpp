#pragma once

// Just enough ZIP to hold array archives: stored entries with a fixed
// timestamp on write; stored or deflated entries on read.

#include <zlib.h>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "physbench/io/npy.hpp"

namespace physbench::io {

namespace detail {

// 1980-01-01 00:00:00 in DOS format.
inline constexpr std::uint16_t kDosDate = 0x0021;
inline constexpr std::uint16_t kDosTime = 0;
inline constexpr std::uint16_t kVersion = 20;

inline void put16(std::string& s, std::uint16_t v) {
  s += static_cast<char>(v & 0xFF);
  s += static_cast<char>(v >> 8);
}

inline void put32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s += static_cast<char>((v >> (8 * i)) & 0xFF);
}

inline std::uint16_t get16(std::string_view s, std::size_t at) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                    (static_cast<unsigned char>(s[at + 1]) << 8));
}

inline std::uint32_t get32(std::string_view s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + static_cast<std::size_t>(i)]);
  return v;
}

inline std::uint32_t crc(std::string_view data) {
  uLong c = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < data.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(data.size() - done, 1u << 30));
    c = crc32(c, reinterpret_cast<const Bytef*>(data.data() + done), chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(c);
}

inline FormatError zip_error(const std::string& what) {
  return FormatError(FormatErrorKind::MalformedHeader, "zip: " + what);
}

}  // namespace detail

/// Streams stored entries to a file in the order they are added.
class ZipWriter {
 public:
  explicit ZipWriter(const std::filesystem::path& path)
      : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw FormatError(FormatErrorKind::Io, "cannot open " + path.string() + " for writing");
  }

  void add(const std::string& name, std::string_view data) {
    // TODO: ZIP64 records for archives past 4 GiB.
    if (data.size() > 0xFFFFFFFFull || offset_ + data.size() + 30 + name.size() > 0xFFFFFFFFull) {
      throw FormatError(FormatErrorKind::Io, "zip: archive exceeds 4 GiB, ZIP64 is not supported");
    }
    Entry e{name, detail::crc(data), static_cast<std::uint32_t>(data.size()),
            static_cast<std::uint32_t>(offset_)};
    std::string h;
    detail::put32(h, 0x04034b50);
    detail::put16(h, detail::kVersion);
    detail::put16(h, 0);  // flags
    detail::put16(h, 0);  // stored
    detail::put16(h, detail::kDosTime);
    detail::put16(h, detail::kDosDate);
    detail::put32(h, e.crc);
    detail::put32(h, e.size);
    detail::put32(h, e.size);
    detail::put16(h, static_cast<std::uint16_t>(name.size()));
    detail::put16(h, 0);
    h += name;
    out_.write(h.data(), static_cast<std::streamsize>(h.size()));
    out_.write(data.data(), static_cast<std::streamsize>(data.size()));
    offset_ += h.size() + data.size();
    entries_.push_back(std::move(e));
  }

  void finish() {
    std::string cd;
    for (const auto& e : entries_) {
      detail::put32(cd, 0x02014b50);
      detail::put16(cd, detail::kVersion);  // made by
      detail::put16(cd, detail::kVersion);  // needed
      detail::put16(cd, 0);
      detail::put16(cd, 0);
      detail::put16(cd, detail::kDosTime);
      detail::put16(cd, detail::kDosDate);
      detail::put32(cd, e.crc);
      detail::put32(cd, e.size);
      detail::put32(cd, e.size);
      detail::put16(cd, static_cast<std::uint16_t>(e.name.size()));
      detail::put16(cd, 0);  // extra
      detail::put16(cd, 0);  // comment
      detail::put16(cd, 0);  // disk
      detail::put16(cd, 0);  // internal attrs
      detail::put32(cd, 0);  // external attrs
      detail::put32(cd, e.offset);
      cd += e.name;
    }
    if (entries_.size() > 0xFFFF || offset_ + cd.size() > 0xFFFFFFFFull) {
      throw FormatError(FormatErrorKind::Io, "zip: archive exceeds classic ZIP limits");
    }
    std::string end;
    detail::put32(end, 0x06054b50);
    detail::put16(end, 0);
    detail::put16(end, 0);
    detail::put16(end, static_cast<std::uint16_t>(entries_.size()));
    detail::put16(end, static_cast<std::uint16_t>(entries_.size()));
    detail::put32(end, static_cast<std::uint32_t>(cd.size()));
    detail::put32(end, static_cast<std::uint32_t>(offset_));
    detail::put16(end, 0);
    out_.write(cd.data(), static_cast<std::streamsize>(cd.size()));
    out_.write(end.data(), static_cast<std::streamsize>(end.size()));
    out_.close();
    if (!out_) throw FormatError(FormatErrorKind::Io, "write failed: " + path_.string());
  }

 private:
  struct Entry {
    std::string name;
    std::uint32_t crc;
    std::uint32_t size;
    std::uint32_t offset;
  };
  std::filesystem::path path_;
  std::ofstream out_;
  std::vector<Entry> entries_;
  std::uint64_t offset_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(FormatErrorKind::MissingFile, "cannot open " + path.string());
  std::string data;
  in.seekg(0, std::ios::end);
  data.resize(static_cast<std::size_t>(in.tellg()));
  in.seekg(0);
  in.read(data.data(), static_cast<std::streamsize>(data.size()));
  if (!in) throw FormatError(FormatErrorKind::Io, "read failed: " + path.string());
  return data;
}

namespace detail {

inline std::string inflate_raw(std::string_view in, std::size_t expected) {
  std::string out(expected, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw zip_error("inflateInit failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(in.data()));
  zs.avail_in = static_cast<uInt>(in.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END || zs.total_out != expected) throw zip_error("corrupt deflate stream");
  return out;
}

}  // namespace detail

/// Entry name -> uncompressed bytes.
inline std::map<std::string, std::string> zip_read_entries(std::string_view z) {
  using detail::get16;
  using detail::get32;
  if (z.size() < 22) throw detail::zip_error("file too short");
  std::size_t eocd = std::string_view::npos;
  const std::size_t lo = z.size() > 22 + 0xFFFF ? z.size() - 22 - 0xFFFF : 0;
  for (std::size_t i = z.size() - 22 + 1; i-- > lo;) {
    if (get32(z, i) == 0x06054b50) {
      eocd = i;
      break;
    }
  }
  if (eocd == std::string_view::npos) throw detail::zip_error("no end of central directory");
  const std::size_t count = get16(z, eocd + 10);
  std::size_t p = get32(z, eocd + 16);
  std::map<std::string, std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    if (p + 46 > z.size() || get32(z, p) != 0x02014b50) throw detail::zip_error("bad central header");
    const auto method = get16(z, p + 10);
    const auto crc = get32(z, p + 16);
    std::uint64_t csize = get32(z, p + 20);
    std::uint64_t usize = get32(z, p + 24);
    const std::size_t nlen = get16(z, p + 28);
    const std::size_t xlen = get16(z, p + 30);
    const std::size_t clen = get16(z, p + 32);
    std::uint64_t local = get32(z, p + 42);
    if (p + 46 + nlen + xlen > z.size()) throw detail::zip_error("truncated central header");
    std::string name(z.substr(p + 46, nlen));
    // ZIP64 extra field, as numpy.savez writes for large entries.
    std::string_view extra = z.substr(p + 46 + nlen, xlen);
    while (extra.size() >= 4) {
      const auto id = get16(extra, 0);
      const std::size_t len = get16(extra, 2);
      if (4 + len > extra.size()) break;
      if (id == 0x0001) {
        std::size_t at = 4;
        auto take = [&](std::uint64_t& field) {
          if (field == 0xFFFFFFFFull && at + 8 <= 4 + len) {
            field = static_cast<std::uint64_t>(get32(extra, at)) |
                    (static_cast<std::uint64_t>(get32(extra, at + 4)) << 32);
            at += 8;
          }
        };
        take(usize);
        take(csize);
        take(local);
      }
      extra.remove_prefix(4 + len);
    }
    if (local + 30 > z.size() || get32(z, local) != 0x04034b50) throw detail::zip_error("bad local header");
    const std::size_t data_at = local + 30 + get16(z, local + 26) + get16(z, local + 28);
    if (data_at + csize > z.size()) throw detail::zip_error("entry '" + name + "' is truncated");
    const std::string_view raw = z.substr(data_at, csize);
    std::string data;
    if (method == 0) {
      data.assign(raw);
    } else if (method == 8) {
      data = detail::inflate_raw(raw, usize);
    } else {
      throw detail::zip_error("entry '" + name + "' uses unsupported method " + std::to_string(method));
    }
    if (detail::crc(data) != crc) throw detail::zip_error("crc mismatch in '" + name + "'");
    out.emplace(std::move(name), std::move(data));
    p += 46 + nlen + xlen + clen;
  }
  return out;
}

/// Writes arrays as an npz archive, entries sorted by name.
inline void write_npz(const std::filesystem::path& path,
                      const std::map<std::string, const NdArray*>& arrays) {
  ZipWriter zip(path);
  for (const auto& [name, arr] : arrays) zip.add(name + ".npy", npy_encode(*arr));
  zip.finish();
}

inline std::map<std::string, NdArray> read_npz(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  std::map<std::string, NdArray> out;
  for (auto& [name, data] : zip_read_entries(bytes)) {
    std::string key = name;
    if (key.ends_with(".npy")) key.resize(key.size() - 4);
    try {
      out.emplace(std::move(key), npy_decode(data));
    } catch (const FormatError& e) {
      throw FormatError(e.kind(), "record '" + name + "': " + e.what());
    }
  }
  return out;
}

}  // namespace physbench::io
