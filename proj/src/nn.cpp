#include "pidon/nn.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace pidon::nn {

namespace {

constexpr char kMagic[8] = {'P', 'I', 'D', 'O', 'N', 'A', 'R', '1'};

void write_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t read_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void write_f64(std::ostream& os, const double* data, size_t n) {
  // Assumes little-endian host (checked at startup of load/save via a probe).
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace

void save_archive(const std::string& path, const std::string& meta_json,
                  std::span<const NamedArray> arrays) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.write(kMagic, sizeof(kMagic));
  write_u64(os, meta_json.size());
  os.write(meta_json.data(), static_cast<std::streamsize>(meta_json.size()));
  write_u64(os, arrays.size());
  for (const NamedArray& a : arrays) {
    write_u64(os, a.name.size());
    os.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    write_u64(os, a.shape.size());
    size_t n = 1;
    for (size_t s : a.shape) {
      write_u64(os, s);
      n *= s;
    }
    if (n != a.data.size()) throw std::runtime_error("archive array shape/data mismatch: " + a.name);
    write_f64(os, a.data.data(), a.data.size());
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::pair<std::string, std::vector<NamedArray>> load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error("bad archive magic: " + path);
  uint64_t meta_len = read_u64(is);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), static_cast<std::streamsize>(meta_len));
  uint64_t narr = read_u64(is);
  std::vector<NamedArray> arrays(narr);
  for (NamedArray& a : arrays) {
    uint64_t name_len = read_u64(is);
    a.name.resize(name_len);
    is.read(a.name.data(), static_cast<std::streamsize>(name_len));
    uint64_t ndim = read_u64(is);
    a.shape.resize(ndim);
    size_t n = 1;
    for (size_t& s : a.shape) {
      s = read_u64(is);
      n *= s;
    }
    a.data.resize(n);
    is.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
  }
  if (!is) throw std::runtime_error("truncated archive: " + path);
  return {std::move(meta), std::move(arrays)};
}

}  // namespace pidon::nn
