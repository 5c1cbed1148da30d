#include "mdn/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "mdn/errors.hpp"
#include "mdn/tensor_io.hpp"

namespace mdn {
namespace fs = std::filesystem;

namespace {

std::vector<unsigned char> slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// ---- PGM ----

struct PgmCursor {
  const std::vector<unsigned char>& buf;
  size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(buf[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  }

  long long number(const fs::path& path) {
    skip_space_and_comments();
    if (pos >= buf.size() || !std::isdigit(buf[pos])) {
      throw IoError(path.string() + ": malformed PGM header");
    }
    long long v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) v = v * 10 + (buf[pos++] - '0');
    return v;
  }
};

LoadedImage read_pgm(const fs::path& path) {
  const auto buf = slurp(path);
  if (buf.size() < 2 || buf[0] != 'P' || (buf[1] != '2' && buf[1] != '5')) {
    throw IoError(path.string() + ": not a P2/P5 PGM file");
  }
  const bool ascii = buf[1] == '2';
  PgmCursor cur{buf, 2};
  const long long w = cur.number(path);
  const long long h = cur.number(path);
  const long long maxval = cur.number(path);
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 65535) {
    throw IoError(path.string() + ": bad PGM dimensions or maxval");
  }
  LoadedImage out;
  out.format = ImageFormat::Pgm;
  out.bits = maxval > 255 ? 16 : 8;
  out.maxval = static_cast<double>(maxval);
  out.image = Image(h, w);
  if (ascii) {
    for (auto& v : out.image.px) v = static_cast<double>(cur.number(path));
    return out;
  }
  ++cur.pos;  // single whitespace byte after maxval
  const size_t bytes_per = out.bits == 16 ? 2 : 1;
  if (cur.pos + static_cast<size_t>(w * h) * bytes_per > buf.size()) {
    throw IoError(path.string() + ": truncated PGM payload");
  }
  const unsigned char* p = buf.data() + cur.pos;
  for (int64_t i = 0; i < w * h; ++i) {
    out.image.px[i] = bytes_per == 2 ? static_cast<double>((p[2 * i] << 8) | p[2 * i + 1])
                                     : static_cast<double>(p[i]);
  }
  return out;
}

// ---- TIFF ----

struct TiffReader {
  const std::vector<unsigned char>& buf;
  bool little = true;
  fs::path path;

  uint64_t uint(size_t off, size_t n) const {
    if (off + n > buf.size()) throw IoError(path.string() + ": TIFF offset out of range");
    uint64_t v = 0;
    for (size_t i = 0; i < n; ++i) {
      const uint64_t b = buf[off + i];
      v |= little ? b << (8 * i) : b << (8 * (n - 1 - i));
    }
    return v;
  }

  static size_t type_size(uint64_t type) {
    switch (type) {
      case 1: case 2: case 6: case 7: return 1;
      case 3: case 8: return 2;
      case 4: case 9: case 11: return 4;
      case 5: case 10: case 12: return 8;
      default: return 0;
    }
  }

  std::vector<uint64_t> values(size_t entry) const {
    const uint64_t type = uint(entry + 2, 2);
    const uint64_t count = uint(entry + 4, 4);
    const size_t sz = type_size(type);
    if (sz == 0 || sz > 4 || count > (1u << 24)) {
      throw IoError(path.string() + ": unsupported TIFF tag type");
    }
    const size_t base = sz * count <= 4 ? entry + 8 : static_cast<size_t>(uint(entry + 8, 4));
    std::vector<uint64_t> out(count);
    for (size_t i = 0; i < count; ++i) out[i] = uint(base + i * sz, sz);
    return out;
  }
};

LoadedImage read_tiff(const fs::path& path) {
  const auto buf = slurp(path);
  if (buf.size() < 8) throw IoError(path.string() + ": file too small for TIFF");
  TiffReader r{buf, true, path};
  if (buf[0] == 'I' && buf[1] == 'I') {
    r.little = true;
  } else if (buf[0] == 'M' && buf[1] == 'M') {
    r.little = false;
  } else {
    throw IoError(path.string() + ": bad TIFF byte-order mark");
  }
  if (r.uint(2, 2) != 42) throw IoError(path.string() + ": not a classic TIFF");
  const size_t ifd = static_cast<size_t>(r.uint(4, 4));
  const uint64_t entries = r.uint(ifd, 2);
  std::map<uint64_t, std::vector<uint64_t>> tags;
  for (uint64_t i = 0; i < entries; ++i) {
    const size_t e = ifd + 2 + static_cast<size_t>(i) * 12;
    tags[r.uint(e, 2)] = r.values(e);
  }
  auto tag = [&](uint64_t id, uint64_t fallback) -> uint64_t {
    auto it = tags.find(id);
    return it == tags.end() || it->second.empty() ? fallback : it->second.front();
  };
  const uint64_t width = tag(256, 0);
  const uint64_t height = tag(257, 0);
  const uint64_t bits = tag(258, 1);
  const uint64_t compression = tag(259, 1);
  const uint64_t spp = tag(277, 1);
  const uint64_t sample_format = tag(339, 1);
  if (width == 0 || height == 0) throw IoError(path.string() + ": TIFF missing dimensions");
  if (compression != 1) throw IoError(path.string() + ": compressed TIFF is not supported");
  if (spp != 1) throw IoError(path.string() + ": only single-channel TIFF is supported");
  if (bits != 8 && bits != 16 && bits != 32) {
    throw IoError(path.string() + ": unsupported TIFF bit depth " + std::to_string(bits));
  }
  if (sample_format == 3 && bits != 32) throw IoError(path.string() + ": float TIFF must be 32-bit");
  if (!tags.count(273)) throw IoError(path.string() + ": TIFF has no strip offsets");
  const auto& offsets = tags[273];
  std::vector<uint64_t> counts = tags.count(279) ? tags[279] : std::vector<uint64_t>{};

  const size_t bps = static_cast<size_t>(bits / 8);
  std::vector<unsigned char> raw;
  raw.reserve(width * height * bps);
  for (size_t s = 0; s < offsets.size(); ++s) {
    const size_t n = s < counts.size() ? static_cast<size_t>(counts[s])
                                       : static_cast<size_t>(width * height * bps);
    if (offsets[s] + n > buf.size()) throw IoError(path.string() + ": truncated TIFF strip");
    raw.insert(raw.end(), buf.begin() + offsets[s], buf.begin() + offsets[s] + n);
  }
  if (raw.size() < width * height * bps) throw IoError(path.string() + ": truncated TIFF data");

  LoadedImage out;
  out.format = ImageFormat::Tiff;
  out.bits = static_cast<int>(bits);
  out.is_float = sample_format == 3;
  out.maxval = out.is_float ? 1.0 : std::ldexp(1.0, static_cast<int>(bits)) - 1.0;
  out.image = Image(static_cast<int64_t>(height), static_cast<int64_t>(width));
  for (size_t i = 0; i < width * height; ++i) {
    uint64_t v = 0;
    for (size_t b = 0; b < bps; ++b) {
      const uint64_t byte = raw[i * bps + b];
      v |= r.little ? byte << (8 * b) : byte << (8 * (bps - 1 - b));
    }
    if (out.is_float) {
      const auto u = static_cast<uint32_t>(v);
      float f;
      std::memcpy(&f, &u, sizeof f);
      out.image.px[i] = f;
    } else if (sample_format == 2) {
      const int shift = 64 - static_cast<int>(bits);
      out.image.px[i] = static_cast<double>(static_cast<int64_t>(v << shift) >> shift);
    } else {
      out.image.px[i] = static_cast<double>(v);
    }
  }
  return out;
}

LoadedImage read_mdtn_image(const fs::path& path) {
  MdtnArray a = load_mdtn(path);
  int64_t h = 0, w = 0;
  if (a.shape.size() == 2) {
    h = a.shape[0];
    w = a.shape[1];
  } else if (a.shape.size() == 4 && a.shape[0] == 1 && a.shape[1] == 1) {
    h = a.shape[2];
    w = a.shape[3];
  } else {
    throw IoError(path.string() + ": MDTN image must be rank 2 or 1x1xHxW");
  }
  LoadedImage out;
  out.format = ImageFormat::Mdtn;
  out.bits = 32;
  out.is_float = true;
  out.maxval = 1.0;
  out.image = Image(h, w, std::vector<double>(a.data.begin(), a.data.end()));
  return out;
}

void put16(std::ostream& o, uint16_t v) {
  o.put(static_cast<char>(v & 0xFF));
  o.put(static_cast<char>(v >> 8));
}
void put32(std::ostream& o, uint32_t v) {
  put16(o, static_cast<uint16_t>(v & 0xFFFF));
  put16(o, static_cast<uint16_t>(v >> 16));
}

}  // namespace

ImageFormat format_from_path(const fs::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (ext == ".pgm") return ImageFormat::Pgm;
  if (ext == ".tif" || ext == ".tiff") return ImageFormat::Tiff;
  if (ext == ".mdtn") return ImageFormat::Mdtn;
  throw IoError("unrecognised image extension: " + path.string());
}

LoadedImage read_image(const fs::path& path) {
  switch (format_from_path(path)) {
    case ImageFormat::Pgm: return read_pgm(path);
    case ImageFormat::Tiff: return read_tiff(path);
    case ImageFormat::Mdtn: return read_mdtn_image(path);
  }
  throw IoError("unreachable");
}

void write_pgm(const fs::path& path, const Image& img, int bits, bool ascii) {
  if (bits != 8 && bits != 16) throw InvalidInput("write_pgm: bits must be 8 or 16");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  const int maxval = bits == 16 ? 65535 : 255;
  out << (ascii ? "P2" : "P5") << "\n" << img.width << " " << img.height << "\n" << maxval << "\n";
  for (int64_t i = 0; i < img.size(); ++i) {
    const auto v = static_cast<int>(std::clamp(std::lround(img.px[i]), 0L, long{maxval}));
    if (ascii) {
      out << v << ((i + 1) % img.width == 0 ? '\n' : ' ');
    } else if (bits == 16) {
      out.put(static_cast<char>(v >> 8));
      out.put(static_cast<char>(v & 0xFF));
    } else {
      out.put(static_cast<char>(v));
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_tiff(const fs::path& path, const Image& img, bool float32) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  const uint32_t bps = float32 ? 4 : 2;
  const uint32_t data_bytes = static_cast<uint32_t>(img.size()) * bps;
  const uint16_t n_entries = 10;
  const uint32_t ifd_offset = 8;
  const uint32_t data_offset = ifd_offset + 2 + n_entries * 12 + 4;
  out.write("II", 2);
  put16(out, 42);
  put32(out, ifd_offset);
  put16(out, n_entries);
  auto entry = [&](uint16_t tag, uint16_t type, uint32_t value) {
    put16(out, tag);
    put16(out, type);
    put32(out, 1);
    if (type == 3) {
      put16(out, static_cast<uint16_t>(value));
      put16(out, 0);
    } else {
      put32(out, value);
    }
  };
  entry(256, 4, static_cast<uint32_t>(img.width));
  entry(257, 4, static_cast<uint32_t>(img.height));
  entry(258, 3, bps * 8);
  entry(259, 3, 1);
  entry(262, 3, 1);
  entry(273, 4, data_offset);
  entry(277, 3, 1);
  entry(278, 4, static_cast<uint32_t>(img.height));
  entry(279, 4, data_bytes);
  entry(339, 3, float32 ? 3 : 1);
  put32(out, 0);
  for (double v : img.px) {
    if (float32) {
      const auto f = static_cast<float>(v);
      uint32_t u;
      std::memcpy(&u, &f, sizeof u);
      put32(out, u);
    } else {
      put16(out, static_cast<uint16_t>(std::clamp(std::lround(v), 0L, 65535L)));
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

void write_mdtn_image(const fs::path& path, const Image& img) {
  MdtnArray a{{img.height, img.width}, {}};
  a.data.reserve(static_cast<size_t>(img.size()));
  for (double v : img.px) a.data.push_back(static_cast<float>(v));
  save_mdtn(path, a);
}

void write_like(const fs::path& path, const Image& img, const LoadedImage& like) {
  switch (like.format) {
    case ImageFormat::Pgm:
      write_pgm(path, img, like.bits);
      return;
    case ImageFormat::Tiff:
      if (!like.is_float && like.bits != 16) {
        // 8- and 32-bit integer inputs are written back as 16-bit when they fit.
        write_tiff(path, img, img.max() > 65535.0);
      } else {
        write_tiff(path, img, like.is_float);
      }
      return;
    case ImageFormat::Mdtn:
      write_mdtn_image(path, img);
      return;
  }
}

std::vector<fs::path> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw IoError("cannot open manifest: " + manifest.string());
  std::vector<fs::path> out;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    fs::path p = line.substr(b, e - b + 1);
    if (p.is_relative()) p = manifest.parent_path() / p;
    out.push_back(p);
  }
  return out;
}

void write_manifest(const fs::path& manifest, const std::vector<fs::path>& entries) {
  std::ofstream out(manifest);
  if (!out) throw IoError("cannot open for writing: " + manifest.string());
  for (const auto& e : entries) out << e.string() << "\n";
}

}  // namespace mdn
