#include "mdn/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "mdn/errors.hpp"

namespace mdn {
namespace {

constexpr std::array<char, 4> kMagic{'M', 'D', 'T', 'N'};
constexpr uint8_t kMaxRank = 8;

template <typename T>
void put_le(std::ostream& out, T v) {
  using U = std::make_unsigned_t<T>;
  U u;
  std::memcpy(&u, &v, sizeof(T));
  std::array<char, sizeof(T)> bytes;
  for (size_t i = 0; i < sizeof(T); ++i) bytes[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  using U = std::make_unsigned_t<T>;
  std::array<unsigned char, sizeof(T)> bytes;
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw IoError("MDTN: unexpected end of stream");
  U u = 0;
  for (size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(bytes[i]) << (8 * i);
  T v;
  std::memcpy(&v, &u, sizeof(T));
  return v;
}

}  // namespace

int64_t MdtnArray::numel() const {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void write_u32(std::ostream& out, uint32_t v) { put_le<uint32_t>(out, v); }
uint32_t read_u32(std::istream& in) { return get_le<uint32_t>(in); }

void write_mdtn(std::ostream& out, const MdtnArray& array) {
  if (array.shape.size() > kMaxRank) throw InvalidInput("MDTN: rank too large");
  if (array.numel() != static_cast<int64_t>(array.data.size())) {
    throw InvalidInput("MDTN: payload length does not match shape");
  }
  out.write(kMagic.data(), kMagic.size());
  out.put(static_cast<char>(kMdtnVersion));
  out.put(static_cast<char>(kMdtnFloat32));
  out.put(static_cast<char>(array.shape.size()));
  for (int64_t d : array.shape) put_le<int64_t>(out, d);
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(array.data.data()),
              static_cast<std::streamsize>(array.data.size() * sizeof(float)));
  } else {
    for (float f : array.data) put_le<uint32_t>(out, std::bit_cast<uint32_t>(f));
  }
}

MdtnArray read_mdtn(std::istream& in) {
  std::array<char, 4> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("MDTN: bad magic");
  const int version = in.get();
  const int dtype = in.get();
  const int rank = in.get();
  if (!in) throw IoError("MDTN: truncated header");
  if (version != kMdtnVersion) {
    throw IoError("MDTN: unsupported version " + std::to_string(version));
  }
  if (dtype != kMdtnFloat32) throw IoError("MDTN: unsupported dtype " + std::to_string(dtype));
  if (rank > kMaxRank) throw IoError("MDTN: rank " + std::to_string(rank) + " too large");
  MdtnArray a;
  a.shape.resize(static_cast<size_t>(rank));
  for (auto& d : a.shape) {
    d = get_le<int64_t>(in);
    if (d < 0 || d > (int64_t{1} << 40)) throw IoError("MDTN: corrupt shape");
  }
  a.data.resize(static_cast<size_t>(a.numel()));
  if constexpr (std::endian::native == std::endian::little) {
    in.read(reinterpret_cast<char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(float)));
    if (!in) throw IoError("MDTN: truncated payload");
  } else {
    for (auto& f : a.data) f = std::bit_cast<float>(get_le<uint32_t>(in));
  }
  return a;
}

void save_mdtn(const std::filesystem::path& path, const MdtnArray& array) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  write_mdtn(out, array);
  if (!out) throw IoError("write failed: " + path.string());
}

MdtnArray load_mdtn(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path.string());
  try {
    return read_mdtn(in);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

MdtnArray to_mdtn(const Tensor& t) {
  const Shape s = t.shape();
  return {{s.n, s.c, s.h, s.w}, std::vector<float>(t.values().begin(), t.values().end())};
}

Tensor from_mdtn(const MdtnArray& array) {
  if (array.shape.size() > 4) throw InvalidInput("MDTN: rank > 4 cannot form a tensor");
  std::array<int64_t, 4> dims{1, 1, 1, 1};
  const size_t off = 4 - array.shape.size();
  for (size_t i = 0; i < array.shape.size(); ++i) dims[off + i] = array.shape[i];
  return Tensor({dims[0], dims[1], dims[2], dims[3]}, array.data);
}

}  // namespace mdn
