#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "a2rnet/model.hpp"

namespace a2r {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");
static_assert(sizeof(double) == 8 && std::numeric_limits<double>::is_iec559,
              "checkpoint serialization assumes IEEE-754 binary64");

constexpr char kMagic[4] = {'A', '2', 'R', 'N'};
constexpr std::uint32_t kVersion = 1;
constexpr int kMaxRank = 8;

void put_u16(std::string& buf, std::uint16_t v) {
  buf.push_back(static_cast<char>(v & 0xff));
  buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& buf, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct Reader {
  const std::string& buf;
  const std::string& path;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(path + ": " + what + " at byte " + std::to_string(pos));
  }

  void need(std::size_t n, const char* what) {
    if (buf.size() - pos < n) fail(std::string("truncated ") + what);
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[pos++]);
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += 2;
    return v;
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelParams& params) {
  std::string buf;
  buf.append(kMagic, 4);
  put_u32(buf, kVersion);
  put_u32(buf, static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params.entries()) {
    if (name.size() > 0xffff) throw ContractError("parameter name too long: '" + name + "'");
    put_u16(buf, static_cast<std::uint16_t>(name.size()));
    buf.append(name);
    buf.push_back(static_cast<char>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) put_u32(buf, static_cast<std::uint32_t>(t.dim(d)));
    for (Scalar v : t.values()) put_f64(buf, v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError(path + ": write failed");
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open for reading");
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  Reader r{buf, path};
  r.need(4, "magic");
  if (std::memcmp(buf.data(), kMagic, 4) != 0) r.fail("bad magic (expected A2RN)");
  r.pos = 4;
  std::uint32_t version = r.u32("version");
  if (version != kVersion) {
    r.fail("unsupported version " + std::to_string(version));
  }
  std::uint32_t count = r.u32("tensor count");

  ModelParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint16_t name_len = r.u16("name length");
    r.need(name_len, "name");
    std::string name = buf.substr(r.pos, name_len);
    r.pos += name_len;
    int rank = r.u8("rank");
    if (rank < 0 || rank > kMaxRank) r.fail("invalid rank " + std::to_string(rank));
    Shape shape(static_cast<std::size_t>(rank));
    std::size_t total = 1;
    for (int d = 0; d < rank; ++d) {
      std::uint32_t e = r.u32("extent");
      if (e == 0) r.fail("zero extent in '" + name + "'");
      shape[static_cast<std::size_t>(d)] = static_cast<int>(e);
      total *= e;
    }
    std::vector<Scalar> values(total);
    for (std::size_t j = 0; j < total; ++j) values[j] = r.f64("payload");
    params.add(name, Tensor::from_values(shape, std::move(values), true));
  }
  if (r.pos != buf.size()) r.fail("trailing bytes after last tensor");
  return params;
}

}  // namespace a2r
