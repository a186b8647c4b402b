#include "a2rnet/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace a2r {

namespace {

namespace fs = std::filesystem;

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

// Cursor over a netpbm byte buffer; errors carry the current byte offset.
struct ByteReader {
  const std::string& buf;
  const std::string& path;
  std::size_t pos = 0;

  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError(path + ": " + msg + " at byte " + std::to_string(pos));
  }

  bool eof() const { return pos >= buf.size(); }

  unsigned char get() {
    if (eof()) fail("unexpected end of file");
    return static_cast<unsigned char>(buf[pos++]);
  }

  // Header fields are separated by whitespace; '#' comments run to newline.
  void skip_separators() {
    while (!eof()) {
      unsigned char c = static_cast<unsigned char>(buf[pos]);
      if (std::isspace(c)) {
        ++pos;
      } else if (c == '#') {
        while (!eof() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  int parse_uint(const char* what) {
    skip_separators();
    if (eof() || !std::isdigit(static_cast<unsigned char>(buf[pos]))) {
      fail(std::string("expected ") + what);
    }
    long v = 0;
    while (!eof() && std::isdigit(static_cast<unsigned char>(buf[pos]))) {
      v = v * 10 + (buf[pos] - '0');
      if (v > 1 << 20) fail(std::string(what) + " out of range");
      ++pos;
    }
    return static_cast<int>(v);
  }
};

// Parses a P5/P6 header and returns (w, h); leaves the cursor at the payload.
std::pair<int, int> parse_netpbm_header(ByteReader& r, char kind) {
  if (r.buf.size() < 2 || r.buf[0] != 'P' || r.buf[1] != kind) {
    r.fail(std::string("bad magic, expected P") + kind);
  }
  r.pos = 2;
  int w = r.parse_uint("width");
  int h = r.parse_uint("height");
  int maxval = r.parse_uint("maxval");
  if (w < 1 || h < 1) r.fail("non-positive image extents");
  if (maxval != 255) r.fail("unsupported maxval " + std::to_string(maxval));
  // Exactly one whitespace byte separates the header from the payload.
  if (r.eof() || !std::isspace(static_cast<unsigned char>(r.buf[r.pos]))) {
    r.fail("expected single whitespace before payload");
  }
  ++r.pos;
  return {w, h};
}

void check_payload(const ByteReader& r, std::size_t need) {
  if (r.buf.size() - r.pos < need) {
    std::size_t have = r.buf.size() - r.pos;
    throw FormatError(r.path + ": truncated payload, need " + std::to_string(need) +
                      " bytes but found " + std::to_string(have) + " at byte " +
                      std::to_string(r.pos));
  }
}

void check_image_shape(const Tensor& t, int channels, const char* op) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != channels) {
    throw DimensionError(std::string(op) + ": expects 1x" + std::to_string(channels) +
                         "xhxw, got " + shape_str(t.shape()));
  }
}

// BT.601 full-range luma weights and chroma scale factors.
constexpr Scalar kYr = 0.299, kYg = 0.587, kYb = 0.114;
constexpr Scalar kCbScale = 1.772, kCrScale = 1.402;

}  // namespace

Tensor quantize_unit(const Tensor& t) {
  std::vector<Scalar> v(t.size());
  const Scalar* in = t.values().data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = static_cast<Scalar>(quantize8(in[i])) / 255.0;
  }
  return Tensor::from_values(t.shape(), std::move(v));
}

Tensor load_pgm(const std::string& path) {
  std::string buf = read_file(path);
  ByteReader r{buf, path};
  auto [w, h] = parse_netpbm_header(r, '5');
  std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  check_payload(r, n);
  std::vector<Scalar> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = static_cast<Scalar>(static_cast<unsigned char>(buf[r.pos + i])) / 255.0;
  }
  return Tensor::from_values({1, 1, h, w}, std::move(v));
}

void save_pgm(const std::string& path, const Tensor& t) {
  check_image_shape(t, 1, "save_pgm");
  int h = t.dim(2), w = t.dim(3);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  out << "P5\n" << w << " " << h << "\n255\n";
  const Scalar* v = t.values().data();
  std::vector<char> bytes(t.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<char>(quantize8(v[i]));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path + ": write failed");
}

std::pair<Tensor, Tensor> load_ppm_as_ycbcr(const std::string& path) {
  std::string buf = read_file(path);
  ByteReader r{buf, path};
  auto [w, h] = parse_netpbm_header(r, '6');
  std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  check_payload(r, 3 * n);
  std::vector<Scalar> y(n), cbcr(2 * n);
  for (std::size_t i = 0; i < n; ++i) {
    Scalar red = static_cast<Scalar>(static_cast<unsigned char>(buf[r.pos + 3 * i])) / 255.0;
    Scalar green =
        static_cast<Scalar>(static_cast<unsigned char>(buf[r.pos + 3 * i + 1])) / 255.0;
    Scalar blue =
        static_cast<Scalar>(static_cast<unsigned char>(buf[r.pos + 3 * i + 2])) / 255.0;
    Scalar luma = kYr * red + kYg * green + kYb * blue;
    y[i] = luma;
    cbcr[i] = (blue - luma) / kCbScale + 0.5;
    cbcr[n + i] = (red - luma) / kCrScale + 0.5;
  }
  return {Tensor::from_values({1, 1, h, w}, std::move(y)),
          Tensor::from_values({1, 2, h, w}, std::move(cbcr))};
}

void recombine_to_ppm(const std::string& path, const Tensor& y, const Tensor& cbcr) {
  check_image_shape(y, 1, "recombine_to_ppm");
  check_image_shape(cbcr, 2, "recombine_to_ppm chroma");
  if (y.dim(2) != cbcr.dim(2) || y.dim(3) != cbcr.dim(3)) {
    throw DimensionError("recombine_to_ppm: luma " + shape_str(y.shape()) +
                         " vs chroma " + shape_str(cbcr.shape()));
  }
  int h = y.dim(2), w = y.dim(3);
  std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  out << "P6\n" << w << " " << h << "\n255\n";
  const Scalar* py = y.values().data();
  const Scalar* pc = cbcr.values().data();
  std::vector<char> bytes(3 * n);
  for (std::size_t i = 0; i < n; ++i) {
    Scalar luma = py[i];
    Scalar cb = pc[i] - 0.5;
    Scalar cr = pc[n + i] - 0.5;
    Scalar red = luma + kCrScale * cr;
    Scalar blue = luma + kCbScale * cb;
    Scalar green = (luma - kYr * red - kYb * blue) / kYg;
    bytes[3 * i] = static_cast<char>(quantize8(red));
    bytes[3 * i + 1] = static_cast<char>(quantize8(green));
    bytes[3 * i + 2] = static_cast<char>(quantize8(blue));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError(path + ": write failed");
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError(path + ": cannot open manifest");
  DatasetManifest manifest;
  manifest.root = fs::path(path).parent_path().string();

  auto resolve = [&manifest](const std::string& p) {
    fs::path fp(p);
    if (fp.is_absolute() || manifest.root.empty()) return fp.string();
    return (fs::path(manifest.root) / fp).string();
  };
  auto trim = [](std::string s) {
    auto issp = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && issp(s.front())) s.erase(s.begin());
    while (!s.empty() && issp(s.back())) s.pop_back();
    return s;
  };

  std::set<std::string> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;

    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) fields.push_back(trim(field));
    if (fields.size() != 3) {
      throw ValidationError(path + " line " + std::to_string(line_no) +
                            ": expected `id, ir_path, vis_path`, got " +
                            std::to_string(fields.size()) + " fields");
    }
    if (!seen.insert(fields[0]).second) {
      throw ValidationError(path + " line " + std::to_string(line_no) +
                            ": duplicate id '" + fields[0] + "'");
    }
    ManifestEntry entry{fields[0], resolve(fields[1]), resolve(fields[2])};
    for (const std::string* p : {&entry.ir_path, &entry.vis_path}) {
      if (!fs::exists(*p)) {
        throw ValidationError(path + " line " + std::to_string(line_no) +
                              ": missing file " + *p);
      }
    }
    manifest.entries.push_back(std::move(entry));
  }
  return manifest;
}

ImagePair load_pair(const ManifestEntry& entry) {
  ImagePair pair;
  pair.id = entry.id;
  pair.ir = load_pgm(entry.ir_path);
  if (fs::path(entry.vis_path).extension() == ".ppm") {
    auto [y, cbcr] = load_ppm_as_ycbcr(entry.vis_path);
    pair.vis_y = std::move(y);
    pair.vis_cbcr = std::move(cbcr);
  } else {
    pair.vis_y = load_pgm(entry.vis_path);
  }
  if (pair.ir.shape() != pair.vis_y.shape()) {
    throw ValidationError("pair '" + entry.id + "': infrared " +
                          shape_str(pair.ir.shape()) + " and visible " +
                          shape_str(pair.vis_y.shape()) + " extents disagree");
  }
  return pair;
}

}  // namespace a2r
