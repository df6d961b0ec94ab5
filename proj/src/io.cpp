#include "flowlite/io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace flowlite {

namespace {

constexpr float kFloMagic = 202021.25f;

[[noreturn]] void io_fail(const std::string& msg) { throw std::runtime_error(msg); }

void put_u16(std::ostream& os, uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                              static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_f32(std::ostream& os, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(os, bits);
}

struct Reader {
  std::ifstream in;
  std::string path;
  size_t pos = 0;

  Reader(const std::string& p) : in(p, std::ios::binary), path(p) {
    if (!in) io_fail(path + ": cannot open file");
  }

  void bytes(void* dst, size_t n, const char* what) {
    in.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<size_t>(in.gcount()) != n) {
      io_fail(path + ": truncated reading " + what + " at byte offset " +
              std::to_string(pos));
    }
    pos += n;
  }

  uint16_t u16(const char* what) {
    unsigned char b[2];
    bytes(b, 2, what);
    return static_cast<uint16_t>(b[0] | (b[1] << 8));
  }

  uint32_t u32(const char* what) {
    unsigned char b[4];
    bytes(b, 4, what);
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) |
           (static_cast<uint32_t>(b[2]) << 16) | (static_cast<uint32_t>(b[3]) << 24);
  }

  int32_t i32(const char* what) { return static_cast<int32_t>(u32(what)); }

  float f32(const char* what) {
    const uint32_t bits = u32(what);
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  void f32_array(float* dst, size_t n, const char* what) {
    // little-endian host shortcut; dims here are modest so bulk-read then fix
    bytes(dst, n * 4, what);
    if constexpr (std::endian::native != std::endian::little) {
      auto* raw = reinterpret_cast<unsigned char*>(dst);
      for (size_t i = 0; i < n; ++i) {
        std::swap(raw[4 * i], raw[4 * i + 3]);
        std::swap(raw[4 * i + 1], raw[4 * i + 2]);
      }
    }
  }
};

}  // namespace

FlowField<float> read_flo(const std::string& path) {
  Reader r(path);
  const float magic = r.f32("magic");
  if (magic != kFloMagic) {
    io_fail(path + ": bad flow-file magic (expected 202021.25)");
  }
  const int32_t w = r.i32("width");
  const int32_t h = r.i32("height");
  if (w <= 0 || h <= 0) {
    io_fail(path + ": nonpositive dimensions " + std::to_string(w) + "x" +
            std::to_string(h));
  }
  std::vector<float> data(static_cast<size_t>(w) * h * 2);
  r.f32_array(data.data(), data.size(), "flow payload");
  Tensor4<float> t(1, 2, h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      t(0, 0, y, x) = data[(y * w + x) * 2];
      t(0, 1, y, x) = data[(y * w + x) * 2 + 1];
    }
  }
  return FlowField<float>(std::move(t));
}

void write_flo(const std::string& path, const FlowField<float>& flow) {
  const Tensor4<float>& t = flow.tensor();
  require(t.batch() == 1, "write_flo: flow batch must be 1, got ", t.shape());
  std::ofstream os(path, std::ios::binary);
  if (!os) io_fail(path + ": cannot open for writing");
  put_f32(os, kFloMagic);
  put_u32(os, static_cast<uint32_t>(t.width()));
  put_u32(os, static_cast<uint32_t>(t.height()));
  for (Index y = 0; y < t.height(); ++y) {
    for (Index x = 0; x < t.width(); ++x) {
      put_f32(os, t(0, 0, y, x));
      put_f32(os, t(0, 1, y, x));
    }
  }
  if (!os) io_fail(path + ": write failed");
}

namespace {

// PPM header token: skips whitespace and '#' comment lines.
std::string ppm_token(std::istream& in, const std::string& path) {
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (!std::isspace(c)) {
      break;
    }
    c = in.get();
  }
  if (c == EOF) io_fail(path + ": truncated header");
  std::string tok;
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

long ppm_int(std::istream& in, const std::string& path, const char* what) {
  const std::string tok = ppm_token(in, path);
  try {
    size_t used = 0;
    const long v = std::stol(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    io_fail(path + ": malformed " + what + " field '" + tok + "'");
  }
}

}  // namespace

Tensor4<float> read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail(path + ": cannot open file");
  const std::string magic = ppm_token(in, path);
  if (magic == "P5") io_fail(path + ": grayscale PPM has 1 channel, need 3 (P6)");
  if (magic != "P6") io_fail(path + ": unsupported image format '" + magic + "' (need binary PPM P6)");
  const long w = ppm_int(in, path, "width");
  const long h = ppm_int(in, path, "height");
  const long maxval = ppm_int(in, path, "maxval");
  if (w <= 0 || h <= 0) {
    io_fail(path + ": nonpositive dimensions " + std::to_string(w) + "x" + std::to_string(h));
  }
  if (maxval != 255) io_fail(path + ": only 8-bit images supported (maxval 255)");
  std::vector<unsigned char> raw(static_cast<size_t>(w) * h * 3);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<size_t>(in.gcount()) != raw.size()) io_fail(path + ": truncated pixel data");
  Tensor4<float> t(1, 3, h, w);
  constexpr float inv = 1.0f / 255.0f;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      for (Index c = 0; c < 3; ++c) {
        t(0, c, y, x) = raw[(y * w + x) * 3 + c] * inv;
      }
    }
  }
  return t;
}

void write_image(const std::string& path, const Tensor4<float>& rgb) {
  require(rgb.batch() == 1 && rgb.channels() == 3, "write_image: need a 1x3xHxW tensor, got ",
          rgb.shape());
  std::ofstream os(path, std::ios::binary);
  if (!os) io_fail(path + ": cannot open for writing");
  os << "P6\n" << rgb.width() << " " << rgb.height() << "\n255\n";
  std::vector<unsigned char> raw(static_cast<size_t>(rgb.width()) * rgb.height() * 3);
  for (Index y = 0; y < rgb.height(); ++y) {
    for (Index x = 0; x < rgb.width(); ++x) {
      for (Index c = 0; c < 3; ++c) {
        const float v = std::clamp(rgb(0, c, y, x), 0.0f, 1.0f);
        raw[(y * rgb.width() + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    }
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!os) io_fail(path + ": write failed");
}

RowMat<float> flow_color_wheel() {
  constexpr int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
  RowMat<float> wheel(RY + YG + GC + CB + BM + MR, 3);
  int k = 0;
  for (int i = 0; i < RY; ++i, ++k) wheel.row(k) << 1.0f, float(i) / RY, 0.0f;
  for (int i = 0; i < YG; ++i, ++k) wheel.row(k) << 1.0f - float(i) / YG, 1.0f, 0.0f;
  for (int i = 0; i < GC; ++i, ++k) wheel.row(k) << 0.0f, 1.0f, float(i) / GC;
  for (int i = 0; i < CB; ++i, ++k) wheel.row(k) << 0.0f, 1.0f - float(i) / CB, 1.0f;
  for (int i = 0; i < BM; ++i, ++k) wheel.row(k) << float(i) / BM, 0.0f, 1.0f;
  for (int i = 0; i < MR; ++i, ++k) wheel.row(k) << 1.0f, 0.0f, 1.0f - float(i) / MR;
  return wheel;
}

Tensor4<float> flow_to_color(const FlowField<float>& flow, float max_magnitude) {
  const Tensor4<float>& t = flow.tensor();
  const Index h = t.height(), w = t.width();
  require(t.batch() == 1, "flow_to_color: flow batch must be 1, got ", t.shape());

  float maxmag = max_magnitude;
  if (maxmag <= 0.0f) {
    std::vector<float> mags(static_cast<size_t>(h) * w);
    for (Index y = 0; y < h; ++y) {
      for (Index x = 0; x < w; ++x) {
        mags[y * w + x] = std::hypot(t(0, 0, y, x), t(0, 1, y, x));
      }
    }
    const size_t idx = static_cast<size_t>(0.99 * (mags.size() - 1));
    std::nth_element(mags.begin(), mags.begin() + idx, mags.end());
    maxmag = mags[idx];
  }
  if (maxmag < 1e-9f) maxmag = 1e-9f;

  static const RowMat<float> wheel = flow_color_wheel();
  const int ncols = static_cast<int>(wheel.rows());
  Tensor4<float> img(1, 3, h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const float u = t(0, 0, y, x), v = t(0, 1, y, x);
      const float rad = std::hypot(u, v) / maxmag;
      constexpr float kPi = 3.14159265358979323846f;
      const float a = std::atan2(-v, -u) / kPi;  // in [-1, 1]
      const float fk = (a + 1.0f) / 2.0f * (ncols - 1);
      int k0 = static_cast<int>(std::floor(fk));
      if (k0 >= ncols) k0 = ncols - 1;
      const int k1 = (k0 + 1) % ncols;
      const float f = fk - k0;
      for (Index c = 0; c < 3; ++c) {
        float col = (1.0f - f) * wheel(k0, c) + f * wheel(k1, c);
        if (rad <= 1.0f) {
          col = 1.0f - rad * (1.0f - col);  // saturate toward white at the center
        } else {
          col *= 0.75f;  // out-of-range magnitudes dimmed
        }
        img(0, c, y, x) = col;
      }
    }
  }
  return img;
}

namespace {

constexpr char kWeightMagic[4] = {'F', 'F', 'N', 'W'};
constexpr uint32_t kWeightVersion = 1;

void put_tensor_entry(std::ostream& os, const std::string& name,
                      const std::vector<uint32_t>& dims, const float* data, size_t n) {
  put_u16(os, static_cast<uint16_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  os.put(static_cast<char>(dims.size()));
  for (uint32_t d : dims) put_u32(os, d);
  os.put(0);  // dtype f32
  for (size_t i = 0; i < n; ++i) put_f32(os, data[i]);
}

struct TensorEntry {
  std::string name;
  std::vector<uint32_t> dims;
  std::vector<float> values;
};

TensorEntry read_tensor_entry(Reader& r) {
  TensorEntry e;
  const uint16_t len = r.u16("tensor name length");
  e.name.resize(len);
  r.bytes(e.name.data(), len, "tensor name");
  uint8_t rank;
  r.bytes(&rank, 1, "tensor rank");
  size_t n = 1;
  for (int i = 0; i < rank; ++i) {
    const uint32_t d = r.u32("tensor dim");
    if (d == 0) io_fail(r.path + ": zero dimension in tensor '" + e.name + "'");
    e.dims.push_back(d);
    n *= d;
  }
  uint8_t dtype;
  r.bytes(&dtype, 1, "tensor dtype");
  if (dtype != 0) {
    io_fail(r.path + ": unsupported dtype " + std::to_string(dtype) + " in tensor '" +
            e.name + "'");
  }
  e.values.resize(n);
  r.f32_array(e.values.data(), n, ("tensor '" + e.name + "' values").c_str());
  return e;
}

std::string shape_str(const std::vector<uint32_t>& dims) {
  std::string s;
  for (size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s;
}

}  // namespace

void save_weights(const std::string& path, const WeightStore<float>& ws) {
  std::ofstream os(path, std::ios::binary);
  if (!os) io_fail(path + ": cannot open for writing");
  os.write(kWeightMagic, 4);
  put_u32(os, kWeightVersion);
  uint32_t count = 0;
  for (const auto& name : ws.names()) {
    count += 1 + (ws.at(name).bias.size() > 0 ? 1 : 0);
  }
  put_u32(os, count);
  for (const auto& name : ws.names()) {
    const LayerWeights<float>& lw = ws.at(name);
    const Shape4& s = lw.weight.shape();
    put_tensor_entry(os, name + ".weight",
                     {static_cast<uint32_t>(s.b), static_cast<uint32_t>(s.c),
                      static_cast<uint32_t>(s.h), static_cast<uint32_t>(s.w)},
                     lw.weight.data(), static_cast<size_t>(lw.weight.size()));
    if (lw.bias.size() > 0) {
      put_tensor_entry(os, name + ".bias", {static_cast<uint32_t>(lw.bias.size())},
                       lw.bias.data(), static_cast<size_t>(lw.bias.size()));
    }
  }
  if (!os) io_fail(path + ": write failed");
}

WeightStore<float> load_weights(const std::string& path, const NetConfig& cfg) {
  Reader r(path);
  char magic[4];
  r.bytes(magic, 4, "magic");
  if (std::memcmp(magic, kWeightMagic, 4) != 0) {
    io_fail(path + ": bad weight-file magic (expected FFNW)");
  }
  const uint32_t version = r.u32("version");
  if (version != kWeightVersion) {
    io_fail(path + ": unsupported weight-file version " + std::to_string(version) +
            " (expected " + std::to_string(kWeightVersion) + ")");
  }
  const uint32_t count = r.u32("tensor count");
  std::map<std::string, TensorEntry> entries;
  for (uint32_t i = 0; i < count; ++i) {
    TensorEntry e = read_tensor_entry(r);
    if (entries.count(e.name)) io_fail(path + ": duplicate tensor '" + e.name + "'");
    entries.emplace(e.name, std::move(e));
  }

  WeightStore<float> ws;
  for (const LayerInfo& li : layer_plan(cfg)) {
    if (!li.has_params()) continue;
    const Shape4 want = li.kind == LayerKind::Deconv
                            ? Shape4{li.in_ch, li.out_ch, li.kh, li.kw}
                            : Shape4{li.out_ch, li.in_ch / li.groups, li.kh, li.kw};
    auto wit = entries.find(li.name + ".weight");
    if (wit == entries.end()) io_fail(path + ": missing tensor '" + li.name + ".weight'");
    const TensorEntry& we = wit->second;
    const std::vector<uint32_t> want_dims = {
        static_cast<uint32_t>(want.b), static_cast<uint32_t>(want.c),
        static_cast<uint32_t>(want.h), static_cast<uint32_t>(want.w)};
    if (we.dims != want_dims) {
      std::ostringstream os;
      os << path << ": layer '" << li.name << "' weight shape " << shape_str(we.dims)
         << " does not match expected " << want;
      io_fail(os.str());
    }
    Tensor4<float> w(want);
    std::memcpy(w.data(), we.values.data(), we.values.size() * sizeof(float));

    Vec<float> b;
    if (li.has_bias) {
      auto bit = entries.find(li.name + ".bias");
      if (bit == entries.end()) io_fail(path + ": missing tensor '" + li.name + ".bias'");
      const TensorEntry& be = bit->second;
      if (be.dims != std::vector<uint32_t>{static_cast<uint32_t>(li.out_ch)}) {
        io_fail(path + ": layer '" + li.name + "' bias shape " + shape_str(be.dims) +
                " does not match expected " + std::to_string(li.out_ch));
      }
      b = Eigen::Map<const Vec<float>>(be.values.data(), be.values.size());
    }
    entries.erase(li.name + ".weight");
    if (li.has_bias) entries.erase(li.name + ".bias");
    ws.add(li.name, std::move(w), std::move(b));
  }
  if (!entries.empty()) {
    io_fail(path + ": unexpected tensor '" + entries.begin()->first +
            "' not part of the configured architecture");
  }
  return ws;
}

}  // namespace flowlite
