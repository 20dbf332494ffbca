#include "inrprop/io.hpp"

#include <unistd.h>

#include <atomic>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "inrprop/error.hpp"

namespace inrprop {

namespace fs = std::filesystem;

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

namespace {

// ---------------------------------------------------------------------------
// Little-endian byte helpers

class Writer {
 public:
  explicit Writer(Bytes& out) : out_(out) {}
  void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  void u16(std::uint16_t v) { put(v, 2); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void blob(std::string_view s) {
    if (s.size() > 0xFFFFFFFFu) throw ContractViolation("string too long for a u32 length prefix");
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s);
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  Bytes& out_;
};

class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::size_t pos, std::string format)
      : bytes_(bytes), pos_(pos), format_(std::move(format)) {}

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  const std::string& format() const { return format_; }

  void need(std::size_t n, const std::string& what) const {
    if (remaining() < n)
      throw FormatError(format_ + ": truncated " + what + " (need " + std::to_string(n) + " bytes, have " +
                            std::to_string(remaining()) + ")",
                        pos_);
  }
  void magic(std::string_view m) {
    need(m.size(), "magic");
    if (std::memcmp(bytes_.data() + pos_, m.data(), m.size()) != 0)
      throw FormatError(format_ + ": bad magic, expected \"" + std::string(m) + "\"", pos_);
    pos_ += m.size();
  }
  std::uint16_t u16(const std::string& what) { return static_cast<std::uint16_t>(get(2, what)); }
  std::uint32_t u32(const std::string& what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(const std::string& what) { return get(8, what); }
  float f32(const std::string& what) { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4, what))); }
  double f64(const std::string& what) { return std::bit_cast<double>(get(8, what)); }
  std::string blob(const std::string& what) {
    const std::uint32_t n = u32(what + " length");
    need(n, what);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void finish() const {
    if (remaining() != 0) throw FormatError(format_ + ": " + std::to_string(remaining()) + " trailing bytes", pos_);
  }

 private:
  std::uint64_t get(int n, const std::string& what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_;
  std::string format_;
};

bool valid_utf8(std::string_view s) {
  std::size_t i = 0;
  while (i < s.size()) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 0;
    std::uint32_t cp = 0;
    if (c < 0x80) {
      ++i;
      continue;
    } else if ((c & 0xE0) == 0xC0) {
      len = 2;
      cp = c & 0x1F;
    } else if ((c & 0xF0) == 0xE0) {
      len = 3;
      cp = c & 0x0F;
    } else if ((c & 0xF8) == 0xF0) {
      len = 4;
      cp = c & 0x07;
    } else {
      return false;
    }
    if (i + len > s.size()) return false;
    for (std::size_t k = 1; k < len; ++k) {
      const auto cc = static_cast<unsigned char>(s[i + k]);
      if ((cc & 0xC0) != 0x80) return false;
      cp = (cp << 6) | (cc & 0x3F);
    }
    const std::uint32_t min_cp[] = {0, 0, 0x80, 0x800, 0x10000};
    if (cp < min_cp[len] || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return false;
    i += len;
  }
  return true;
}

std::uint32_t nonzero_dim(Reader& r, const char* name) {
  const std::size_t at = r.pos();
  const std::uint32_t v = r.u32(std::string("dimension ") + name);
  if (v == 0) throw FormatError(r.format() + ": dimension " + name + " must be >= 1", at);
  return v;
}

nlohmann::json parse_meta(const std::string& text, const std::string& format, std::size_t offset) {
  if (!valid_utf8(text)) throw FormatError(format + ": metadata is not valid UTF-8", offset);
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw FormatError(format + ": metadata is not a JSON object", offset);
  return j;
}

// JSON field helpers with path-qualified errors.
const nlohmann::json& require(const nlohmann::json& j, const char* key, const std::string& path) {
  if (!j.contains(key)) throw SchemaError(path + key, "missing required field");
  return j.at(key);
}

std::string join(const std::string& prefix, const std::string& key) { return prefix.empty() ? key : prefix + "." + key; }

double finite_number(const nlohmann::json& v, const std::string& path) {
  if (!v.is_number()) throw SchemaError(path, "must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw SchemaError(path, "must be finite");
  return d;
}

std::int64_t integer(const nlohmann::json& v, const std::string& path) {
  if (!v.is_number_integer()) throw SchemaError(path, "must be an integer");
  return v.get<std::int64_t>();
}

std::string text(const nlohmann::json& v, const std::string& path) {
  if (!v.is_string()) throw SchemaError(path, "must be a string");
  return v.get<std::string>();
}

nlohmann::json point_json(const Point2& p) { return nlohmann::json::array({p.x, p.y}); }

Point2 point_from_json(const nlohmann::json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2) throw SchemaError(path, "must be [x, y]");
  return {finite_number(v[0], path + "[0]"), finite_number(v[1], path + "[1]")};
}

}  // namespace

// ---------------------------------------------------------------------------

void atomic_write(const fs::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<unsigned> counter{0};
  const fs::path dir = path.has_parent_path() ? path.parent_path() : fs::path(".");
  const fs::path tmp = dir / ("." + path.filename().string() + ".tmp-" + std::to_string(::getpid()) + "-" +
                              std::to_string(counter++));
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    out.flush();
    if (!out) {
      std::error_code ec;
      fs::remove(tmp, ec);
      throw Error("write failed for " + path.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw Error("cannot move output into place at " + path.string());
  }
}

void atomic_write(const fs::path& path, std::string_view text) {
  atomic_write(path, std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Bytes read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string(), 0);
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// ---------------------------------------------------------------------------
// FVOL

Bytes encode_fvol(const FeatureVolume& v) {
  if (v.frames == 0 || v.height == 0 || v.width == 0 || v.dim == 0)
    throw ContractViolation("FVOL: every dimension must be >= 1");
  if (v.data.size() != v.cell_count() * v.dim) throw ContractViolation("FVOL: data size does not match dimensions");
  Bytes out;
  out.reserve(22 + v.data.size() * 4 + (v.source_tag.empty() ? 0 : 4 + v.source_tag.size()));
  Writer w(out);
  w.raw("FVOL");
  w.u16(kFvolVersion);
  w.u32(v.frames);
  w.u32(v.height);
  w.u32(v.width);
  w.u32(v.dim);
  for (float f : v.data) w.f32(f);
  if (!v.source_tag.empty()) w.blob(v.source_tag);
  return out;
}

FvolLoad decode_fvol(std::span<const std::uint8_t> bytes) {
  Reader r(bytes, 0, "FVOL");
  r.magic("FVOL");
  const std::size_t version_at = r.pos();
  const std::uint16_t version = r.u16("version");
  if (version != kFvolVersion)
    throw FormatError("FVOL: unsupported version " + std::to_string(version), version_at);
  FvolLoad load;
  FeatureVolume& v = load.volume;
  v.frames = nonzero_dim(r, "T");
  v.height = nonzero_dim(r, "H");
  v.width = nonzero_dim(r, "W");
  v.dim = nonzero_dim(r, "D");

  const std::size_t data_at = r.pos();
  const unsigned __int128 count = static_cast<unsigned __int128>(v.frames) * v.height * v.width * v.dim;
  if (count * 4 > r.remaining())
    throw FormatError("FVOL: truncated feature data (need " + std::to_string(static_cast<std::uint64_t>(count) * 4) +
                          " bytes, have " + std::to_string(r.remaining()) + ")",
                      data_at);
  v.data.resize(static_cast<std::size_t>(count));
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    const std::size_t at = r.pos();
    v.data[i] = r.f32("feature data");
    if (!std::isfinite(v.data[i])) throw FormatError("FVOL: non-finite feature value", at);
  }
  if (r.remaining() > 0) {
    const std::size_t tag_at = r.pos();
    v.source_tag = r.blob("source tag");
    if (!valid_utf8(v.source_tag)) throw FormatError("FVOL: source tag is not valid UTF-8", tag_at);
    r.finish();
  }

  for (std::uint32_t t = 0; t < v.frames; ++t) {
    for (std::uint32_t y = 0; y < v.height; ++y) {
      for (std::uint32_t x = 0; x < v.width; ++x) {
        auto cell = v.at(t, y, x);
        double n2 = 0.0;
        for (float f : cell) n2 += static_cast<double>(f) * f;
        const double n = std::sqrt(n2);
        const double dev = std::abs(n - 1.0);
        if (dev > kFvolRejectDeviation)
          throw FormatError("FVOL: feature vector (t=" + std::to_string(t) + ", y=" + std::to_string(y) +
                                ", x=" + std::to_string(x) + ") has norm " + std::to_string(n),
                            data_at + v.offset(t, y, x) * 4);
        if (dev > 1e-3) {
          for (float& f : cell) f = static_cast<float>(f / n);
          ++load.renormalized;
        }
      }
    }
  }
  return load;
}

void write_fvol(const FeatureVolume& volume, const fs::path& path) { atomic_write(path, encode_fvol(volume)); }

FvolLoad read_fvol(const fs::path& path) {
  const Bytes b = read_file(path);
  try {
    return decode_fvol(b);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + std::string(e.what()).substr(0, std::string(e.what()).rfind(" at byte offset")),
                      e.offset());
  }
}

// ---------------------------------------------------------------------------
// SIRN and wrappers

Bytes encode_siren(const SirenNet& net) {
  const SirenConfig& c = net.config();
  Bytes out;
  Writer w(out);
  w.raw("SIRN");
  w.u16(kSirnVersion);
  w.u32(c.in_dim);
  w.u32(c.hidden_dim);
  w.u32(c.n_hidden_layers);
  w.u32(c.out_dim);
  w.f64(c.omega0);
  w.u32(static_cast<std::uint32_t>(c.activation));
  w.u32(c.n_frequencies);
  w.u64(net.seed());
  w.u64(net.params().size());
  for (double p : net.params()) w.f64(p);
  return out;
}

SirenNet decode_siren(std::span<const std::uint8_t> bytes, std::size_t& offset) {
  Reader r(bytes, offset, "SIRN");
  r.magic("SIRN");
  const std::size_t version_at = r.pos();
  const std::uint16_t version = r.u16("version");
  if (version != kSirnVersion) throw FormatError("SIRN: unsupported version " + std::to_string(version), version_at);
  const std::size_t config_at = r.pos();
  SirenConfig c;
  c.in_dim = r.u32("in_dim");
  c.hidden_dim = r.u32("hidden_dim");
  c.n_hidden_layers = r.u32("n_hidden_layers");
  c.out_dim = r.u32("out_dim");
  c.omega0 = r.f64("omega0");
  const std::uint32_t act = r.u32("activation");
  c.n_frequencies = r.u32("n_frequencies");
  if (act > 2) throw FormatError("SIRN: unknown activation code " + std::to_string(act), config_at + 24);
  c.activation = static_cast<Activation>(act);
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("SIRN: ") + e.what(), config_at);
  }
  const std::uint64_t seed = r.u64("seed");
  const std::size_t count_at = r.pos();
  const std::uint64_t count = r.u64("parameter count");
  if (count != c.parameter_count())
    throw FormatError("SIRN: parameter count " + std::to_string(count) + " does not match the config (" +
                          std::to_string(c.parameter_count()) + ")",
                      count_at);
  r.need(count * 8, "parameters");
  std::vector<double> params(count);
  for (auto& p : params) {
    const std::size_t at = r.pos();
    p = r.f64("parameters");
    if (!std::isfinite(p)) throw FormatError("SIRN: non-finite parameter", at);
  }
  offset = r.pos();
  return SirenNet(c, seed, std::move(params));
}

Bytes encode_feature_field(const FeatureField& field, const nlohmann::json& meta) {
  const Downsampler& d = field.downsampler();
  Bytes out;
  Writer w(out);
  w.raw("FFLD");
  w.u16(kFfldVersion);
  w.u32(static_cast<std::uint32_t>(field.canvas().width));
  w.u32(static_cast<std::uint32_t>(field.canvas().height));
  w.u32(static_cast<std::uint32_t>(field.frame_count()));
  w.u32(static_cast<std::uint32_t>(d.kernel_h));
  w.u32(static_cast<std::uint32_t>(d.kernel_w));
  w.u32(static_cast<std::uint32_t>(d.stride_y));
  w.u32(static_cast<std::uint32_t>(d.stride_x));
  for (double k : d.raw) w.f64(k);
  const Bytes net = encode_siren(field.net());
  out.insert(out.end(), net.begin(), net.end());
  nlohmann::json m = meta.is_object() ? meta : nlohmann::json::object();
  m["video_id"] = field.video_id();
  w.blob(m.dump());
  return out;
}

FeatureField decode_feature_field(std::span<const std::uint8_t> bytes, nlohmann::json* meta) {
  Reader r(bytes, 0, "FFLD");
  r.magic("FFLD");
  const std::size_t version_at = r.pos();
  const std::uint16_t version = r.u16("version");
  if (version != kFfldVersion) throw FormatError("FFLD: unsupported version " + std::to_string(version), version_at);
  Canvas hr;
  hr.width = static_cast<int>(nonzero_dim(r, "width"));
  hr.height = static_cast<int>(nonzero_dim(r, "height"));
  const int frames = static_cast<int>(nonzero_dim(r, "frames"));
  Downsampler d;
  d.kernel_h = static_cast<int>(nonzero_dim(r, "kernel_h"));
  d.kernel_w = static_cast<int>(nonzero_dim(r, "kernel_w"));
  d.stride_y = static_cast<int>(nonzero_dim(r, "stride_y"));
  d.stride_x = static_cast<int>(nonzero_dim(r, "stride_x"));
  if (hr.width > (1 << 20) || hr.height > (1 << 20) || d.kernel_h > 4096 || d.kernel_w > 4096)
    throw FormatError("FFLD: implausible dimensions", 6);
  const std::size_t kernel_at = r.pos();
  r.need(static_cast<std::size_t>(d.taps()) * 8, "kernel");
  d.raw.resize(static_cast<std::size_t>(d.taps()));
  for (double& k : d.raw) k = r.f64("kernel");
  if (!d.is_simplex()) throw FormatError("FFLD: kernel has no usable mass", kernel_at);
  std::size_t off = r.pos();
  SirenNet net = decode_siren(bytes, off);
  Reader tail(bytes, off, "FFLD");
  const std::size_t meta_at = tail.pos();
  nlohmann::json m = parse_meta(tail.blob("metadata"), "FFLD", meta_at);
  tail.finish();
  std::string video;
  if (m.contains("video_id") && m["video_id"].is_string()) video = m["video_id"].get<std::string>();
  try {
    FeatureField field(std::move(net), std::move(d), hr, frames, video);
    if (meta) *meta = std::move(m);
    return field;
  } catch (const ConfigError& e) {
    throw FormatError(std::string("FFLD: ") + e.what(), 0);
  }
}

Bytes encode_displacement(const DisplacementField& field, const nlohmann::json& extra) {
  Bytes out;
  Writer w(out);
  w.raw("DFLD");
  w.u16(kDfldVersion);
  const Bytes net = encode_siren(field.net());
  out.insert(out.end(), net.begin(), net.end());
  const PairMeta& p = field.meta();
  nlohmann::json m = extra.is_object() ? extra : nlohmann::json::object();
  m["src_video"] = p.src_video;
  m["src_t"] = p.src_t;
  m["tgt_video"] = p.tgt_video;
  m["tgt_t"] = p.tgt_t;
  m["canvas"] = {{"width", p.canvas.width}, {"height", p.canvas.height}};
  m["loss_trace"] = field.loss_trace();
  w.blob(m.dump());
  return out;
}

DisplacementField decode_displacement(std::span<const std::uint8_t> bytes, nlohmann::json* meta) {
  Reader r(bytes, 0, "DFLD");
  r.magic("DFLD");
  const std::size_t version_at = r.pos();
  const std::uint16_t version = r.u16("version");
  if (version != kDfldVersion) throw FormatError("DFLD: unsupported version " + std::to_string(version), version_at);
  std::size_t off = r.pos();
  SirenNet net = decode_siren(bytes, off);
  Reader tail(bytes, off, "DFLD");
  const std::size_t meta_at = tail.pos();
  nlohmann::json m = parse_meta(tail.blob("metadata"), "DFLD", meta_at);
  tail.finish();
  PairMeta p;
  std::vector<double> trace;
  try {
    p.src_video = m.at("src_video").get<std::string>();
    p.src_t = m.at("src_t").get<int>();
    p.tgt_video = m.at("tgt_video").get<std::string>();
    p.tgt_t = m.at("tgt_t").get<int>();
    p.canvas.width = m.at("canvas").at("width").get<int>();
    p.canvas.height = m.at("canvas").at("height").get<int>();
    trace = m.at("loss_trace").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("DFLD: incomplete pair metadata (") + e.what() + ")", meta_at);
  }
  try {
    DisplacementField field(std::move(net), p, std::move(trace));
    if (meta) *meta = std::move(m);
    return field;
  } catch (const ConfigError& e) {
    throw FormatError(std::string("DFLD: ") + e.what(), meta_at);
  }
}

// ---------------------------------------------------------------------------
// PGM

namespace {

struct PgmHeader {
  int width = 0;
  int height = 0;
  int maxval = 0;
  std::size_t data_at = 0;
};

PgmHeader parse_pgm_header(std::span<const std::uint8_t> b) {
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw FormatError("PGM: bad magic, expected \"P5\"", 0);
  std::size_t pos = 2;
  auto is_space = [](std::uint8_t c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f'; };
  auto next_int = [&](const char* what) {
    while (pos < b.size()) {
      if (is_space(b[pos])) {
        ++pos;
      } else if (b[pos] == '#') {
        while (pos < b.size() && b[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
    const std::size_t start = pos;
    long v = 0;
    while (pos < b.size() && b[pos] >= '0' && b[pos] <= '9') {
      v = v * 10 + (b[pos] - '0');
      if (v > (1L << 24)) throw FormatError(std::string("PGM: ") + what + " is too large", start);
      ++pos;
    }
    if (pos == start) {
      if (pos >= b.size()) throw FormatError(std::string("PGM: truncated header, missing ") + what, start);
      throw FormatError(std::string("PGM: expected ") + what, start);
    }
    return std::pair{static_cast<int>(v), start};
  };
  PgmHeader h;
  auto [w, w_at] = next_int("width");
  auto [ht, h_at] = next_int("height");
  auto [mv, mv_at] = next_int("maxval");
  if (w < 1) throw FormatError("PGM: width must be >= 1", w_at);
  if (ht < 1) throw FormatError("PGM: height must be >= 1", h_at);
  if (mv < 1 || mv > 65535) throw FormatError("PGM: maxval must be in 1..65535", mv_at);
  if (pos >= b.size() || !is_space(b[pos])) throw FormatError("PGM: expected one whitespace byte after maxval", pos);
  h.width = w;
  h.height = ht;
  h.maxval = mv;
  h.data_at = pos + 1;
  return h;
}

std::string pgm_header(int w, int h, int maxval) {
  return "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n" + std::to_string(maxval) + "\n";
}

}  // namespace

Bytes encode_pgm(const BinaryMask& mask) {
  if (mask.bits.size() != static_cast<std::size_t>(mask.width) * mask.height || mask.bits.empty())
    throw ContractViolation("PGM: mask buffer does not match its dimensions");
  const std::string head = pgm_header(mask.width, mask.height, 255);
  Bytes out(head.begin(), head.end());
  for (std::uint8_t b : mask.bits) out.push_back(b ? 255 : 0);
  return out;
}

BinaryMask decode_pgm(std::span<const std::uint8_t> bytes) {
  const PgmHeader h = parse_pgm_header(bytes);
  if (h.maxval > 255) throw FormatError("PGM: masks must use 8-bit samples (maxval <= 255)", 0);
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() - h.data_at < n)
    throw FormatError("PGM: truncated pixel data (need " + std::to_string(n) + " bytes, have " +
                          std::to_string(bytes.size() - h.data_at) + ")",
                      h.data_at);
  if (bytes.size() - h.data_at > n) throw FormatError("PGM: trailing bytes after pixel data", h.data_at + n);
  BinaryMask m(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) m.bits[i] = bytes[h.data_at + i] != 0 ? 1 : 0;
  return m;
}

Bytes encode_probability_pgm(const ProbabilityField& field) {
  if (field.values.size() != static_cast<std::size_t>(field.width) * field.height || field.values.empty())
    throw ContractViolation("PGM: probability buffer does not match its dimensions");
  const std::string head = pgm_header(field.width, field.height, 65535);
  Bytes out(head.begin(), head.end());
  for (double p : field.values) {
    const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(p, 0.0, 1.0) * 65535.0));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  }
  return out;
}

ProbabilityField decode_probability_pgm(std::span<const std::uint8_t> bytes) {
  const PgmHeader h = parse_pgm_header(bytes);
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  const std::size_t bpp = h.maxval > 255 ? 2 : 1;
  if (bytes.size() - h.data_at < n * bpp)
    throw FormatError("PGM: truncated pixel data (need " + std::to_string(n * bpp) + " bytes, have " +
                          std::to_string(bytes.size() - h.data_at) + ")",
                      h.data_at);
  if (bytes.size() - h.data_at > n * bpp) throw FormatError("PGM: trailing bytes after pixel data", h.data_at + n * bpp);
  ProbabilityField f{h.width, h.height, std::vector<double>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t at = h.data_at + i * bpp;
    const unsigned v = bpp == 2 ? (static_cast<unsigned>(bytes[at]) << 8) | bytes[at + 1] : bytes[at];
    if (v > static_cast<unsigned>(h.maxval)) throw FormatError("PGM: sample exceeds maxval", at);
    f.values[i] = static_cast<double>(v) / h.maxval;
  }
  return f;
}

// ---------------------------------------------------------------------------
// JSON documents

std::string_view engine_version() { return "inrprop 0.1.0"; }

std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

nlohmann::json parse_json_text(std::string_view text, const std::string& what) {
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError(what + ": invalid JSON (" + e.what() + ")", e.byte > 0 ? e.byte - 1 : 0);
  }
}

nlohmann::json read_json(const fs::path& path) {
  const Bytes b = read_file(path);
  return parse_json_text(std::string_view(reinterpret_cast<const char*>(b.data()), b.size()), path.string());
}

std::vector<Point2> AnnotationDoc::point_list() const {
  std::vector<Point2> out;
  if (points)
    for (const auto& p : *points) out.push_back({p.x, p.y});
  return out;
}

AnnotationDoc parse_annotation(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("", "annotation must be a JSON object");
  AnnotationDoc doc;
  doc.video_id = text(require(j, "video_id", ""), "video_id");
  const std::int64_t frame = integer(require(j, "frame", ""), "frame");
  if (frame < 0 || frame > (1 << 30)) throw SchemaError("frame", "must be a non-negative frame index");
  doc.frame = static_cast<int>(frame);
  const auto& canvas = require(j, "canvas", "");
  if (!canvas.is_object()) throw SchemaError("canvas", "must be an object");
  const std::int64_t w = integer(require(canvas, "width", "canvas."), "canvas.width");
  const std::int64_t h = integer(require(canvas, "height", "canvas."), "canvas.height");
  if (w < 1 || w > (1 << 20)) throw SchemaError("canvas.width", "must be a positive pixel count");
  if (h < 1 || h > (1 << 20)) throw SchemaError("canvas.height", "must be a positive pixel count");
  doc.canvas = {static_cast<int>(w), static_cast<int>(h)};

  if (j.contains("points")) {
    const auto& pts = j.at("points");
    if (!pts.is_array()) throw SchemaError("points", "must be an array");
    std::vector<AnnotationPoint> out;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const std::string path = "points[" + std::to_string(i) + "]";
      const auto& p = pts[i];
      if (!p.is_object()) throw SchemaError(path, "must be an object with x and y");
      AnnotationPoint ap;
      ap.x = finite_number(require(p, "x", path + "."), path + ".x");
      ap.y = finite_number(require(p, "y", path + "."), path + ".y");
      if (p.contains("label")) ap.label = text(p.at("label"), path + ".label");
      if (ap.x < 0.0 || ap.x >= doc.canvas.width || ap.y < 0.0 || ap.y >= doc.canvas.height)
        throw SchemaError(path, "point (" + std::to_string(ap.x) + ", " + std::to_string(ap.y) +
                                    ") lies outside the " + std::to_string(doc.canvas.width) + "x" +
                                    std::to_string(doc.canvas.height) + " canvas");
      for (const auto& [k, v] : p.items())
        if (k != "x" && k != "y" && k != "label") ap.extra[k] = v;
      out.push_back(std::move(ap));
    }
    doc.points = std::move(out);
  }
  if (j.contains("mask_ref") && !j.at("mask_ref").is_null()) doc.mask_ref = text(j.at("mask_ref"), "mask_ref");
  if ((!doc.points || doc.points->empty()) && !doc.mask_ref) throw SchemaError("", "annotation has no payload");
  for (const auto& [k, v] : j.items())
    if (k != "video_id" && k != "frame" && k != "canvas" && k != "points" && k != "mask_ref") doc.extra[k] = v;
  return doc;
}

nlohmann::json to_json(const AnnotationDoc& doc) {
  nlohmann::json j = doc.extra.is_object() ? doc.extra : nlohmann::json::object();
  j["video_id"] = doc.video_id;
  j["frame"] = doc.frame;
  j["canvas"] = {{"width", doc.canvas.width}, {"height", doc.canvas.height}};
  if (doc.points) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : *doc.points) {
      nlohmann::json pj = p.extra.is_object() ? p.extra : nlohmann::json::object();
      pj["x"] = p.x;
      pj["y"] = p.y;
      pj["label"] = p.label;
      pts.push_back(std::move(pj));
    }
    j["points"] = std::move(pts);
  }
  if (doc.mask_ref) j["mask_ref"] = *doc.mask_ref;
  return j;
}

AnnotationDoc read_annotation(const fs::path& path) { return parse_annotation(read_json(path)); }

void write_annotation(const AnnotationDoc& doc, const fs::path& path) {
  const nlohmann::json j = to_json(doc);
  parse_annotation(j);
  atomic_write(path, dump_json(j));
}

nlohmann::json to_json(const MatchResult& r) {
  return {{"source", point_json(r.source)},
          {"predicted", point_json(r.predicted)},
          {"score", r.score},
          {"cosine", r.cosine},
          {"flow_center", point_json(r.flow_center)}};
}

MatchResult match_result_from_json(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw SchemaError(path, "must be an object");
  MatchResult r;
  r.source = point_from_json(require(j, "source", path + "."), join(path, "source"));
  r.predicted = point_from_json(require(j, "predicted", path + "."), join(path, "predicted"));
  r.score = finite_number(require(j, "score", path + "."), join(path, "score"));
  r.cosine = finite_number(require(j, "cosine", path + "."), join(path, "cosine"));
  r.flow_center = point_from_json(require(j, "flow_center", path + "."), join(path, "flow_center"));
  return r;
}

void validate(const PropagationDoc& doc) {
  if (!doc.seed) throw SchemaError("seed", "missing; propagation documents must record their seed");
  if (!doc.configs.is_object() || doc.configs.empty())
    throw SchemaError("configs", "missing; propagation documents must echo their configs");
  if (doc.mode != "points" && doc.mode != "mask") throw SchemaError("mode", "must be \"points\" or \"mask\"");
}

PropagationDoc parse_propagation(const nlohmann::json& j) {
  if (!j.is_object()) throw SchemaError("", "propagation document must be a JSON object");
  PropagationDoc doc;
  if (j.contains("engine_version")) doc.engine_version = text(j.at("engine_version"), "engine_version");
  if (j.contains("seed")) {
    if (!j.at("seed").is_number_unsigned()) throw SchemaError("seed", "must be an unsigned integer");
    doc.seed = j.at("seed").get<std::uint64_t>();
  }
  if (j.contains("source")) doc.source = j.at("source");
  if (j.contains("target")) {
    const auto& t = j.at("target");
    if (!t.is_object()) throw SchemaError("target", "must be an object");
    doc.target_video = text(require(t, "video_id", "target."), "target.video_id");
    const std::int64_t f = integer(require(t, "frame", "target."), "target.frame");
    if (f < 0) throw SchemaError("target.frame", "must be non-negative");
    doc.target_frame = static_cast<int>(f);
  }
  if (j.contains("mode")) doc.mode = text(j.at("mode"), "mode");
  if (j.contains("configs")) doc.configs = j.at("configs");
  if (j.contains("results")) {
    const auto& rs = j.at("results");
    if (!rs.is_array()) throw SchemaError("results", "must be an array");
    for (std::size_t i = 0; i < rs.size(); ++i)
      doc.results.push_back(match_result_from_json(rs[i], "results[" + std::to_string(i) + "]"));
  }
  if (j.contains("mask_outputs")) {
    if (!j.at("mask_outputs").is_object()) throw SchemaError("mask_outputs", "must be an object");
    doc.mask_outputs = j.at("mask_outputs");
  }
  for (const auto& [k, v] : j.items())
    if (k != "engine_version" && k != "seed" && k != "source" && k != "target" && k != "mode" && k != "configs" &&
        k != "results" && k != "mask_outputs")
      doc.extra[k] = v;
  validate(doc);
  return doc;
}

nlohmann::json to_json(const PropagationDoc& doc) {
  nlohmann::json j = doc.extra.is_object() ? doc.extra : nlohmann::json::object();
  j["engine_version"] = doc.engine_version;
  if (doc.seed) j["seed"] = *doc.seed;
  j["source"] = doc.source;
  j["target"] = {{"video_id", doc.target_video}, {"frame", doc.target_frame}};
  j["mode"] = doc.mode;
  j["configs"] = doc.configs;
  nlohmann::json rs = nlohmann::json::array();
  for (const auto& r : doc.results) rs.push_back(to_json(r));
  j["results"] = std::move(rs);
  j["mask_outputs"] = doc.mask_outputs;
  return j;
}

PropagationDoc read_propagation(const fs::path& path) { return parse_propagation(read_json(path)); }

void write_propagation(const PropagationDoc& doc, const fs::path& path) {
  validate(doc);
  atomic_write(path, dump_json(to_json(doc)));
}

}  // namespace inrprop
