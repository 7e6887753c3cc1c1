#include "afp/data_io.hpp"
#include "afp/eval.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "afp/parallel.hpp"

namespace afp {

namespace {

constexpr std::uint32_t kTseqVersion = 1;
constexpr std::uint32_t kTfldVersion = 1;
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::uint32_t kClassifierVersion = 1;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double uniform01(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }
int uniform_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive
  return lo + static_cast<int>(rng() % std::uint64_t(hi - lo + 1));
}

// Little-endian writer/reader over a byte string.
class Writer {
 public:
  void bytes(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { for (int i = 0; i < 2; ++i) u8(std::uint8_t(v >> (8 * i))); }
  void u32(std::uint32_t v) { for (int i = 0; i < 4; ++i) u8(std::uint8_t(v >> (8 * i))); }
  void f32(float f) { u32(std::bit_cast<std::uint32_t>(f)); }
  void f32s(const std::vector<float>& v) {
    if constexpr (std::endian::native == std::endian::little) bytes(v.data(), v.size() * 4);
    else for (float f : v) f32(f);
  }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(std::string data, std::string what) : data_(std::move(data)), what_(std::move(what)) {}
  void need(std::size_t n) const {
    if (pos_ + n > data_.size())
      throw FormatError(what_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                        std::to_string(pos_) + ", file has " + std::to_string(data_.size()) + ")");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16() {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= std::uint16_t(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u32_be() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v = (v << 8) | u8();
    return v;
  }
  std::vector<float> f32s(std::size_t n) {
    need(n * 4);
    std::vector<float> v(n);
    if constexpr (std::endian::native == std::endian::little) {
      std::memcpy(v.data(), data_.data() + pos_, n * 4);
      pos_ += n * 4;
    } else {
      for (auto& f : v) f = std::bit_cast<float>(u32());
    }
    return v;
  }
  std::string magic() {
    need(4);
    std::string m = data_.substr(pos_, 4);
    pos_ += 4;
    return m;
  }
  const char* raw(std::size_t n) {
    need(n);
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  std::string data_;
  std::string what_;
  std::size_t pos_ = 0;
};

void expect_magic(Reader& r, const char* magic, const std::string& path) {
  const std::string m = r.magic();
  if (m != magic)
    throw FormatError(path + ": bad magic, expected \"" + magic + "\"");
}

void expect_version(Reader& r, std::uint32_t supported, const char* format, const std::string& path) {
  const std::uint32_t v = r.u32();
  if (v != supported)
    throw FormatError(path + ": unsupported " + std::string(format) + " version " +
                      std::to_string(v) + " (this reader supports version " +
                      std::to_string(supported) + ")");
}

}  // namespace

// ---------------------------------------------------------------------------
// Files

void write_file_atomic(const std::string& path, const std::string& bytes) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(target.parent_path(), ec);
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp + " for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + tmp);
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) throw IoError("cannot rename " + tmp + " to " + path + ": " + ec.message());
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// ---------------------------------------------------------------------------
// Sprites and motion

Bitmap procedural_sprite(SpriteKind kind, int size) {
  if (size < 3) throw ConfigError("sprite size must be at least 3");
  Bitmap b{size, size, std::vector<float>(std::size_t(size) * size, 0.f)};
  const double mid = (size - 1) / 2.0;
  const int bar = std::max(1, size / 3);
  for (int r = 0; r < size; ++r)
    for (int c = 0; c < size; ++c) {
      bool on = false;
      switch (kind) {
        case SpriteKind::Square: on = true; break;
        case SpriteKind::Cross:
          on = std::abs(r - mid) < bar / 2.0 + 0.5 || std::abs(c - mid) < bar / 2.0 + 0.5;
          break;
        case SpriteKind::Triangle: on = std::abs(c - mid) <= (r + 1) * 0.5; break;
      }
      b.data[std::size_t(r) * size + c] = on ? 1.f : 0.f;
    }
  return b;
}

std::vector<std::pair<double, double>> simulate_trajectory(MotionParams& m, int length,
                                                           int frame_rows, int frame_cols) {
  const double max_r = frame_rows - m.sprite_rows;
  const double max_c = frame_cols - m.sprite_cols;
  if (max_r < 0 || max_c < 0) throw ConfigError("sprite larger than frame");
  auto reflect = [](double& p, double& v, double hi) {
    if (p < 0) {
      p = -p;
      v = -v;
    } else if (p > hi) {
      p = 2 * hi - p;
      v = -v;
    }
    p = std::clamp(p, 0.0, hi);
  };
  std::vector<std::pair<double, double>> pos;
  pos.reserve(length);
  for (int t = 0; t < length; ++t) {
    pos.emplace_back(m.row, m.col);
    m.row += m.v_row;
    m.col += m.v_col;
    reflect(m.row, m.v_row, max_r);
    reflect(m.col, m.v_col, max_c);
  }
  return pos;
}

void splat_sprite(Frame& canvas, const Bitmap& sprite, double row, double col) {
  Frame layer(canvas.rows, canvas.cols, 1, 0.f);
  const int r0 = static_cast<int>(std::floor(row)), c0 = static_cast<int>(std::floor(col));
  const float fr = float(row - r0), fc = float(col - c0);
  const float w[4] = {(1 - fr) * (1 - fc), (1 - fr) * fc, fr * (1 - fc), fr * fc};
  for (int a = 0; a < sprite.rows; ++a)
    for (int b = 0; b < sprite.cols; ++b) {
      const float s = sprite.at(a, b);
      if (s == 0.f) continue;
      for (int q = 0; q < 4; ++q) {
        const int r = r0 + a + q / 2, c = c0 + b + q % 2;
        if (w[q] == 0.f || r < 0 || r >= canvas.rows || c < 0 || c >= canvas.cols) continue;
        layer.at(r, c) += s * w[q];
      }
    }
  for (int r = 0; r < canvas.rows; ++r)
    for (int c = 0; c < canvas.cols; ++c) {
      const float v = std::min(layer.at(r, c), 1.f);
      for (int ch = 0; ch < canvas.channels; ++ch) canvas.at(r, c, ch) = std::max(canvas.at(r, c, ch), v);
    }
}

int direction_class(double v_row, double v_col) {
  const double angle = std::atan2(-v_row, v_col);  // counter-clockwise from east
  int c = static_cast<int>(std::lround(angle / (std::numbers::pi / 4)));
  return ((c % 8) + 8) % 8;
}

void GeneratorParams::validate() const {
  if (frame_size <= 0 || length <= 0) throw ConfigError("generator: frame size and length must be positive");
  if (min_objects < 1 || max_objects < min_objects) throw ConfigError("generator: invalid object count range");
  if (!(min_speed > 0) || max_speed < min_speed) throw ConfigError("generator: speeds must be positive");
  const int largest = digits && !digits->empty() ? std::max(digits->front().rows, digits->front().cols) : max_sprite;
  if (min_sprite < 3 || max_sprite < min_sprite) throw ConfigError("generator: invalid sprite size range");
  if (largest > frame_size)
    throw ConfigError("generator: sprite (" + std::to_string(largest) + " px) larger than frame (" +
                      std::to_string(frame_size) + " px)");
}

std::vector<SequenceRecord> generate_moving_shapes(std::uint64_t seed, int count,
                                                   const GeneratorParams& params, int threads) {
  params.validate();
  if (count < 0) throw UsageError("generate: count must be non-negative");
  std::vector<SequenceRecord> out(count);
  parallel_for(count, threads, [&](int idx) {
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(std::uint64_t(idx) + 1)));
    const int n_obj = uniform_int(rng, params.min_objects, params.max_objects);
    const int D = params.frame_size;
    std::vector<Bitmap> sprites;
    std::vector<MotionParams> motions;
    SequenceRecord rec;
    for (int o = 0; o < n_obj; ++o) {
      Bitmap sprite;
      int shape;
      if (params.digits && !params.digits->empty()) {
        shape = uniform_int(rng, 0, static_cast<int>(params.digits->size()) - 1);
        sprite = (*params.digits)[shape];
      } else {
        shape = uniform_int(rng, 0, 2);
        sprite = procedural_sprite(static_cast<SpriteKind>(shape), uniform_int(rng, params.min_sprite, params.max_sprite));
      }
      const int cls = uniform_int(rng, 0, 7);
      const double jitter = (2 * uniform01(rng) - 1) * params.angle_jitter_deg;
      const double angle = (cls * 45.0 + jitter) * std::numbers::pi / 180.0;
      const double speed = params.min_speed + (params.max_speed - params.min_speed) * uniform01(rng);
      MotionParams m;
      m.sprite_rows = sprite.rows;
      m.sprite_cols = sprite.cols;
      m.v_row = -speed * std::sin(angle);
      m.v_col = speed * std::cos(angle);
      const double max_r = D - sprite.rows, max_c = D - sprite.cols;
      auto start = [&](double v, double hi) {
        double lo_p = 0, hi_p = hi;
        if (params.bounce_free_frames > 0) {
          const double travel = v * (params.bounce_free_frames - 1);
          lo_p = std::max(0.0, -travel);
          hi_p = std::min(hi, hi - travel);
          if (hi_p < lo_p)
            throw ConfigError("generator: frame too small for " +
                              std::to_string(params.bounce_free_frames) + " bounce-free frames");
        }
        return lo_p + (hi_p - lo_p) * uniform01(rng);
      };
      m.row = start(m.v_row, max_r);
      m.col = start(m.v_col, max_c);
      if (o == 0) {
        rec.motion_class = static_cast<std::uint16_t>(direction_class(m.v_row, m.v_col));
        rec.shape_id = shape;
      }
      sprites.push_back(std::move(sprite));
      motions.push_back(m);
    }
    rec.frames.assign(params.length, Frame(D, D, 1, 0.f));
    for (int o = 0; o < n_obj; ++o) {
      const auto path = simulate_trajectory(motions[o], params.length, D, D);
      for (int t = 0; t < params.length; ++t) splat_sprite(rec.frames[t], sprites[o], path[t].first, path[t].second);
    }
    rec.provenance = Provenance{"ground-truth", seed, idx};
    out[idx] = std::move(rec);
  });
  return out;
}

// ---------------------------------------------------------------------------
// IDX

std::vector<Bitmap> load_idx_images(const std::string& path) {
  Reader r(read_file(path), path);
  const std::uint32_t magic = r.u32_be();
  if (magic != 0x00000803) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08X", magic);
    throw FormatError(path + ": expected image magic 0x00000803, found " + buf);
  }
  const std::uint32_t count = r.u32_be(), rows = r.u32_be(), cols = r.u32_be();
  if (rows == 0 || cols == 0) throw FormatError(path + ": zero image extent");
  const std::size_t per = std::size_t(rows) * cols;
  const auto* bytes = reinterpret_cast<const unsigned char*>(r.raw(per * count));
  std::vector<Bitmap> out(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    out[i].rows = int(rows);
    out[i].cols = int(cols);
    out[i].data.resize(per);
    for (std::size_t p = 0; p < per; ++p) out[i].data[p] = float(bytes[i * per + p]) / 255.f;
  }
  return out;
}

// ---------------------------------------------------------------------------
// TSEQ

void write_tseq(const std::string& path, const SequenceRecord& rec) {
  if (rec.frames.empty()) throw UsageError("write_tseq: record has no frames");
  const Frame& f0 = rec.frames.front();
  Writer w;
  w.bytes("TSEQ", 4);
  w.u32(kTseqVersion);
  w.u32(static_cast<std::uint32_t>(rec.frames.size()));
  w.u32(f0.rows);
  w.u32(f0.cols);
  w.u32(f0.channels);
  w.u8(rec.motion_class ? 1 : 0);
  if (rec.motion_class) w.u16(*rec.motion_class);
  for (const auto& f : rec.frames) {
    if (!f.same_shape(f0)) throw UsageError("write_tseq: frames differ in shape");
    w.f32s(f.data);
  }
  write_file_atomic(path, w.str());
}

SequenceRecord read_tseq(const std::string& path) {
  Reader r(read_file(path), path);
  expect_magic(r, "TSEQ", path);
  expect_version(r, kTseqVersion, "TSEQ", path);
  const std::uint32_t t = r.u32(), h = r.u32(), w = r.u32(), c = r.u32();
  if (t == 0 || h == 0 || w == 0 || c == 0) throw FormatError(path + ": zero extent in header");
  SequenceRecord rec;
  const std::uint8_t has_label = r.u8();
  if (has_label > 1) throw FormatError(path + ": invalid label flag");
  if (has_label) rec.motion_class = r.u16();
  r.need(std::size_t(t) * h * w * c * 4);
  for (std::uint32_t i = 0; i < t; ++i) {
    Frame f{int(h), int(w), int(c)};
    f.data = r.f32s(std::size_t(h) * w * c);
    rec.frames.push_back(std::move(f));
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after payload");
  return rec;
}

// ---------------------------------------------------------------------------
// TFLD

void write_tfld(const std::string& path, const std::vector<AffineField>& fields) {
  if (fields.empty()) throw UsageError("write_tfld: no fields");
  const int n_r = fields.front().n_r, n_c = fields.front().n_c;
  Writer w;
  w.bytes("TFLD", 4);
  w.u32(kTfldVersion);
  w.u32(n_r);
  w.u32(n_c);
  w.u32(static_cast<std::uint32_t>(fields.size()));
  for (const auto& f : fields) {
    if (f.n_r != n_r || f.n_c != n_c) throw UsageError("write_tfld: fields differ in grid size");
    w.f32s(f.params);
  }
  write_file_atomic(path, w.str());
}

std::vector<AffineField> read_tfld(const std::string& path) {
  Reader r(read_file(path), path);
  expect_magic(r, "TFLD", path);
  expect_version(r, kTfldVersion, "TFLD", path);
  const std::uint32_t n_r = r.u32(), n_c = r.u32(), count = r.u32();
  if (n_r == 0 || n_c == 0) throw FormatError(path + ": zero grid extent");
  r.need(std::size_t(count) * 6 * n_r * n_c * 4);
  std::vector<AffineField> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    AffineField f{int(n_r), int(n_c)};
    f.params = r.f32s(std::size_t(6) * n_r * n_c);
    out.push_back(std::move(f));
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after payload");
  return out;
}

// ---------------------------------------------------------------------------
// AFPM checkpoint

void write_checkpoint(const std::string& path, const PredictorModel& model) {
  const auto& c = model.config;
  Writer w;
  w.bytes("AFPM", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(c.channels.size()));
  for (int ch : c.channels) w.u32(ch);
  w.u32(c.kernel);
  w.u32(c.inputs + 1);  // K
  w.u32(c.unroll);      // M
  const GridSpec& g = c.grid;
  for (int v : {g.rows, g.cols, g.d_in, g.d_out, g.stride_r, g.stride_c}) w.u32(v);
  for (const auto& layer : model.layers) {
    w.f32s(layer.weights.storage());
    w.f32s(layer.bias.storage());
  }
  write_file_atomic(path, w.str());
}

PredictorModel read_checkpoint(const std::string& path) {
  Reader r(read_file(path), path);
  expect_magic(r, "AFPM", path);
  expect_version(r, kCheckpointVersion, "AFPM", path);
  PredictorConfig c;
  const std::uint32_t n = r.u32();
  if (n < 2 || n > 64) throw FormatError(path + ": implausible channel list length " + std::to_string(n));
  c.channels.clear();
  for (std::uint32_t i = 0; i < n; ++i) c.channels.push_back(int(r.u32()));
  c.kernel = int(r.u32());
  c.inputs = int(r.u32()) - 1;
  c.unroll = int(r.u32());
  int geo[6];
  for (int& v : geo) v = int(r.u32());
  try {
    c.grid = make_grid(geo[0], geo[1], geo[2], geo[3], geo[4], geo[5]);
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(path + ": invalid configuration block: " + e.what());
  }
  PredictorModel m = init_model(c, 0);
  for (auto& layer : m.layers) {
    layer.weights.storage() = r.f32s(layer.weights.size());
    layer.bias.storage() = r.f32s(layer.bias.size());
  }
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after parameters");
  return m;
}

// ---------------------------------------------------------------------------
// PGM

// AFPK: magic, u32 version, u32 T, u32 classes, u32 block count, per block
// u32 C_out, then f32 parameters block by block (weights, bias), head last.
void write_classifier(const std::string& path, const ClassifierModel& model) {
  Writer w;
  w.bytes("AFPK", 4);
  w.u32(kClassifierVersion);
  w.u32(model.frames);
  w.u32(model.classes);
  w.u32(static_cast<std::uint32_t>(model.convs.size()));
  for (const auto& c : model.convs) w.u32(c.weights.dim(0));
  for (const auto& c : model.convs) {
    w.f32s(c.weights.storage());
    w.f32s(c.bias.storage());
  }
  w.f32s(model.head_weights.storage());
  w.f32s(model.head_bias.storage());
  write_file_atomic(path, w.str());
}

ClassifierModel read_classifier(const std::string& path) {
  Reader r(read_file(path), path);
  expect_magic(r, "AFPK", path);
  expect_version(r, kClassifierVersion, "AFPK", path);
  ClassifierConfig cfg;
  const int frames = int(r.u32());
  cfg.classes = int(r.u32());
  const std::uint32_t blocks = r.u32();
  if (frames < 1 || frames > 1024 || cfg.classes < 2 || cfg.classes > 1024 || blocks < 1 || blocks > 64)
    throw FormatError(path + ": implausible classifier header");
  cfg.hidden.clear();
  for (std::uint32_t i = 0; i < blocks; ++i) {
    const std::uint32_t c = r.u32();
    if (c < 1 || c > 4096) throw FormatError(path + ": implausible channel count " + std::to_string(c));
    cfg.hidden.push_back(int(c));
  }
  ClassifierModel m = init_classifier(frames, cfg, 0);
  for (auto& c : m.convs) {
    c.weights.storage() = r.f32s(c.weights.size());
    c.bias.storage() = r.f32s(c.bias.size());
  }
  m.head_weights.storage() = r.f32s(m.head_weights.size());
  m.head_bias.storage() = r.f32s(m.head_bias.size());
  if (!r.at_end()) throw FormatError(path + ": trailing bytes after parameters");
  return m;
}

void export_pgm(const Frame& frame, const std::string& path) {
  const auto lum = frame.luminance();
  std::string out = "P5\n" + std::to_string(frame.cols) + " " + std::to_string(frame.rows) + "\n255\n";
  out.reserve(out.size() + lum.size());
  for (float v : lum) {
    const double q = std::floor(std::clamp(double(v), 0.0, 1.0) * 255.0 + 0.5);
    out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
  }
  write_file_atomic(path, out);
}

}  // namespace afp
