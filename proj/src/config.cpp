#include "afp/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <sstream>

namespace afp {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* want) {
  throw ConfigError("config key '" + key + "': expected " + want + ", got '" + value + "'");
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "an integer");
  return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t n = 0;
    const double d = std::stod(v, &n);
    if (n != v.size()) bad_value(key, v, "a number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, v, "a boolean");
}

template <typename T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) bad_value(key, v, "a comma-separated list");
    if constexpr (std::is_same_v<T, std::uint64_t>) out.push_back(parse_u64(key, item));
    else out.push_back(static_cast<T>(parse_int(key, item)));
  }
  if (out.empty()) bad_value(key, v, "a non-empty list");
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt(double d) {
  std::ostringstream os;
  os.precision(9);
  os << d;
  return os.str();
}

struct Field {
  const char* key;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define AFP_INT(name, member)                                                                     \
  Field{name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = int(parse_int(k, v)); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }}
#define AFP_REAL(name, member, type)                                                              \
  Field{name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = type(parse_double(k, v)); }, \
        [](const RunConfig& c) { return fmt(c.member); }}
#define AFP_BOOL(name, member)                                                                    \
  Field{name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_bool(k, v); }, \
        [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }}
#define AFP_STR(name, member)                                                                     \
  Field{name, [](RunConfig& c, const std::string&, const std::string& v) { c.member = v; },      \
        [](const RunConfig& c) { return c.member; }}
#define AFP_LIST(name, member, type)                                                              \
  Field{name, [](RunConfig& c, const std::string& k, const std::string& v) { c.member = parse_list<type>(k, v); }, \
        [](const RunConfig& c) { return join(c.member); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      AFP_STR("preset", preset),
      AFP_INT("frame_rows", frame_rows),
      AFP_INT("frame_cols", frame_cols),
      AFP_INT("patch_in", patch_in),
      AFP_INT("patch_out", patch_out),
      AFP_INT("stride", stride),
      AFP_LIST("channels", channels, int),
      AFP_INT("kernel", kernel),
      AFP_INT("frames_in", frames_in),
      AFP_INT("frames_out", frames_out),
      AFP_INT("unroll", unroll),
      AFP_BOOL("greedy", greedy),
      AFP_REAL("lr", lr, float),
      AFP_INT("batch", batch),
      AFP_INT("epochs", epochs),
      AFP_INT("extract_iters", extractor.max_iters),
      AFP_REAL("extract_step", extractor.step, float),
      AFP_REAL("extract_translation_step", extractor.translation_step, float),
      AFP_INT("extract_window", extractor.window),
      AFP_REAL("extract_threshold", extractor.rel_threshold, double),
      AFP_LIST("classifier_hidden", classifier.hidden, int),
      AFP_INT("classifier_epochs", classifier.epochs),
      AFP_REAL("classifier_lr", classifier.step, float),
      AFP_INT("classifier_batch", classifier.batch_size),
      AFP_INT("objects_min", data.min_objects),
      AFP_INT("objects_max", data.max_objects),
      AFP_INT("length", data.length),
      AFP_REAL("speed_min", data.min_speed, double),
      AFP_REAL("speed_max", data.max_speed, double),
      AFP_INT("sprite_min", data.min_sprite),
      AFP_INT("sprite_max", data.max_sprite),
      AFP_INT("bounce_free", data.bounce_free_frames),
      AFP_REAL("angle_jitter", data.angle_jitter_deg, double),
      AFP_INT("count", count),
      AFP_STR("digits", digits),
      AFP_INT("bench_classifier_train", bench_classifier_train),
      AFP_INT("bench_classifier_val", bench_classifier_val),
      AFP_INT("bench_predictor_train", bench_predictor_train),
      AFP_INT("bench_test", bench_test),
      AFP_LIST("eval_frames", eval_frames, int),
      AFP_LIST("model_seeds", model_seeds, std::uint64_t),
      Field{"seed", [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = parse_u64(k, v); },
            [](const RunConfig& c) { return std::to_string(c.seed); }},
      AFP_INT("threads", threads),
      AFP_BOOL("deterministic", deterministic),
      AFP_STR("input", input),
      AFP_STR("model", model),
      AFP_STR("out", out),
  };
  return f;
}

#undef AFP_INT
#undef AFP_REAL
#undef AFP_BOOL
#undef AFP_STR
#undef AFP_LIST

}  // namespace

GridSpec RunConfig::grid() const {
  return make_grid(frame_rows, frame_cols, patch_in, patch_out, stride, stride);
}

PredictorConfig RunConfig::predictor() const {
  PredictorConfig p;
  p.channels = channels;
  p.kernel = kernel;
  p.inputs = frames_in - 1;
  p.unroll = greedy ? 1 : unroll;
  p.grid = grid();
  p.step = lr;
  p.batch_size = batch;
  p.epochs = epochs;
  p.seed = seed;
  return p;
}

void RunConfig::validate() const {
  if (frames_in < 2) throw ConfigError("frames_in must be at least 2");
  if (frames_out < 1) throw ConfigError("frames_out must be at least 1");
  if (unroll < 1) throw ConfigError("unroll must be at least 1");
  if (threads < 1) throw ConfigError("threads must be at least 1");
  if (batch < 1 || epochs < 0) throw ConfigError("batch must be positive and epochs non-negative");
  if (channels.size() < 2) throw ConfigError("channels needs at least an input and an output count");
  if (channels.front() != 6 * (frames_in - 1))
    throw ConfigError("channels: first entry " + std::to_string(channels.front()) + " must equal 6*(frames_in-1) = " +
                      std::to_string(6 * (frames_in - 1)));
  if (channels.back() != 6) throw ConfigError("channels: last entry must be 6");
  (void)grid();
  predictor().validate();
  extractor.validate();
  if (eval_frames.empty()) throw ConfigError("eval_frames must not be empty");
  for (int t : eval_frames) {
    if (t < 1) throw ConfigError("eval_frames entries must be positive");
    if (t > frames_out)
      throw ConfigError("eval_frames entry " + std::to_string(t) + " exceeds frames_out " +
                        std::to_string(frames_out));
  }
  if (model_seeds.empty()) throw ConfigError("model_seeds must not be empty");
  for (int n : {bench_classifier_train, bench_predictor_train, bench_test, count})
    if (n < 1) throw ConfigError("dataset sizes must be positive");
  if (bench_classifier_val < 0) throw ConfigError("bench_classifier_val must be non-negative");
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.key) {
      f.set(*this, key, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> k;
  for (const auto& f : fields()) k.push_back(f.key);
  return k;
}

RunConfig RunConfig::from_preset(const std::string& name) {
  RunConfig c;
  c.preset = name;
  if (name == "mnist") return c;
  if (name == "ucf") {
    c.frame_rows = 240;
    c.frame_cols = 320;
    c.channels = PredictorConfig::ucf().channels;
    return c;
  }
  if (name == "patch12") {
    c.patch_in = 12;
    c.patch_out = 8;
    c.stride = 4;
    c.frames_in = 4;
    c.unroll = 1;
    c.greedy = true;
    return c;
  }
  throw ConfigError("unknown preset '" + name + "' (known: mnist, ucf, patch12)");
}

RunConfig RunConfig::from_pairs(const std::vector<std::pair<std::string, std::string>>& pairs) {
  std::string preset = "mnist";
  for (const auto& [k, v] : pairs)
    if (k == "preset") preset = v;
  RunConfig c = from_preset(preset);
  for (const auto& [k, v] : pairs)
    if (k != "preset") c.set(k, v);
  return c;
}

std::vector<std::pair<std::string, std::string>> RunConfig::parse_text(const std::string& text,
                                                                       const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> out;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    if (auto h = line.find('#'); h != std::string::npos) line.resize(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    std::string k = trim(line.substr(0, eq)), v = trim(line.substr(eq + 1));
    if (k.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    std::replace(k.begin(), k.end(), '-', '_');
    out.emplace_back(std::move(k), std::move(v));
  }
  return out;
}

std::string RunConfig::to_text() const {
  std::string s;
  for (const auto& f : fields()) s += std::string(f.key) + " = " + f.get(*this) + "\n";
  return s;
}

}  // namespace afp
