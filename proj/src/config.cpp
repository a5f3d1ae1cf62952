#include "sr3/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "sr3/errors.hpp"

namespace sr3 {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

template <typename Range>
std::string fmt_list(const Range& values) {
  if (values.empty()) return "none";
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ",";
    out += std::to_string(v);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as " + expected);
}

long parse_long(const std::string& key, const std::string& value) {
  long out = 0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) bad_value(key, value, "an integer");
  return out;
}

int parse_int(const std::string& key, const std::string& value) {
  const long v = parse_long(key, value);
  if (v < INT32_MIN || v > INT32_MAX) bad_value(key, value, "a 32-bit integer");
  return static_cast<int>(v);
}

std::uint64_t parse_u64(const std::string& key, const std::string& value) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
    bad_value(key, value, "a non-negative integer");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  double out = 0;
  const auto res = std::from_chars(value.data(), value.data() + value.size(), out);
  if (res.ec != std::errc() || res.ptr != value.data() + value.size()) bad_value(key, value, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  bad_value(key, value, "a boolean");
}

std::vector<long> parse_long_list(const std::string& key, const std::string& value) {
  std::vector<long> out;
  if (value == "none" || value.empty()) return out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_long(key, trim(item)));
  return out;
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& value)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"preset", [](RunConfig& c, auto&, auto& v) { c.preset = v; }},
      {"toy", [](RunConfig& c, auto& k, auto& v) { c.toy = parse_bool(k, v); }},
      {"precision", [](RunConfig& c, auto&, auto& v) { c.precision = v; }},
      {"seed", [](RunConfig& c, auto& k, auto& v) { c.seed = parse_u64(k, v); }},
      {"data.root", [](RunConfig& c, auto&, auto& v) { c.data_root = v; }},
      {"data.hr_size", [](RunConfig& c, auto& k, auto& v) { c.hr_size = parse_int(k, v); }},
      {"data.scale", [](RunConfig& c, auto& k, auto& v) { c.scale = parse_int(k, v); }},
      {"data.val_fraction", [](RunConfig& c, auto& k, auto& v) { c.val_fraction = parse_double(k, v); }},
      {"data.toy_train_count", [](RunConfig& c, auto& k, auto& v) { c.toy_train_count = parse_int(k, v); }},
      {"data.toy_val_count", [](RunConfig& c, auto& k, auto& v) { c.toy_val_count = parse_int(k, v); }},
      {"model.base_channels", [](RunConfig& c, auto& k, auto& v) { c.model.base_channels = parse_int(k, v); }},
      {"model.channel_multipliers",
       [](RunConfig& c, auto& k, auto& v) {
         c.model.channel_multipliers.clear();
         for (long m : parse_long_list(k, v)) c.model.channel_multipliers.push_back(static_cast<int>(m));
       }},
      {"model.res_blocks_per_level",
       [](RunConfig& c, auto& k, auto& v) { c.model.res_blocks_per_level = parse_int(k, v); }},
      {"model.attention_resolutions",
       [](RunConfig& c, auto& k, auto& v) {
         c.model.attention_resolutions.clear();
         for (long r : parse_long_list(k, v)) c.model.attention_resolutions.insert(static_cast<int>(r));
       }},
      {"model.dropout", [](RunConfig& c, auto& k, auto& v) { c.model.dropout_p = parse_double(k, v); }},
      {"model.groups", [](RunConfig& c, auto& k, auto& v) { c.model.groups = parse_int(k, v); }},
      {"model.gamma_embed_dim", [](RunConfig& c, auto& k, auto& v) { c.model.gamma_embed_dim = parse_int(k, v); }},
      {"model.in_channels", [](RunConfig& c, auto& k, auto& v) { c.model.in_channels = parse_int(k, v); }},
      {"model.out_channels", [](RunConfig& c, auto& k, auto& v) { c.model.out_channels = parse_int(k, v); }},
      {"schedule.kind", [](RunConfig& c, auto&, auto& v) { c.schedule.kind = schedule_kind_from_string(v); }},
      {"schedule.steps", [](RunConfig& c, auto& k, auto& v) { c.schedule.steps = parse_int(k, v); }},
      {"schedule.beta_start", [](RunConfig& c, auto& k, auto& v) { c.schedule.beta_start = parse_double(k, v); }},
      {"schedule.beta_end", [](RunConfig& c, auto& k, auto& v) { c.schedule.beta_end = parse_double(k, v); }},
      {"schedule.cosine_offset",
       [](RunConfig& c, auto& k, auto& v) { c.schedule.cosine_offset = parse_double(k, v); }},
      {"train.batch_size", [](RunConfig& c, auto& k, auto& v) { c.train.batch_size = parse_int(k, v); }},
      {"train.base_lr", [](RunConfig& c, auto& k, auto& v) { c.train.base_lr = parse_double(k, v); }},
      {"train.lr_milestones", [](RunConfig& c, auto& k, auto& v) { c.train.lr_milestones = parse_long_list(k, v); }},
      {"train.lr_factor", [](RunConfig& c, auto& k, auto& v) { c.train.lr_factor = parse_double(k, v); }},
      {"train.total_iters", [](RunConfig& c, auto& k, auto& v) { c.train.total_iters = parse_long(k, v); }},
      {"train.val_every", [](RunConfig& c, auto& k, auto& v) { c.train.val_every = parse_long(k, v); }},
      {"train.ema", [](RunConfig& c, auto& k, auto& v) { c.train.use_ema = parse_bool(k, v); }},
      {"train.ema_decay", [](RunConfig& c, auto& k, auto& v) { c.train.ema_decay = parse_double(k, v); }},
      {"train.clip", [](RunConfig& c, auto& k, auto& v) { c.train.use_clip = parse_bool(k, v); }},
      {"train.clip_max_norm", [](RunConfig& c, auto& k, auto& v) { c.train.clip_max_norm = parse_double(k, v); }},
      {"train.p_norm", [](RunConfig& c, auto& k, auto& v) { c.train.p_norm = parse_int(k, v); }},
      {"train.val_steps", [](RunConfig& c, auto& k, auto& v) { c.train.val_steps = parse_int(k, v); }},
      {"train.val_count", [](RunConfig& c, auto& k, auto& v) { c.train.val_count = parse_int(k, v); }},
      {"train.adam_beta1", [](RunConfig& c, auto& k, auto& v) { c.train.adam_beta1 = parse_double(k, v); }},
      {"train.adam_beta2", [](RunConfig& c, auto& k, auto& v) { c.train.adam_beta2 = parse_double(k, v); }},
      {"train.adam_eps", [](RunConfig& c, auto& k, auto& v) { c.train.adam_eps = parse_double(k, v); }},
      {"sample.steps", [](RunConfig& c, auto& k, auto& v) { c.sample_steps = parse_int(k, v); }},
      {"out", [](RunConfig& c, auto&, auto& v) { c.out = v; }},
  };
  return table;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

NoiseSchedule ScheduleSpec::build() const {
  switch (kind) {
    case ScheduleKind::Linear:
      return make_linear(steps, beta_start, beta_end);
    case ScheduleKind::Cosine:
      return make_cosine(steps, cosine_offset);
    case ScheduleKind::Respaced:
      break;
  }
  throw ConfigError("schedule.kind must be linear or cosine");
}

DenoiserConfig RunConfig::denoiser() const {
  DenoiserConfig d = model;
  d.image_size = hr_size;
  return d;
}

void RunConfig::validate() const {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (precision != "float" && precision != "double") fail("precision must be float or double");
  if (hr_size < 1) fail("data.hr_size must be positive");
  if (scale < 1) fail("data.scale must be positive");
  if (hr_size % scale != 0) {
    fail("data.hr_size " + std::to_string(hr_size) + " is not divisible by data.scale " + std::to_string(scale));
  }
  if (!(val_fraction >= 0.0 && val_fraction < 1.0)) fail("data.val_fraction must be in [0, 1)");
  if (toy && (toy_train_count < 1 || toy_val_count < 1)) fail("toy item counts must be positive");
  if (schedule.kind == ScheduleKind::Respaced) fail("schedule.kind must be linear or cosine");
  if (schedule.steps < 1) fail("schedule.steps must be >= 1");
  if (sample_steps < 0 || sample_steps > schedule.steps) {
    fail("sample.steps must be in [0, schedule.steps]");
  }
  try {
    denoiser().validate();
    train.validate();
    (void)schedule.build();
  } catch (const ShapeError& e) {
    throw ConfigError(e.what());
  }
  if (!toy && !data_root.empty() && !std::filesystem::is_directory(data_root)) {
    fail("data.root '" + data_root + "' is not a directory");
  }
}

KeyValues RunConfig::to_key_values() const {
  return {
      {"preset", preset},
      {"toy", fmt_bool(toy)},
      {"precision", precision},
      {"seed", std::to_string(seed)},
      {"data.root", data_root},
      {"data.hr_size", std::to_string(hr_size)},
      {"data.scale", std::to_string(scale)},
      {"data.val_fraction", fmt_double(val_fraction)},
      {"data.toy_train_count", std::to_string(toy_train_count)},
      {"data.toy_val_count", std::to_string(toy_val_count)},
      {"model.base_channels", std::to_string(model.base_channels)},
      {"model.channel_multipliers", fmt_list(model.channel_multipliers)},
      {"model.res_blocks_per_level", std::to_string(model.res_blocks_per_level)},
      {"model.attention_resolutions", fmt_list(model.attention_resolutions)},
      {"model.dropout", fmt_double(model.dropout_p)},
      {"model.groups", std::to_string(model.groups)},
      {"model.gamma_embed_dim", std::to_string(model.gamma_embed_dim)},
      {"model.in_channels", std::to_string(model.in_channels)},
      {"model.out_channels", std::to_string(model.out_channels)},
      {"schedule.kind", to_string(schedule.kind)},
      {"schedule.steps", std::to_string(schedule.steps)},
      {"schedule.beta_start", fmt_double(schedule.beta_start)},
      {"schedule.beta_end", fmt_double(schedule.beta_end)},
      {"schedule.cosine_offset", fmt_double(schedule.cosine_offset)},
      {"train.batch_size", std::to_string(train.batch_size)},
      {"train.base_lr", fmt_double(train.base_lr)},
      {"train.lr_milestones", fmt_list(train.lr_milestones)},
      {"train.lr_factor", fmt_double(train.lr_factor)},
      {"train.total_iters", std::to_string(train.total_iters)},
      {"train.val_every", std::to_string(train.val_every)},
      {"train.ema", fmt_bool(train.use_ema)},
      {"train.ema_decay", fmt_double(train.ema_decay)},
      {"train.clip", fmt_bool(train.use_clip)},
      {"train.clip_max_norm", fmt_double(train.clip_max_norm)},
      {"train.p_norm", std::to_string(train.p_norm)},
      {"train.val_steps", std::to_string(train.val_steps)},
      {"train.val_count", std::to_string(train.val_count)},
      {"train.adam_beta1", fmt_double(train.adam_beta1)},
      {"train.adam_beta2", fmt_double(train.adam_beta2)},
      {"train.adam_eps", fmt_double(train.adam_eps)},
      {"sample.steps", std::to_string(sample_steps)},
      {"out", out},
  };
}

std::string RunConfig::dump() const {
  std::string text = "# resolved configuration\n";
  for (const auto& [k, v] : to_key_values()) text += k + " = " + v + "\n";
  return text;
}

RunConfig preset_config(const std::string& name) {
  RunConfig c;
  c.preset = name;
  // Shared by both generations.
  c.hr_size = 512;
  c.scale = 8;
  c.model.base_channels = 64;
  c.model.channel_multipliers = {1, 2, 4, 8, 16};
  c.model.groups = 16;
  c.train.batch_size = 8;
  c.train.base_lr = 3e-6;
  c.train.total_iters = 1'000'000;
  c.train.val_every = 10'000;
  c.schedule.steps = 2000;
  if (name == "gen1") {
    c.model.res_blocks_per_level = 1;
    c.model.attention_resolutions = {};
    c.model.dropout_p = 0.0;
    c.schedule.kind = ScheduleKind::Linear;
    c.schedule.beta_start = 1e-6;
    c.schedule.beta_end = 1e-2;
    c.train.use_ema = false;
    c.train.use_clip = false;
    c.train.lr_milestones = {};
    c.train.lr_factor = 1.0;
  } else if (name == "gen2") {
    c.model.res_blocks_per_level = 2;
    c.model.attention_resolutions = {16, 32, 64};
    c.model.dropout_p = 0.1;
    c.schedule.kind = ScheduleKind::Cosine;
    c.schedule.cosine_offset = 0.008;
    c.train.use_ema = true;
    c.train.ema_decay = 0.9999;
    c.train.use_clip = true;
    c.train.clip_max_norm = 1.0;
    c.train.lr_milestones = {150'000, 230'000};
    c.train.lr_factor = 0.5;
  } else {
    throw ConfigError("unknown preset '" + name + "' (expected gen1 or gen2)");
  }
  return c;
}

void apply_toy_scaling(RunConfig& c) {
  c.toy = true;
  const int full_steps = c.schedule.steps;
  c.hr_size = 32;
  c.scale = 4;
  c.model.base_channels = 16;
  c.model.channel_multipliers = {1, 2, 2, 4};
  std::set<int> kept;
  for (int r : c.denoiser().level_resolutions()) {
    if (c.model.attention_resolutions.count(r)) kept.insert(r);
  }
  c.model.attention_resolutions = kept;
  c.schedule.steps = 200;
  // Keep the total linear noise budget (sum of betas) of the full schedule.
  const double stretch = static_cast<double>(full_steps) / c.schedule.steps;
  c.schedule.beta_start = std::min(c.schedule.beta_start * stretch, 0.5);
  c.schedule.beta_end = std::min(c.schedule.beta_end * stretch, 0.5);
  c.train.batch_size = 4;
  c.train.base_lr = 5e-4;
  c.train.total_iters = 2000;
  c.train.val_every = 500;
  c.train.val_steps = 50;
  c.train.val_count = 4;
  if (c.train.use_ema) c.train.ema_decay = 0.995;
  if (!c.train.lr_milestones.empty()) c.train.lr_milestones = {1500, 1800};
  c.out = "runs/toy-" + c.preset;
}

KeyValues parse_config_text(const std::string& text) {
  KeyValues out;
  std::stringstream ss(text);
  std::string line;
  int number = 0;
  while (std::getline(ss, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(number) + ": expected 'key = value'");
    }
    out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return out;
}

void apply_overrides(RunConfig& cfg, const KeyValues& values) {
  const auto& table = setters();
  for (const auto& [key, value] : values) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
    try {
      it->second(cfg, key, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
}

RunConfig resolve_config(const std::string& preset_name, bool toy,
                         const std::filesystem::path& config_file, const KeyValues& overrides) {
  KeyValues file_values;
  if (!config_file.empty()) file_values = parse_config_text(read_text(config_file));
  std::string preset = preset_name;
  for (const auto& [k, v] : file_values) {
    if (k == "preset" && preset.empty()) preset = v;
    if (k == "toy" && !toy) toy = parse_bool(k, v);
  }
  for (const auto& [k, v] : overrides) {
    if (k == "preset" && preset_name.empty()) preset = v;
    if (k == "toy" && !toy) toy = parse_bool(k, v);
  }
  if (preset.empty()) preset = "gen2";
  RunConfig cfg = preset_config(preset);
  if (const char* root = std::getenv(kDataRootEnv)) cfg.data_root = root;
  if (toy) apply_toy_scaling(cfg);
  apply_overrides(cfg, file_values);
  apply_overrides(cfg, overrides);
  cfg.preset = preset;
  cfg.toy = toy;
  return cfg;
}

void write_config(const RunConfig& cfg, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << cfg.dump();
}

}  // namespace sr3
