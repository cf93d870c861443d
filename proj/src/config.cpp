#include "dmm/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace dmm {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, sep)) out.push_back(trim(item));
  return out;
}

[[noreturn]] void bad(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError("config: " + key + " = '" + value + "' is not " + expected);
}

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad(key, v, "a non-negative integer");
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  double out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) bad(key, v, "a finite number");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad(key, v, "true or false");
}

std::vector<std::size_t> to_counts(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& item : split(v, ',')) out.push_back(to_count(key, item));
  return out;
}

std::vector<double> to_reals(const std::string& key, const std::string& v) {
  std::vector<double> out;
  for (const auto& item : split(v, ',')) out.push_back(to_real(key, item));
  return out;
}

template <class T>
std::string join(const std::vector<T>& v, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + f(v[i]);
  return out;
}

std::string b2s(bool b) { return b ? "true" : "false"; }

template <class Config>
using Table = std::vector<std::pair<std::string, std::function<void(Config&, const std::string&, const std::string&)>>>;

const Table<TrainConfig>& train_table() {
  using C = TrainConfig;
  using S = const std::string&;
  static const Table<C> t{
      {"max_iterations", [](C& c, S k, S v) { c.max_iterations = to_count(k, v); }},
      {"update_interval", [](C& c, S k, S v) { c.update_interval = to_count(k, v); }},
      {"batch_size", [](C& c, S k, S v) { c.batch_size = to_count(k, v); }},
      {"base_lr", [](C& c, S k, S v) { c.base_lr = to_real(k, v); }},
      {"momentum", [](C& c, S k, S v) { c.momentum = to_real(k, v); }},
      {"lr_decay_factor", [](C& c, S k, S v) { c.lr_decay_factor = to_real(k, v); }},
      {"plateau_patience", [](C& c, S k, S v) { c.plateau_patience = to_count(k, v); }},
      {"lr_monitor",
       [](C& c, S k, S v) {
         if (v == "joint") c.lr_monitor = LrMonitor::joint;
         else if (v == "mean_fac") c.lr_monitor = LrMonitor::mean_fac;
         else bad(k, v, "joint or mean_fac");
       }},
      {"beta", [](C& c, S k, S v) { c.beta = to_real(k, v); }},
      {"gamma", [](C& c, S k, S v) { c.gamma = to_real(k, v); }},
      {"seed", [](C& c, S k, S v) { c.seed = to_u64(k, v); }},
      {"lambda_cap",
       [](C& c, S k, S v) {
         if (v == "none") c.lambda_cap.reset();
         else c.lambda_cap = to_real(k, v);
       }},
      {"use_fld", [](C& c, S k, S v) { c.flags.use_fld = to_bool(k, v); }},
      {"use_dynamic_weights", [](C& c, S k, S v) { c.flags.use_dynamic_weights = to_bool(k, v); }},
      {"use_adaptive_threshold", [](C& c, S k, S v) { c.flags.use_adaptive_threshold = to_bool(k, v); }},
      {"use_grouping", [](C& c, S k, S v) { c.flags.use_grouping = to_bool(k, v); }},
      {"validation_source",
       [](C& c, S k, S v) {
         if (v == "val_split") c.validation_source = ValidationSource::val_split;
         else if (v == "train_split") c.validation_source = ValidationSource::train_split;
         else bad(k, v, "val_split or train_split");
       }},
      {"freeze_backbone", [](C& c, S k, S v) { c.freeze_backbone = to_bool(k, v); }},
      {"backbone.in_channels", [](C& c, S k, S v) { c.backbone.in_channels = to_count(k, v); }},
      {"backbone.channels", [](C& c, S k, S v) { c.backbone.channels = to_counts(k, v); }},
      {"backbone.kernel", [](C& c, S k, S v) { c.backbone.kernel = to_count(k, v); }},
      {"backbone.padding", [](C& c, S k, S v) { c.backbone.padding = to_count(k, v); }},
      {"backbone.pool", [](C& c, S k, S v) { c.backbone.pool = to_count(k, v); }},
      {"heads.objective_hidden", [](C& c, S k, S v) { c.heads.objective_hidden = to_count(k, v); }},
      {"heads.subjective_hidden1", [](C& c, S k, S v) { c.heads.subjective_hidden1 = to_count(k, v); }},
      {"heads.subjective_hidden2", [](C& c, S k, S v) { c.heads.subjective_hidden2 = to_count(k, v); }},
      {"heads.landmark_hidden", [](C& c, S k, S v) { c.heads.landmark_hidden = to_count(k, v); }},
  };
  return t;
}

AttributeSpec to_spec(const std::string& key, const std::string& v) {
  AttributeSpec spec;
  for (const auto& item : split(v, ',')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) bad(key, v, "a list of name:group entries");
    spec.names.push_back(trim(item.substr(0, colon)));
    try {
      spec.groups.push_back(parse_group(trim(item.substr(colon + 1))));
    } catch (const std::invalid_argument&) {
      bad(key, v, "a list of name:group entries with group objective or subjective");
    }
  }
  return spec;
}

const Table<SynthConfig>& synth_table() {
  using C = SynthConfig;
  using S = const std::string&;
  static const Table<C> t{
      {"synth.attributes", [](C& c, S k, S v) { c.spec = to_spec(k, v); }},
      {"synth.landmarks", [](C& c, S k, S v) { c.landmarks = to_count(k, v); }},
      {"synth.image_size", [](C& c, S k, S v) { c.image_size = to_count(k, v); }},
      {"synth.positive_rate", [](C& c, S k, S v) { c.positive_rate = to_reals(k, v); }},
      {"synth.difficulty", [](C& c, S k, S v) { c.difficulty = to_reals(k, v); }},
      {"synth.train_size", [](C& c, S k, S v) { c.train_size = to_count(k, v); }},
      {"synth.val_size", [](C& c, S k, S v) { c.val_size = to_count(k, v); }},
      {"synth.test_size", [](C& c, S k, S v) { c.test_size = to_count(k, v); }},
      {"synth.jitter", [](C& c, S k, S v) { c.jitter = to_count(k, v); }},
      {"synth.seed", [](C& c, S k, S v) { c.seed = to_u64(k, v); }},
  };
  return t;
}

template <class Config>
std::vector<std::string> names_of(const Table<Config>& t) {
  std::vector<std::string> out;
  for (const auto& [k, f] : t) out.push_back(k);
  return out;
}

template <class Config>
void apply(Config& c, const KeyValues& kv, const Table<Config>& t) {
  for (const auto& [k, f] : t) {
    if (auto it = kv.find(k); it != kv.end()) f(c, k, it->second);
  }
}

}  // namespace

KeyValues parse_key_values(std::istream& in, const std::string& source) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (!kv.emplace(key, trim(t.substr(eq + 1))).second) throw ConfigError(where + "duplicate key '" + key + "'");
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open config");
  return parse_key_values(in, path.string());
}

void write_key_values(const std::filesystem::path& path, const KeyValues& kv) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
}

const std::vector<std::string>& train_config_keys() {
  static const auto keys = names_of(train_table());
  return keys;
}

const std::vector<std::string>& synth_config_keys() {
  static const auto keys = names_of(synth_table());
  return keys;
}

void apply_train_config(TrainConfig& c, const KeyValues& kv) { apply(c, kv, train_table()); }
void apply_synth_config(SynthConfig& c, const KeyValues& kv) { apply(c, kv, synth_table()); }

KeyValues to_key_values(const TrainConfig& c) {
  auto count = [](std::size_t v) { return std::to_string(v); };
  return {
      {"max_iterations", count(c.max_iterations)},
      {"update_interval", count(c.update_interval)},
      {"batch_size", count(c.batch_size)},
      {"base_lr", format_real(c.base_lr)},
      {"momentum", format_real(c.momentum)},
      {"lr_decay_factor", format_real(c.lr_decay_factor)},
      {"plateau_patience", count(c.plateau_patience)},
      {"lr_monitor", to_string(c.lr_monitor)},
      {"beta", format_real(c.beta)},
      {"gamma", format_real(c.gamma)},
      {"seed", std::to_string(c.seed)},
      {"lambda_cap", c.lambda_cap ? format_real(*c.lambda_cap) : "none"},
      {"use_fld", b2s(c.flags.use_fld)},
      {"use_dynamic_weights", b2s(c.flags.use_dynamic_weights)},
      {"use_adaptive_threshold", b2s(c.flags.use_adaptive_threshold)},
      {"use_grouping", b2s(c.flags.use_grouping)},
      {"validation_source", to_string(c.validation_source)},
      {"freeze_backbone", b2s(c.freeze_backbone)},
      {"backbone.in_channels", count(c.backbone.in_channels)},
      {"backbone.channels", join<std::size_t>(c.backbone.channels, count)},
      {"backbone.kernel", count(c.backbone.kernel)},
      {"backbone.padding", count(c.backbone.padding)},
      {"backbone.pool", count(c.backbone.pool)},
      {"heads.objective_hidden", count(c.heads.objective_hidden)},
      {"heads.subjective_hidden1", count(c.heads.subjective_hidden1)},
      {"heads.subjective_hidden2", count(c.heads.subjective_hidden2)},
      {"heads.landmark_hidden", count(c.heads.landmark_hidden)},
  };
}

KeyValues to_key_values(const SynthConfig& c) {
  std::vector<std::string> attrs;
  for (std::size_t j = 0; j < c.spec.size(); ++j) attrs.push_back(c.spec.names[j] + ":" + to_string(c.spec.groups[j]));
  auto count = [](std::size_t v) { return std::to_string(v); };
  return {
      {"synth.attributes", join<std::string>(attrs, [](const std::string& s) { return s; })},
      {"synth.landmarks", count(c.landmarks)},
      {"synth.image_size", count(c.image_size)},
      {"synth.positive_rate", join<double>(c.positive_rate, format_real)},
      {"synth.difficulty", join<double>(c.difficulty, format_real)},
      {"synth.train_size", count(c.train_size)},
      {"synth.val_size", count(c.val_size)},
      {"synth.test_size", count(c.test_size)},
      {"synth.jitter", count(c.jitter)},
      {"synth.seed", std::to_string(c.seed)},
  };
}

}  // namespace dmm
