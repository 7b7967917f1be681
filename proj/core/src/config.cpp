#include "omni/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "omni/error.hpp"

namespace omni {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <typename T>
T parse_number(const std::string& key, std::string_view text) {
  T v{};
  const auto* end = text.data() + text.size();
  auto [p, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || p != end) {
    throw ConfigMismatch("config key '" + key + "': cannot parse '" + std::string(text) + "' as a number");
  }
  return v;
}

}  // namespace

// ---- KeyValues -------------------------------------------------------------

KeyValues KeyValues::parse(std::string_view text) {
  KeyValues kv;
  std::size_t line_start = 0;
  while (line_start <= text.size()) {
    auto nl = text.find('\n', line_start);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = trim(text.substr(line_start, nl - line_start));
    if (!line.empty() && line.front() != '#') {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw ParseError("config line without '='", line_start);
      const auto key = trim(line.substr(0, eq));
      if (key.empty()) throw ParseError("config line with empty key", line_start);
      kv.values_[std::string(key)] = std::string(trim(line.substr(eq + 1)));
    }
    line_start = nl + 1;
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void KeyValues::set_assignment(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ParseError("override '" + std::string(assignment) + "' has no '='", 0);
  const auto key = trim(assignment.substr(0, eq));
  if (key.empty()) throw ParseError("override has an empty key", 0);
  values_[std::string(key)] = std::string(trim(assignment.substr(eq + 1)));
}

void KeyValues::set(const std::string& key, double value) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, value);
  values_[key] = std::string(buf, p);
}

void KeyValues::merge(const KeyValues& other) {
  for (const auto& [k, v] : other.values_) values_[k] = v;
}

std::string KeyValues::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::int64_t KeyValues::get_int(const std::string& key, std::int64_t fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<std::int64_t>(key, it->second);
}

std::uint64_t KeyValues::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<std::uint64_t>(key, it->second);
}

double KeyValues::get_double(const std::string& key, double fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : parse_number<double>(key, it->second);
}

const std::string& KeyValues::require(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigMismatch("missing config key '" + key + "'");
  return it->second;
}

std::string KeyValues::to_text() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

void KeyValues::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << to_text();
  if (!out) throw IoError("write failed for " + path.string());
}

// ---- lists -----------------------------------------------------------------

std::vector<std::uint64_t> parse_u64_list(std::string_view s) {
  std::vector<std::uint64_t> out;
  std::size_t start = 0;
  while (start < s.size()) {
    auto comma = s.find(',', start);
    if (comma == std::string_view::npos) comma = s.size();
    const auto item = trim(s.substr(start, comma - start));
    if (!item.empty()) out.push_back(parse_number<std::uint64_t>("list", item));
    start = comma + 1;
  }
  return out;
}

std::vector<int> parse_int_list(std::string_view s) {
  std::vector<int> out;
  for (auto v : parse_u64_list(s)) out.push_back(static_cast<int>(v));
  return out;
}

std::string join_list(const std::vector<std::uint64_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string join_list(const std::vector<int>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

// ---- model / train ---------------------------------------------------------

void write_model_config(KeyValues& kv, const ModelConfig& c) {
  kv.set("model.n_layers", c.n_layers);
  kv.set("model.share_threshold", c.share_threshold);
  kv.set("model.d_model", c.d_model);
  kv.set("model.n_heads", c.n_heads);
  kv.set("model.d_ff", c.d_ff);
  kv.set("model.max_seq_len", c.max_seq_len);
  kv.set("model.vocab_size", c.vocab_size);
  kv.set("model.patch_size", c.patch_size);
  kv.set("model.image_side", c.image_side);
  kv.set("model.topology", topology_name(c.topology));
  kv.set("model.ln_eps", static_cast<double>(c.ln_eps));
}

ModelConfig read_model_config(const KeyValues& kv) {
  ModelConfig c;
  c.n_layers = static_cast<int>(kv.get_int("model.n_layers", c.n_layers));
  c.share_threshold = static_cast<int>(kv.get_int("model.share_threshold", c.share_threshold));
  c.d_model = static_cast<int>(kv.get_int("model.d_model", c.d_model));
  c.n_heads = static_cast<int>(kv.get_int("model.n_heads", c.n_heads));
  c.d_ff = static_cast<int>(kv.get_int("model.d_ff", c.d_ff));
  c.max_seq_len = static_cast<int>(kv.get_int("model.max_seq_len", c.max_seq_len));
  c.vocab_size = static_cast<int>(kv.get_int("model.vocab_size", c.vocab_size));
  c.patch_size = static_cast<int>(kv.get_int("model.patch_size", c.patch_size));
  c.image_side = static_cast<int>(kv.get_int("model.image_side", c.image_side));
  c.topology = parse_topology(kv.get_string("model.topology", topology_name(c.topology)));
  c.ln_eps = static_cast<float>(kv.get_double("model.ln_eps", c.ln_eps));
  c.validate();
  return c;
}

void write_train_config(KeyValues& kv, const TrainConfig& c) {
  kv.set("train.variant", variant_name(c.variant));
  kv.set("train.steps", c.steps);
  kv.set("train.batch_size", c.batch_size);
  kv.set("train.learning_rate", c.learning_rate);
  kv.set("train.beta1", c.beta1);
  kv.set("train.beta2", c.beta2);
  kv.set("train.adam_eps", c.adam_eps);
  kv.set("train.weight_decay", c.weight_decay);
  kv.set("train.warmup_ratio", c.warmup_ratio);
  kv.set("train.seed", c.seed);
  kv.set("train.checkpoint_every", c.checkpoint_every);
}

TrainConfig read_train_config(const KeyValues& kv) {
  TrainConfig c;
  c.variant = parse_variant(kv.get_string("train.variant", variant_name(c.variant)));
  c.steps = static_cast<int>(kv.get_int("train.steps", c.steps));
  c.batch_size = static_cast<int>(kv.get_int("train.batch_size", c.batch_size));
  c.learning_rate = kv.get_double("train.learning_rate", c.learning_rate);
  c.beta1 = kv.get_double("train.beta1", c.beta1);
  c.beta2 = kv.get_double("train.beta2", c.beta2);
  c.adam_eps = kv.get_double("train.adam_eps", c.adam_eps);
  c.weight_decay = kv.get_double("train.weight_decay", c.weight_decay);
  c.warmup_ratio = kv.get_double("train.warmup_ratio", c.warmup_ratio);
  c.seed = kv.get_u64("train.seed", c.seed);
  c.checkpoint_every = static_cast<int>(kv.get_int("train.checkpoint_every", c.checkpoint_every));
  c.validate();
  return c;
}

// ---- codec -----------------------------------------------------------------

ActionCodecConfig make_codec(const CodecSettings& s, const ModelConfig& m) {
  const TokenId text = static_cast<TokenId>(default_vocab().size());
  if (!s.table_path.empty()) {
    auto cfg = load_table(s.table_path, static_cast<TokenId>(m.vocab_size), text);
    if (cfg.k_bins() != s.k_bins) {
      throw ConfigMismatch("table " + s.table_path + " has " + std::to_string(cfg.k_bins()) + " bins, config says " +
                           std::to_string(s.k_bins));
    }
    return cfg;
  }
  return build_default_table(static_cast<TokenId>(m.vocab_size), s.k_bins, text);
}

void write_codec_config(KeyValues& kv, const ActionCodecConfig& codec) {
  kv.set("codec.k_bins", codec.k_bins());
  kv.set("codec.vocab_size", static_cast<int>(codec.vocab_size()));
  kv.set("codec.text_tokens", static_cast<int>(codec.text_token_count()));
  std::string table;
  for (std::size_t i = 0; i < codec.table().size(); ++i) table += (i ? "," : "") + std::to_string(codec.table()[i]);
  kv.set("codec.table", table);
}

ActionCodecConfig read_codec_config(const KeyValues& kv) {
  const int k = static_cast<int>(parse_number<std::int64_t>("codec.k_bins", kv.require("codec.k_bins")));
  const auto vocab = static_cast<TokenId>(kv.get_int("codec.vocab_size", 0));
  const auto text = static_cast<TokenId>(kv.get_int("codec.text_tokens", 0));
  std::vector<TokenId> table;
  for (auto v : parse_u64_list(kv.require("codec.table"))) table.push_back(static_cast<TokenId>(v));
  return ActionCodecConfig(k, std::move(table), vocab, text);
}

// ---- run config ------------------------------------------------------------

RunConfig RunConfig::from_kv(const KeyValues& kv) {
  RunConfig r;
  r.model = read_model_config(kv);
  r.train = read_train_config(kv);

  r.codec.k_bins = static_cast<int>(kv.get_int("codec.k_bins", r.codec.k_bins));
  r.codec.table_path = kv.get_string("codec.table_path", r.codec.table_path);

  r.data.seed = kv.get_u64("data.seed", r.data.seed);
  r.data.gui_samples = kv.get_u64("data.gui_samples", r.data.gui_samples);
  r.data.robot_episodes = kv.get_u64("data.robot_episodes", r.data.robot_episodes);
  r.data.resample_factor = static_cast<int>(kv.get_int("data.resample_factor", r.data.resample_factor));
  auto& p = r.data.params;
  p.image_side = r.model.image_side;
  p.grid = static_cast<int>(kv.get_int("data.grid", p.grid));
  p.dynamics.step_size = kv.get_double("data.step_size", p.dynamics.step_size);
  p.dynamics.grasp_radius = kv.get_double("data.grasp_radius", p.dynamics.grasp_radius);
  p.dynamics.max_steps = static_cast<int>(kv.get_int("data.max_steps", p.dynamics.max_steps));
  p.dynamics.min_start_distance = kv.get_double("data.min_start_distance", p.dynamics.min_start_distance);

  r.eval.episodes = static_cast<int>(kv.get_int("eval.episodes", r.eval.episodes));
  r.eval.seed = kv.get_u64("eval.seed", r.eval.seed);
  r.eval.click_tolerance = kv.get_double("eval.click_tolerance", r.eval.click_tolerance);

  r.analysis.probe_steps = static_cast<int>(kv.get_int("analysis.probe_steps", r.analysis.probe_steps));
  r.analysis.k_cutoff = kv.get_double("analysis.k_cutoff", r.analysis.k_cutoff);
  if (kv.contains("analysis.feature_layers")) r.analysis.feature_layers = parse_int_list(kv.require("analysis.feature_layers"));
  r.analysis.feature_samples = static_cast<int>(kv.get_int("analysis.feature_samples", r.analysis.feature_samples));

  if (kv.contains("ablation.seeds")) r.ablation.seeds = parse_u64_list(kv.require("ablation.seeds"));
  r.validate();
  return r;
}

KeyValues RunConfig::to_kv() const {
  KeyValues kv;
  write_model_config(kv, model);
  write_train_config(kv, train);
  kv.set("codec.k_bins", codec.k_bins);
  kv.set("codec.table_path", codec.table_path);
  kv.set("data.seed", data.seed);
  kv.set("data.gui_samples", static_cast<std::uint64_t>(data.gui_samples));
  kv.set("data.robot_episodes", static_cast<std::uint64_t>(data.robot_episodes));
  kv.set("data.resample_factor", data.resample_factor);
  kv.set("data.grid", data.params.grid);
  kv.set("data.step_size", data.params.dynamics.step_size);
  kv.set("data.grasp_radius", data.params.dynamics.grasp_radius);
  kv.set("data.max_steps", data.params.dynamics.max_steps);
  kv.set("data.min_start_distance", data.params.dynamics.min_start_distance);
  kv.set("eval.episodes", eval.episodes);
  kv.set("eval.seed", eval.seed);
  kv.set("eval.click_tolerance", eval.click_tolerance);
  kv.set("analysis.probe_steps", analysis.probe_steps);
  kv.set("analysis.k_cutoff", analysis.k_cutoff);
  kv.set("analysis.feature_layers", join_list(analysis.feature_layers));
  kv.set("analysis.feature_samples", analysis.feature_samples);
  kv.set("ablation.seeds", join_list(ablation.seeds));
  return kv;
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  if (codec.k_bins < 2) throw InvalidArgument("codec.k_bins must be at least 2");
  if (data.resample_factor < 1) throw InvalidArgument("data.resample_factor must be at least 1");
  if (data.params.image_side != model.image_side) throw ConfigMismatch("data image side differs from model.image_side");
  if (data.params.grid < 1 || model.image_side % data.params.grid != 0) {
    throw InvalidArgument("data.grid must divide model.image_side");
  }
  if (eval.episodes < 1) throw InvalidArgument("eval.episodes must be positive");
  if (analysis.probe_steps < 1) throw InvalidArgument("analysis.probe_steps must be positive");
  if (analysis.feature_samples < 1) throw InvalidArgument("analysis.feature_samples must be positive");
  for (int l : analysis.feature_layers) {
    if (l < 0 || l >= model.n_layers) throw InvalidArgument("analysis.feature_layers entry out of range");
  }
  if (ablation.seeds.empty()) throw InvalidArgument("ablation.seeds must not be empty");
}

}  // namespace omni
