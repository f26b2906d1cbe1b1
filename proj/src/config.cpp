#include "convgot/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "convgot/digest.hpp"
#include "convgot/errors.hpp"

namespace convgot {

std::string_view to_string(BackendKind kind) {
  switch (kind) {
    case BackendKind::Template: return "template";
    case BackendKind::Trainable: return "trainable";
    case BackendKind::Remote: return "remote";
  }
  return "?";
}

EngineConfig::EngineConfig() {
  selector_train.epochs = 10;
  // The decoder only has to fit a small closed vocabulary; the default warmup would eat the run.
  decoder_train.optimizer.lr = 1e-2;
  decoder_train.optimizer.weight_decay = 0.0;
  decoder_train.optimizer.warmup_steps = 0;
  decoder_train.epochs = 150;
}

GraphConfig EngineConfig::graph() const {
  GraphConfig g;
  g.window = window;
  g.silence_fallback = silence_fallback;
  g.silence_ticks = silence_ticks;
  return g;
}

EventConfig EngineConfig::events() const {
  EventConfig e;
  e.tick_seconds = tick_seconds;
  e.min_silence_ticks = min_silence_ticks;
  return e;
}

void validate(const EngineConfig& cfg) {
  if (cfg.window < 1) throw ConfigError("window must be at least 1");
  if (!(cfg.tick_seconds > 0.0)) throw ConfigError("tick length must be positive");
  for (const auto* s : {&cfg.perceiver_train, &cfg.selector_train, &cfg.decoder_train}) {
    if (!(s->optimizer.lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (s->batch_size == 0) throw ConfigError("batch size must be positive");
  }
  if (cfg.decoder_pairs == 0) throw ConfigError("decoder_train.pairs must be positive");
  if (cfg.silence_ticks < 1 || cfg.min_silence_ticks < 1) throw ConfigError("silence thresholds must be at least 1");
  validate(cfg.perceiver);
  validate(cfg.selector);
  if (cfg.decoder.d_model == 0 || cfg.decoder.ffn_hidden == 0 || cfg.decoder.max_source == 0 ||
      cfg.decoder.max_target < 2)
    throw ConfigError("bad decoder dimensions");
}

namespace {

std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
T parse_number(const std::string& s, const std::string& key) {
  T v{};
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) throw ConfigError("bad value for " + key + ": '" + s + "'");
  return v;
}

bool parse_bool(const std::string& s, const std::string& key) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + s + "'");
}

struct Field {
  std::string name;  // section.key
  std::function<std::string(const EngineConfig&)> get;
  std::function<void(EngineConfig&, const std::string&)> set;
};

// `ref` maps a config to the member; getters only read through it.
template <typename T, typename Ref>
Field num(std::string name, Ref ref) {
  Field f;
  f.name = name;
  f.get = [ref](const EngineConfig& c) {
    const T& v = ref(const_cast<EngineConfig&>(c));
    if constexpr (std::is_floating_point_v<T>) return fmt(v);
    else return std::to_string(v);
  };
  f.set = [ref, name](EngineConfig& c, const std::string& s) { ref(c) = parse_number<T>(s, name); };
  return f;
}

template <typename Ref>
Field flag(std::string name, Ref ref) {
  Field f;
  f.name = name;
  f.get = [ref](const EngineConfig& c) { return std::string(ref(const_cast<EngineConfig&>(c)) ? "true" : "false"); };
  f.set = [ref, name](EngineConfig& c, const std::string& s) { ref(c) = parse_bool(s, name); };
  return f;
}

void schedule_fields(std::vector<Field>& out, const std::string& section, TrainSchedule EngineConfig::*member) {
  auto opt = [member](EngineConfig& c) -> OptimizerConfig& { return (c.*member).optimizer; };
  out.push_back(num<double>(section + ".lr", [opt](EngineConfig& c) -> double& { return opt(c).lr; }));
  out.push_back(num<double>(section + ".weight_decay", [opt](EngineConfig& c) -> double& { return opt(c).weight_decay; }));
  out.push_back(num<double>(section + ".beta1", [opt](EngineConfig& c) -> double& { return opt(c).beta1; }));
  out.push_back(num<double>(section + ".beta2", [opt](EngineConfig& c) -> double& { return opt(c).beta2; }));
  out.push_back(num<double>(section + ".eps", [opt](EngineConfig& c) -> double& { return opt(c).eps; }));
  out.push_back(num<double>(section + ".clip", [opt](EngineConfig& c) -> double& { return opt(c).clip_norm; }));
  out.push_back(
      num<std::size_t>(section + ".warmup_steps", [opt](EngineConfig& c) -> std::size_t& { return opt(c).warmup_steps; }));
  out.push_back(
      num<std::size_t>(section + ".epochs", [member](EngineConfig& c) -> std::size_t& { return (c.*member).epochs; }));
  out.push_back(num<std::size_t>(section + ".batch_size",
                                 [member](EngineConfig& c) -> std::size_t& { return (c.*member).batch_size; }));
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using C = EngineConfig;
    std::vector<Field> f;
    f.push_back(num<std::int64_t>("engine.window", [](C& c) -> std::int64_t& { return c.window; }));
    f.push_back(num<double>("engine.tick_seconds", [](C& c) -> double& { return c.tick_seconds; }));
    f.push_back(num<std::uint64_t>("engine.seed", [](C& c) -> std::uint64_t& { return c.seed; }));
    f.push_back(flag("engine.strict", [](C& c) -> bool& { return c.strict; }));
    f.push_back(num<std::size_t>("engine.recent", [](C& c) -> std::size_t& { return c.recent; }));
    {
      Field b;
      b.name = "engine.backend";
      b.get = [](const C& c) { return std::string(to_string(c.backend)); };
      b.set = [](C& c, const std::string& s) {
        if (s == "template") c.backend = BackendKind::Template;
        else if (s == "trainable") c.backend = BackendKind::Trainable;
        else if (s == "remote") c.backend = BackendKind::Remote;
        else throw ConfigError("unknown backend '" + s + "'");
      };
      f.push_back(b);
    }
    f.push_back(flag("engine.silence_fallback", [](C& c) -> bool& { return c.silence_fallback; }));
    f.push_back(num<std::int64_t>("engine.silence_ticks", [](C& c) -> std::int64_t& { return c.silence_ticks; }));
    f.push_back(num<std::int64_t>("engine.min_silence_ticks", [](C& c) -> std::int64_t& { return c.min_silence_ticks; }));

    f.push_back(num<std::size_t>("perceiver.acoustic_dim", [](C& c) -> std::size_t& { return c.perceiver.acoustic_dim; }));
    f.push_back(num<std::size_t>("perceiver.semantic_dim", [](C& c) -> std::size_t& { return c.perceiver.semantic_dim; }));
    f.push_back(num<std::size_t>("perceiver.hidden", [](C& c) -> std::size_t& { return c.perceiver.hidden; }));
    f.push_back(num<std::size_t>("perceiver.ffn_hidden", [](C& c) -> std::size_t& { return c.perceiver.ffn_hidden; }));
    f.push_back(num<std::size_t>("perceiver.layers", [](C& c) -> std::size_t& { return c.perceiver.layers; }));
    f.push_back(num<std::size_t>("perceiver.heads", [](C& c) -> std::size_t& { return c.perceiver.heads; }));
    f.push_back(num<std::size_t>("perceiver.context", [](C& c) -> std::size_t& { return c.perceiver.context; }));
    f.push_back(num<double>("perceiver.beta", [](C& c) -> double& { return c.perceiver.beta; }));
    f.push_back(flag("perceiver.learn_beta", [](C& c) -> bool& { return c.perceiver.learn_beta; }));

    f.push_back(num<std::size_t>("selector.semantic_dim", [](C& c) -> std::size_t& { return c.selector.semantic_dim; }));
    f.push_back(num<std::size_t>("selector.hidden", [](C& c) -> std::size_t& { return c.selector.hidden; }));
    f.push_back(num<std::size_t>("selector.ffn_hidden", [](C& c) -> std::size_t& { return c.selector.ffn_hidden; }));
    f.push_back(num<std::size_t>("selector.hash_buckets", [](C& c) -> std::size_t& { return c.selector.hash_buckets; }));
    f.push_back(num<double>("selector.temperature", [](C& c) -> double& { return c.selector.temperature; }));
    f.push_back(num<double>("selector.lambda_count", [](C& c) -> double& { return c.selector.lambda_count; }));
    f.push_back(num<double>("selector.lambda_rank", [](C& c) -> double& { return c.selector.lambda_rank; }));

    f.push_back(num<std::size_t>("decoder.d_model", [](C& c) -> std::size_t& { return c.decoder.d_model; }));
    f.push_back(num<std::size_t>("decoder.ffn_hidden", [](C& c) -> std::size_t& { return c.decoder.ffn_hidden; }));
    f.push_back(num<std::size_t>("decoder.max_source", [](C& c) -> std::size_t& { return c.decoder.max_source; }));
    f.push_back(num<std::size_t>("decoder.max_target", [](C& c) -> std::size_t& { return c.decoder.max_target; }));

    schedule_fields(f, "perceiver_train", &C::perceiver_train);
    schedule_fields(f, "selector_train", &C::selector_train);
    schedule_fields(f, "decoder_train", &C::decoder_train);
    f.push_back(num<std::size_t>("decoder_train.pairs", [](C& c) -> std::size_t& { return c.decoder_pairs; }));

    {
      Field e;
      e.name = "remote.endpoint";
      e.get = [](const C& c) { return c.remote.endpoint; };
      e.set = [](C& c, const std::string& s) { c.remote.endpoint = s; };
      f.push_back(e);
    }
    f.push_back(num<int>("remote.timeout_ms", [](C& c) -> int& { return c.remote.timeout_ms; }));
    f.push_back(num<int>("remote.max_tokens", [](C& c) -> int& { return c.remote.max_tokens; }));
    return f;
  }();
  return table;
}

const Field& field(const std::string& name) {
  for (const auto& f : fields())
    if (f.name == name) return f;
  throw ConfigError("unknown config key '" + name + "'");
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.name);
  return out;
}

EngineConfig parse_engine_config(std::istream& in) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  EngineConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw ConfigError("config key '" + section + "' is outside a section");
    for (const auto& [key, value] : body) field(section + "." + key).set(cfg, value.data());
  }
  validate(cfg);
  return cfg;
}

EngineConfig load_engine_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  return parse_engine_config(in);
}

void apply_override(EngineConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override must look like section.key=value");
  auto trim = [](std::string_view s) {
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
    return std::string(s);
  };
  field(trim(assignment.substr(0, eq))).set(cfg, trim(assignment.substr(eq + 1)));
  validate(cfg);
}

std::string canonical_ini(const EngineConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.name.find('.');
    const std::string s = f.name.substr(0, dot);
    if (s != section) {
      if (!section.empty()) os << '\n';
      os << '[' << s << "]\n";
      section = s;
    }
    os << f.name.substr(dot + 1) << " = " << f.get(cfg) << '\n';
  }
  return os.str();
}

std::string config_hash(const EngineConfig& cfg) { return sha256_hex(canonical_ini(cfg)); }

}  // namespace convgot
