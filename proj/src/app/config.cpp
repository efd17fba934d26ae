#include "mate/app/config.hpp"

#include "mate/envs/tmaze.hpp"
#include "mate/errors.hpp"
#include "mate/nn/seed.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace mate::app {

namespace {

struct Entry {
  std::string key;  // section.key, or a bare top-level key
  std::string value;
  std::string where;  // "line N" or "--set"
};

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string fmt_double(double v) {
  // Shortest text that parses back to the same double.
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::uint64_t to_u64(const std::string& s) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return v;
}

std::size_t to_size(const std::string& s) { return static_cast<std::size_t>(to_u64(s)); }

double to_double(const std::string& s) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError("expected true or false, got '" + s + "'");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (item.empty()) throw ConfigError("empty item in list '" + s + "'");
    out.push_back(item);
  }
  return out;
}

template <typename T, typename F>
std::string join(const std::vector<T>& v, F f) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += f(v[i]);
  }
  return out;
}

#define MATE_SIZE(KEY, MEMBER)                                                            \
  Field {                                                                                 \
    KEY, [](const RunConfig& c) { return std::to_string(c.MEMBER); },                     \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_size(v); }                 \
  }
#define MATE_U64(KEY, MEMBER)                                                             \
  Field {                                                                                 \
    KEY, [](const RunConfig& c) { return std::to_string(c.MEMBER); },                     \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_u64(v); }                  \
  }
#define MATE_DOUBLE(KEY, MEMBER)                                                          \
  Field {                                                                                 \
    KEY, [](const RunConfig& c) { return fmt_double(c.MEMBER); },                         \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_double(v); }               \
  }
#define MATE_BOOL(KEY, MEMBER)                                                            \
  Field {                                                                                 \
    KEY, [](const RunConfig& c) { return std::string(c.MEMBER ? "true" : "false"); },     \
        [](RunConfig& c, const std::string& v) { c.MEMBER = to_bool(v); }                 \
  }
#define MATE_STRING(KEY, MEMBER)                                                          \
  Field {                                                                                 \
    KEY, [](const RunConfig& c) { return c.MEMBER; }, [](RunConfig& c, const std::string& v) { c.MEMBER = v; } \
  }

// Serialization order follows this table. The algorithm is read before the table is applied.
const std::vector<Field>& schema() {
  static const std::vector<Field> fields{
      MATE_U64("seed", seed),
      MATE_STRING("label", label),
      MATE_SIZE("ckpt_every", ckpt_every),

      MATE_STRING("env.name", env.name),
      MATE_SIZE("env.horizon", env.horizon),
      MATE_SIZE("env.corridor_len", env.corridor_len),
      MATE_DOUBLE("env.obs_noise", env.obs_noise),
      MATE_STRING("env.false_cue", env.false_cue),

      {"memory.arch", [](const RunConfig& c) { return std::string(memory::to_string(c.memory.arch)); },
       [](RunConfig& c, const std::string& v) { c.memory.arch = memory::parse_arch(v); }},
      MATE_SIZE("memory.dim", memory.memory_dim),
      {"memory.activation", [](const RunConfig& c) { return std::string(nn::to_string(c.memory.activation)); },
       [](RunConfig& c, const std::string& v) { c.memory.activation = nn::parse_activation(v); }},
      MATE_BOOL("memory.positional", memory.positional),
      {"memory.mate_encoder", [](const RunConfig& c) { return std::string(memory::to_string(c.memory.mate_encoder)); },
       [](RunConfig& c, const std::string& v) { c.memory.mate_encoder = memory::parse_mate_encoder(v); }},
      MATE_SIZE("memory.ff_hidden", memory.ff_hidden),

      {"train.algo", [](const RunConfig& c) { return std::string(rl::to_string(c.train.algo)); },
       [](RunConfig& c, const std::string& v) { c.train.algo = rl::parse_algo(v); }},
      MATE_SIZE("train.episodes", train.episodes),
      MATE_DOUBLE("train.gamma", train.gamma),
      MATE_DOUBLE("train.tau", train.tau),
      MATE_DOUBLE("train.lr", train.lr),
      MATE_SIZE("train.batch_size", train.batch_size),
      MATE_SIZE("train.buffer_size", train.buffer_size),
      MATE_DOUBLE("train.grad_clip", train.grad_clip),
      MATE_BOOL("train.freeze_critic", train.freeze_critic),
      MATE_DOUBLE("train.alpha", train.alpha),
      MATE_DOUBLE("train.epsilon_decay", train.epsilon_decay),
      MATE_SIZE("train.warmup_episodes", train.warmup_episodes),
      MATE_SIZE("train.max_batch_transitions", train.max_batch_transitions),
      {"train.hidden", [](const RunConfig& c) { return join(c.train.heads.hidden, [](std::size_t h) { return std::to_string(h); }); },
       [](RunConfig& c, const std::string& v) {
         c.train.heads.hidden.clear();
         for (const auto& s : split_list(v)) c.train.heads.hidden.push_back(to_size(s));
       }},
      MATE_SIZE("train.state_dim", train.heads.state_dim),
      {"train.activation", [](const RunConfig& c) { return std::string(nn::to_string(c.train.heads.activation)); },
       [](RunConfig& c, const std::string& v) { c.train.heads.activation = nn::parse_activation(v); }},
      MATE_SIZE("train.eval_every", train.eval_every),
      MATE_SIZE("train.eval_episodes", train.eval_episodes),
      MATE_SIZE("train.workers", train.workers),

      MATE_U64("seeds.init", seeds.init),
      MATE_U64("seeds.env", seeds.env),
      MATE_U64("seeds.explore", seeds.explore),
      MATE_U64("seeds.replay", seeds.replay),
      MATE_U64("seeds.update", seeds.update),
      MATE_U64("seeds.eval", seeds.eval),
      MATE_U64("seeds.bench", bench.timing.seed),

      {"bench.archs", [](const RunConfig& c) { return join(c.bench.grid.archs, [](memory::Arch a) { return std::string(memory::to_string(a)); }); },
       [](RunConfig& c, const std::string& v) {
         c.bench.grid.archs.clear();
         for (const auto& s : split_list(v)) c.bench.grid.archs.push_back(memory::parse_arch(s));
       }},
      {"bench.lengths", [](const RunConfig& c) { return join(c.bench.grid.horizons, [](std::size_t h) { return std::to_string(h); }); },
       [](RunConfig& c, const std::string& v) {
         c.bench.grid.horizons.clear();
         for (const auto& s : split_list(v)) c.bench.grid.horizons.push_back(to_size(s));
       }},
      MATE_SIZE("bench.batch", bench.grid.update_batch),
      MATE_SIZE("bench.speedup_length", bench.grid.speedup_horizon),
      MATE_SIZE("bench.speedup_batch", bench.grid.speedup_batch),
      MATE_SIZE("bench.workers", bench.grid.workers),
      MATE_SIZE("bench.memory_dim", bench.timing.memory_dim),
      MATE_SIZE("bench.input_dim", bench.timing.input_dim),
      MATE_SIZE("bench.repeats", bench.timing.repeats),
      MATE_SIZE("bench.warmup", bench.timing.warmup),
      MATE_DOUBLE("bench.min_rollout_ms", bench.timing.min_rollout_ms),
  };
  return fields;
}

#undef MATE_SIZE
#undef MATE_U64
#undef MATE_DOUBLE
#undef MATE_BOOL
#undef MATE_STRING

const Field* find_field(const std::string& key) {
  for (const auto& f : schema()) {
    if (f.key == key) return &f;
  }
  return nullptr;
}

std::vector<Entry> tokenize(const std::string& text) {
  std::vector<Entry> out;
  std::map<std::string, std::string> seen;
  std::string section;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++lineno;
    const std::string where = "line " + std::to_string(lineno);
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header '" + line + "'");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError(where + ": empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value', got '" + line + "'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ConfigError(where + ": missing key before '='");
    const std::string full = section.empty() ? key : section + "." + key;
    if (auto it = seen.find(full); it != seen.end()) {
      throw ConfigError(where + ": " + full + " already set at " + it->second);
    }
    seen[full] = where;
    out.push_back({full, trim(std::string_view(line).substr(eq + 1)), where});
  }
  return out;
}

Entry parse_override(const std::string& s) {
  const auto eq = s.find('=');
  if (eq == std::string::npos) throw ConfigError("--set '" + s + "': expected section.key=value");
  return {trim(std::string_view(s).substr(0, eq)), trim(std::string_view(s).substr(eq + 1)), "--set"};
}

bool continuous_env(const std::string& name) { return name == "gauss_bandit" || name == "point_dir"; }

}  // namespace

std::string RunConfig::default_label() const {
  return env.name + "-" + std::string(memory::to_string(memory.arch)) + "-" + std::string(rl::to_string(train.algo)) +
         "-s" + std::to_string(seed);
}

RunConfig parse_config(const std::string& text, const std::vector<std::string>& overrides) {
  std::vector<Entry> entries = tokenize(text);
  for (const auto& o : overrides) entries.push_back(parse_override(o));

  auto last = [&](const std::string& key) -> const Entry* {
    const Entry* hit = nullptr;
    for (const auto& e : entries) {
      if (e.key == key) hit = &e;
    }
    return hit;
  };
  for (const auto& e : entries) {
    if (!find_field(e.key)) throw ConfigError(e.where + ": unknown key '" + e.key + "'");
  }

  RunConfig c;
  // The algorithm picks the training defaults; without one, follow the action space.
  rl::Algo algo = rl::Algo::ddqn;
  if (const Entry* a = last("train.algo")) {
    try {
      algo = rl::parse_algo(a->value);
    } catch (const ConfigError& err) {
      throw ConfigError(a->where + ": train.algo: " + err.what());
    }
  } else if (const Entry* n = last("env.name"); n && continuous_env(n->value)) {
    algo = rl::Algo::sac;
  }
  c.train = rl::TrainConfig::defaults(algo);

  auto apply = [&](bool seeds_pass) {
    for (const auto& e : entries) {
      if (e.key.starts_with("seeds.") != seeds_pass) continue;
      try {
        find_field(e.key)->set(c, e.value);
      } catch (const ConfigError& err) {
        throw ConfigError(e.where + ": " + e.key + ": " + err.what());
      }
    }
  };
  apply(false);
  c.seeds = rl::TrainSeeds::from_master(c.seed);
  c.bench.timing.seed = nn::derive_seed(c.seed, "bench");
  apply(true);

  c.env = envs::resolve(c.env);
  const auto env = envs::make_env(c.env);
  const bool continuous = env->action_space().kind == envs::ActionKind::continuous;
  if (continuous && c.train.algo == rl::Algo::ddqn) {
    throw ConfigError("train.algo: ddqn needs a discrete action space, " + c.env.name + " is continuous (use sac)");
  }
  if (!continuous && c.train.algo == rl::Algo::sac) {
    throw ConfigError("train.algo: sac needs a continuous action space, " + c.env.name + " is discrete (use ddqn)");
  }
  c.memory.input_dim = env->transition_dim();
  c.memory.horizon = env->horizon();
  if (c.memory.arch == memory::Arch::mate) c.memory.positional = false;
  c.memory.validate();
  c.train.validate();
  c.bench.grid.validate();
  if (c.bench.timing.repeats < 5) throw ConfigError("bench.repeats must be at least 5");
  if (!(c.bench.timing.min_rollout_ms >= 0.0)) throw ConfigError("bench.min_rollout_ms must be non-negative");
  if (c.bench.timing.memory_dim == 0) throw ConfigError("bench.memory_dim must be positive");
  if (c.bench.timing.input_dim == 0) throw ConfigError("bench.input_dim must be positive");
  if (c.ckpt_every == 0) throw ConfigError("ckpt_every must be positive");
  if (c.label.empty()) c.label = c.default_label();
  if (c.label.find_first_of("/\\") != std::string::npos || c.label == "." || c.label == "..") {
    throw ConfigError("label: '" + c.label + "' is not a valid directory name");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::ifstream f(path);
  if (!f) throw ConfigError(path.string() + ": cannot open config file");
  std::stringstream ss;
  ss << f.rdbuf();
  try {
    return parse_config(ss.str(), overrides);
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string serialize(const RunConfig& config) {
  std::ostringstream os;
  os << "# resolved configuration; every key is listed with its effective value\n";
  std::string section;
  for (const auto& f : schema()) {
    const auto dot = f.key.find('.');
    const std::string sec = dot == std::string::npos ? "" : f.key.substr(0, dot);
    const std::string key = dot == std::string::npos ? f.key : f.key.substr(dot + 1);
    if (sec != section) {
      os << "\n[" << sec << "]\n";
      section = sec;
    }
    os << key << " = " << f.get(config) << '\n';
  }
  return os.str();
}

}  // namespace mate::app
