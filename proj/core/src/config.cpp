#include "mumoe/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mumoe {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_count(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  long long v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError(key + ": expected an integer, got '" + t + "'");
  if (v < 1) throw ConfigError(key + ": must be >= 1, got " + t);
  return std::size_t(v);
}

std::uint64_t parse_seed(const std::string& text) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty())
    throw ConfigError("seed: expected a non-negative integer, got '" + t + "'");
  return v;
}

double parse_real(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(t, &used);
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + t + "'");
  }
  if (used != t.size()) throw ConfigError(key + ": expected a number, got '" + t + "'");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  if (t == "true" || t == "1" || t == "yes") return true;
  if (t == "false" || t == "0" || t == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + t + "'");
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

std::vector<std::size_t> parse_counts(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text)) out.push_back(parse_count(key, item));
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

Pointwise parse_pointwise(const std::string& text) {
  if (text == "gelu") return Pointwise::gelu;
  if (text == "relu") return Pointwise::relu;
  if (text == "identity") return Pointwise::identity;
  throw ConfigError("hidden_activation: unknown value '" + text + "'");
}

const std::set<std::string> kKnown = {
    "kind",     "input_dim", "output_dim",  "experts",  "rank",  "tr_ranks",      "gate_activation",
    "gate_norm", "seed",     "bias",        "hidden_dim", "hidden_activation", "sigma", "epochs",
    "batch_size", "optimizer", "lr",        "momentum", "beta1", "beta2",         "adam_eps",
    "norm_momentum", "norm_eps", "dtype"};

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::stringstream in(text);
  std::string line;
  for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!kKnown.count(key)) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    if (value.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty value for " + key);
    if (!kv.emplace(key, value).second) throw ConfigError("line " + std::to_string(lineno) + ": repeated key " + key);
  }
  auto need = [&](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw ConfigError("missing required key '" + key + "'");
    return it->second;
  };
  auto opt = [&](const std::string& key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };

  ExperimentConfig c;
  LayerConfig& l = c.layer;
  l.kind = parse_layer_kind(need("kind"));
  l.input_dim = parse_count("input_dim", need("input_dim"));
  l.output_dim = parse_count("output_dim", need("output_dim"));
  l.experts = parse_counts("experts", need("experts"));
  l.gate_activation = parse_gate_activation(need("gate_activation"));
  l.gate_norm = parse_norm_kind(need("gate_norm"));
  c.init.seed = parse_seed(need("seed"));
  c.train.seed = c.init.seed;
  if (l.kind == LayerKind::cp) l.cp_rank = parse_count("rank", need("rank"));
  else if (opt("rank")) throw ConfigError("rank only applies to kind = cp");
  if (l.kind == LayerKind::tr) l.tr_ranks = parse_counts("tr_ranks", need("tr_ranks"));
  else if (opt("tr_ranks")) throw ConfigError("tr_ranks only applies to kind = tr");

  if (auto v = opt("bias")) l.bias = parse_bool("bias", *v);
  if (auto v = opt("norm_momentum")) l.norm_momentum = parse_real("norm_momentum", *v);
  if (auto v = opt("norm_eps")) l.norm_eps = parse_real("norm_eps", *v);
  if (auto v = opt("hidden_dim")) c.hidden_dim = parse_count("hidden_dim", *v);
  if (auto v = opt("hidden_activation")) c.hidden_activation = parse_pointwise(*v);
  if (auto v = opt("sigma"))
    for (const auto& s : split_list(*v)) {
      const double x = parse_real("sigma", s);
      if (!(x >= 0.0)) throw ConfigError("sigma entries must be >= 0");
      c.init.sigma.push_back(x);
    }
  if (auto v = opt("epochs")) c.train.epochs = parse_count("epochs", *v);
  if (auto v = opt("batch_size")) c.train.batch_size = parse_count("batch_size", *v);
  if (auto v = opt("optimizer")) c.train.optim.kind = parse_optim_kind(*v);
  if (auto v = opt("lr")) c.train.optim.lr = parse_real("lr", *v);
  if (auto v = opt("momentum")) c.train.optim.momentum = parse_real("momentum", *v);
  if (auto v = opt("beta1")) c.train.optim.beta1 = parse_real("beta1", *v);
  if (auto v = opt("beta2")) c.train.optim.beta2 = parse_real("beta2", *v);
  if (auto v = opt("adam_eps")) c.train.optim.eps = parse_real("adam_eps", *v);
  if (auto v = opt("dtype")) {
    if (*v != "f32" && *v != "f64") throw ConfigError("dtype must be f32 or f64");
    c.dtype = *v;
  }
  c.output_dim = l.output_dim;
  if (c.hidden_dim) l.output_dim = *c.hidden_dim;
  l.validate();
  c.train.optim.validate();
  return c;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config_text(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

template <typename T>
Model<T> build_model(const ExperimentConfig& config) {
  Model<T> m;
  m.hidden = config.hidden_activation;
  m.first = init_layer<T>(config.layer, config.init);
  if (config.hidden_dim) {
    LayerConfig second = config.layer;
    second.input_dim = *config.hidden_dim;
    second.output_dim = config.output_dim;
    second.gated = false;
    InitConfig init = config.init;
    init.seed += 1;
    m.second = init_layer<T>(second, init);
  }
  m.validate();
  return m;
}

template Model<float> build_model(const ExperimentConfig&);
template Model<double> build_model(const ExperimentConfig&);

}  // namespace mumoe
