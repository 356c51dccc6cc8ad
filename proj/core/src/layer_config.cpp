#include "mumoe/layer_config.hpp"

namespace mumoe {

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::cp: return "cp";
    case LayerKind::tr: return "tr";
  }
  return "?";
}

std::string to_string(GateActivation act) {
  return act == GateActivation::entmax15 ? "entmax15" : "softmax";
}

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::none: return "none";
    case NormKind::batch: return "batch";
    case NormKind::layer: return "layer";
  }
  return "?";
}

LayerKind parse_layer_kind(const std::string& text) {
  if (text == "dense") return LayerKind::dense;
  if (text == "cp") return LayerKind::cp;
  if (text == "tr") return LayerKind::tr;
  throw ConfigError("unknown layer kind '" + text + "' (expected dense, cp or tr)");
}

GateActivation parse_gate_activation(const std::string& text) {
  if (text == "entmax15" || text == "entmax") return GateActivation::entmax15;
  if (text == "softmax") return GateActivation::softmax;
  throw ConfigError("unknown gate activation '" + text + "' (expected entmax15 or softmax)");
}

NormKind parse_norm_kind(const std::string& text) {
  if (text == "none") return NormKind::none;
  if (text == "batch") return NormKind::batch;
  if (text == "layer") return NormKind::layer;
  throw ConfigError("unknown gate norm '" + text + "' (expected batch, layer or none)");
}

std::size_t LayerConfig::total_experts() const {
  std::size_t n = 1;
  for (auto e : experts) n *= e;
  return n;
}

Shape LayerConfig::weight_shape() const {
  Shape s(experts.begin(), experts.end());
  s.push_back(folded_input_dim());
  s.push_back(output_dim);
  return s;
}

void LayerConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be >= 1");
  if (output_dim == 0) throw ConfigError("output_dim must be >= 1");
  if (experts.empty()) throw ConfigError("at least one hierarchy level of experts is required");
  for (auto n : experts)
    if (n == 0) throw ConfigError("expert counts must be >= 1");
  if (kind == LayerKind::cp && cp_rank == 0) throw ConfigError("cp kind needs rank >= 1");
  if (kind == LayerKind::tr) {
    if (tr_ranks.size() != levels() + 2)
      throw ConfigError("tr kind needs " + std::to_string(levels() + 2) + " ranks, got " +
                        std::to_string(tr_ranks.size()));
    for (auto r : tr_ranks)
      if (r == 0) throw ConfigError("tr ranks must be >= 1");
  }
  if (!(norm_eps > 0.0)) throw ConfigError("norm eps must be positive");
  if (!(norm_momentum > 0.0 && norm_momentum < 1.0)) throw ConfigError("norm momentum must lie in (0, 1)");
}

}  // namespace mumoe
