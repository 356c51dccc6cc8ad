#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "mumoe/init.hpp"
#include "mumoe/layer_config.hpp"
#include "mumoe/model.hpp"
#include "mumoe/train.hpp"

namespace mumoe {

/// Parsed experiment file.
///
/// Grammar: one `key = value` per line, `#` starts a comment, blank lines
/// are ignored, unknown or repeated keys are errors.
/// Required: kind, input_dim, output_dim, experts (comma list, one count
/// per level), rank (cp) or tr_ranks (tr, comma list of E + 2),
/// gate_activation, gate_norm, seed.
/// Optional (default): bias (false), hidden_dim (none: single layer),
/// hidden_activation (gelu), sigma (1 for level 1, 0 deeper), epochs (20),
/// batch_size (32), optimizer (adam), lr (1e-3), momentum (0.9),
/// beta1 (0.9), beta2 (0.999), adam_eps (1e-8), norm_momentum (0.1),
/// norm_eps (1e-5), dtype (f64).
struct ExperimentConfig {
  LayerConfig layer;  // for a block: the first layer, I -> hidden_dim
  std::size_t output_dim = 0;  // width of the model output
  std::optional<std::size_t> hidden_dim;
  Pointwise hidden_activation = Pointwise::gelu;
  InitConfig init;
  TrainConfig train;
  std::string dtype = "f64";
};

ExperimentConfig parse_config_text(const std::string& text);
/// ConfigError on unreadable files as well as malformed content.
ExperimentConfig parse_config(const std::filesystem::path& path);

/// Single gated layer, or when hidden_dim is set a block whose second
/// layer (hidden_dim -> output_dim, same kind, experts and ranks) is
/// ungated. Seeded from init.seed; the second layer uses seed + 1.
template <typename T>
Model<T> build_model(const ExperimentConfig& config);

}  // namespace mumoe
