#include "mumoe/cost_model.hpp"

#include <algorithm>

namespace mumoe {

namespace {

std::uint64_t grid_volume(const LayerConfig& c) {
  std::uint64_t v = 1;
  for (auto n : c.experts) v *= n;
  return v;
}

}  // namespace

ParamBreakdown param_count(const LayerConfig& c) {
  c.validate();
  ParamBreakdown p;
  const std::uint64_t in = c.folded_input_dim(), out = c.output_dim;
  const std::size_t levels = c.levels();
  switch (c.kind) {
    case LayerKind::dense:
      p.weights = grid_volume(c) * in * out;
      break;
    case LayerKind::cp: {
      std::uint64_t modes = in + out;
      for (auto n : c.experts) modes += n;
      p.weights = c.cp_rank * modes;
      break;
    }
    case LayerKind::tr: {
      const auto& r = c.tr_ranks;
      for (std::size_t e = 0; e < levels; ++e) p.weights += std::uint64_t(r[e]) * c.experts[e] * r[e + 1];
      p.weights += std::uint64_t(r[levels]) * in * r[levels + 1];
      p.weights += std::uint64_t(r[levels + 1]) * out * r[0];
      break;
    }
  }
  if (c.gated) {
    for (auto n : c.experts) {
      p.gating += std::uint64_t(c.input_dim) * n;
      if (c.gate_norm != NormKind::none) p.norm += 2 * std::uint64_t(n);
    }
  }
  return p;
}

std::uint64_t flop_estimate(const LayerConfig& c) {
  c.validate();
  const std::uint64_t in = c.folded_input_dim(), out = c.output_dim;
  const std::size_t levels = c.levels();
  switch (c.kind) {
    case LayerKind::dense:
      return grid_volume(c) * in * out;
    case LayerKind::cp: {
      std::uint64_t modes = in + out;
      for (auto n : c.experts) modes += n;
      return c.cp_rank * modes;
    }
    case LayerKind::tr: {
      const auto& r = c.tr_ranks;
      std::uint64_t f = 0;
      for (std::size_t e = 0; e < levels; ++e) f += std::uint64_t(r[e]) * c.experts[e] * r[e + 1];
      f += std::uint64_t(r[levels]) * in * r[levels + 1];
      // chaining the E + 1 contracted matrices
      for (std::size_t k = 1; k <= levels; ++k) f += std::uint64_t(r[0]) * r[k] * r[k + 1];
      f += std::uint64_t(r[0]) * out * r[levels + 1];
      return f;
    }
  }
  return 0;
}

std::uint64_t naive_flop_estimate(const LayerConfig& c) {
  c.validate();
  const std::uint64_t in = c.folded_input_dim(), out = c.output_dim;
  const std::uint64_t contraction = grid_volume(c) * in * out;
  switch (c.kind) {
    case LayerKind::dense:
      return contraction;
    case LayerKind::cp:
      return c.cp_rank * contraction + contraction;
    case LayerKind::tr: {
      const auto& r = c.tr_ranks;
      const std::size_t levels = c.levels();
      std::vector<std::uint64_t> dims(c.experts.begin(), c.experts.end());
      dims.push_back(in);
      std::uint64_t f = 0, merged = dims[0];
      for (std::size_t k = 1; k <= levels; ++k) {
        f += std::uint64_t(r[0]) * merged * r[k] * dims[k] * r[k + 1];
        merged *= dims[k];
      }
      f += merged * r[0] * r[levels + 1] * out;
      return f + contraction;
    }
  }
  return 0;
}

std::uint64_t rank_bound(const LayerConfig& c) {
  c.validate();
  const std::uint64_t io = std::min<std::uint64_t>(c.folded_input_dim(), c.output_dim);
  switch (c.kind) {
    case LayerKind::dense:
      return io;
    case LayerKind::cp:
      return std::min<std::uint64_t>(c.cp_rank, io);
    case LayerKind::tr: {
      const auto& r = c.tr_ranks;
      const std::size_t levels = c.levels();
      const std::uint64_t inner = *std::min_element(r.begin(), r.begin() + levels + 1);
      return std::min<std::uint64_t>(r[levels + 1] * inner, io);
    }
  }
  return 0;
}

}  // namespace mumoe
