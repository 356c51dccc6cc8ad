#include "mumoe/contract.hpp"

#include <array>
#include <string>

namespace mumoe {

template <typename T>
Tensor<T> mode_n_vector_product(const Tensor<T>& t, std::span<const T> v, std::size_t mode) {
  if (mode < 1 || mode > t.order())
    throw ShapeError("mode " + std::to_string(mode) + " out of range for order " +
                     std::to_string(t.order()));
  const std::size_t axis = mode - 1;
  if (v.size() != t.extent(axis))
    throw ShapeError("mode-" + std::to_string(mode) + " product: vector length " +
                     std::to_string(v.size()) + " != extent " + std::to_string(t.extent(axis)));

  Shape out_shape;
  for (std::size_t k = 0; k < t.order(); ++k)
    if (k != axis) out_shape.push_back(t.extent(k));
  if (out_shape.empty()) out_shape.push_back(1);

  // View the tensor as (outer, n, inner) and reduce the middle axis.
  std::size_t outer = 1;
  for (std::size_t k = 0; k < axis; ++k) outer *= t.extent(k);
  const std::size_t n = t.extent(axis);
  const std::size_t inner = t.strides()[axis];

  Tensor<T> out(std::move(out_shape));
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t c = 0; c < inner; ++c) {
      double acc = 0.0;
      for (std::size_t b = 0; b < n; ++b) acc += double(t[(a * n + b) * inner + c]) * double(v[b]);
      out[a * inner + c] = static_cast<T>(acc);
    }
  return out;
}

namespace {

struct ParsedSpec {
  std::vector<std::string> inputs;
  std::string output;
};

ParsedSpec parse_spec(std::string_view spec) {
  ParsedSpec parsed;
  const auto arrow = spec.find("->");
  if (arrow == std::string_view::npos) throw ShapeError("contraction spec needs '->'");
  std::string lhs(spec.substr(0, arrow));
  parsed.output = std::string(spec.substr(arrow + 2));
  std::string term;
  for (char c : lhs) {
    if (c == ',') {
      parsed.inputs.push_back(term);
      term.clear();
    } else if (c != ' ') {
      term.push_back(c);
    }
  }
  parsed.inputs.push_back(term);
  std::erase(parsed.output, ' ');
  return parsed;
}

}  // namespace

template <typename T>
Tensor<T> contract(std::string_view spec, std::span<const Tensor<T>* const> operands) {
  const ParsedSpec parsed = parse_spec(spec);
  if (parsed.inputs.size() != operands.size())
    throw ShapeError("contraction spec has " + std::to_string(parsed.inputs.size()) +
                     " terms but " + std::to_string(operands.size()) + " operands were given");

  constexpr std::size_t kUnset = 0;
  std::array<std::size_t, 128> extent{};
  for (std::size_t op = 0; op < operands.size(); ++op) {
    const auto& term = parsed.inputs[op];
    if (term.size() != operands[op]->order())
      throw ShapeError("term '" + term + "' does not match operand order " +
                       std::to_string(operands[op]->order()));
    for (std::size_t k = 0; k < term.size(); ++k) {
      const auto label = static_cast<unsigned char>(term[k]);
      if (label >= 128) throw ShapeError("contraction labels must be ASCII");
      const std::size_t e = operands[op]->extent(k);
      if (extent[label] != kUnset && extent[label] != e)
        throw ShapeError(std::string("extent mismatch for label '") + term[k] + "'");
      extent[label] = e;
    }
  }

  std::array<bool, 128> in_output{};
  for (char c : parsed.output) {
    const auto label = static_cast<unsigned char>(c);
    if (label >= 128 || extent[label] == kUnset)
      throw ShapeError(std::string("output label '") + c + "' does not appear in any operand");
    if (in_output[label]) throw ShapeError(std::string("repeated output label '") + c + "'");
    in_output[label] = true;
  }

  std::string summed;
  for (const auto& term : parsed.inputs)
    for (char c : term)
      if (!in_output[static_cast<unsigned char>(c)] && summed.find(c) == std::string::npos)
        summed.push_back(c);

  Shape out_shape;
  for (char c : parsed.output) out_shape.push_back(extent[static_cast<unsigned char>(c)]);
  if (out_shape.empty()) out_shape.push_back(1);
  Shape sum_shape;
  for (char c : summed) sum_shape.push_back(extent[static_cast<unsigned char>(c)]);

  // Per operand and per label position, the stride contributed by each
  // output / summed label (zero when the operand does not carry it).
  const std::size_t n_ops = operands.size();
  std::vector<std::vector<std::size_t>> out_stride(n_ops, std::vector<std::size_t>(parsed.output.size(), 0));
  std::vector<std::vector<std::size_t>> sum_stride(n_ops, std::vector<std::size_t>(summed.size(), 0));
  for (std::size_t op = 0; op < n_ops; ++op) {
    const auto& term = parsed.inputs[op];
    for (std::size_t k = 0; k < term.size(); ++k) {
      const std::size_t s = operands[op]->strides()[k];
      if (auto p = parsed.output.find(term[k]); p != std::string::npos) out_stride[op][p] += s;
      if (auto p = summed.find(term[k]); p != std::string::npos) sum_stride[op][p] += s;
    }
  }

  Tensor<T> out(out_shape);
  const std::size_t n_out = parsed.output.empty() ? 1 : out.size();
  const std::size_t n_sum = shape_volume(sum_shape);
  std::vector<std::size_t> out_idx(parsed.output.size(), 0);
  std::vector<std::size_t> sum_idx(summed.size(), 0);
  std::vector<std::size_t> base(n_ops, 0);
  std::vector<std::size_t> offset(n_ops, 0);

  for (std::size_t flat = 0; flat < n_out; ++flat) {
    for (std::size_t op = 0; op < n_ops; ++op) {
      base[op] = 0;
      for (std::size_t p = 0; p < out_idx.size(); ++p) base[op] += out_idx[p] * out_stride[op][p];
    }
    std::fill(sum_idx.begin(), sum_idx.end(), 0);
    double acc = 0.0;
    for (std::size_t s = 0; s < n_sum; ++s) {
      double prod = 1.0;
      for (std::size_t op = 0; op < n_ops; ++op) {
        offset[op] = base[op];
        for (std::size_t p = 0; p < sum_idx.size(); ++p) offset[op] += sum_idx[p] * sum_stride[op][p];
        prod *= double((*operands[op])[offset[op]]);
      }
      acc += prod;
      for (std::size_t p = sum_idx.size(); p-- > 0;) {
        if (++sum_idx[p] < sum_shape[p]) break;
        sum_idx[p] = 0;
      }
    }
    out[flat] = static_cast<T>(acc);
    for (std::size_t p = out_idx.size(); p-- > 0;) {
      if (++out_idx[p] < out_shape[p]) break;
      out_idx[p] = 0;
    }
  }
  return out;
}

template Tensor<float> mode_n_vector_product(const Tensor<float>&, std::span<const float>, std::size_t);
template Tensor<double> mode_n_vector_product(const Tensor<double>&, std::span<const double>, std::size_t);
template Tensor<float> contract(std::string_view, std::span<const Tensor<float>* const>);
template Tensor<double> contract(std::string_view, std::span<const Tensor<double>* const>);

}  // namespace mumoe
