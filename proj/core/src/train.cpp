#include "mumoe/train.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "mumoe/loss.hpp"

namespace mumoe {

double ClassAccuracy::overall() const {
  const auto n = std::accumulate(support.begin(), support.end(), std::size_t{0});
  const auto k = std::accumulate(correct.begin(), correct.end(), std::size_t{0});
  return n == 0 ? 0.0 : double(k) / double(n);
}

ClassAccuracy class_accuracy(std::span<const int> predicted, std::span<const int> labels, std::size_t classes) {
  if (predicted.size() != labels.size()) throw ShapeError("prediction and label counts differ");
  ClassAccuracy acc;
  acc.support.assign(classes, 0);
  acc.correct.assign(classes, 0);
  for (std::size_t k = 0; k < labels.size(); ++k) {
    const auto y = std::size_t(labels[k]);
    if (y >= classes) throw DomainError("label out of range");
    ++acc.support[y];
    if (predicted[k] == labels[k]) ++acc.correct[y];
  }
  for (std::size_t c = 0; c < classes; ++c)
    acc.accuracy.push_back(acc.support[c] ? double(acc.correct[c]) / double(acc.support[c]) : 0.0);
  return acc;
}

template <typename T>
std::vector<int> predict(const Model<T>& model, const Tensor<double>& inputs) {
  std::vector<int> out;
  if (inputs.empty()) return out;
  const Tensor<T> logits = model_forward(model, inputs_as<T>(inputs), Mode::eval);
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.cols(); ++c)
      if (logits(b, c) > logits(b, best)) best = c;
    out.push_back(int(best));
  }
  return out;
}

template <typename T>
ClassAccuracy evaluate_per_class(const Model<T>& model, const Dataset& data, bool whole) {
  const Dataset part = whole ? data : data.test_split();
  return class_accuracy(predict(model, part.inputs), part.labels, data.classes);
}

template <typename T>
std::vector<EpochMetrics> train(Model<T>& model, const Dataset& data, const TrainConfig& config,
                                OptimState<T>* state) {
  data.validate();
  model.validate();
  config.optim.validate();
  if (config.batch_size == 0) throw ConfigError("batch_size must be >= 1");
  if (data.features() != model.input_dim())
    throw ShapeError("dataset has " + std::to_string(data.features()) + " features, model expects " +
                     std::to_string(model.input_dim()));
  if (data.classes > model.output_dim()) throw ShapeError("model has fewer outputs than the dataset has classes");

  OptimState<T> local;
  local.config = config.optim;
  OptimState<T>& opt = state ? *state : local;
  if (state && opt.slot1.empty()) opt.config = config.optim;

  const Dataset train_set = data.train_split();
  const Dataset test_set = data.test_split();
  const Tensor<T> inputs = inputs_as<T>(train_set.inputs);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(config.seed);

  std::vector<EpochMetrics> metrics;
  for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch_size)
      batches.emplace_back(lo, std::min(order.size(), lo + config.batch_size));
    if (batches.size() > 1 && batches.back().second - batches.back().first < 2) {
      batches[batches.size() - 2].second = batches.back().second;
      batches.pop_back();
    }

    double loss_sum = 0.0;
    std::size_t seen = 0;
    for (auto [lo, hi] : batches) {
      const std::size_t n = hi - lo;
      Tensor<T> z({n, inputs.cols()});
      std::vector<int> y(n);
      for (std::size_t k = 0; k < n; ++k) {
        std::copy_n(inputs.row(order[lo + k]).begin(), inputs.cols(), z.row(k).begin());
        y[k] = train_set.labels[order[lo + k]];
      }
      ModelCache<T> cache;
      const Tensor<T> logits = model_forward(model, z, Mode::training, &cache);
      const LossResult<T> loss = cross_entropy(logits, y);
      const ModelGrads<T> grads = model_backward(model, cache, loss.grad);
      const auto params = model.parameters();
      optimizer_step<T>(opt, params, grads.params);
      commit_running_stats(model, cache);
      loss_sum += loss.loss * double(n);
      seen += n;
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.loss = seen ? loss_sum / double(seen) : 0.0;
    m.train_accuracy = class_accuracy(predict(model, train_set.inputs), train_set.labels, data.classes).overall();
    if (test_set.size())
      m.test_accuracy = class_accuracy(predict(model, test_set.inputs), test_set.labels, data.classes).overall();
    metrics.push_back(m);
  }
  return metrics;
}

#define MUMOE_INSTANTIATE(T)                                                                        \
  template std::vector<EpochMetrics> train(Model<T>&, const Dataset&, const TrainConfig&, OptimState<T>*); \
  template std::vector<int> predict(const Model<T>&, const Tensor<double>&);                         \
  template ClassAccuracy evaluate_per_class(const Model<T>&, const Dataset&, bool);

MUMOE_INSTANTIATE(float)
MUMOE_INSTANTIATE(double)

#undef MUMOE_INSTANTIATE

}  // namespace mumoe
