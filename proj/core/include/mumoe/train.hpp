#pragma once

#include <cstdint>
#include <vector>

#include "mumoe/dataset.hpp"
#include "mumoe/model.hpp"
#include "mumoe/optimizer.hpp"

namespace mumoe {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;  // shuffling
  OptimConfig optim;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // mean training loss over the epoch's batches
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
};

/// Minibatch training on the train split. Batches are drawn from a seeded
/// shuffle per epoch; a trailing batch of one row is merged into the
/// previous one so batch norm always sees two rows. Accuracies are
/// measured in eval mode after every epoch. When `state` is given it is
/// used (and left updated) so runs can be resumed.
template <typename T>
std::vector<EpochMetrics> train(Model<T>& model, const Dataset& data, const TrainConfig& config,
                                OptimState<T>* state = nullptr);

/// Eval-mode class predictions, argmax with ties to the lowest index.
template <typename T>
std::vector<int> predict(const Model<T>& model, const Tensor<double>& inputs);

struct ClassAccuracy {
  std::vector<double> accuracy;  // 0 for classes without support
  std::vector<std::size_t> support;
  std::vector<std::size_t> correct;

  double overall() const;
};

ClassAccuracy class_accuracy(std::span<const int> predicted, std::span<const int> labels, std::size_t classes);

/// Per-class accuracy on the dataset's test split (all rows when
/// `whole` is set).
template <typename T>
ClassAccuracy evaluate_per_class(const Model<T>& model, const Dataset& data, bool whole = false);

}  // namespace mumoe
