// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "fedmd/adam.hpp"
#include "fedmd/dataset.hpp"
#include "fedmd/loss.hpp"
#include "fedmd/network.hpp"
#include "fedmd/rng.hpp"

namespace fedmd {

struct TrainReport {
  std::vector<double> epoch_losses;
  std::size_t epochs_completed = 0;
  // Loss of the very first minibatch, measured before any update.
  std::optional<double> initial_loss;

  double final_loss() const { return epoch_losses.empty() ? 0.0 : epoch_losses.back(); }
};

/// Minibatch cross-entropy descent. Each epoch reshuffles with `rng`.
TrainReport train_supervised(Network& net, const Dataset& data, std::size_t epochs,
                             std::size_t batch_size, AdamState& opt, Rng& rng);

/// Minibatch descent of the distillation loss towards `targets` (one row per input).
TrainReport train_distill(Network& net, const Tensor& inputs, const Tensor& targets,
                          std::size_t epochs, std::size_t batch_size, AdamState& opt, Rng& rng,
                          DistillLoss kind = DistillLoss::mae);

/// Fraction of rows whose argmax matches the label.
double accuracy(const Network& net, const Dataset& data);

/// "Train to convergence": stop once validation accuracy has not improved by
/// more than min_delta for `patience` consecutive epochs, or at max_epochs.
struct EarlyStopping {
  std::size_t patience = 5;
  double min_delta = 0.001;
  std::size_t max_epochs = 100;

  friend bool operator==(const EarlyStopping&, const EarlyStopping&) = default;
};

TrainReport train_until_converged(Network& net, const Dataset& train, const Dataset& validation,
                                  const EarlyStopping& stopping, std::size_t batch_size,
                                  AdamState& opt, Rng& rng);

}  // namespace fedmd
