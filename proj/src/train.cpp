// SPDX-License-Identifier: Apache-2.0
#include "fedmd/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedmd/error.hpp"

namespace fedmd {

namespace {

template <typename StepFn>
TrainReport run_epochs(Network& net, std::size_t rows, std::size_t epochs, std::size_t batch_size, AdamState& opt,
                       Rng& rng, std::size_t first_epoch, StepFn&& loss_for_batch) {
  if (batch_size == 0) {
    throw ConfigError("batch_size must be at least 1");
  }
  if (rows == 0) {
    throw ConfigError("cannot train on an empty dataset");
  }
  if (opt.m.size() != net.param_count()) {
    throw ShapeError("optimizer state sized " + std::to_string(opt.m.size()) + " for " +
                     std::to_string(net.param_count()) + " parameters");
  }
  TrainReport report;
  std::vector<std::size_t> order(rows);
  ForwardCache cache;
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    double weighted = 0.0;
    for (std::size_t start = 0; start < rows; start += batch_size) {
      const std::size_t end = std::min(rows, start + batch_size);
      std::span<const std::size_t> batch(order.data() + start, end - start);
      LossResult loss = loss_for_batch(batch, cache);
      if (!std::isfinite(loss.loss)) {
        throw NumericError("non-finite loss in epoch " + std::to_string(first_epoch + epoch + 1));
      }
      if (!report.initial_loss) report.initial_loss = loss.loss;
      weighted += loss.loss * static_cast<double>(batch.size());
      const std::vector<float> grads = backward(net, cache, loss.grad);
      adam_step(net.params(), grads, opt);
    }
    report.epoch_losses.push_back(weighted / static_cast<double>(rows));
    report.epochs_completed += 1;
  }
  return report;
}

TrainReport supervised_epochs(Network& net, const Dataset& data, std::size_t epochs, std::size_t batch_size,
                              AdamState& opt, Rng& rng, std::size_t first_epoch) {
  if (data.empty()) {
    throw ConfigError("cannot train on an empty dataset" + (data.name.empty() ? "" : " (" + data.name + ")"));
  }
  std::vector<int> labels;
  return run_epochs(net, data.size(), epochs, batch_size, opt, rng, first_epoch,
                    [&](std::span<const std::size_t> batch, ForwardCache& cache) {
                      const Tensor inputs = data.features.gather_rows(batch);
                      labels.resize(batch.size());
                      for (std::size_t i = 0; i < batch.size(); ++i) labels[i] = data.labels[batch[i]];
                      return cross_entropy(forward(net, inputs, &cache), labels);
                    });
}

}  // namespace

TrainReport train_supervised(Network& net, const Dataset& data, std::size_t epochs, std::size_t batch_size,
                             AdamState& opt, Rng& rng) {
  return supervised_epochs(net, data, epochs, batch_size, opt, rng, 0);
}

TrainReport train_distill(Network& net, const Tensor& inputs, const Tensor& targets, std::size_t epochs,
                          std::size_t batch_size, AdamState& opt, Rng& rng, DistillLoss kind) {
  if (inputs.rows() != targets.rows()) {
    throw ShapeError("train_distill: " + std::to_string(inputs.rows()) + " inputs but " +
                     std::to_string(targets.rows()) + " target rows");
  }
  if (targets.cols() != net.output_dim()) {
    throw ShapeError("train_distill: targets have " + std::to_string(targets.cols()) +
                     " columns but network outputs " + std::to_string(net.output_dim()));
  }
  return run_epochs(net, inputs.rows(), epochs, batch_size, opt, rng, 0,
                    [&](std::span<const std::size_t> batch, ForwardCache& cache) {
                      const Tensor x = inputs.gather_rows(batch);
                      const Tensor t = targets.gather_rows(batch);
                      return distill_loss(forward(net, x, &cache), t, kind);
                    });
}

double accuracy(const Network& net, const Dataset& data) {
  if (data.empty()) {
    throw ConfigError("accuracy of an empty dataset" + (data.name.empty() ? "" : " (" + data.name + ")"));
  }
  const std::vector<int> predicted = predict(net, data.features);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] == data.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

TrainReport train_until_converged(Network& net, const Dataset& train, const Dataset& validation,
                                  const EarlyStopping& stopping, std::size_t batch_size, AdamState& opt, Rng& rng) {
  TrainReport report;
  double best = -1.0;
  std::size_t stale = 0;
  for (std::size_t epoch = 0; epoch < stopping.max_epochs; ++epoch) {
    TrainReport one = supervised_epochs(net, train, 1, batch_size, opt, rng, epoch);
    if (!report.initial_loss) report.initial_loss = one.initial_loss;
    report.epoch_losses.push_back(one.epoch_losses.front());
    report.epochs_completed += 1;
    const double acc = accuracy(net, validation);
    if (acc > best + stopping.min_delta) {
      best = acc;
      stale = 0;
    } else if (++stale >= stopping.patience) {
      break;
    }
  }
  return report;
}

}  // namespace fedmd
