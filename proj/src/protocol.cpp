// SPDX-License-Identifier: Apache-2.0
#include "fedmd/protocol.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "fedmd/error.hpp"

namespace fedmd {

namespace {

constexpr double kWeightTolerance = 1e-9;

// A party aborted because its connection went away, usually as a
// consequence of some other participant failing first.
class ConnectionLost : public ProtocolError {
 public:
  using ProtocolError::ProtocolError;
};

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

template <typename T>
T expect(Message msg, std::uint32_t round, const char* what) {
  if (!std::holds_alternative<T>(msg)) {
    throw ProtocolError(std::string("expected ") + what + " in round " + std::to_string(round));
  }
  T value = std::get<T>(std::move(msg));
  if (value.round != round) {
    throw ProtocolError(std::string(what) + " for round " + std::to_string(value.round) + " arrived in round " +
                        std::to_string(round));
  }
  return value;
}

}  // namespace

// --- configuration -----------------------------------------------------------

void CollaborationConfig::validate() const {
  if (parties == 0) throw ConfigError("parties: must be at least 1");
  if (subset_size == 0) throw ConfigError("subset_size: must be at least 1");
  if (digest_batch_size == 0) throw ConfigError("digest_batch_size: must be at least 1");
  if (public_batch_size == 0) throw ConfigError("public_batch_size: must be at least 1");
  if (private_batch_size == 0) throw ConfigError("private_batch_size: must be at least 1");
  if (transfer_stopping.patience == 0) throw ConfigError("transfer_patience: must be at least 1");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("learning_rate: must be positive");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw ConfigError("beta1: must be in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw ConfigError("beta2: must be in [0, 1)");
  if (!(optimizer.epsilon > 0.0)) throw ConfigError("epsilon: must be positive");
  if (!weights.empty()) {
    if (weights.size() != parties) {
      throw ConfigError("weights: " + std::to_string(weights.size()) + " entries for " + std::to_string(parties) +
                        " parties");
    }
    double total = 0.0;
    for (double w : weights) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("weights: every c_k must be finite and >= 0");
      total += w;
    }
    if (std::abs(total - 1.0) > kWeightTolerance) {
      throw ConfigError("weights: must sum to 1 (got " + std::to_string(total) + ")");
    }
  }
}

void CollaborationConfig::validate(std::size_t public_size) const {
  validate();
  if (public_size == 0) throw ConfigError("public dataset is empty");
}

std::vector<double> CollaborationConfig::effective_weights() const {
  if (weights.empty()) return std::vector<double>(parties, 1.0 / static_cast<double>(parties));
  return weights;
}

std::size_t CollaborationConfig::effective_subset_size(std::size_t public_size) const {
  return std::min(subset_size, public_size);
}

std::size_t CollaborationConfig::effective_revisit_batch(std::size_t private_size) const {
  if (revisit_batch_size != 0) return revisit_batch_size;
  return std::max<std::size_t>(1, std::min<std::size_t>(32, private_size));
}

std::vector<double> normalize_weights(std::span<const double> weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("weights: every c_k must be finite and >= 0");
    total += w;
  }
  if (!(total > 0.0)) throw ConfigError("weights: sum must be positive");
  std::vector<double> out(weights.begin(), weights.end());
  for (double& w : out) w /= total;
  return out;
}

PartyState::PartyState(std::uint32_t party_id, Network network, Dataset data, const AdamConfig& adam,
                       std::uint64_t party_seed)
    : id(party_id),
      net(std::move(network)),
      private_data(std::move(data)),
      opt(net.param_count(), adam),
      seed(party_seed) {}

std::uint64_t party_seed(std::uint64_t master, std::uint32_t party) { return derive_seed(master, "party", party); }

// --- single steps ------------------------------------------------------------

TransferResult transfer_learn(PartyState& party, const PublicData& pub, const CollaborationConfig& config) {
  for (const Dataset* d : std::initializer_list<const Dataset*>{&pub.train, &pub.validation, &party.private_data}) {
    if (!d->empty() && d->dim() != party.net.input_dim()) {
      throw ShapeError("party " + std::to_string(party.id) + ": " + d->name + " has " + std::to_string(d->dim()) +
                       " features, network expects " + std::to_string(party.net.input_dim()));
    }
  }
  Rng rng = derive_rng(party.seed, "transfer");
  const EarlyStopping& stop = config.transfer_stopping;
  TrainReport public_phase;
  if (stop.max_epochs > 0) {
    public_phase = train_until_converged(party.net, pub.train, pub.validation, stop, config.public_batch_size,
                                         party.opt, rng);
  }
  TransferResult result{std::move(public_phase), {}, party.net, party.opt, rng};
  if (stop.max_epochs > 0) {
    result.private_phase = train_until_converged(party.net, party.private_data, party.private_data, stop,
                                                 config.private_batch_size, party.opt, rng);
  }
  return result;
}

SubsetSelection select_subset(std::size_t public_size, std::size_t subset_size, Rng& round_rng, std::uint32_t round) {
  if (subset_size == 0) throw ConfigError("subset_size: must be at least 1");
  if (subset_size > public_size) {
    throw ConfigError("subset_size " + std::to_string(subset_size) + " exceeds public dataset size " +
                      std::to_string(public_size));
  }
  if (public_size > 0xffffffffULL) throw ConfigError("public dataset too large for u32 indices");
  // Partial Fisher-Yates: the first subset_size slots are a uniform sample
  // without replacement, in random order.
  std::vector<std::uint32_t> pool(public_size);
  std::iota(pool.begin(), pool.end(), 0U);
  for (std::size_t i = 0; i < subset_size; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, public_size - 1);
    std::swap(pool[i], pool[pick(round_rng)]);
  }
  pool.resize(subset_size);
  return SubsetSelection{round, std::move(pool)};
}

ScoreMatrix compute_scores(const Network& net, const Dataset& pub, const SubsetSelection& selection,
                           std::uint32_t party) {
  std::vector<std::size_t> rows(selection.indices.begin(), selection.indices.end());
  for (std::size_t i : rows) {
    if (i >= pub.size()) {
      throw ProtocolError("subset index " + std::to_string(i) + " outside public dataset of " +
                          std::to_string(pub.size()));
    }
  }
  return ScoreMatrix{selection.round, party, forward(net, pub.features.gather_rows(rows))};
}

ConsensusTargets aggregate(std::span<const ScoreMatrix> reports, std::span<const double> weights) {
  const std::size_t parties = weights.size();
  if (parties == 0) throw ProtocolError("aggregate needs at least one party weight");
  std::vector<const ScoreMatrix*> by_party(parties, nullptr);
  for (const auto& r : reports) {
    if (r.party >= parties) {
      throw ProtocolError("report from unknown party " + std::to_string(r.party));
    }
    if (by_party[r.party]) {
      throw ProtocolError("duplicate report from party " + std::to_string(r.party));
    }
    by_party[r.party] = &r;
  }
  for (std::size_t k = 0; k < parties; ++k) {
    if (!by_party[k]) throw ProtocolError("missing score report from party " + std::to_string(k));
  }
  const ScoreMatrix& first = *by_party[0];
  for (std::size_t k = 1; k < parties; ++k) {
    const ScoreMatrix& r = *by_party[k];
    if (r.round != first.round) {
      throw ProtocolError("party " + std::to_string(k) + " reported round " + std::to_string(r.round) +
                          ", party 0 round " + std::to_string(first.round));
    }
    if (r.scores.rows() != first.scores.rows() || r.scores.cols() != first.scores.cols()) {
      throw ProtocolError("party " + std::to_string(k) + " scores " + shape_string(r.scores.shape()) +
                          " differ from party 0 " + shape_string(first.scores.shape()));
    }
  }
  // Accumulate in float64, party order fixed by id.
  std::vector<double> sum(first.scores.size(), 0.0);
  for (std::size_t k = 0; k < parties; ++k) {
    const auto values = by_party[k]->scores.values();
    const double w = weights[k];
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += w * static_cast<double>(values[i]);
  }
  std::vector<float> out(sum.begin(), sum.end());
  return ConsensusTargets{first.round, Tensor::matrix(first.scores.rows(), first.scores.cols(), std::move(out))};
}

// --- orchestration -----------------------------------------------------------

void EventLog::record(EventKind kind, std::uint32_t round, std::uint32_t party) {
  std::lock_guard lock(mutex_);
  events_.push_back(Event{kind, round, party});
}

std::vector<Event> EventLog::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

Coordinator::Coordinator(CollaborationConfig config, std::size_t public_size,
                         std::vector<std::unique_ptr<Channel>> endpoints, EventLog* log)
    : config_(std::move(config)), public_size_(public_size), endpoints_(std::move(endpoints)), log_(log) {
  config_.validate(public_size_);
  if (endpoints_.size() != config_.parties) {
    throw ConfigError("coordinator has " + std::to_string(endpoints_.size()) + " endpoints for " +
                      std::to_string(config_.parties) + " parties");
  }
  weights_ = config_.effective_weights();
}

ConsensusTargets Coordinator::run_round(std::uint32_t round) {
  try {
    Rng rng = derive_rng(config_.seed, "subset", round);
    const SubsetSelection selection =
        select_subset(public_size_, config_.effective_subset_size(public_size_), rng, round);
    for (auto& ep : endpoints_) ep->send(selection);

    std::vector<ScoreMatrix> reports;
    reports.reserve(endpoints_.size());
    for (std::size_t e = 0; e < endpoints_.size(); ++e) {
      Message msg;
      try {
        msg = endpoints_[e]->recv();
      } catch (const ChannelError& err) {
        throw ProtocolError("round " + std::to_string(round) + ": connection " + std::to_string(e) +
                            " lost before its score report: " + err.what());
      }
      ScoreMatrix report = expect<ScoreMatrix>(std::move(msg), round, "ScoreReport");
      if (report.scores.rows() != selection.indices.size()) {
        throw ProtocolError("party " + std::to_string(report.party) + " reported " +
                            std::to_string(report.scores.rows()) + " rows for a subset of " +
                            std::to_string(selection.indices.size()));
      }
      reports.push_back(std::move(report));
    }
    ConsensusTargets consensus = aggregate(reports, weights_);
    if (log_) log_->record(EventKind::consensus_ready, round);
    for (auto& ep : endpoints_) ep->send(consensus);

    for (std::size_t e = 0; e < endpoints_.size(); ++e) {
      Message msg;
      try {
        msg = endpoints_[e]->recv();
      } catch (const ChannelError& err) {
        throw ProtocolError("round " + std::to_string(round) + ": connection " + std::to_string(e) +
                            " lost before completing the round: " + err.what());
      }
      expect<RoundComplete>(std::move(msg), round, "RoundComplete");
    }
    return consensus;
  } catch (...) {
    close();
    throw;
  }
}

void Coordinator::close() {
  for (auto& ep : endpoints_) ep->close();
}

PartyNode::PartyNode(PartyState state, std::shared_ptr<const Dataset> pub, std::shared_ptr<const Dataset> test,
                     CollaborationConfig config, std::unique_ptr<Channel> channel, EventLog* log)
    : state_(std::move(state)),
      public_(std::move(pub)),
      test_(std::move(test)),
      config_(std::move(config)),
      channel_(std::move(channel)),
      log_(log) {}

RoundMetrics PartyNode::run_round(std::uint32_t round) {
  const char* step = "communicate";
  const std::uint32_t k = state_.id;
  try {
    const SubsetSelection selection = expect<SubsetSelection>(channel_->recv(), round, "SubsetAnnouncement");
    const auto start = std::chrono::steady_clock::now();
    channel_->send(compute_scores(state_.net, *public_, selection, k));

    step = "distribute";
    const ConsensusTargets consensus = expect<ConsensusTargets>(channel_->recv(), round, "ConsensusBroadcast");

    step = "digest";
    Rng rng = derive_rng(state_.seed, "round", round);
    std::vector<std::size_t> rows(selection.indices.begin(), selection.indices.end());
    const Tensor inputs = public_->features.gather_rows(rows);
    if (log_) log_->record(EventKind::digest_begin, round, k);
    const TrainReport digest = train_distill(state_.net, inputs, consensus.targets, config_.digest_epochs,
                                             config_.digest_batch_size, state_.opt, rng, config_.distill_loss);
    if (log_) log_->record(EventKind::digest_end, round, k);

    step = "revisit";
    if (log_) log_->record(EventKind::revisit_begin, round, k);
    const TrainReport revisit =
        train_supervised(state_.net, state_.private_data, config_.revisit_epochs,
                         config_.effective_revisit_batch(state_.private_data.size()), state_.opt, rng);
    if (log_) log_->record(EventKind::revisit_end, round, k);

    step = "evaluate";
    RoundMetrics metrics;
    metrics.round = round;
    metrics.party = k;
    metrics.accuracy = accuracy(state_.net, *test_);
    metrics.digest_loss = digest.final_loss();
    metrics.revisit_loss = revisit.final_loss();
    metrics.digest_initial_loss = digest.initial_loss.value_or(0.0);
    metrics.wall_ms = elapsed_ms(start);

    step = "acknowledge";
    channel_->send(RoundComplete{round});
    return metrics;
  } catch (const ChannelError& e) {
    channel_->close();
    throw ConnectionLost("party " + std::to_string(k) + " lost its connection during " + step + " of round " +
                         std::to_string(round) + ": " + e.what());
  } catch (const std::exception& e) {
    channel_->close();
    throw ProtocolError("party " + std::to_string(k) + " failed during " + step + " of round " +
                        std::to_string(round) + ": " + e.what());
  }
}

void PartyNode::close() { channel_->close(); }

void for_each_party(std::size_t count, const std::function<void(std::size_t)>& fn) {
  std::vector<std::exception_ptr> errors(count);
  {
    std::vector<std::jthread> threads;
    threads.reserve(count);
    for (std::size_t k = 0; k < count; ++k) {
      threads.emplace_back([&, k] {
        try {
          fn(k);
        } catch (...) {
          errors[k] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<RoundMetrics> run_round(Coordinator& server, std::span<PartyNode> parties, std::uint32_t round) {
  std::vector<RoundMetrics> metrics(parties.size());
  std::exception_ptr server_error;
  std::vector<std::exception_ptr> party_errors(parties.size());
  {
    std::vector<std::jthread> threads;
    threads.reserve(parties.size());
    for (std::size_t i = 0; i < parties.size(); ++i) {
      threads.emplace_back([&, i] {
        try {
          metrics[i] = parties[i].run_round(round);
        } catch (...) {
          party_errors[i] = std::current_exception();
        }
      });
    }
    try {
      server.run_round(round);
    } catch (...) {
      server_error = std::current_exception();
      for (auto& p : parties) p.close();
    }
  }
  // Report the root cause: a party's own failure first, then the
  // coordinator's, then parties that merely lost their connection.
  for (auto& e : party_errors) {
    if (!e) continue;
    try {
      std::rethrow_exception(e);
    } catch (const ConnectionLost&) {
    } catch (...) {
      throw;
    }
  }
  if (server_error) std::rethrow_exception(server_error);
  for (auto& e : party_errors) {
    if (e) std::rethrow_exception(e);
  }
  std::sort(metrics.begin(), metrics.end(),
            [](const RoundMetrics& a, const RoundMetrics& b) { return a.party < b.party; });
  return metrics;
}

FedMdResult run_fedmd(const CollaborationConfig& config, std::vector<PartySetup> parties, const PublicData& pub,
                      const Dataset& test, const FedMdOptions& options) {
  config.validate(pub.all.size());
  if (parties.size() != config.parties) {
    throw ConfigError("parties: config says " + std::to_string(config.parties) + " but " +
                      std::to_string(parties.size()) + " were supplied");
  }
  for (std::size_t k = 0; k < parties.size(); ++k) {
    if (parties[k].net.input_dim() != pub.all.dim()) {
      throw ConfigError("party " + std::to_string(k) + " network expects " +
                        std::to_string(parties[k].net.input_dim()) + " features, public data has " +
                        std::to_string(pub.all.dim()));
    }
  }

  std::vector<PartyState> states;
  for (std::size_t k = 0; k < parties.size(); ++k) {
    states.emplace_back(static_cast<std::uint32_t>(k), std::move(parties[k].net), std::move(parties[k].private_data),
                        config.optimizer, parties[k].seed);
  }

  FedMdResult result;
  result.baselines.resize(states.size());
  for_each_party(states.size(), [&](std::size_t k) {
    const auto start = std::chrono::steady_clock::now();
    BaselineResult& b = result.baselines[k];
    b.party = static_cast<std::uint32_t>(k);
    b.transfer = transfer_learn(states[k], pub, config);
    b.accuracy = accuracy(states[k].net, test);
    b.wall_ms = elapsed_ms(start);
  });

  // Channels: each party connects, the coordinator accepts in arrival order.
  InProcessBus bus;
  std::unique_ptr<Listener> listener = options.transport == TransportKind::tcp ? serve_tcp(options.tcp_address)
                                                                               : bus.serve("fedmd-coordinator");
  std::vector<std::unique_ptr<Channel>> party_channels;
  std::vector<std::unique_ptr<Channel>> server_channels;
  for (std::size_t k = 0; k < states.size(); ++k) {
    party_channels.push_back(options.transport == TransportKind::tcp ? connect_tcp(listener->address())
                                                                     : bus.connect(listener->address()));
    server_channels.push_back(listener->accept());
  }

  auto pub_ptr = std::make_shared<const Dataset>(pub.all);
  auto test_ptr = std::make_shared<const Dataset>(test);
  std::vector<PartyNode> nodes;
  for (std::size_t k = 0; k < states.size(); ++k) {
    nodes.emplace_back(std::move(states[k]), pub_ptr, test_ptr, config, std::move(party_channels[k]), options.log);
  }
  Coordinator coordinator(config, pub.all.size(), std::move(server_channels), options.log);

  if (options.observer) options.observer(0, nodes);
  for (std::uint32_t round = 1; round <= config.rounds; ++round) {
    auto metrics = run_round(coordinator, nodes, round);
    result.rounds.insert(result.rounds.end(), metrics.begin(), metrics.end());
    if (options.observer) options.observer(round, nodes);
  }
  coordinator.close();
  for (auto& node : nodes) {
    node.close();
    result.final_networks.push_back(node.state().net);
  }
  return result;
}

}  // namespace fedmd
