// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "fedmd/adam.hpp"
#include "fedmd/dataset.hpp"
#include "fedmd/loss.hpp"
#include "fedmd/messages.hpp"
#include "fedmd/network.hpp"
#include "fedmd/train.hpp"
#include "fedmd/transport.hpp"

namespace fedmd {

/// Hyperparameters of one collaboration.
struct CollaborationConfig {
  std::size_t parties = 1;
  std::size_t rounds = 0;
  // Clamped to the public set size by effective_subset_size().
  std::size_t subset_size = 5000;
  // Consensus weights c_k; empty means uniform 1/m.
  std::vector<double> weights;
  std::size_t digest_epochs = 1;
  std::size_t digest_batch_size = 256;
  std::size_t revisit_epochs = 2;
  // 0 means min(32, N_k).
  std::size_t revisit_batch_size = 0;
  DistillLoss distill_loss = DistillLoss::mae;
  AdamConfig optimizer;
  EarlyStopping transfer_stopping;
  std::size_t public_batch_size = 32;
  std::size_t private_batch_size = 4;
  std::uint64_t seed = 0;

  /// Throws ConfigError naming the violated constraint.
  void validate() const;
  void validate(std::size_t public_size) const;

  std::vector<double> effective_weights() const;
  std::size_t effective_subset_size(std::size_t public_size) const;
  std::size_t effective_revisit_batch(std::size_t private_size) const;

  friend bool operator==(const CollaborationConfig&, const CollaborationConfig&) = default;
};

/// Scales non-negative weights to sum to one.
std::vector<double> normalize_weights(std::span<const double> weights);

/// One participant: its black-box model, private data and optimizer.
/// `seed` keys the party's own random streams (transfer shuffles, then one
/// stream per round).
struct PartyState {
  std::uint32_t id = 0;
  Network net;
  Dataset private_data;
  AdamState opt;
  std::uint64_t seed = 0;

  PartyState(std::uint32_t party_id, Network network, Dataset data, const AdamConfig& adam, std::uint64_t party_seed);
};

/// Default party stream seed, derived from (master seed, party id).
std::uint64_t party_seed(std::uint64_t master, std::uint32_t party);

/// Reports of the two transfer-learning phases, plus the snapshot taken
/// between them (used to branch off the pooled-data baseline).
struct TransferResult {
  TrainReport public_phase;
  TrainReport private_phase;
  Network after_public;
  AdamState opt_after_public;
  Rng rng_after_public;
};

/// Public data splits used during transfer learning.
struct PublicData {
  Dataset all;         // D_0, the communication basis
  Dataset train;       // transfer-learning train split
  Dataset validation;  // transfer-learning early-stopping split
};

/// Trains on the public split to convergence, then on the private set. The
/// private phase validates on the private set itself.
TransferResult transfer_learn(PartyState& party, const PublicData& pub, const CollaborationConfig& config);

SubsetSelection select_subset(std::size_t public_size, std::size_t subset_size, Rng& round_rng,
                              std::uint32_t round = 0);

ScoreMatrix compute_scores(const Network& net, const Dataset& pub, const SubsetSelection& selection,
                           std::uint32_t party);

/// Weighted elementwise sum of the score matrices. weights[k] belongs to
/// party k; every party in [0, weights.size()) must report exactly once.
ConsensusTargets aggregate(std::span<const ScoreMatrix> reports, std::span<const double> weights);

// --- round orchestration ---------------------------------------------------

enum class EventKind { consensus_ready, digest_begin, digest_end, revisit_begin, revisit_end };

struct Event {
  EventKind kind;
  std::uint32_t round;
  std::uint32_t party;  // unused for consensus_ready
};

/// Thread-safe, append-only record of protocol steps.
class EventLog {
 public:
  void record(EventKind kind, std::uint32_t round, std::uint32_t party = 0);
  std::vector<Event> events() const;

 private:
  mutable std::mutex mutex_;
  std::vector<Event> events_;
};

struct RoundMetrics {
  std::uint32_t round = 0;
  std::uint32_t party = 0;
  double accuracy = 0.0;
  double digest_loss = 0.0;
  double revisit_loss = 0.0;
  // First digest minibatch loss before any update.
  double digest_initial_loss = 0.0;
  double wall_ms = 0.0;
};

/// Server side: selects subsets, gathers score reports, broadcasts consensus.
/// It never sees anything but score matrices.
class Coordinator {
 public:
  Coordinator(CollaborationConfig config, std::size_t public_size,
              std::vector<std::unique_ptr<Channel>> endpoints, EventLog* log = nullptr);

  /// One Communicate/Aggregate/Distribute exchange, waiting for every party
  /// to acknowledge the end of its Digest/Revisit. Rounds count from 1.
  ConsensusTargets run_round(std::uint32_t round);

  void close();

 private:
  CollaborationConfig config_;
  std::size_t public_size_;
  std::vector<std::unique_ptr<Channel>> endpoints_;
  std::vector<double> weights_;
  EventLog* log_;
};

/// Party side of the loop body.
class PartyNode {
 public:
  PartyNode(PartyState state, std::shared_ptr<const Dataset> pub, std::shared_ptr<const Dataset> test,
            CollaborationConfig config, std::unique_ptr<Channel> channel, EventLog* log = nullptr);

  /// Communicate, Distribute (receive), Digest, Revisit, then evaluate.
  RoundMetrics run_round(std::uint32_t round);

  void close();

  const PartyState& state() const noexcept { return state_; }
  PartyState& state() noexcept { return state_; }

 private:
  PartyState state_;
  std::shared_ptr<const Dataset> public_;
  std::shared_ptr<const Dataset> test_;
  CollaborationConfig config_;
  std::unique_ptr<Channel> channel_;
  EventLog* log_;
};

/// Runs one round with every party on its own thread and the coordinator on
/// the calling thread. Any failure aborts the round with a ProtocolError
/// naming the party and the step.
std::vector<RoundMetrics> run_round(Coordinator& server, std::span<PartyNode> parties, std::uint32_t round);

enum class TransportKind { in_process, tcp };

struct PartySetup {
  Network net;
  Dataset private_data;
  std::uint64_t seed = 0;
};

struct BaselineResult {
  std::uint32_t party = 0;
  double accuracy = 0.0;
  double wall_ms = 0.0;
  TransferResult transfer;
};

struct FedMdResult {
  std::vector<BaselineResult> baselines;
  std::vector<RoundMetrics> rounds;  // ordered by (round, party)
  std::vector<Network> final_networks;
};

/// Observer invoked after transfer learning and after each round, with the
/// current networks, for extra evaluations.
using RoundObserver = std::function<void(std::uint32_t round, std::span<const PartyNode> parties)>;

struct FedMdOptions {
  TransportKind transport = TransportKind::in_process;
  std::string tcp_address = "127.0.0.1:0";
  EventLog* log = nullptr;
  RoundObserver observer;
};

/// Transfer learning for all parties, then config.rounds rounds.
FedMdResult run_fedmd(const CollaborationConfig& config, std::vector<PartySetup> parties,
                      const PublicData& pub, const Dataset& test, const FedMdOptions& options = {});

/// Runs `fn(k)` for k in [0, count) on separate threads and rethrows the
/// first failure (lowest index).
void for_each_party(std::size_t count, const std::function<void(std::size_t)>& fn);

}  // namespace fedmd
