// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "fedmd/error.hpp"
#include "fedmd/protocol.hpp"
#include "support.hpp"

using namespace fedmd;

namespace {

std::vector<double> brute_force(const std::vector<ScoreMatrix>& reports, const std::vector<double>& w) {
  std::vector<double> out(reports.front().scores.size(), 0.0);
  for (const ScoreMatrix& r : reports) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w[r.party] * static_cast<double>(r.scores.values()[i]);
  }
  return out;
}

struct Problem {
  PublicData pub;
  std::vector<Dataset> privates;
  Dataset test;
};

Problem small_problem(std::size_t parties, std::uint64_t seed) {
  Problem p;
  Dataset all = BlobGenerator(4, 6, 3.0, seed).draw(100, seed + 1, "public");
  Rng rng(seed);
  auto [train, validation] = split(all, 0.1, rng);
  p.pub = PublicData{all, train, validation};
  BlobGenerator priv(4, 6, 1.5, seed + 2);
  PartitionPlan plan;
  plan.parties = parties;
  plan.seed = seed;
  p.privates = partition_iid(priv.draw(20, seed + 3, "private"), plan).parties;
  p.test = priv.draw(50, seed + 4, "test");
  return p;
}

CollaborationConfig small_config(std::size_t parties, std::size_t rounds) {
  CollaborationConfig c;
  c.parties = parties;
  c.rounds = rounds;
  c.subset_size = 64;
  c.digest_epochs = 2;
  c.digest_batch_size = 16;
  c.revisit_batch_size = 4;
  c.transfer_stopping.max_epochs = 20;
  c.seed = 5;
  return c;
}

std::vector<PartySetup> setups(const Problem& p, std::uint64_t seed) {
  std::vector<PartySetup> out;
  for (std::size_t k = 0; k < p.privates.size(); ++k) {
    Rng rng(seed + k);
    const std::vector<std::size_t> hidden{8 + 4 * k};
    out.push_back({Network::mlp(6, hidden, 4, rng), p.privates[k], party_seed(seed, static_cast<std::uint32_t>(k))});
  }
  return out;
}

}  // namespace

TEST_CASE("aggregate equals a float64 weighted sum") {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> dim(1, 16);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 1 + trial % 8;
    const std::size_t rows = dim(rng), cols = dim(rng);
    std::vector<ScoreMatrix> reports;
    for (std::size_t k = 0; k < m; ++k) {
      reports.push_back({3, static_cast<std::uint32_t>(k), test::random_matrix(rows, cols, rng, 20.0)});
    }
    std::vector<double> raw(m);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& w : raw) w = u(rng);
    const std::vector<double> w = normalize_weights(raw);
    ConsensusTargets c = aggregate(reports, w);
    CHECK(c.round == 3);
    CHECK(c.targets.rows() == rows);
    const std::vector<double> ref = brute_force(reports, w);
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(c.targets.values()[i] - ref[i]) < 1e-6);
  }
}

TEST_CASE("aggregate at large magnitudes is the float64 mean rounded once") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t m = 1 + trial % 8;
    std::vector<ScoreMatrix> reports;
    for (std::size_t k = 0; k < m; ++k) {
      reports.push_back({1, static_cast<std::uint32_t>(k), test::random_matrix(8, 5, rng, 1e4)});
    }
    const std::vector<double> w(m, 1.0 / static_cast<double>(m));
    ConsensusTargets c = aggregate(reports, w);
    const std::vector<double> ref = brute_force(reports, w);
    for (std::size_t i = 0; i < ref.size(); ++i) {
      const float want = static_cast<float>(ref[i]);
      const float got = c.targets.values()[i];
      CHECK((got == want || got == std::nextafter(want, got)));
    }
  }
}

TEST_CASE("aggregate: one-hot weights and party order") {
  std::mt19937_64 rng(2);
  std::vector<ScoreMatrix> reports;
  for (std::uint32_t k = 0; k < 4; ++k) reports.push_back({1, k, test::random_matrix(5, 3, rng)});
  for (std::size_t hot = 0; hot < 4; ++hot) {
    std::vector<double> w(4, 0.0);
    w[hot] = 1.0;
    CHECK(aggregate(reports, w).targets == reports[hot].scores);
  }
  const std::vector<double> w{0.1, 0.2, 0.3, 0.4};
  const Tensor expect = aggregate(reports, w).targets;
  std::vector<ScoreMatrix> shuffled = reports;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  std::reverse(shuffled.begin(), shuffled.end());
  CHECK(aggregate(shuffled, w).targets == expect);
}

TEST_CASE("aggregate rejects inconsistent reports") {
  std::mt19937_64 rng(3);
  const std::vector<double> w{0.5, 0.5};
  std::vector<ScoreMatrix> ok{{1, 0, test::random_matrix(2, 2, rng)}, {1, 1, test::random_matrix(2, 2, rng)}};

  auto dup = ok;
  dup[1].party = 0;
  CHECK_THROWS_AS(aggregate(dup, w), ProtocolError);
  auto unknown = ok;
  unknown[1].party = 7;
  CHECK_THROWS_AS(aggregate(unknown, w), ProtocolError);
  auto round = ok;
  round[1].round = 2;
  CHECK_THROWS_AS(aggregate(round, w), ProtocolError);
  auto shape = ok;
  shape[1].scores = test::random_matrix(2, 3, rng);
  CHECK_THROWS_AS(aggregate(shape, w), ProtocolError);
  std::vector<ScoreMatrix> missing{ok[0]};
  CHECK_THROWS_AS(aggregate(missing, w), ProtocolError);
}

TEST_CASE("weights configuration") {
  CollaborationConfig c;
  c.parties = 3;
  CHECK(c.effective_weights() == std::vector<double>(3, 1.0 / 3.0));
  c.weights = {0.5, 0.5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.weights = {0.5, 0.25, 0.5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.weights = {0.5, 0.25, 0.25};
  CHECK_NOTHROW(c.validate());
  const std::vector<double> raw{2.0, 1.0, 1.0};
  CHECK(normalize_weights(raw) == std::vector<double>{0.5, 0.25, 0.25});
  const std::vector<double> zero{0.0, 0.0};
  CHECK_THROWS_AS(normalize_weights(zero), ConfigError);
}

TEST_CASE("subset selection") {
  Rng rng(9);
  SubsetSelection s = select_subset(100, 30, rng, 4);
  CHECK(s.round == 4);
  CHECK(s.indices.size() == 30);
  std::set<std::uint32_t> distinct(s.indices.begin(), s.indices.end());
  CHECK(distinct.size() == 30);
  CHECK(*distinct.rbegin() < 100);
  CHECK_THROWS_AS(select_subset(10, 11, rng), ConfigError);
  CHECK_THROWS_AS(select_subset(10, 0, rng), ConfigError);

  CollaborationConfig c;
  c.subset_size = 5000;
  CHECK(c.effective_subset_size(3000) == 3000);
  CHECK(c.effective_revisit_batch(18) == 18);
  CHECK(c.effective_revisit_batch(100) == 32);
}

TEST_CASE("every public index is equally likely to be selected") {
  const std::size_t n = 100, size = 10, trials = 20000;
  std::vector<std::size_t> hits(n, 0);
  for (std::size_t t = 0; t < trials; ++t) {
    Rng rng = derive_rng(123, "trial", t);
    for (auto i : select_subset(n, size, rng).indices) ++hits[i];
  }
  for (std::size_t i = 0; i < n; ++i) {
    CHECK(static_cast<double>(hits[i]) / trials == doctest::Approx(0.1).epsilon(0.1));
  }
}

TEST_CASE("scores are the black-box logits on the subset") {
  Problem p = small_problem(1, 3);
  Rng rng(4);
  const std::vector<std::size_t> hidden{7};
  Network net = Network::mlp(6, hidden, 4, rng);
  SubsetSelection sel{2, {5, 0, 17}};
  ScoreMatrix s = compute_scores(net, p.pub.all, sel, 9);
  CHECK(s.party == 9);
  CHECK(s.round == 2);
  std::vector<std::size_t> rows{5, 0, 17};
  CHECK(s.scores == forward(net, p.pub.all.features.gather_rows(rows)));
}

TEST_CASE("transfer learning improves on the public task and keeps a snapshot") {
  Problem p = small_problem(1, 11);
  auto s = setups(p, 1);
  CollaborationConfig c = small_config(1, 0);
  PartyState party(0, s[0].net, s[0].private_data, c.optimizer, s[0].seed);
  const double before = accuracy(party.net, p.pub.validation);
  TransferResult t = transfer_learn(party, p.pub, c);
  CHECK(t.public_phase.epochs_completed >= 1);
  CHECK(t.private_phase.epochs_completed >= 1);
  CHECK(accuracy(t.after_public, p.pub.validation) > std::max(0.35, before));
  CHECK(t.opt_after_public.step > 0);
  CHECK(party.opt.step > t.opt_after_public.step);
}

TEST_CASE("rounds follow communicate, aggregate, digest, revisit order") {
  Problem p = small_problem(3, 21);
  EventLog log;
  FedMdOptions options;
  options.log = &log;
  FedMdResult r = run_fedmd(small_config(3, 2), setups(p, 2), p.pub, p.test, options);
  CHECK(r.baselines.size() == 3);
  CHECK(r.rounds.size() == 6);
  CHECK(r.final_networks.size() == 3);

  const auto events = log.events();
  for (std::uint32_t round = 1; round <= 2; ++round) {
    std::ptrdiff_t consensus = -1;
    std::map<std::uint32_t, std::vector<std::pair<EventKind, std::ptrdiff_t>>> by_party;
    for (std::size_t i = 0; i < events.size(); ++i) {
      if (events[i].round != round) continue;
      if (events[i].kind == EventKind::consensus_ready) {
        consensus = static_cast<std::ptrdiff_t>(i);
      } else {
        by_party[events[i].party].emplace_back(events[i].kind, static_cast<std::ptrdiff_t>(i));
      }
    }
    REQUIRE(consensus >= 0);
    CHECK(by_party.size() == 3);
    for (const auto& [party, seq] : by_party) {
      REQUIRE(seq.size() == 4);
      CHECK(seq[0].first == EventKind::digest_begin);
      CHECK(seq[1].first == EventKind::digest_end);
      CHECK(seq[2].first == EventKind::revisit_begin);
      CHECK(seq[3].first == EventKind::revisit_end);
      CHECK(seq[0].second > consensus);
    }
  }
  for (const RoundMetrics& m : r.rounds) {
    CHECK(m.accuracy >= 0.0);
    CHECK(m.accuracy <= 1.0);
    CHECK(std::isfinite(m.digest_loss));
    CHECK(std::isfinite(m.revisit_loss));
  }
}

TEST_CASE("a single party is its own consensus") {
  Problem p = small_problem(1, 31);
  FedMdResult r = run_fedmd(small_config(1, 3), setups(p, 3), p.pub, p.test);
  // Digest can only move the model through its own shuffling noise; the
  // first minibatch sees targets equal to its outputs.
  CHECK(r.rounds.size() == 3);
  CHECK(r.rounds.front().digest_initial_loss == 0.0);
}

TEST_CASE("identical parties stay identical") {
  Problem p = small_problem(2, 41);
  auto s = setups(p, 4);
  s[1] = s[0];
  FedMdResult r = run_fedmd(small_config(2, 2), s, p.pub, p.test);
  CHECK(r.baselines[0].accuracy == r.baselines[1].accuracy);
  for (std::size_t i = 0; i + 1 < r.rounds.size(); i += 2) {
    CHECK(r.rounds[i].party == 0);
    CHECK(r.rounds[i + 1].party == 1);
    CHECK(r.rounds[i].accuracy == r.rounds[i + 1].accuracy);
    CHECK(r.rounds[i].digest_loss == r.rounds[i + 1].digest_loss);
    CHECK(r.rounds[i].revisit_loss == r.rounds[i + 1].revisit_loss);
  }
  CHECK(r.final_networks[0] == r.final_networks[1]);
}

TEST_CASE("configuration mistakes are rejected before training") {
  Problem p = small_problem(2, 51);
  auto s = setups(p, 5);
  CHECK_THROWS_AS(run_fedmd(small_config(3, 1), s, p.pub, p.test), ConfigError);
  Rng rng(1);
  const std::vector<std::size_t> hidden{4};
  s[1].net = Network::mlp(5, hidden, 4, rng);
  CHECK_THROWS_AS(run_fedmd(small_config(2, 1), s, p.pub, p.test), ConfigError);
  CollaborationConfig c = small_config(2, 1);
  c.subset_size = 0;
  CHECK_THROWS_AS(run_fedmd(c, setups(p, 5), p.pub, p.test), ConfigError);
}

TEST_CASE("a party failing mid-round aborts with its id and step") {
  Problem p = small_problem(2, 61);
  CollaborationConfig c = small_config(2, 1);
  auto s = setups(p, 6);

  InProcessBus bus;
  auto listener = bus.serve("coord");
  std::vector<std::unique_ptr<Channel>> server_side;
  std::vector<PartyNode> nodes;
  auto pub = std::make_shared<const Dataset>(p.pub.all);
  auto test_set = std::make_shared<const Dataset>(p.test);
  for (std::uint32_t k = 0; k < 2; ++k) {
    Dataset priv = s[k].private_data;
    if (k == 1) priv.labels[0] = 9;  // beyond the 4 outputs: fails in revisit
    PartyState state(k, s[k].net, priv, c.optimizer, s[k].seed);
    nodes.emplace_back(std::move(state), pub, test_set, c, bus.connect("coord"));
    server_side.push_back(listener->accept());
  }
  Coordinator coordinator(c, p.pub.all.size(), std::move(server_side));
  try {
    run_round(coordinator, nodes, 1);
    FAIL("expected ProtocolError");
  } catch (const ProtocolError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("party 1") != std::string::npos);
    CHECK(msg.find("revisit") != std::string::npos);
  }
}
