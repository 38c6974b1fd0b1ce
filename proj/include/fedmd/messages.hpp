// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <variant>
#include <vector>

#include "fedmd/tensor.hpp"

namespace fedmd {

/// Indices into the public dataset used for one round's communication.
struct SubsetSelection {
  std::uint32_t round = 0;
  std::vector<std::uint32_t> indices;

  friend bool operator==(const SubsetSelection&, const SubsetSelection&) = default;
};

/// A party's raw logits on the round's subset, |subset| x C.
struct ScoreMatrix {
  std::uint32_t round = 0;
  std::uint32_t party = 0;
  Tensor scores;

  friend bool operator==(const ScoreMatrix&, const ScoreMatrix&) = default;
};

/// The server's weighted consensus of all score matrices.
struct ConsensusTargets {
  std::uint32_t round = 0;
  Tensor targets;

  friend bool operator==(const ConsensusTargets&, const ConsensusTargets&) = default;
};

struct RoundComplete {
  std::uint32_t round = 0;

  friend bool operator==(const RoundComplete&, const RoundComplete&) = default;
};

// Wire names: ScoreReport, ConsensusBroadcast, SubsetAnnouncement, RoundComplete.
using Message = std::variant<ScoreMatrix, ConsensusTargets, SubsetSelection, RoundComplete>;

}  // namespace fedmd
