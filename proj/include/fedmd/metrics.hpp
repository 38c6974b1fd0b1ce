// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace fedmd {

enum class RowKind { baseline, round, pooled };

struct MetricsRow {
  RowKind kind = RowKind::baseline;
  std::uint32_t round = 0;  // meaningful for RowKind::round only
  std::uint32_t party = 0;
  double accuracy = 0.0;
  std::optional<double> digest_loss;
  std::optional<double> revisit_loss;
  double wall_ms = 0.0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct MetricsLog {
  std::vector<MetricsRow> rows;
  std::string config_hash;
  std::uint64_t seed = 0;
  std::string version;

  /// Canonical order: baselines, rounds by (round, party), pooled rows.
  void sort();

  /// Throws DataError on accuracies outside [0,1] or duplicate baseline/pooled rows.
  void validate() const;
};

inline constexpr const char* kMetricsCsvHeader = "round,party,accuracy,digest_loss,revisit_loss,wall_ms";

void write_metrics_csv(const MetricsLog& log, std::ostream& out, bool include_wall_time = true);
std::string metrics_csv(const MetricsLog& log, bool include_wall_time = true);

/// Parses rows written by write_metrics_csv (with the wall-time column).
MetricsLog read_metrics_csv(std::istream& in);

/// Equality of everything except wall time and metadata.
bool same_results(const MetricsLog& a, const MetricsLog& b);

struct Summary {
  std::vector<double> baseline;
  std::vector<double> final_accuracy;
  std::vector<double> per_party_gain;
  std::vector<std::optional<double>> per_party_gap_to_pooled;
  double mean_baseline = 0.0;
  double mean_final = 0.0;
  double mean_gain = 0.0;
  std::optional<double> mean_gap_to_pooled;
};

/// gain_k = final_k - baseline_k, gap_k = pooled_k - final_k. final_k is the
/// accuracy at the last recorded round (the baseline when there are none).
Summary summarize(const MetricsLog& log);

std::string format_summary_table(const Summary& summary);

}  // namespace fedmd
