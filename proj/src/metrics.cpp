// SPDX-License-Identifier: Apache-2.0
#include "fedmd/metrics.hpp"

#include <algorithm>
#include <charconv>
#include <iomanip>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "fedmd/error.hpp"

namespace fedmd {

namespace {

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_double(const std::string& text, std::size_t line, const char* column) {
  double v = 0.0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw DataError("metrics line " + std::to_string(line) + ": bad " + column + " '" + text + "'");
  }
  return v;
}

std::uint32_t parse_u32(const std::string& text, std::size_t line, const char* column) {
  std::uint32_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw DataError("metrics line " + std::to_string(line) + ": bad " + column + " '" + text + "'");
  }
  return v;
}

int kind_rank(RowKind k) {
  switch (k) {
    case RowKind::baseline: return 0;
    case RowKind::round: return 1;
    case RowKind::pooled: return 2;
  }
  return 3;
}

}  // namespace

void MetricsLog::sort() {
  std::stable_sort(rows.begin(), rows.end(), [](const MetricsRow& a, const MetricsRow& b) {
    if (kind_rank(a.kind) != kind_rank(b.kind)) return kind_rank(a.kind) < kind_rank(b.kind);
    if (a.round != b.round) return a.round < b.round;
    return a.party < b.party;
  });
}

void MetricsLog::validate() const {
  std::set<std::uint32_t> baseline, pooled;
  for (const auto& r : rows) {
    if (!(r.accuracy >= 0.0 && r.accuracy <= 1.0)) {
      throw DataError("accuracy " + format_double(r.accuracy) + " of party " + std::to_string(r.party) +
                      " outside [0, 1]");
    }
    if (r.kind == RowKind::baseline && !baseline.insert(r.party).second) {
      throw DataError("party " + std::to_string(r.party) + " has more than one baseline row");
    }
    if (r.kind == RowKind::pooled && !pooled.insert(r.party).second) {
      throw DataError("party " + std::to_string(r.party) + " has more than one pooled row");
    }
  }
}

void write_metrics_csv(const MetricsLog& log, std::ostream& out, bool include_wall_time) {
  if (include_wall_time) {
    out << kMetricsCsvHeader << '\n';
  } else {
    out << "round,party,accuracy,digest_loss,revisit_loss\n";
  }
  for (const auto& r : log.rows) {
    switch (r.kind) {
      case RowKind::baseline: out << "baseline"; break;
      case RowKind::pooled: out << "pooled"; break;
      case RowKind::round: out << r.round; break;
    }
    out << ',' << r.party << ',' << format_double(r.accuracy) << ',';
    if (r.digest_loss) out << format_double(*r.digest_loss);
    out << ',';
    if (r.revisit_loss) out << format_double(*r.revisit_loss);
    if (include_wall_time) out << ',' << format_double(r.wall_ms);
    out << '\n';
  }
}

std::string metrics_csv(const MetricsLog& log, bool include_wall_time) {
  std::ostringstream out;
  write_metrics_csv(log, out, include_wall_time);
  return out.str();
}

MetricsLog read_metrics_csv(std::istream& in) {
  MetricsLog log;
  std::string line;
  if (!std::getline(in, line) || line != kMetricsCsvHeader) {
    throw DataError("metrics CSV must start with '" + std::string(kMetricsCsvHeader) + "'");
  }
  std::size_t number = 1;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 6) {
      throw DataError("metrics line " + std::to_string(number) + ": expected 6 columns, got " +
                      std::to_string(cells.size()));
    }
    MetricsRow row;
    if (cells[0] == "baseline") {
      row.kind = RowKind::baseline;
    } else if (cells[0] == "pooled") {
      row.kind = RowKind::pooled;
    } else {
      row.kind = RowKind::round;
      row.round = parse_u32(cells[0], number, "round");
    }
    row.party = parse_u32(cells[1], number, "party");
    row.accuracy = parse_double(cells[2], number, "accuracy");
    if (!cells[3].empty()) row.digest_loss = parse_double(cells[3], number, "digest_loss");
    if (!cells[4].empty()) row.revisit_loss = parse_double(cells[4], number, "revisit_loss");
    row.wall_ms = parse_double(cells[5], number, "wall_ms");
    log.rows.push_back(row);
  }
  log.validate();
  return log;
}

bool same_results(const MetricsLog& a, const MetricsLog& b) {
  return metrics_csv(a, false) == metrics_csv(b, false);
}

Summary summarize(const MetricsLog& log) {
  std::map<std::uint32_t, double> baseline, pooled;
  std::map<std::uint32_t, std::pair<std::uint32_t, double>> last_round;
  for (const auto& r : log.rows) {
    if (r.kind == RowKind::baseline) {
      baseline[r.party] = r.accuracy;
    } else if (r.kind == RowKind::pooled) {
      pooled[r.party] = r.accuracy;
    } else {
      auto it = last_round.find(r.party);
      if (it == last_round.end() || it->second.first <= r.round) last_round[r.party] = {r.round, r.accuracy};
    }
  }
  if (baseline.empty()) throw DataError("metrics log has no baseline rows");
  for (const auto& [party, _] : last_round) {
    if (!baseline.count(party)) throw DataError("party " + std::to_string(party) + " has no baseline row");
  }
  for (const auto& [party, _] : pooled) {
    if (!baseline.count(party)) throw DataError("party " + std::to_string(party) + " has no baseline row");
  }

  Summary s;
  double gap_total = 0.0;
  std::size_t gap_count = 0;
  for (const auto& [party, base] : baseline) {
    const auto it = last_round.find(party);
    const double final_acc = it == last_round.end() ? base : it->second.second;
    s.baseline.push_back(base);
    s.final_accuracy.push_back(final_acc);
    s.per_party_gain.push_back(final_acc - base);
    if (auto p = pooled.find(party); p != pooled.end()) {
      s.per_party_gap_to_pooled.push_back(p->second - final_acc);
      gap_total += p->second - final_acc;
      ++gap_count;
    } else {
      s.per_party_gap_to_pooled.push_back(std::nullopt);
    }
  }
  const double n = static_cast<double>(s.baseline.size());
  s.mean_baseline = std::accumulate(s.baseline.begin(), s.baseline.end(), 0.0) / n;
  s.mean_final = std::accumulate(s.final_accuracy.begin(), s.final_accuracy.end(), 0.0) / n;
  s.mean_gain = std::accumulate(s.per_party_gain.begin(), s.per_party_gain.end(), 0.0) / n;
  if (gap_count > 0) s.mean_gap_to_pooled = gap_total / static_cast<double>(gap_count);
  return s;
}

std::string format_summary_table(const Summary& summary) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "party  baseline  final     gain      gap_to_pooled\n";
  for (std::size_t k = 0; k < summary.baseline.size(); ++k) {
    out << std::setw(5) << k << "  " << summary.baseline[k] << "    " << summary.final_accuracy[k] << "    "
        << std::showpos << summary.per_party_gain[k] << std::noshowpos << "   ";
    if (summary.per_party_gap_to_pooled[k]) {
      out << std::showpos << *summary.per_party_gap_to_pooled[k] << std::noshowpos;
    } else {
      out << "-";
    }
    out << '\n';
  }
  out << "mean   " << summary.mean_baseline << "    " << summary.mean_final << "    " << std::showpos
      << summary.mean_gain << std::noshowpos << "   ";
  if (summary.mean_gap_to_pooled) {
    out << std::showpos << *summary.mean_gap_to_pooled << std::noshowpos;
  } else {
    out << "-";
  }
  out << '\n';
  return out.str();
}

}  // namespace fedmd
