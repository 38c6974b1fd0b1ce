// SPDX-License-Identifier: Apache-2.0
#include "fedmd/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <ostream>

#include <CLI11.hpp>

#include "fedmd/config.hpp"
#include "fedmd/error.hpp"
#include "fedmd/experiment.hpp"
#include "fedmd/gradcheck.hpp"
#include "fedmd/metrics.hpp"
#include "fedmd/protocol.hpp"
#include "fedmd/train.hpp"
#include "fedmd/transport.hpp"

namespace fedmd {

namespace {

constexpr double kGradcheckTolerance = 1e-3;
constexpr double kJoinRetrySeconds = 30.0;

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::vector<Override> overrides_from(const std::vector<std::string>& sets) {
  std::vector<Override> out;
  for (const auto& s : sets) out.push_back(parse_override(s));
  return out;
}

std::string output_dir(const std::string& flag, const ExperimentConfig& config) {
  if (!flag.empty()) return flag;
  if (!config.output_dir.empty()) return config.output_dir;
  if (const char* env = std::getenv("FEDMD_OUTPUT_DIR"); env != nullptr && *env != '\0') return env;
  return "fedmd-out";
}

struct Options {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::string transport;
  std::string kind = "transfer";
  std::size_t networks = 50;
  std::uint64_t seed = 1;
  std::string images;
  std::string labels;
  std::string address;
  std::string address_file;
  std::uint32_t party = 0;
};

int cmd_run(const Options& o, std::ostream& out) {
  auto sets = overrides_from(o.sets);
  if (!o.transport.empty()) sets.emplace_back("transport", o.transport);
  ExperimentConfig config = parse_config(o.config, sets);
  config.output_dir = output_dir(o.out, config);
  const ExperimentResult result = run_experiment(config);
  out << format_summary_table(result.summary);
  out << "config " << result.log.config_hash << ", seed " << result.log.seed << '\n';
  out << "wrote " << (std::filesystem::path(config.output_dir) / "metrics.csv").string() << " and summary.json\n";
  return kExitOk;
}

int cmd_baseline(const Options& o, std::ostream& out) {
  const ExperimentConfig config = parse_config(o.config, overrides_from(o.sets));
  std::vector<double> acc;
  if (o.kind == "transfer") {
    acc = baseline_transfer(config);
  } else if (o.kind == "pooled") {
    acc = baseline_pooled(config);
  } else {
    throw ConfigError("--kind: expected transfer or pooled, got \"" + o.kind + "\"");
  }
  double mean = 0.0;
  out << "party  " << o.kind << '\n';
  for (std::size_t k = 0; k < acc.size(); ++k) {
    out << k << "      " << fixed(acc[k]) << '\n';
    mean += acc[k];
  }
  out << "mean   " << fixed(mean / static_cast<double>(acc.size())) << '\n';
  return kExitOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  const GradcheckResult r = run_gradcheck(o.networks, o.seed);
  out << "networks " << r.networks << ", coordinates " << r.coordinates << ", skipped at kinks "
      << r.skipped_kinks << '\n';
  out << "max relative error: cross-entropy " << r.max_error_cross_entropy << ", distillation "
      << r.max_error_distill << '\n';
  const bool ok = r.max_error() < kGradcheckTolerance;
  out << (ok ? "ok" : "FAILED") << " (tolerance " << kGradcheckTolerance << ")\n";
  return ok ? kExitOk : kExitFailure;
}

int cmd_inspect(const Options& o, std::ostream& out) {
  const Tensor images = parse_idx(read_file_bytes(o.images));
  out << o.images << ": " << shape_string(images.shape()) << '\n';
  if (o.labels.empty()) return kExitOk;
  const std::vector<int> labels = parse_idx_labels(read_file_bytes(o.labels));
  out << o.labels << ": " << labels.size() << " labels\n";
  if (labels.size() != images.rows()) {
    throw DataError(o.images + " has " + std::to_string(images.rows()) + " images but " + o.labels + " has " +
                    std::to_string(labels.size()) + " labels");
  }
  std::map<int, std::size_t> histogram;
  for (int y : labels) ++histogram[y];
  out << "label  count\n";
  for (const auto& [label, count] : histogram) out << label << "      " << count << '\n';
  return kExitOk;
}

int cmd_serve(const Options& o, std::ostream& out) {
  const ExperimentConfig config = parse_config(o.config, overrides_from(o.sets));
  const ExperimentData data = build_data(config);
  std::unique_ptr<Listener> listener = serve_tcp(o.address.empty() ? config.address : o.address);
  out << "listening on " << listener->address() << std::endl;
  if (!o.address_file.empty()) {
    // Write then rename so a watcher never sees a partial address.
    const std::string tmp = o.address_file + ".tmp";
    {
      std::ofstream f(tmp);
      if (!f) throw IoError("cannot write " + tmp);
      f << listener->address() << '\n';
    }
    std::filesystem::rename(tmp, o.address_file);
  }
  std::vector<std::unique_ptr<Channel>> endpoints;
  for (std::size_t k = 0; k < config.collab.parties; ++k) endpoints.push_back(listener->accept());
  Coordinator coordinator(config.collab, data.pub.all.size(), std::move(endpoints));
  for (std::uint32_t round = 1; round <= config.collab.rounds; ++round) {
    coordinator.run_round(round);
    out << "round " << round << " complete" << std::endl;
  }
  coordinator.close();
  return kExitOk;
}

int cmd_join(const Options& o, std::ostream& out) {
  ExperimentConfig config = parse_config(o.config, overrides_from(o.sets));
  if (o.party >= config.collab.parties) {
    throw ConfigError("--party: " + std::to_string(o.party) + " is not below parties=" +
                      std::to_string(config.collab.parties));
  }
  const ExperimentData data = build_data(config);
  std::vector<PartySetup> setups = make_parties(config, data);
  PartySetup& setup = setups[o.party];

  MetricsLog log;
  log.config_hash = config_hash(config);
  log.seed = config.collab.seed;
  log.version = version_string();

  const auto start = std::chrono::steady_clock::now();
  PartyState state(o.party, std::move(setup.net), std::move(setup.private_data), config.collab.optimizer, setup.seed);
  transfer_learn(state, data.pub, config.collab);
  const double base = accuracy(state.net, data.test);
  const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  log.rows.push_back(MetricsRow{RowKind::baseline, 0, o.party, base, std::nullopt, std::nullopt, ms});
  out << "party " << o.party << " baseline " << fixed(base) << std::endl;

  PartyNode node(std::move(state), std::make_shared<const Dataset>(data.pub.all),
                 std::make_shared<const Dataset>(data.test), config.collab,
                 connect_tcp(o.address.empty() ? config.address : o.address, kJoinRetrySeconds));
  for (std::uint32_t round = 1; round <= config.collab.rounds; ++round) {
    const RoundMetrics m = node.run_round(round);
    log.rows.push_back(
        MetricsRow{RowKind::round, m.round, m.party, m.accuracy, m.digest_loss, m.revisit_loss, m.wall_ms});
    out << "party " << o.party << " round " << round << " accuracy " << fixed(m.accuracy) << std::endl;
  }
  node.close();

  const std::filesystem::path dir(output_dir(o.out, config));
  std::filesystem::create_directories(dir);
  const auto path = dir / ("party-" + std::to_string(o.party) + ".csv");
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  write_metrics_csv(log, f);
  out << "wrote " << path.string() << '\n';
  return kExitOk;
}

int report(std::ostream& err, const Error& e) {
  err << "error: " << to_string(e.kind()) << ": " << e.what() << '\n';
  const bool usage = e.kind() == ErrorKind::config || e.kind() == ErrorKind::parse;
  return usage ? kExitUsage : kExitFailure;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Federated learning with heterogeneous models via model distillation", "fedmd"};
  app.require_subcommand(0, 1);
  Options o;

  auto config_options = [&o](CLI::App* sub) {
    sub->add_option("config", o.config, "JSON configuration file")->required();
    sub->add_option("--set", o.sets, "Override a configuration key (key=value)")->take_all();
  };

  CLI::App* run = app.add_subcommand("run", "Run baselines, collaboration rounds and the pooled baseline");
  config_options(run);
  run->add_option("--out", o.out, "Output directory (default: config output_dir, $FEDMD_OUTPUT_DIR, fedmd-out)");
  run->add_option("--transport", o.transport, "inproc or tcp");

  CLI::App* baseline = app.add_subcommand("baseline", "Compute transfer-only or pooled-data accuracies");
  config_options(baseline);
  baseline->add_option("--kind", o.kind, "transfer or pooled");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "Compare backprop with finite differences");
  gradcheck->add_option("--networks", o.networks, "Number of random networks")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", o.seed, "Seed");

  CLI::App* inspect = app.add_subcommand("inspect-data", "Print the shape and label histogram of IDX files");
  inspect->add_option("images", o.images, "IDX images file")->required();
  inspect->add_option("labels", o.labels, "IDX labels file");

  CLI::App* serve = app.add_subcommand("serve", "Run the coordinator over TCP");
  config_options(serve);
  serve->add_option("--address", o.address, "host:port to listen on (default: config address)");
  serve->add_option("--address-file", o.address_file, "Write the bound address to this file");

  CLI::App* join = app.add_subcommand("join", "Run one party over TCP");
  config_options(join);
  join->add_option("--address", o.address, "Coordinator host:port (default: config address)");
  join->add_option("--party", o.party, "Party id")->required();
  join->add_option("--out", o.out, "Directory for party-<id>.csv");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  if (args.empty() || app.get_subcommands().empty()) {
    err << app.help();
    return kExitUsage;
  }

  try {
    if (run->parsed()) return cmd_run(o, out);
    if (baseline->parsed()) return cmd_baseline(o, out);
    if (gradcheck->parsed()) return cmd_gradcheck(o, out);
    if (inspect->parsed()) return cmd_inspect(o, out);
    if (serve->parsed()) return cmd_serve(o, out);
    if (join->parsed()) return cmd_join(o, out);
  } catch (const Error& e) {
    return report(err, e);
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: io: " << e.what() << '\n';
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "error: internal: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace fedmd
