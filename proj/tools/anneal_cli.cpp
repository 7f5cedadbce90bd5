// anneal: synth | run | compare | serve | eval
//
// Exit status: 0 success, 1 usage or config error, 2 runtime failure.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "anneal/annotation_service.hpp"
#include "anneal/config.hpp"
#include "anneal/runner.hpp"

namespace fs = std::filesystem;
using namespace anneal;

namespace {

constexpr int kUsage = 1;
constexpr int kRuntime = 2;

struct UsageError : Error {
  using Error::Error;
};

std::atomic<bool> g_interrupted{false};

extern "C" void on_signal(int) { g_interrupted = true; }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (auto t = std::string(detail::trim(item)); !t.empty()) out.push_back(t);
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& s) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(s)) {
    std::uint64_t v = 0;
    if (!detail::parse_int(item, v)) throw UsageError("--seeds: '" + item + "' is not a seed");
    out.push_back(v);
  }
  if (out.empty()) throw UsageError("--seeds: empty list");
  return out;
}

struct Overrides {
  std::string strategy;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string out;
  std::size_t threads = 0;
};

ExperimentConfig load_with_overrides(const std::string& path, const Overrides& o) {
  auto cfg = load_config(path);
  if (!o.strategy.empty() && o.strategy != "tcal") cfg.al.strategy = strategy_from_string(o.strategy);
  if (o.has_seed) cfg.al.seed = o.seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  if (o.threads > 0) cfg.al.threads = o.threads;
  cfg.validate();
  return cfg;
}

int cmd_synth(int classes, int per_class, int dim, double stddev, std::uint64_t seed, const std::string& out) {
  const auto records = generate_synthetic(classes, per_class, dim, stddev, seed);
  if (auto parent = fs::path(out).parent_path(); !parent.empty()) fs::create_directories(parent);
  std::ofstream os(out, std::ios::trunc | std::ios::binary);
  if (!os) throw Error("cannot write '" + out + "'");
  write_dataset(os, records);
  os.flush();
  if (!os) throw Error("write failed for '" + out + "'");
  std::cout << records.size() << " images written to " << out << '\n';
  return 0;
}

int cmd_run(const std::string& config, const Overrides& o, const std::string& oracle) {
  if (oracle == "human")
    throw UsageError("the human oracle needs the annotation server; use `anneal serve --config " + config + "`");
  const auto cfg = load_with_overrides(config, o);
  const std::string strategy = o.strategy.empty() ? to_string(cfg.al.strategy) : o.strategy;
  const auto ds = materialize_dataset(cfg);
  const auto cell = run_cell(cfg, ds, strategy, cfg.al.seed, cfg.output_dir);
  for (const auto& h : cell.history)
    std::printf("iteration %zu  bits %.6g  mAP@5 %.4f\n", h.iteration, h.bits, h.map_at_5);
  std::cout << "results: " << cell.results_path << '\n';
  return 0;
}

int cmd_compare(const std::string& config, const std::string& strategies, const std::string& seeds,
                const std::string& out, std::size_t jobs, const Overrides& o) {
  auto cfg = load_with_overrides(config, o);
  const auto names = split_list(strategies);
  for (const auto& n : names) {
    try {
      check_strategy_name(n);
    } catch (const ConfigError& e) {
      throw UsageError(std::string("--strategies: ") + e.what());
    }
  }
  const auto seed_list = seeds.empty() ? cfg.seeds : parse_seed_list(seeds);
  const auto ds = materialize_dataset(cfg);
  const auto res = run_compare(cfg, ds, names, seed_list, out.empty() ? cfg.output_dir : out, jobs);
  std::cout << res.cells.size() << " runs finished, " << res.failures.size() << " failed\n";
  std::cout << "combined: " << res.combined_path << '\n';
  return res.failures.empty() ? 0 : kRuntime;
}

int cmd_serve(const std::string& config, const Overrides& o, int port, const std::string& host,
              const std::string& assets, const std::string& ui) {
  const auto cfg = load_with_overrides(config, o);
  if (!ui.empty() && !fs::is_directory(ui)) throw UsageError("--ui: '" + ui + "' is not a directory");
  if (!assets.empty() && !fs::is_directory(assets)) throw UsageError("--assets: '" + assets + "' is not a directory");
  const auto ds = materialize_dataset(cfg);

  service::SessionOptions opts;
  opts.output_dir = cfg.output_dir;
  opts.asset_root = assets;
  opts.timeout = std::chrono::milliseconds(static_cast<long long>(cfg.oracle_timeout_seconds * 1000.0));
  opts.config_fingerprint = config_to_json(cfg).dump();
  write_json_file((fs::path(cfg.output_dir) / "manifest.json").string(),
                  (fs::create_directories(cfg.output_dir),
                   run_manifest(cfg, ds, to_string(cfg.al.strategy), cfg.al.seed)));

  service::AnnotationSession session(ds.data, cfg.al, opts);
  httplib::Server server;
  service::install_routes(server, session, ui);

  int bound = port;
  if (port == 0) {
    bound = server.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind to " + host);
  } else if (!server.bind_to_port(host, port)) {
    throw Error("cannot listen on " + host + ":" + std::to_string(port) + " (port in use?)");
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  session.start();
  std::printf("listening on http://%s:%d\n", host.c_str(), bound);
  std::fflush(stdout);

  std::thread watcher([&] {
    while (!g_interrupted) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    server.stop();
  });
  server.listen_after_bind();
  g_interrupted = true;
  watcher.join();
  session.stop();
  const auto st = session.status();
  std::printf("stopped at iteration %zu (%s); labels in %s\n", st["iteration"].get<std::size_t>(),
              st["state"].get<std::string>().c_str(), session.log_path().c_str());
  return 0;
}

int cmd_eval(const std::string& config, const std::string& checkpoint, std::size_t k, const std::string& dump,
             std::size_t threads) {
  const auto cfg = load_config(config);
  const auto ds = materialize_dataset(cfg);
  const auto model = load_checkpoint(checkpoint);
  EvalOptions opts;
  opts.k = k;
  opts.threads = std::max<std::size_t>(1, threads);
  opts.keep_rankings = !dump.empty();
  const auto r = map_at_k([&](std::span<const double> x) { return embed(model, x); }, ds.data, opts);
  if (!dump.empty()) {
    std::ofstream os(dump, std::ios::trunc);
    if (!os) throw Error("cannot write '" + dump + "'");
    write_ranking_dump(os, r, ds.data);
  }
  std::printf("mAP@%zu %.6f over %zu queries\n", k, r.map, r.queries);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Pair-based active learning for image retrieval"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(kVersion));

  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress informational messages");

  int classes = 0, per_class = 0, dim = 0;
  double stddev = 0.3;
  std::uint64_t seed = 0;
  std::string out;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic Gaussian-cluster dataset");
  synth->add_option("--classes", classes, "Number of classes")->required()->check(CLI::Range(2, 1 << 20));
  synth->add_option("--per-class", per_class, "Images per class")->required()->check(CLI::Range(1, 1 << 24));
  synth->add_option("--dim", dim, "Feature dimension")->required()->check(CLI::Range(1, 1 << 16));
  synth->add_option("--stddev", stddev, "Within-class standard deviation")->check(CLI::NonNegativeNumber);
  synth->add_option("--seed", seed, "Generator seed");
  synth->add_option("--out", out, "Output CSV")->required();

  std::string config, oracle = "simulated";
  Overrides ov;
  auto add_overrides = [&](CLI::App* c, bool with_strategy) {
    if (with_strategy)
      c->add_option("--strategy", ov.strategy, "anneal, anneal-u, random or tcal")
          ->check(CLI::IsMember(known_strategies()));
    c->add_option("--out", ov.out, "Output directory (overrides output_dir)");
    c->add_option("--threads", ov.threads, "Scoring and evaluation threads")->check(CLI::PositiveNumber);
  };
  auto* run = app.add_subcommand("run", "Run one simulated experiment");
  run->add_option("--config", config, "Config JSON")->required()->check(CLI::ExistingFile);
  add_overrides(run, true);
  run->add_option("--seed", ov.seed, "Experiment seed (overrides seed)")->each([&](const std::string&) {
    ov.has_seed = true;
  });
  run->add_option("--oracle", oracle, "simulated or human")->check(CLI::IsMember({"simulated", "human"}));

  std::string strategies = "anneal,anneal-u,random,tcal", seeds;
  std::string compare_out;
  std::size_t jobs = 1;
  auto* compare = app.add_subcommand("compare", "Run strategies x seeds and average the curves");
  compare->add_option("--config", config, "Config JSON")->required()->check(CLI::ExistingFile);
  compare->add_option("--strategies", strategies, "Comma-separated strategies");
  compare->add_option("--seeds", seeds, "Comma-separated seeds (default: config seeds)");
  compare->add_option("--out", compare_out, "Output directory (default: config output_dir)");
  compare->add_option("--jobs", jobs, "Cells run in parallel")->check(CLI::PositiveNumber);
  compare->add_option("--threads", ov.threads, "Threads per cell")->check(CLI::PositiveNumber);

  int port = 8080;
  std::string host = "127.0.0.1", assets, ui;
  auto* serve = app.add_subcommand("serve", "Serve a human-annotated experiment over HTTP");
  serve->add_option("--config", config, "Config JSON")->required()->check(CLI::ExistingFile);
  add_overrides(serve, false);
  serve->add_option("--port", port, "TCP port (0 picks a free one)")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--assets", assets, "Directory with <image_id>.<ext> files");
  serve->add_option("--ui", ui, "Built UI bundle to serve at /");

  std::string checkpoint, dump;
  std::size_t eval_k = 5, eval_threads = 1;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (mAP@k on validation vs test)");
  eval->add_option("--config", config, "Config JSON naming the dataset")->required()->check(CLI::ExistingFile);
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  eval->add_option("--k", eval_k, "Cutoff")->check(CLI::PositiveNumber);
  eval->add_option("--dump", dump, "Write ranked lists as CSV");
  eval->add_option("--threads", eval_threads, "Query threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kUsage;
  }
  if (quiet) log::quiet() = true;

  try {
    if (*synth) return cmd_synth(classes, per_class, dim, stddev, seed, out);
    if (*run) return cmd_run(config, ov, oracle);
    if (*compare) return cmd_compare(config, strategies, seeds, compare_out, jobs, ov);
    if (*serve) return cmd_serve(config, ov, port, host, assets, ui);
    if (*eval) return cmd_eval(config, checkpoint, eval_k, dump, eval_threads);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
