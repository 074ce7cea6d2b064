#include <cstdlib>
#include <iostream>

#include <CLI11.hpp>

#include "sgp/engine.hpp"
#include "sgp/io.hpp"
#include "sgp/report.hpp"

namespace {

using namespace sgp;

/// Relative output paths land under $SGP_OUTPUT_ROOT when it is set.
fs::path output_path(const std::string& p) {
  const fs::path path(p);
  const char* root = std::getenv("SGP_OUTPUT_ROOT");
  if (path.is_absolute() || !root || !*root) return path;
  return fs::path(root) / path;
}

void ensure_writable(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create output directory " + dir.string());
}

std::vector<json> pool_rows(const World& w) {
  std::vector<json> rows;
  for (const auto& s : w.pool) rows.push_back(to_json(s));
  return rows;
}

World load_world(const fs::path& dir) {
  const json manifest = read_json(dir / "manifest.json");
  World w;
  try {
    w.seed = manifest.at("seed");
    w.spec = world_spec_from_json(manifest.at("spec"));
  } catch (const json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  for (const auto& row : read_jsonl(dir / "world.jsonl")) w.pool.push_back(sample_from_json(row));
  return w;
}

json generator_info(const World& w, double cap) {
  return {{"seed", w.seed}, {"spec_hash", hex64(fnv1a(to_json(w.spec).dump()))}, {"cap_ratio", cap}};
}

void write_manifest_extras(const fs::path& out, const World& w) {
  json manifest{{"seed", w.seed},
                {"spec_hash", generator_info(w, w.spec.cap_ratio).at("spec_hash")},
                {"spec", to_json(w.spec)},
                {"pool_size", w.pool.size()},
                {"pool_hash", hex64(fnv1a(read_text(out / "world.jsonl")))}};
  write_json(out / "manifest.json", manifest);
  write_json(out / "vocab.json", Vocab::from_bank(w.spec.bank).words());
}

int cmd_generate(const std::string& spec_file, std::uint64_t seed, const std::string& out_arg, double cap_ratio) {
  WorldSpec spec;
  if (!spec_file.empty()) spec = world_spec_from_json(read_json(spec_file));
  spec.validate();
  const fs::path out = output_path(out_arg);
  ensure_writable(out);
  std::cerr << "generating world (seed " << seed << ")\n";
  const World w = generate_world(seed, spec);
  write_jsonl(out / "world.jsonl", pool_rows(w));
  write_manifest_extras(out, w);
  const double cap = cap_ratio > 0 ? cap_ratio : spec.cap_ratio;
  write_benchmark(out / "function", build_function_splits(w, cap), spec.bank, generator_info(w, cap));
  write_benchmark(out / "scene", build_scene_splits(w, default_scene_assignment(spec.bank), cap), spec.bank,
                  generator_info(w, cap));
  std::cout << "wrote " << out.string() << " (" << w.pool.size() << " pooled samples)\n";
  return 0;
}

int cmd_build_splits(const std::string& world_dir, const std::string& kind, const std::string& assignment_file,
                     double cap_ratio, const std::string& out_arg) {
  const World w = load_world(world_dir);
  const double cap = cap_ratio > 0 ? cap_ratio : w.spec.cap_ratio;
  ContinualBenchmark b;
  if (kind == "function") {
    b = build_function_splits(w, cap);
  } else if (kind == "scene") {
    auto assignment = default_scene_assignment(w.spec.bank);
    if (!assignment_file.empty()) {
      try {
        assignment = read_json(assignment_file).get<std::map<std::string, std::string>>();
      } catch (const json::exception& e) {
        throw ConfigError("scene assignment must map scene tags to task letters: " + std::string(e.what()));
      }
    }
    b = build_scene_splits(w, assignment, cap);
  } else {
    throw ConfigError("split kind must be 'function' or 'scene'");
  }
  const fs::path out = output_path(out_arg);
  ensure_writable(out);
  write_benchmark(out, b, w.spec.bank, generator_info(w, cap));
  std::cout << "wrote " << b.kind << " benchmark " << b.order_code << " to " << out.string() << "\n";
  return 0;
}

int cmd_run(const std::string& config_file, const std::string& out_arg, std::optional<std::uint64_t> seed,
            const std::string& order, bool quiet) {
  json j = read_json(config_file);
  if (!out_arg.empty()) j["output_dir"] = out_arg;
  if (seed) j["seed"] = *seed;
  if (!order.empty()) j["order_code"] = order;
  RunConfig cfg = run_config_from_json(j);
  if (cfg.benchmark.empty()) throw ConfigError("run config needs 'benchmark'");
  if (cfg.output_dir.empty()) throw ConfigError("run config needs 'output_dir' (or --out)");
  cfg.output_dir = output_path(cfg.output_dir).string();
  const auto loaded = read_benchmark(cfg.benchmark);
  if (!cfg.order_code.empty()) loaded.benchmark.reordered(cfg.order_code);
  ensure_writable(cfg.output_dir);
  write_json(fs::path(cfg.output_dir) / "config.json", to_json(cfg));
  EventSink sink;
  if (!quiet) sink = [](const json& e) { std::cerr << e.dump() << "\n"; };
  const RunResult r = run_sequence(loaded.benchmark, loaded.bank, cfg, sink);
  write_run(cfg.output_dir, cfg, r);
  std::cout << r.matrix.to_csv();
  std::printf("final A %.4f", r.report.final_A);
  if (r.report.final_F) std::printf("  F %.4f  B %.4f", *r.report.final_F, *r.report.final_B);
  std::printf("\n");
  return 0;
}

int cmd_report(const std::vector<std::string>& dirs, const std::string& out_arg) {
  std::vector<RunRecord> runs;
  for (const auto& d : dirs) runs.push_back(load_run(d));
  const Report rep = build_report(std::move(runs));
  const fs::path out = output_path(out_arg);
  ensure_writable(out);
  write_report(out, rep);
  std::cout << rep.tables.at("summary_A.csv");
  std::cout << "wrote " << rep.tables.size() << " tables and " << rep.figures.size() << " figures to " << out.string() << "\n";
  return 0;
}

int cmd_inspect_replay(const std::string& run_dir, const std::string& task, std::size_t limit) {
  const fs::path dir = fs::path(run_dir) / "replay";
  if (!fs::is_directory(dir)) throw DataError(run_dir + " has no replay directory (not an sgp run?)");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    const std::string stem = f.stem().string();
    if (!task.empty() && stem.substr(stem.rfind('_') + 1) != task) continue;
    const auto rows = read_jsonl(f);
    std::cout << "== " << stem << ": " << rows.size() << " triplets\n";
    std::size_t shown = 0;
    for (const auto& row : rows) {
      if (limit && shown++ >= limit) break;
      const ReplayTriplet t = replay_triplet_from_json(row);
      auto graph_text = [](const SceneGraph& g) {
        std::string s;
        for (const auto& r : g.relationships) s += (s.empty() ? "" : "; ") + r.render();
        return s;
      };
      std::cout << "[" << t.source_task << "] prompt: " << graph_text(t.prompt_used) << "\n"
                << "    SG: " << graph_text(t.sg_srm) << "\n"
                << "    Q: " << t.question << "\n"
                << "    A: " << t.answer << "\n";
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scene-graph prompt replay for continual visual question answering"};
  app.require_subcommand(1);

  std::string spec_file, out, world_dir, kind = "function", assignment, config, order, run_dir, task;
  std::uint64_t seed = 0;
  std::optional<std::uint64_t> run_seed;
  double cap_ratio = 0;
  std::size_t limit = 10;
  bool quiet = false;
  std::vector<std::string> dirs;

  auto* gen = app.add_subcommand("generate", "generate a synthetic world and both benchmarks");
  gen->add_option("--spec", spec_file, "world spec JSON (defaults when omitted)");
  gen->add_option("--seed", seed, "world seed")->required();
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--cap-ratio", cap_ratio, "answer max/median cap (spec value when omitted)");

  auto* splits = app.add_subcommand("build-splits", "rebuild a benchmark from a generated world");
  splits->add_option("--world", world_dir, "directory written by generate")->required();
  splits->add_option("--kind", kind, "function or scene");
  splits->add_option("--assignment", assignment, "scene->task JSON map (scene splits)");
  splits->add_option("--cap-ratio", cap_ratio, "answer max/median cap");
  splits->add_option("--out", out, "output directory")->required();

  auto* run = app.add_subcommand("run", "train one strategy over a benchmark");
  run->add_option("--config", config, "run config JSON")->required();
  run->add_option("--out", out, "run directory (overrides output_dir)");
  run->add_option("--seed", run_seed, "seed (overrides the config)");
  run->add_option("--order", order, "task order code (overrides the config)");
  run->add_flag("--quiet", quiet, "no event log on stderr");

  auto* rep = app.add_subcommand("report", "tables and figures over run directories");
  rep->add_option("runs", dirs, "run directories")->required();
  rep->add_option("--out", out, "report directory")->required();

  auto* insp = app.add_subcommand("inspect-replay", "print replayed triplets of an sgp run");
  insp->add_option("run", run_dir, "run directory")->required();
  insp->add_option("--task", task, "only this task tag");
  insp->add_option("--limit", limit, "triplets per task (0 = all)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::config);
  }
  try {
    if (*gen) return cmd_generate(spec_file, seed, out, cap_ratio);
    if (*splits) return cmd_build_splits(world_dir, kind, assignment, cap_ratio, out);
    if (*run) return cmd_run(config, out, run_seed, order, quiet);
    if (*rep) return cmd_report(dirs, out);
    if (*insp) return cmd_inspect_replay(run_dir, task, limit);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
