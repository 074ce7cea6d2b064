// Acceptance run: one PASS/FAIL line per criterion, exit code 0 iff all pass.
//
// Usage: acceptance [--only 1,4,...] [--workdir DIR]
// Working files (benchmark, run directories) go to --workdir, or
// $SGP_ACCEPTANCE_DIR, or <tmp>/sgp_acceptance.

#include <boost/math/distributions/chi_squared.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "sgp/engine.hpp"
#include "support/gradcheck.hpp"

namespace {

using namespace sgp;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char b[64];
  std::snprintf(b, sizeof b, f, v);
  return b;
}

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

// ---------------------------------------------------------------------------
// Shared state: the default benchmark and the full-size runs.

struct Env {
  fs::path workdir;
  World world;
  ContinualBenchmark bench;
  std::map<std::string, RunResult> runs;
  std::map<std::string, double> run_seconds;

  const RunResult& run(const std::string& name, RunConfig cfg) {
    auto it = runs.find(name);
    if (it != runs.end()) return it->second;
    cfg.output_dir = (workdir / "runs" / name).string();
    cfg.benchmark = (workdir / "data" / "function").string();
    cfg.save_checkpoints = false;
    std::cerr << "  run " << name << " ..." << std::flush;
    const auto t0 = Clock::now();
    RunResult r = run_sequence(bench, world.spec.bank, cfg);
    run_seconds[name] = seconds_since(t0);
    write_run(cfg.output_dir, cfg, r);
    std::cerr << " A=" << fmt("%.4f", r.report.final_A) << " (" << fmt("%.0f", run_seconds[name]) << " s)\n";
    return runs.emplace(name, std::move(r)).first->second;
  }
};

RunConfig strategy_config(StrategyKind kind, std::uint64_t seed) {
  RunConfig c;
  c.strategy.kind = kind;
  if (kind == StrategyKind::sgp) c.strategy.gamma = 1.5;
  if (kind == StrategyKind::ewc || kind == StrategyKind::mas) c.strategy.strength = 100.0;
  if (kind == StrategyKind::real_rnd) c.strategy.budget_samples = 3000;  // generous: gamma * |D_i|
  c.seed = seed;
  return c;
}

std::string run_name(StrategyKind kind, std::uint64_t seed) { return strategy_name(kind) + "_seed" + std::to_string(seed); }

const RunResult& full_run(Env& env, StrategyKind kind, std::uint64_t seed) {
  return env.run(run_name(kind, seed), strategy_config(kind, seed));
}

constexpr std::uint64_t kSeeds[] = {1, 2, 3};

// ---------------------------------------------------------------------------
// 1. Directional forgetting gap

Outcome criterion_gap(Env& env) {
  double sgp = 0, ft = 0, secs = 0;
  std::string per;
  for (auto s : kSeeds) {
    const double a = full_run(env, StrategyKind::sgp, s).report.final_A;
    const double b = full_run(env, StrategyKind::finetune, s).report.final_A;
    secs += env.run_seconds[run_name(StrategyKind::sgp, s)] + env.run_seconds[run_name(StrategyKind::finetune, s)];
    sgp += a / 3;
    ft += b / 3;
    per += " seed" + std::to_string(s) + "=" + fmt("%.3f", a) + "/" + fmt("%.3f", b);
  }
  const double gap = 100 * (sgp - ft);
  const bool fast = secs <= 1800;
  return {gap >= 5.0 && fast, "SGP A6 " + fmt("%.2f", 100 * sgp) + " vs Finetune " + fmt("%.2f", 100 * ft) + " (gap " +
                                  fmt("%.2f", gap) + " pts, need >= 5; sgp/ft" + per + "); wall " + fmt("%.0f", secs) +
                                  " s on " + std::to_string(thread_count()) + " thread(s), need <= 1800"};
}

// ---------------------------------------------------------------------------
// 2. Baseline ordering

Outcome criterion_ordering(Env& env) {
  std::map<StrategyKind, double> mean;
  for (auto k : {StrategyKind::real_rnd, StrategyKind::sgp, StrategyKind::ewc, StrategyKind::mas, StrategyKind::finetune})
    for (auto s : kSeeds) mean[k] += full_run(env, k, s).report.final_A / 3;
  const double tol = 0.02;
  const double real = mean[StrategyKind::real_rnd], sgp = mean[StrategyKind::sgp], ewc = mean[StrategyKind::ewc],
               mas = mean[StrategyKind::mas], ft = mean[StrategyKind::finetune];
  std::vector<std::string> broken;
  if (real < sgp - tol) broken.push_back("real_rnd < sgp");
  if (sgp < ewc - tol) broken.push_back("sgp < ewc");
  if (sgp < mas - tol) broken.push_back("sgp < mas");
  if (ewc < ft - tol) broken.push_back("ewc < finetune");
  if (mas < ft - tol) broken.push_back("mas < finetune");
  std::string d = "mean A6: real_rnd " + fmt("%.2f", 100 * real) + ", sgp " + fmt("%.2f", 100 * sgp) + ", ewc " +
                  fmt("%.2f", 100 * ewc) + ", mas " + fmt("%.2f", 100 * mas) + ", finetune " + fmt("%.2f", 100 * ft) +
                  " (tolerance 2 pts)";
  for (const auto& b : broken) d += "; violated: " + b;
  return {broken.empty(), d};
}

// ---------------------------------------------------------------------------
// 3. Metric oracle: brute-force formulas over a dense 1-based array.

double oracle_A(const double a[7][7], int k) {
  double s = 0;
  for (int j = 1; j <= k; ++j) s += a[k][j];
  return s / k;
}
double oracle_F(const double a[7][7], int k) {
  double s = 0;
  for (int j = 1; j < k; ++j) {
    double best = -1e300;
    for (int l = j; l < k; ++l) best = std::max(best, a[l][j]);
    s += best - a[k][j];
  }
  return s / (k - 1);
}
double oracle_B(const double a[7][7], int k) {
  double s = 0;
  for (int j = 1; j < k; ++j) s += a[k][j] - a[j][j];
  return s / (k - 1);
}

Outcome criterion_metrics() {
  Rng rng(substream(7, "acceptance/metrics"));
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    AccuracyMatrix m({"a", "b", "c", "d", "e", "f"});
    double a[7][7] = {};
    for (int k = 1; k <= 6; ++k)
      for (int j = 1; j <= k; ++j) {
        a[k][j] = rng.uniform();
        m.set(static_cast<std::size_t>(k - 1), static_cast<std::size_t>(j - 1), a[k][j]);
      }
    for (int k = 1; k <= 6; ++k) {
      const auto uk = static_cast<std::size_t>(k);
      worst = std::max(worst, std::abs(average_accuracy(m, uk) - oracle_A(a, k)));
      if (k >= 2) {
        worst = std::max(worst, std::abs(forgetting(m, uk) - oracle_F(a, k)));
        worst = std::max(worst, std::abs(backward_transfer(m, uk) - oracle_B(a, k)));
      }
    }
  }
  return {worst <= 1e-12, "100 random 6x6 matrices, max |diff| " + fmt("%.3g", worst) + " (need <= 1e-12)"};
}

// ---------------------------------------------------------------------------
// 4. Replay bookkeeping, audited from events.jsonl and the replay files.

std::string audit_replay_log(const fs::path& run_dir, double gamma, int* checked) {
  std::vector<json> events = read_jsonl(run_dir / "events.jsonl");
  std::vector<std::string> order;
  std::map<std::string, std::size_t> current;
  std::map<std::string, json> replay;
  for (const auto& e : events) {
    const std::string ev = e.at("event");
    if (ev == "univqa_trained") {
      order.push_back(e.at("task"));
      current[e.at("task")] = e.at("current");
    } else if (ev == "replay") {
      replay[e.at("task")] = e;
    }
  }
  std::string errors;
  for (std::size_t i = 1; i < order.size(); ++i) {
    const std::string& tag = order[i];
    if (!replay.count(tag)) {
      errors += " task " + tag + ": no replay event;";
      continue;
    }
    const json& e = replay[tag];
    const long expect = std::lround(gamma * static_cast<double>(current[tag]));
    long req_sum = 0, prod_sum = 0, lo = 1L << 40, hi = 0;
    std::set<std::string> prev(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(i)), got;
    for (const auto& [t, n] : e.at("requested").items()) {
      got.insert(t);
      const long v = n.get<long>();
      req_sum += v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
      const long p = e.at("produced").at(t).get<long>();
      prod_sum += p;
      if (p != v) errors += " task " + tag + ": " + t + " produced " + std::to_string(p) + " of " + std::to_string(v) + ";";
    }
    if (e.at("total").get<long>() != expect || req_sum != expect)
      errors += " task " + tag + ": total " + std::to_string(req_sum) + " != " + std::to_string(expect) + ";";
    if (hi - lo > 1) errors += " task " + tag + ": shares differ by " + std::to_string(hi - lo) + ";";
    if (got != prev) errors += " task " + tag + ": shares not over exactly the previous tasks;";
    const fs::path file = run_dir / "replay" / ("task" + std::to_string(i + 1) + "_" + tag + ".jsonl");
    const long lines = fs::exists(file) ? static_cast<long>(read_jsonl(file).size()) : -1;
    if (lines != prod_sum) errors += " task " + tag + ": replay file has " + std::to_string(lines) + " triplets;";
    ++*checked;
  }
  return errors;
}

Outcome criterion_replay(Env& env) {
  std::string errors;
  int checked = 0;
  for (double gamma : {0.5, 1.0}) {
    RunConfig cfg = strategy_config(StrategyKind::sgp, 1);
    cfg.strategy.gamma = gamma;
    cfg.train_limit = 500;
    cfg.eval_limit = 100;
    const std::string name = "sgp_gamma" + fmt("%g", gamma) + "_n500";
    env.run(name, cfg);
    const std::string e = audit_replay_log(env.workdir / "runs" / name, gamma, &checked);
    if (!e.empty()) errors += " [gamma " + fmt("%g", gamma) + "]" + e;
  }
  for (auto s : kSeeds) {
    full_run(env, StrategyKind::sgp, s);
    const std::string e = audit_replay_log(env.workdir / "runs" / run_name(StrategyKind::sgp, s), 1.5, &checked);
    if (!e.empty()) errors += " [gamma 1.5 seed " + std::to_string(s) + "]" + e;
  }
  return {errors.empty() && checked == 25,
          std::to_string(checked) + " (gamma, task) replay logs audited (gamma 0.5/1.0 at 500 samples/task, 1.5 at 2000 x 3 seeds)" +
              (errors.empty() ? std::string("; all totals, shares and produced counts exact") : ";" + errors)};
}

// ---------------------------------------------------------------------------
// 5. Gradient checks (float64, toy widths, 50 coordinates each)

template <class LossFn>
double worst_relative_error(ParameterSet<double>& params, const std::vector<double>& analytic, LossFn&& loss,
                            std::uint64_t seed) {
  // 50 coordinates the loss reaches plus 50 uniformly random ones.
  std::vector<std::size_t> reached;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    if (analytic[i] != 0.0) reached.push_back(i);
  Rng rng(seed);
  auto p = params.flatten();
  double worst = 0;
  for (int c = 0; c < 50 && !reached.empty(); ++c) {
    const std::size_t i = reached[rng.below(reached.size())];
    const double orig = p[i];
    p[i] = orig + 1e-5;
    params.assign(p);
    const double up = loss();
    p[i] = orig - 1e-5;
    params.assign(p);
    const double down = loss();
    p[i] = orig;
    params.assign(p);
    worst = std::max(worst, testing::relative_error(analytic[i], (up - down) / 2e-5));
  }
  const auto uniform = testing::check_gradients(params, analytic, loss, 50, seed + 1);
  return std::max(worst, uniform.max_relative_error);
}

template <class M>
void jitter(M& m, double scale, std::uint64_t seed) {
  Rng rng(seed);
  for (std::size_t i = 0; i < m.params.size(); ++i)
    m.params.value(i).array() +=
        normal_matrix<double>(m.params.value(i).rows(), m.params.value(i).cols(), scale, rng).array();
}

Outcome criterion_gradients(Env& env) {
  const Vocab v = Vocab::from_bank(env.world.spec.bank);
  SrmModelConfig sc;
  sc.width = 8;
  sc.layers = 2;
  sc.heads = 2;
  sc.max_len = 64;
  auto srm = SrmModel<double>::create(sc, v.size(), 3);
  jitter(srm, 0.3, 4);
  const SrmItem item = srm_item(v, env.bench.tasks[2].train[0]);
  Gradients<double> sg(srm.params);
  {
    Graph<double> g(srm.params, &sg);
    g.backward(srm_loss(srm, g, item, 0.25));
  }
  const double srm_err = worst_relative_error(srm.params, sg.flatten(), [&] {
    Graph<double> g(srm.params);
    return g.scalar(srm_loss(srm, g, item, 0.25));
  }, 17);

  UniVqaConfig uc;
  uc.width = 16;
  uc.heads = 2;
  uc.fusion_layers = 2;
  uc.text_layers = 1;
  uc.max_text_len = 64;
  auto vqa = UniVqaModel<double>::create(uc, v.size(), 11);
  jitter(vqa, 0.2, 12);
  const Sample* ocr = nullptr;
  for (const auto& s : env.bench.tasks[5].train)
    if (s.ocr_tokens.size() >= 2) {
      ocr = &s;
      break;
    }
  if (!ocr) return {false, "no OCR sample in the scene-text task"};
  const auto b = bundle_from_sample(v, *ocr, uc);
  const auto t = answer_target(v, b.ocr_words[0] + " sign", b.ocr_words, 12);  // copy step + vocab step
  Gradients<double> vg(vqa.params);
  {
    Graph<double> g(vqa.params, &vg);
    g.backward(vqa.loss(g, b, t));
  }
  const double vqa_err = worst_relative_error(vqa.params, vg.flatten(), [&] {
    Graph<double> g(vqa.params);
    return g.scalar(vqa.loss(g, b, t));
  }, 23);
  return {srm_err < 1e-4 && vqa_err < 1e-4,
          "max relative error L_SRM " + fmt("%.3g", srm_err) + ", L_VQA " + fmt("%.3g", vqa_err) + " (need < 1e-4)"};
}

// ---------------------------------------------------------------------------
// 6. Codec integrity

Outcome criterion_codec(Env& env) {
  const ConceptBank& bank = env.world.spec.bank;
  const Vocab v = Vocab::from_bank(bank);
  Rng rng(substream(7, "acceptance/codec"));
  auto rel = [&]() -> Relationship {
    const auto& s = bank.objects[rng.below(bank.objects.size())].name;
    switch (rng.below(3)) {
      case 0: return {s, "", ""};
      case 1: return {s, bank.attributes[rng.below(bank.attributes.size())].value, ""};
      default: return {s, bank.relations[rng.below(bank.relations.size())], bank.objects[rng.below(bank.objects.size())].name};
    }
  };
  int mismatches = 0, shift_errors = 0;
  auto shift_ok = [](const EncodedPair& p) {
    if (p.input.size() != p.target.size() || p.target.ids.back() != Vocab::kEot) return false;
    for (std::size_t i = 0; i + 1 < p.input.size(); ++i)
      if (p.target.ids[i] != p.input.ids[i + 1]) return false;
    return true;
  };
  // Real corpus QA pairs alongside random graphs.
  const auto& pool = env.world.pool;
  for (int n = 0; n < 1000; ++n) {
    SceneGraph g;
    const int k = rng.range(1, 6);
    for (int i = 0; i < k; ++i) g.relationships.push_back(rel());
    const auto p = encode_sg_lm(v, g);
    if (!shift_ok(p)) ++shift_errors;
    auto full = p.input.ids;
    full.push_back(Vocab::kEot);
    const auto back = parse_generation(v, full, PromptMode::sg, &bank);
    if (!back.well_formed || !(back.graph == g)) ++mismatches;

    const Sample& s = pool[rng.below(pool.size())];
    const auto qp = encode_qa_gen(v, s.evidence_graph, s.question, s.answer());
    if (!shift_ok(qp)) ++shift_errors;
    auto qfull = qp.input.ids;
    qfull.push_back(Vocab::kEot);
    const auto qback = parse_generation(v, qfull, PromptMode::qa, &bank);
    if (!qback.well_formed || qback.question != detokenize(tokenize(s.question)) || qback.answer != s.answer() ||
        !(qback.graph == s.evidence_graph))
      ++mismatches;
  }
  return {mismatches == 0 && shift_errors == 0, "1000 scene graphs + 1000 QA pairs: " + std::to_string(mismatches) +
                                                    " round-trip mismatches, " + std::to_string(shift_errors) +
                                                    " shift-consistency failures"};
}

// ---------------------------------------------------------------------------
// 7. Causality

Outcome criterion_causality(Env& env) {
  const Vocab v = Vocab::from_bank(env.world.spec.bank);
  long vqa_cells = 0, vqa_bad = 0, srm_cells = 0, srm_bad = 0;
  const auto vqa = UniVqaModel<float>::create(UniVqaConfig{}, v.size(), 4);
  for (int si = 0; si < 5; ++si) {
    const Sample& s = env.bench.tasks[static_cast<std::size_t>(si)].test[0];
    const auto b = bundle_from_sample(v, s, UniVqaConfig{});
    std::vector<int> dec{Vocab::kBegin};
    for (int i = 0; i < 9; ++i) dec.push_back(9 + (7 * i + si) % (v.size() - 9));
    Graph<float> g0(vqa.params);
    const Matrix<float> ref = g0.value(vqa.step_scores(g0, b, dec));
    for (std::size_t t = 0; t + 1 < dec.size(); ++t) {
      auto alt = dec;
      alt[t + 1] = 9 + (alt[t + 1] + 13 - 9) % (v.size() - 9);
      Graph<float> g(vqa.params);
      const Matrix<float> out = g.value(vqa.step_scores(g, b, alt));
      for (Index r = 0; r <= static_cast<Index>(t); ++r)
        for (Index c = 0; c < out.cols(); ++c) {
          ++vqa_cells;
          vqa_bad += out(r, c) != ref(r, c);
        }
    }
  }
  const auto srm = SrmModel<float>::create(SrmModelConfig{}, v.size(), 2);
  for (int si = 0; si < 5; ++si) {
    const SrmItem item = srm_item(v, env.bench.tasks[static_cast<std::size_t>(si)].train[0]);
    const std::vector<int> base = item.qa.input.ids;
    Graph<float> g0(srm.params);
    const Matrix<float> ref = g0.value(srm.forward(g0, base));
    for (std::size_t t = 0; t + 1 < base.size(); ++t) {
      std::vector<int> alt = base;
      alt[t + 1] = (alt[t + 1] + 11) % v.size();
      Graph<float> g(srm.params);
      const Matrix<float> out = g.value(srm.forward(g, alt));
      for (Index r = 0; r <= static_cast<Index>(t); ++r)
        for (Index c = 0; c < out.cols(); ++c) {
          ++srm_cells;
          srm_bad += out(r, c) != ref(r, c);
        }
    }
  }
  return {vqa_bad == 0 && srm_bad == 0, "UniVQA: " + std::to_string(vqa_bad) + " of " + std::to_string(vqa_cells) +
                                            " earlier-step scores changed; SRM: " + std::to_string(srm_bad) + " of " +
                                            std::to_string(srm_cells) + " earlier-position logits changed"};
}

// ---------------------------------------------------------------------------
// 8. Prompt-sampler fidelity

// Pearson statistic for one table; cells with zero expectation are skipped
// unless observed (then the fit is impossible).
struct ChiSquare {
  double stat = 0;
  int dof = 0;
  bool impossible = false;

  void add(const std::vector<double>& observed, const std::vector<double>& weights) {
    double n = 0, w = 0;
    for (double o : observed) n += o;
    for (double e : weights) w += e;
    if (n == 0) return;
    int cells = 0;
    for (std::size_t i = 0; i < observed.size(); ++i) {
      const double e = n * weights[i] / w;
      if (e == 0) {
        impossible = impossible || observed[i] > 0;
        continue;
      }
      stat += (observed[i] - e) * (observed[i] - e) / e;
      ++cells;
    }
    dof += std::max(cells - 1, 0);
  }
  double p() const {
    if (impossible) return 0.0;
    if (dof == 0) return 1.0;
    boost::math::chi_squared dist(static_cast<double>(dof));
    return boost::math::cdf(boost::math::complement(dist, stat));
  }
};

Outcome criterion_sampler(Env& env) {
  SgPromptDB db;
  for (const auto& t : env.bench.tasks) db.add_task(t.task_tag, t.train);
  struct Seen {
    std::map<std::string, double> obj, att, rel;
    std::array<double, 3> kinds{}, sizes{};
  };
  std::map<std::string, Seen> seen;
  bool sizes_ok = true;
  Rng rng(substream(7, "acceptance/sampler"));
  const std::size_t n_tasks = env.bench.tasks.size();
  for (int i = 0; i < 30000; ++i) {
    const std::string& tag = env.bench.tasks[static_cast<std::size_t>(i) % n_tasks].task_tag;
    const auto p = db.sample(tag, rng);
    if (p.size() < 1 || p.size() > 3) {
      sizes_ok = false;
      continue;
    }
    Seen& s = seen[tag];
    s.sizes[p.size() - 1] += 1;
    for (const auto& r : p.relationships) {
      s.kinds[static_cast<std::size_t>(r.kind())] += 1;
      s.obj[r.subject] += 1;
      if (r.kind() == RelationshipKind::attribute) s.att[r.predicate] += 1;
      if (r.kind() == RelationshipKind::relation) {
        s.rel[r.predicate] += 1;
        s.obj[r.object] += 1;
      }
    }
  }
  ChiSquare omnibus;
  bool unknown = false;
  auto fit = [&](const std::map<std::string, std::uint64_t>& table, const std::map<std::string, double>& got) {
    std::vector<double> o, e;
    for (const auto& [k, v] : table) {
      auto it = got.find(k);
      o.push_back(it == got.end() ? 0.0 : it->second);
      e.push_back(static_cast<double>(v));
    }
    for (const auto& [k, v] : got) unknown = unknown || !table.count(k);
    omnibus.add(o, e);
  };
  auto arr = [](const std::array<std::uint64_t, 3>& a) { return std::vector<double>(a.begin(), a.end()); };
  for (const auto& t : env.bench.tasks) {
    const auto& table = db.table(t.task_tag);
    const Seen& s = seen[t.task_tag];
    fit(table.objects, s.obj);
    fit(table.attributes, s.att);
    fit(table.relations, s.rel);
    omnibus.add(std::vector<double>(s.kinds.begin(), s.kinds.end()), arr(table.kinds));
    omnibus.add(std::vector<double>(s.sizes.begin(), s.sizes.end()), arr(table.item_counts));
  }
  const double p = unknown ? 0.0 : omnibus.p();
  return {sizes_ok && p > 0.01, "30000 prompts over " + std::to_string(n_tasks) +
                                    " task tables, pooled chi-square " + fmt("%.1f", omnibus.stat) + " on " +
                                    std::to_string(omnibus.dof) + " dof, p " + fmt("%.3f", p) +
                                    " (need > 0.01); item counts in {1,2,3}: " + (sizes_ok ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 9. Regularizer identities

Outcome criterion_regularizers(Env& env) {
  const Vocab v = Vocab::from_bank(env.world.spec.bank);
  const UniVqaConfig uc;
  auto model = UniVqaModel<float>::create(uc, v.size(), 5);
  std::vector<VqaItem> items = vqa_items(v, head(env.bench.tasks[0].train, 64), uc);
  std::vector<InputBundle> inputs;
  for (const auto& it : items) inputs.push_back(it.input);
  std::vector<std::size_t> subset(items.size());
  std::iota(subset.begin(), subset.end(), 0);
  const auto ewc = ewc_importance(model, items, subset);
  const auto mas = mas_importance(model, inputs);
  bool nonneg = true;
  for (std::size_t i = 0; i < ewc.size(); ++i) nonneg = nonneg && (ewc[i].array() >= 0).all() && (mas[i].array() >= 0).all();
  ImportanceState<float> se(model.params), sm(model.params);
  se.merge(ewc, model.params, 0.9);
  sm.merge(mas, model.params, 1.0);
  const double pe = se.penalty(model.params, nullptr, 100.0), pm = sm.penalty(model.params, nullptr, 100.0);

  // Strength-0 runs against Finetune, reduced size, every batch loss compared bitwise.
  auto cfg = [](StrategyKind k) {
    RunConfig c;
    c.strategy.kind = k;
    c.train_limit = 300;
    c.eval_limit = 50;
    c.univqa_train.epochs = 2;
    c.seed = 11;
    return c;
  };
  auto losses = [](const RunResult& r) {
    std::vector<double> out;
    for (const auto& t : r.tasks) out.insert(out.end(), t.batch_loss.begin(), t.batch_loss.end());
    return out;
  };
  const auto ft = losses(env.run("finetune_n300", cfg(StrategyKind::finetune)));
  const auto ew = losses(env.run("ewc_strength0_n300", cfg(StrategyKind::ewc)));
  const auto ma = losses(env.run("mas_strength0_n300", cfg(StrategyKind::mas)));
  const bool equal = ft == ew && ft == ma;
  return {nonneg && pe == 0.0 && pm == 0.0 && equal,
          "penalty at anchor: ewc " + fmt("%g", pe) + ", mas " + fmt("%g", pm) + "; importance nonnegative: " +
              (nonneg ? "yes" : "no") + "; strength-0 ewc/mas batch losses bitwise equal to finetune over " +
              std::to_string(ft.size()) + " steps: " + (equal ? "yes" : "no")};
}

// ---------------------------------------------------------------------------
// 10. Memory accounting direction

Outcome criterion_memory(Env& env) {
  std::string d;
  bool ok = true;
  for (auto s : kSeeds) {
    const auto& sgp = full_run(env, StrategyKind::sgp, s);
    const auto& real = full_run(env, StrategyKind::real_rnd, s);
    const double ratio = static_cast<double>(real.memory.bytes) / static_cast<double>(sgp.memory.prompt_db_bytes);
    ok = ok && sgp.memory.prompt_db_bytes * 10 <= real.memory.bytes && real.memory.memory_samples == 3000;
    d += (d.empty() ? "" : "; ") + std::string("seed ") + std::to_string(s) + ": prompts " +
         std::to_string(sgp.memory.prompt_db_bytes) + " B vs " + std::to_string(real.memory.memory_samples) +
         " real samples " + std::to_string(real.memory.bytes) + " B (" + fmt("%.0f", ratio) + "x)";
  }
  return {ok, d + " (need >= 10x)"};
}

// ---------------------------------------------------------------------------
// 11. Determinism

Outcome criterion_determinism(Env& env) {
  RunConfig cfg = strategy_config(StrategyKind::sgp, 5);
  cfg.train_limit = 300;
  cfg.eval_limit = 100;
  cfg.srm_train.epochs = 5;
  env.run("determinism_a", cfg);
  env.run("determinism_b", cfg);
  const std::string a = read_text(env.workdir / "runs" / "determinism_a" / "accuracy_matrix.csv");
  const std::string b = read_text(env.workdir / "runs" / "determinism_b" / "accuracy_matrix.csv");
  return {a == b && !a.empty(), "two sgp runs with identical config and seed: accuracy_matrix.csv " +
                                    std::string(a == b ? "byte-identical" : "differs") + " (" + std::to_string(a.size()) + " bytes)"};
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  fs::path workdir;
  if (const char* w = std::getenv("SGP_ACCEPTANCE_DIR")) workdir = w;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      std::string tok;
      while (std::getline(ss, tok, ',')) only.insert(std::stoi(tok));
    } else if (a == "--workdir" && i + 1 < argc) {
      workdir = argv[++i];
    } else {
      std::cerr << "usage: acceptance [--only 1,2,...] [--workdir DIR]\n";
      return 2;
    }
  }
  if (workdir.empty()) workdir = fs::temp_directory_path() / "sgp_acceptance";

  Env env;
  env.workdir = workdir;
  const auto t0 = Clock::now();
  try {
    std::cerr << "generating default world ..." << std::endl;
    env.world = generate_world(2024, WorldSpec{});
    env.bench = build_function_splits(env.world, env.world.spec.cap_ratio);
    write_benchmark(workdir / "data" / "function", env.bench, env.world.spec.bank);
  } catch (const std::exception& e) {
    std::cout << "FAIL setup: " << e.what() << "\n";
    return 1;
  }

  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> fn;
  };
  const std::vector<Criterion> criteria{
      {1, "directional forgetting gap", [&] { return criterion_gap(env); }},
      {2, "baseline ordering", [&] { return criterion_ordering(env); }},
      {3, "metric oracle equivalence", [] { return criterion_metrics(); }},
      {4, "replay bookkeeping exactness", [&] { return criterion_replay(env); }},
      {5, "gradient checks", [&] { return criterion_gradients(env); }},
      {6, "codec integrity", [&] { return criterion_codec(env); }},
      {7, "causality", [&] { return criterion_causality(env); }},
      {8, "prompt-sampler fidelity", [&] { return criterion_sampler(env); }},
      {9, "regularizer identities", [&] { return criterion_regularizers(env); }},
      {10, "memory accounting direction", [&] { return criterion_memory(env); }},
      {11, "determinism", [&] { return criterion_determinism(env); }},
  };
  int failed = 0;
  std::vector<std::string> lines;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    std::cerr << "criterion " << c.id << ": " << c.name << std::endl;
    Outcome o;
    try {
      o = c.fn();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failed += o.pass ? 0 : 1;
    const std::string line = std::string(o.pass ? "PASS" : "FAIL") + " [" + std::to_string(c.id) + "] " + c.name + ": " + o.detail;
    std::cout << line << std::endl;
    lines.push_back(line);
  }
  std::cout << "---\n";
  for (const auto& l : lines) std::cout << l << "\n";
  std::cout << (failed ? std::to_string(failed) + " criterion(s) failed" : std::string("all criteria passed")) << " ("
            << fmt("%.0f", seconds_since(t0)) << " s)\n";
  return failed ? 1 : 0;
}
