#pragma once

// Sequential training over a continual benchmark under one strategy.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "sgp/codec.hpp"
#include "sgp/io.hpp"
#include "sgp/metrics.hpp"
#include "sgp/parallel.hpp"
#include "sgp/srm.hpp"
#include "sgp/strategies.hpp"
#include "sgp/univqa.hpp"
#include "sgp/world.hpp"

namespace sgp {

// ---------------------------------------------------------------------------
// Configuration

struct RunConfig {
  std::string benchmark;   // benchmark directory (CLI only)
  std::string order_code;  // empty: the benchmark's own order
  StrategyConfig strategy;
  SrmModelConfig srm_model;
  SrmTrainConfig srm_train;
  UniVqaConfig univqa;
  UniVqaTrainConfig univqa_train;
  std::uint64_t seed = 0;
  std::string output_dir;
  std::size_t train_limit = 0;  // per-task train cap, 0 = all
  std::size_t eval_limit = 0;   // per-task test cap, 0 = all
  bool save_checkpoints = true;

  void validate() const {
    strategy.validate();
    srm_train.validate();
    univqa.validate();
    univqa_train.validate();
    if (srm_model.width % srm_model.heads != 0) throw ConfigError("srm width must be divisible by heads");
  }
};

namespace detail {

template <class Fn>
void parse_keys(const json& j, const std::string& block, Fn&& fn) {
  if (!j.is_object()) throw ConfigError("'" + block + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    try {
      if (!fn(k, v)) throw ConfigError("unknown key '" + k + "' in '" + block + "'");
    } catch (const json::exception& e) {
      throw ConfigError("key '" + k + "' in '" + block + "': " + e.what());
    }
  }
}

inline bool parse_adam(AdamConfig& a, const std::string& k, const json& v) {
  if (k == "lr") a.lr = v.get<double>();
  else if (k == "beta1") a.beta1 = v.get<double>();
  else if (k == "beta2") a.beta2 = v.get<double>();
  else if (k == "eps") a.eps = v.get<double>();
  else if (k == "weight_decay") a.weight_decay = v.get<double>();
  else if (k == "clip_norm") a.clip_norm = v.get<double>();
  else return false;
  return true;
}

inline json adam_json(const AdamConfig& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay},
          {"clip_norm", a.clip_norm}};
}

}  // namespace detail

inline json to_json(const SrmModelConfig& c) {
  return {{"width", c.width}, {"layers", c.layers}, {"heads", c.heads}, {"mlp_ratio", c.mlp_ratio},
          {"max_len", c.max_len}, {"tie_output", c.tie_output}};
}

inline SrmModelConfig srm_model_from_json(const json& j) {
  SrmModelConfig c;
  detail::parse_keys(j, "srm_model", [&](const std::string& k, const json& v) {
    if (k == "width") c.width = v.get<int>();
    else if (k == "layers") c.layers = v.get<int>();
    else if (k == "heads") c.heads = v.get<int>();
    else if (k == "mlp_ratio") c.mlp_ratio = v.get<int>();
    else if (k == "max_len") c.max_len = v.get<int>();
    else if (k == "tie_output") c.tie_output = v.get<bool>();
    else return false;
    return true;
  });
  return c;
}

inline json to_json(const SrmTrainConfig& c) {
  json j{{"lambda", c.lambda},
         {"mix_real", c.mix_real},
         {"mix_pseudo", c.mix_pseudo},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"milestones", c.milestones},
         {"lr_factor", c.lr_factor},
         {"max_generation_length", c.max_generation_length},
         {"resample_attempts", c.resample_attempts},
         {"top_k", c.top_k},
         {"temperature", c.temperature},
         {"gt_phrase_prompts", c.gt_phrase_prompts}};
  j.update(detail::adam_json(c.adam));
  return j;
}

inline SrmTrainConfig srm_train_from_json(const json& j) {
  SrmTrainConfig c;
  detail::parse_keys(j, "srm_train", [&](const std::string& k, const json& v) {
    if (detail::parse_adam(c.adam, k, v)) return true;
    if (k == "lambda") c.lambda = v.get<double>();
    else if (k == "mix_real") c.mix_real = v.get<int>();
    else if (k == "mix_pseudo") c.mix_pseudo = v.get<int>();
    else if (k == "epochs") c.epochs = v.get<int>();
    else if (k == "batch_size") c.batch_size = v.get<int>();
    else if (k == "milestones") c.milestones = v.get<std::vector<double>>();
    else if (k == "lr_factor") c.lr_factor = v.get<double>();
    else if (k == "max_generation_length") c.max_generation_length = v.get<int>();
    else if (k == "resample_attempts") c.resample_attempts = v.get<int>();
    else if (k == "top_k") c.top_k = v.get<int>();
    else if (k == "temperature") c.temperature = v.get<double>();
    else if (k == "gt_phrase_prompts") c.gt_phrase_prompts = v.get<bool>();
    else return false;
    return true;
  });
  c.validate();
  return c;
}

inline json to_json(const UniVqaTrainConfig& c) {
  json j{{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"milestones", c.milestones}, {"lr_factor", c.lr_factor}};
  j.update(detail::adam_json(c.adam));
  return j;
}

inline UniVqaTrainConfig univqa_train_from_json(const json& j) {
  UniVqaTrainConfig c;
  detail::parse_keys(j, "univqa_train", [&](const std::string& k, const json& v) {
    if (detail::parse_adam(c.adam, k, v)) return true;
    if (k == "epochs") c.epochs = v.get<int>();
    else if (k == "batch_size") c.batch_size = v.get<int>();
    else if (k == "milestones") c.milestones = v.get<std::vector<double>>();
    else if (k == "lr_factor") c.lr_factor = v.get<double>();
    else return false;
    return true;
  });
  c.validate();
  return c;
}

inline json to_json(const RunConfig& c) {
  return {{"benchmark", c.benchmark},
          {"order_code", c.order_code},
          {"strategy", to_json(c.strategy)},
          {"srm_model", to_json(c.srm_model)},
          {"srm_train", to_json(c.srm_train)},
          {"univqa", to_json(c.univqa)},
          {"univqa_train", to_json(c.univqa_train)},
          {"seed", c.seed},
          {"output_dir", c.output_dir},
          {"train_limit", c.train_limit},
          {"eval_limit", c.eval_limit},
          {"save_checkpoints", c.save_checkpoints}};
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  bool has_strategy = false;
  detail::parse_keys(j, "run config", [&](const std::string& k, const json& v) {
    if (k == "benchmark") c.benchmark = v.get<std::string>();
    else if (k == "order_code") c.order_code = v.get<std::string>();
    else if (k == "strategy") {
      c.strategy = strategy_from_json(v);
      has_strategy = true;
    } else if (k == "srm_model") c.srm_model = srm_model_from_json(v);
    else if (k == "srm_train") c.srm_train = srm_train_from_json(v);
    else if (k == "univqa") c.univqa = univqa_config_from_json(v);
    else if (k == "univqa_train") c.univqa_train = univqa_train_from_json(v);
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "output_dir") c.output_dir = v.get<std::string>();
    else if (k == "train_limit") c.train_limit = v.get<std::size_t>();
    else if (k == "eval_limit") c.eval_limit = v.get<std::size_t>();
    else if (k == "save_checkpoints") c.save_checkpoints = v.get<bool>();
    else return false;
    return true;
  });
  if (!has_strategy) throw ConfigError("run config needs a 'strategy' block");
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Results

struct TaskLog {
  std::string tag;
  std::size_t train_items = 0;
  std::size_t extra_items = 0;
  std::vector<double> batch_loss;  // univqa, per optimizer step
  std::optional<ReplaySet> replay;  // sgp, tasks >= 2
  std::size_t replay_rejected = 0;  // triplets the answerer could not use
  std::vector<double> srm_epoch_loss;
  std::vector<std::vector<json>> predictions;  // per seen test set
};

struct MemoryReport {
  std::string strategy;
  std::size_t bytes = 0;  // what the strategy stores besides the answerer
  std::size_t prompt_db_bytes = 0;
  std::size_t srm_param_bytes = 0;
  std::size_t memory_samples = 0;
  std::optional<std::size_t> budget_bytes, budget_samples;
  std::map<std::string, std::size_t> per_task;
};

inline json to_json(const MemoryReport& r) {
  json j{{"strategy", r.strategy},
         {"bytes", r.bytes},
         {"prompt_db_bytes", r.prompt_db_bytes},
         {"srm_param_bytes", r.srm_param_bytes},
         {"memory_samples", r.memory_samples},
         {"per_task", r.per_task}};
  j["budget_bytes"] = r.budget_bytes ? json(*r.budget_bytes) : json(nullptr);
  j["budget_samples"] = r.budget_samples ? json(*r.budget_samples) : json(nullptr);
  return j;
}

struct RunResult {
  AccuracyMatrix matrix;
  MetricReport report;
  MemoryReport memory;
  std::vector<TaskLog> tasks;
  std::vector<json> events;
  SgPromptDB prompt_db;
};

using EventSink = std::function<void(const json&)>;

// ---------------------------------------------------------------------------
// Helpers

inline std::optional<VqaItem> vqa_item(const Vocab& v, const Sample& s, const UniVqaConfig& cfg) {
  InputBundle b = bundle_from_sample(v, s, cfg);
  try {
    AnswerTarget t = answer_target(v, s.answer(), b.ocr_words, cfg.max_decode_steps);
    return VqaItem{std::move(b), std::move(t)};
  } catch (const DataError&) {
    return std::nullopt;
  }
}

inline std::optional<VqaItem> vqa_item(const Vocab& v, const ReplayTriplet& t, const UniVqaConfig& cfg) {
  if (t.question.empty() || t.answer.empty() || t.sg_srm.relationships.empty()) return std::nullopt;
  InputBundle b = bundle_from_text(v, t.sg_srm, t.question, cfg);
  if (b.question.empty()) return std::nullopt;
  try {
    AnswerTarget target = answer_target(v, t.answer, {}, cfg.max_decode_steps);
    return VqaItem{std::move(b), std::move(target)};
  } catch (const DataError&) {
    return std::nullopt;
  }
}

inline std::vector<VqaItem> vqa_items(const Vocab& v, const std::vector<Sample>& samples, const UniVqaConfig& cfg) {
  std::vector<VqaItem> out;
  for (const auto& s : samples) {
    auto it = vqa_item(v, s, cfg);
    if (!it) throw DataError("sample " + s.id + " has an answer the model cannot express");
    out.push_back(std::move(*it));
  }
  return out;
}

/// Mean accuracy on `test`; fills `predictions` when non-null.
template <class T>
double evaluate(const UniVqaModel<T>& model, const Vocab& v, const std::vector<Sample>& test, const UniVqaConfig& cfg,
                std::vector<json>* predictions) {
  if (test.empty()) throw DataError("empty test set");
  std::vector<AnswerDecode> out(test.size());
  parallel_for(static_cast<int>(test.size()), [&](int i) {
    out[static_cast<std::size_t>(i)] = model.decode(bundle_from_sample(v, test[static_cast<std::size_t>(i)], cfg), v);
  });
  double sum = 0.0;
  for (std::size_t i = 0; i < test.size(); ++i) {
    const double acc = answer_accuracy(out[i].text(), test[i].annotations);
    sum += acc;
    if (predictions)
      predictions->push_back({{"id", test[i].id}, {"prediction", out[i].text()}, {"answer", test[i].answer()}, {"accuracy", acc}});
  }
  return sum / static_cast<double>(test.size());
}

inline std::vector<Sample> head(const std::vector<Sample>& v, std::size_t limit) {
  if (limit == 0 || limit >= v.size()) return v;
  return {v.begin(), v.begin() + static_cast<std::ptrdiff_t>(limit)};
}

/// Bytes of an SGP run's stored state: SRM parameters plus prompts of every task.
inline std::size_t default_real_budget(const ContinualBenchmark& b, const RunConfig& cfg, const Vocab& v) {
  const auto srm = SrmModel<float>::create(cfg.srm_model, v.size(), 0);
  SgPromptDB db(cfg.srm_train.gt_phrase_prompts);
  for (const auto& t : b.tasks) db.add_task(t.task_tag, head(t.train, cfg.train_limit));
  return 4 * srm.params.scalar_count() + db.serialize().size();
}

// ---------------------------------------------------------------------------
// The sequence

inline RunResult run_sequence(const ContinualBenchmark& bench_in, const ConceptBank& bank, const RunConfig& cfg,
                              const EventSink& sink = {}) {
  cfg.validate();
  bench_in.validate();
  const ContinualBenchmark bench = cfg.order_code.empty() ? bench_in : bench_in.reordered(cfg.order_code);
  const Vocab vocab = Vocab::from_bank(bank);
  const StrategyConfig& st = cfg.strategy;
  const auto t0 = std::chrono::steady_clock::now();

  RunResult res;
  std::vector<std::string> labels;
  for (const auto& t : bench.tasks) labels.push_back(t.task_tag);
  res.matrix = AccuracyMatrix(labels);
  auto emit = [&](json e) {
    e["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (sink) sink(e);
    res.events.push_back(std::move(e));
  };

  auto vqa = UniVqaModel<float>::create(cfg.univqa, vocab.size(), substream(cfg.seed, "univqa"));
  const bool sgp = st.kind == StrategyKind::sgp;
  std::optional<SrmModel<float>> srm;
  if (sgp) srm = SrmModel<float>::create(cfg.srm_model, vocab.size(), substream(cfg.seed, "srm"));
  SgPromptDB db(cfg.srm_train.gt_phrase_prompts);
  ImportanceState<float> importance;
  std::optional<EpisodicMemory> memory;
  if (st.is_real()) {
    auto bytes = st.budget_bytes;
    if (!bytes && !st.budget_samples) bytes = default_real_budget(bench, cfg, vocab);
    memory.emplace(st.kind == StrategyKind::real_rnd ? EpisodicMemory::Policy::rnd : EpisodicMemory::Policy::kmeans, bytes,
                   st.budget_samples);
  }
  emit({{"event", "start"}, {"strategy", strategy_name(st.kind)}, {"seed", cfg.seed}, {"order", bench.order_code}});

  std::vector<std::string> seen;
  for (std::size_t i = 0; i < bench.tasks.size(); ++i) {
    const TaskDataset& task = bench.tasks[i];
    const std::uint64_t task_seed = substream(cfg.seed, "task/" + std::to_string(i));
    const std::vector<Sample> train = head(task.train, cfg.train_limit);
    TaskLog log;
    log.tag = task.task_tag;
    const auto current = vqa_items(vocab, train, cfg.univqa);
    log.train_items = current.size();
    std::vector<VqaItem> extra;

    if (sgp) {
      std::vector<ReplayTriplet> replay;
      if (!seen.empty() && st.gamma > 0) {
        const int total = static_cast<int>(std::llround(st.gamma * static_cast<double>(train.size())));
        ReplaySet rs = generate_replay_set(*srm, vocab, &bank, db, seen, total, substream(task_seed, "replay"), cfg.srm_train);
        emit({{"event", "replay"}, {"task", task.task_tag}, {"total", total}, {"requested", rs.requested},
              {"produced", rs.produced}, {"attempts", rs.attempts}, {"shortfall", rs.shortfall()}});
        for (const auto& t : rs.triplets) {
          if (auto it = vqa_item(vocab, t, cfg.univqa)) extra.push_back(std::move(*it));
          else ++log.replay_rejected;
        }
        replay = rs.triplets;
        log.replay = std::move(rs);
      }
      std::vector<Sample> srm_data = train;
      if (st.annotation_fraction < 1.0) {
        Rng r(substream(task_seed, "annotation"));
        auto idx = r.permutation(train.size());
        idx.resize(std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(st.annotation_fraction * static_cast<double>(train.size())))));
        std::sort(idx.begin(), idx.end());
        srm_data.clear();
        for (auto k : idx) srm_data.push_back(train[k]);
      }
      const auto rep = train_srm(*srm, vocab, srm_data, replay, cfg.srm_train, seen.empty(), substream(task_seed, "srm"));
      log.srm_epoch_loss = rep.epoch_loss;
      db.add_task(task.task_tag, srm_data);
      emit({{"event", "srm_trained"}, {"task", task.task_tag}, {"real", rep.real_items}, {"pseudo", rep.pseudo_items},
            {"final_loss", rep.epoch_loss.empty() ? json(nullptr) : json(rep.epoch_loss.back())}});
    }

    if (memory) {
      for (const auto& e : memory->entries()) {
        auto it = vqa_item(vocab, e.sample, cfg.univqa);
        if (it) extra.push_back(std::move(*it));
      }
    }

    PenaltyFn<float> penalty;
    const bool regularized = (st.kind == StrategyKind::ewc || st.kind == StrategyKind::mas) && st.strength > 0;
    if (regularized && !importance.empty())
      penalty = [&](const ParameterSet<float>& p, Gradients<float>& g) { return importance.penalty(p, &g, st.strength); };

    log.extra_items = extra.size();
    const auto report = train_univqa(vqa, current, extra, cfg.univqa_train, substream(task_seed, "univqa"), penalty);
    log.batch_loss = report.batch_loss;
    emit({{"event", "univqa_trained"}, {"task", task.task_tag}, {"current", current.size()}, {"extra", extra.size()},
          {"steps", report.steps}, {"final_loss", report.epoch_loss.empty() ? json(nullptr) : json(report.epoch_loss.back())}});

    if (regularized) {
      const auto subset = importance_subset(current.size(), st.importance_samples, substream(task_seed, "importance"));
      if (importance.empty()) importance = ImportanceState<float>(vqa.params);
      if (st.kind == StrategyKind::ewc) {
        importance.merge(ewc_importance(vqa, current, subset), vqa.params, st.ewc_decay);
      } else {
        std::vector<InputBundle> inputs;
        for (auto k : subset) inputs.push_back(current[k].input);
        importance.merge(mas_importance(vqa, inputs), vqa.params, 1.0);
      }
    }
    if (memory) {
      Rng r(substream(task_seed, "memory"));
      if (memory->policy() == EpisodicMemory::Policy::kmeans) {
        memory->add_task(task.task_tag, train, r, [&](std::size_t k) -> Eigen::RowVectorXd {
          return vqa.sample_embedding(current[k].input).cast<double>();
        });
      } else {
        memory->add_task(task.task_tag, train, r);
      }
      emit({{"event", "memory"}, {"task", task.task_tag}, {"bytes", memory->bytes()}, {"counts", memory->counts()}});
    }

    seen.push_back(task.task_tag);
    json row = json::object();
    for (std::size_t j = 0; j <= i; ++j) {
      std::vector<json> preds;
      const double acc = evaluate(vqa, vocab, head(bench.tasks[j].test, cfg.eval_limit), cfg.univqa, &preds);
      res.matrix.set(i, j, acc);
      row[bench.tasks[j].task_tag] = acc;
      log.predictions.push_back(std::move(preds));
    }
    emit({{"event", "evaluated"}, {"task", task.task_tag}, {"accuracy", row}, {"A", average_accuracy(res.matrix, i + 1)}});

    if (cfg.save_checkpoints && !cfg.output_dir.empty()) {
      const fs::path dir = fs::path(cfg.output_dir) / "checkpoints";
      const std::string stem = "task" + std::to_string(i + 1) + "_" + task.task_tag;
      write_checkpoint(dir / (stem + "_univqa.bin"), vqa.params,
                       {{"model", "univqa"}, {"task", task.task_tag}, {"config", to_json(cfg.univqa)}, {"seed", cfg.seed}});
      if (srm)
        write_checkpoint(dir / (stem + "_srm.bin"), srm->params,
                         {{"model", "srm"}, {"task", task.task_tag}, {"config", to_json(cfg.srm_model)}, {"seed", cfg.seed}});
    }
    res.tasks.push_back(std::move(log));
  }

  res.report = metric_report(res.matrix);
  MemoryReport& mr = res.memory;
  mr.strategy = strategy_name(st.kind);
  if (sgp) {
    mr.prompt_db_bytes = db.serialize().size();
    mr.srm_param_bytes = 4 * srm->params.scalar_count();
    mr.bytes = mr.prompt_db_bytes;
  }
  if (memory) {
    mr.bytes = memory->bytes();
    mr.memory_samples = memory->entries().size();
    mr.budget_bytes = memory->budget_bytes();
    mr.budget_samples = memory->budget_samples();
    mr.per_task = memory->counts();
  }
  res.prompt_db = std::move(db);
  emit({{"event", "finished"}, {"final_A", res.report.final_A}});
  return res;
}

/// Writes the run directory (checkpoints are written during the run).
inline void write_run(const fs::path& dir, const RunConfig& cfg, const RunResult& r) {
  write_json(dir / "config.json", to_json(cfg));
  write_text(dir / "accuracy_matrix.csv", r.matrix.to_csv());
  json report = to_json(r.report);
  report["seed"] = cfg.seed;
  report["strategy"] = strategy_name(cfg.strategy.kind);
  report["order_code"] = r.matrix.labels().empty() ? "" : [&] {
    std::string s;
    for (const auto& l : r.matrix.labels()) s += l;
    return s;
  }();
  write_json(dir / "metric_report.json", report);
  json mem = to_json(r.memory);
  mem["seed"] = cfg.seed;
  write_json(dir / "memory_report.json", mem);
  write_jsonl(dir / "events.jsonl", r.events);
  for (std::size_t i = 0; i < r.tasks.size(); ++i) {
    const auto& t = r.tasks[i];
    std::vector<json> preds;
    for (std::size_t j = 0; j < t.predictions.size(); ++j)
      for (const auto& p : t.predictions[j]) {
        json q = p;
        q["test_task"] = r.matrix.labels()[j];
        preds.push_back(std::move(q));
      }
    write_jsonl(dir / "predictions" / ("after_task" + std::to_string(i + 1) + "_" + t.tag + ".jsonl"), preds);
    if (t.replay) {
      std::vector<json> rows;
      for (const auto& tr : t.replay->triplets) rows.push_back(to_json(tr));
      write_jsonl(dir / "replay" / ("task" + std::to_string(i + 1) + "_" + t.tag + ".jsonl"), rows);
    }
  }
  if (cfg.strategy.kind == StrategyKind::sgp) write_json(dir / "prompt_db.json", r.prompt_db.to_json());
}

}  // namespace sgp
