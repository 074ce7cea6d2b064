#pragma once

// Symbolic replay model: a decoder-only transformer over the codec formats,
// the SG-prompt database, and replay-set generation.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "sgp/batch.hpp"
#include "sgp/codec.hpp"
#include "sgp/layers.hpp"
#include "sgp/optim.hpp"
#include "sgp/parallel.hpp"
#include "sgp/rng.hpp"
#include "sgp/tensor.hpp"
#include "sgp/world.hpp"

namespace sgp {

struct SrmModelConfig {
  int width = 64;
  int layers = 2;
  int heads = 4;
  int mlp_ratio = 2;
  int max_len = 96;
  bool tie_output = true;
};

struct SrmTrainConfig {
  double lambda = 0.25;
  int mix_real = 4;
  int mix_pseudo = 1;
  int epochs = 15;
  int batch_size = 16;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 0.01, 1.0};
  std::vector<double> milestones{14000.0 / 24000.0, 19000.0 / 24000.0};
  double lr_factor = 0.1;
  int max_generation_length = 48;
  int resample_attempts = 5;
  int top_k = 40;
  double temperature = 1.0;
  bool gt_phrase_prompts = false;

  void validate() const {
    if (lambda < 0) throw ConfigError("srm lambda must be >= 0");
    if (mix_real <= 0 || mix_pseudo <= 0) throw ConfigError("srm mix ratio components must be positive");
    if (epochs < 0 || batch_size < 1) throw ConfigError("srm epochs/batch_size invalid");
    if (resample_attempts < 1) throw ConfigError("srm resample_attempts must be >= 1");
    if (top_k < 1 || temperature <= 0) throw ConfigError("srm sampling parameters invalid");
  }
};

template <class T>
class SrmModel {
 public:
  SrmModelConfig cfg;
  int vocab_size = 0;
  ParameterSet<T> params;
  std::size_t tok_emb = 0, pos_emb = 0;
  std::vector<TransformerBlock> blocks;
  LayerNorm ln_f;
  Linear head;

  static SrmModel create(const SrmModelConfig& cfg, int vocab_size, std::uint64_t seed) {
    if (cfg.width % cfg.heads != 0) throw ConfigError("srm width must be divisible by heads");
    SrmModel m;
    m.cfg = cfg;
    m.vocab_size = vocab_size;
    Rng rng(substream(seed, "srm/init"));
    m.tok_emb = m.params.add("srm.tok_emb", normal_matrix<T>(vocab_size, cfg.width, 0.02, rng));
    m.pos_emb = m.params.add("srm.pos_emb", normal_matrix<T>(cfg.max_len, cfg.width, 0.02, rng));
    for (int l = 0; l < cfg.layers; ++l)
      m.blocks.push_back(TransformerBlock::create(m.params, "srm.block" + std::to_string(l), cfg.width, cfg.heads,
                                                  cfg.mlp_ratio, rng));
    m.ln_f = LayerNorm::create(m.params, "srm.ln_f", cfg.width);
    if (!cfg.tie_output) m.head = Linear::create(m.params, "srm.head", cfg.width, vocab_size, rng, false);
    return m;
  }

  /// Next-token logits for every position (n x vocab).
  Var forward(Graph<T>& g, std::span<const int> ids) const {
    const auto n = static_cast<Index>(ids.size());
    if (n == 0 || n > cfg.max_len) throw DataError("srm sequence length " + std::to_string(n) + " out of range");
    std::vector<int> pos(ids.size());
    std::iota(pos.begin(), pos.end(), 0);
    Var x = g.add(g.gather_rows(g.param(tok_emb), ids), g.gather_rows(g.param(pos_emb), pos));
    const AttentionMask mask = AttentionMask::causal(n);
    for (const auto& b : blocks) x = b(g, x, mask);
    x = ln_f(g, x);
    return cfg.tie_output ? g.matmul_nt(x, g.param(tok_emb)) : head(g, x);
  }

  /// Mean cross-entropy over the supervised target positions (1x1).
  Var sequence_loss(Graph<T>& g, const EncodedPair& p) const {
    std::vector<int> targets(p.target.ids.size(), -1);
    int count = 0;
    for (std::size_t i = 0; i < targets.size(); ++i)
      if (p.target.loss_mask[i]) {
        targets[i] = p.target.ids[i];
        ++count;
      }
    if (count == 0) throw DataError("sequence has no supervised positions");
    return g.scale(g.cross_entropy_sum(forward(g, p.input.ids), targets), T(1) / T(count));
  }

  /// Incremental decoding state.
  struct Decoder {
    std::vector<KvCache<T>> caches;
    int length = 0;
  };

  Decoder start() const { return Decoder{std::vector<KvCache<T>>(blocks.size()), 0}; }

  /// Appends `ids`; returns the logits row after the last one.
  Eigen::Matrix<T, 1, Eigen::Dynamic> feed(Decoder& d, std::span<const int> ids) const {
    if (d.length + static_cast<int>(ids.size()) > cfg.max_len) throw DataError("srm decode exceeds max_len");
    Matrix<T> x(static_cast<Index>(ids.size()), cfg.width);
    for (std::size_t i = 0; i < ids.size(); ++i)
      x.row(static_cast<Index>(i)) = params.value(tok_emb).row(ids[i]) + params.value(pos_emb).row(d.length + static_cast<int>(i));
    for (std::size_t l = 0; l < blocks.size(); ++l) x = blocks[l].step(params, x, d.caches[l], true);
    d.length += static_cast<int>(ids.size());
    const Matrix<T> h = ln_f.apply(params, Matrix<T>(x.bottomRows(1)));
    if (cfg.tie_output) return h * params.value(tok_emb).transpose();
    return head.apply(params, h);
  }
};

// ---------------------------------------------------------------------------
// SG-prompt database

struct PromptTable {
  std::map<std::string, std::uint64_t> objects, attributes, relations;
  std::map<std::string, std::uint64_t> phrases;  // "subject|predicate|object", phrase mode only
  std::array<std::uint64_t, 3> kinds{};          // object, attribute, relation items
  std::array<std::uint64_t, 3> item_counts{};    // prompts of 1, 2, 3 items
};

class SgPromptDB {
 public:
  explicit SgPromptDB(bool phrase_mode = false) : phrase_mode_(phrase_mode) {}

  bool phrase_mode() const { return phrase_mode_; }
  bool has(const std::string& tag) const { return tables_.count(tag) > 0; }
  const PromptTable& table(const std::string& tag) const {
    auto it = tables_.find(tag);
    if (it == tables_.end()) throw DataError("no SG-prompt table for task '" + tag + "'");
    return it->second;
  }
  const std::map<std::string, PromptTable>& tables() const { return tables_; }

  /// Atom counts over every relationship of the train split's scene graphs;
  /// item kinds and item counts over the evidence graphs.
  void add_task(const std::string& tag, const std::vector<Sample>& train) {
    if (train.empty()) throw DataError("cannot build SG prompts from an empty train split");
    PromptTable t;
    for (const auto& s : train) {
      for (const auto& r : s.scene_graph.relationships) {
        ++t.objects[r.subject];
        if (r.kind() == RelationshipKind::attribute) ++t.attributes[r.predicate];
        if (r.kind() == RelationshipKind::relation) {
          ++t.relations[r.predicate];
          ++t.objects[r.object];
        }
      }
      for (const auto& r : s.evidence_graph.relationships) {
        ++t.kinds[static_cast<std::size_t>(r.kind())];
        if (phrase_mode_) ++t.phrases[r.subject + "|" + r.predicate + "|" + r.object];
      }
      ++t.item_counts[static_cast<std::size_t>(std::clamp<std::size_t>(s.evidence_graph.size(), 1, 3) - 1)];
    }
    tables_[tag] = std::move(t);
  }

  /// One to three relationship items, atoms drawn proportionally to counts.
  SceneGraph sample(const std::string& tag, Rng& rng) const {
    const PromptTable& t = table(tag);
    const std::size_t n = rng.weighted(std::span<const std::uint64_t>(t.item_counts)) + 1;
    SceneGraph g;
    for (std::size_t i = 0; i < n; ++i) g.relationships.push_back(sample_item(t, rng));
    return g;
  }

  /// Compact binary form: per table, each entry as name, NUL, uint64 count.
  std::vector<std::uint8_t> serialize() const {
    std::vector<std::uint8_t> out;
    auto put_name = [&](const std::string& s) {
      out.insert(out.end(), s.begin(), s.end());
      out.push_back(0);
    };
    auto put_u64 = [&](std::uint64_t v) {
      for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
    };
    auto put_map = [&](const std::map<std::string, std::uint64_t>& m) {
      put_u64(m.size());
      for (const auto& [k, v] : m) {
        put_name(k);
        put_u64(v);
      }
    };
    for (const auto& [tag, t] : tables_) {
      put_name(tag);
      put_map(t.objects);
      put_map(t.attributes);
      put_map(t.relations);
      put_map(t.phrases);
      for (auto v : t.kinds) put_u64(v);
      for (auto v : t.item_counts) put_u64(v);
    }
    return out;
  }
  std::size_t byte_size() const { return serialize().size(); }

  json to_json() const {
    json j;
    j["phrase_mode"] = phrase_mode_;
    j["byte_size"] = byte_size();
    for (const auto& [tag, t] : tables_) {
      j["tables"][tag] = {{"objects", t.objects},     {"attributes", t.attributes}, {"relations", t.relations},
                          {"phrases", t.phrases},     {"kinds", t.kinds},           {"item_counts", t.item_counts}};
    }
    return j;
  }

  static SgPromptDB from_json(const json& j) {
    SgPromptDB db(j.value("phrase_mode", false));
    const json tables = j.value("tables", json::object());
    for (const auto& [tag, t] : tables.items()) {
      PromptTable p;
      p.objects = t.at("objects").get<std::map<std::string, std::uint64_t>>();
      p.attributes = t.at("attributes").get<std::map<std::string, std::uint64_t>>();
      p.relations = t.at("relations").get<std::map<std::string, std::uint64_t>>();
      p.phrases = t.at("phrases").get<std::map<std::string, std::uint64_t>>();
      p.kinds = t.at("kinds").get<std::array<std::uint64_t, 3>>();
      p.item_counts = t.at("item_counts").get<std::array<std::uint64_t, 3>>();
      db.tables_[tag] = std::move(p);
    }
    return db;
  }

 private:
  static const std::string& draw(const std::map<std::string, std::uint64_t>& m, Rng& rng) {
    if (m.empty()) throw DataError("SG-prompt table is empty");
    std::vector<std::uint64_t> w;
    w.reserve(m.size());
    for (const auto& [k, v] : m) w.push_back(v);
    auto it = m.begin();
    std::advance(it, static_cast<std::ptrdiff_t>(rng.weighted(std::span<const std::uint64_t>(w))));
    return it->first;
  }

  Relationship sample_item(const PromptTable& t, Rng& rng) const {
    if (phrase_mode_) {
      const std::string& key = draw(t.phrases, rng);
      const auto a = key.find('|'), b = key.find('|', a + 1);
      return {key.substr(0, a), key.substr(a + 1, b - a - 1), key.substr(b + 1)};
    }
    auto kind = static_cast<RelationshipKind>(rng.weighted(std::span<const std::uint64_t>(t.kinds)));
    if (kind == RelationshipKind::attribute && t.attributes.empty()) kind = RelationshipKind::object;
    if (kind == RelationshipKind::relation && t.relations.empty()) kind = RelationshipKind::object;
    switch (kind) {
      case RelationshipKind::object:
        return {draw(t.objects, rng), "", ""};
      case RelationshipKind::attribute: {
        const std::string& attr = draw(t.attributes, rng);
        return {draw(t.objects, rng), attr, ""};
      }
      case RelationshipKind::relation:
        break;
    }
    const std::string& s = draw(t.objects, rng);
    const std::string& rel = draw(t.relations, rng);
    return {s, rel, draw(t.objects, rng)};
  }

  bool phrase_mode_ = false;
  std::map<std::string, PromptTable> tables_;
};

// ---------------------------------------------------------------------------
// Training

struct ReplayTriplet {
  SceneGraph sg_srm;
  std::string question;
  std::string answer;
  SceneGraph prompt_used;
  std::string source_task;
};

inline json to_json(const ReplayTriplet& t) {
  return {{"source_task", t.source_task},
          {"prompt", to_json(t.prompt_used)},
          {"sg_srm", to_json(t.sg_srm)},
          {"question", t.question},
          {"answer", t.answer}};
}

inline ReplayTriplet replay_triplet_from_json(const json& j) {
  return {scene_graph_from_json(j.at("sg_srm")), j.at("question"), j.at("answer"), scene_graph_from_json(j.at("prompt")),
          j.at("source_task")};
}

/// One SRM training example: a scene-graph sequence and a QA sequence.
struct SrmItem {
  EncodedPair sg;
  EncodedPair qa;
  bool pseudo = false;
};

inline SrmItem srm_item(const Vocab& v, const Sample& s) {
  return {encode_sg_lm(v, s.scene_graph), encode_qa_gen(v, s.evidence_graph, s.question, s.answer()), false};
}

inline SrmItem srm_item(const Vocab& v, const ReplayTriplet& t) {
  return {encode_sg_lm(v, t.sg_srm), encode_qa_gen(v, t.prompt_used, t.question, t.answer), true};
}

/// L_QA + lambda * L_SG for one item; the SG term is dropped when lambda = 0.
template <class T>
Var srm_loss(const SrmModel<T>& m, Graph<T>& g, const SrmItem& item, double lambda) {
  Var qa = m.sequence_loss(g, item.qa);
  if (lambda == 0.0) return qa;
  return g.add(qa, g.scale(m.sequence_loss(g, item.sg), static_cast<T>(lambda)));
}

/// Real/pseudo interleaving: each cycle of mix_real + mix_pseudo slots puts the
/// pseudo slots last ([r,r,r,r,p] for 4:1). Returns (is_pseudo, index) pairs
/// covering every real item once; pseudo items cycle through `pseudo_order`
/// starting at `*pseudo_cursor`.
inline std::vector<std::pair<bool, int>> mix_stream(const std::vector<int>& real_order, const std::vector<int>& pseudo_order,
                                                    int mix_real, int mix_pseudo, std::size_t* pseudo_cursor) {
  std::vector<std::pair<bool, int>> out;
  std::size_t r = 0;
  while (r < real_order.size()) {
    for (int k = 0; k < mix_real && r < real_order.size(); ++k) out.emplace_back(false, real_order[r++]);
    if (pseudo_order.empty()) continue;
    for (int k = 0; k < mix_pseudo; ++k) {
      out.emplace_back(true, pseudo_order[*pseudo_cursor % pseudo_order.size()]);
      ++*pseudo_cursor;
    }
  }
  return out;
}

struct SrmTrainReport {
  std::vector<double> epoch_loss;  // mean item loss per epoch
  long steps = 0;
  std::size_t real_items = 0, pseudo_items = 0;
};

/// Trains on the current task's real samples mixed with replayed triplets.
template <class T>
SrmTrainReport train_srm(SrmModel<T>& model, const Vocab& vocab, const std::vector<Sample>& current,
                         const std::vector<ReplayTriplet>& replay, const SrmTrainConfig& cfg, bool first_task,
                         std::uint64_t seed) {
  cfg.validate();
  if (first_task && !replay.empty()) throw ConfigError("replay supplied for the first task");
  std::vector<SrmItem> real, pseudo;
  for (const auto& s : current) real.push_back(srm_item(vocab, s));
  for (const auto& t : replay) pseudo.push_back(srm_item(vocab, t));
  Rng rng(substream(seed, "srm/train"));
  Adam<T> opt(model.params, cfg.adam);
  const StaircaseSchedule schedule{cfg.adam.lr, cfg.milestones, cfg.lr_factor};
  std::vector<int> real_order(real.size()), pseudo_order(pseudo.size());
  std::iota(real_order.begin(), real_order.end(), 0);
  std::iota(pseudo_order.begin(), pseudo_order.end(), 0);
  rng.shuffle(pseudo_order);
  std::size_t cursor = 0;
  const std::size_t per_epoch =
      mix_stream(real_order, pseudo_order, cfg.mix_real, cfg.mix_pseudo, &cursor).size();
  cursor = 0;
  const long total_steps =
      static_cast<long>(cfg.epochs) * static_cast<long>((per_epoch + cfg.batch_size - 1) / cfg.batch_size);
  SrmTrainReport report;
  Gradients<T> grads(model.params);
  for (int e = 0; e < cfg.epochs; ++e) {
    rng.shuffle(real_order);
    const auto stream = mix_stream(real_order, pseudo_order, cfg.mix_real, cfg.mix_pseudo, &cursor);
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < stream.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const int n = static_cast<int>(std::min(stream.size() - b, static_cast<std::size_t>(cfg.batch_size)));
      grads.zero();
      const double sum = accumulate_batch(model.params, grads, n, [&](Graph<T>& g, int i) {
        const auto [is_pseudo, idx] = stream[b + static_cast<std::size_t>(i)];
        return srm_loss(model, g, is_pseudo ? pseudo[static_cast<std::size_t>(idx)] : real[static_cast<std::size_t>(idx)],
                        cfg.lambda);
      });
      grads.scale(T(1) / T(n));
      opt.step(model.params, grads, schedule.at(report.steps, total_steps));
      ++report.steps;
      epoch_sum += sum;
      for (int i = 0; i < n; ++i) (stream[b + static_cast<std::size_t>(i)].first ? report.pseudo_items : report.real_items)++;
    }
    report.epoch_loss.push_back(epoch_sum / static_cast<double>(std::max<std::size_t>(stream.size(), 1)));
  }
  return report;
}

// ---------------------------------------------------------------------------
// Decoding and replay

struct DecodeOptions {
  int max_new_tokens = 48;
  int top_k = 40;
  double temperature = 1.0;
  bool greedy = false;
};

/// Continues `prefix` until [e] or max_new_tokens; returns the full sequence.
template <class T>
std::vector<int> srm_decode(const SrmModel<T>& model, const std::vector<int>& prefix, Rng& rng, const DecodeOptions& opt) {
  std::vector<int> seq = prefix;
  auto dec = model.start();
  Eigen::Matrix<T, 1, Eigen::Dynamic> logits = model.feed(dec, prefix);
  for (int step = 0; step < opt.max_new_tokens && static_cast<int>(seq.size()) < model.cfg.max_len; ++step) {
    // Padding, unknown and answerer-only tokens are never sampled.
    for (int banned : {Vocab::kPad, Vocab::kUnk, Vocab::kBegin, Vocab::kEnd})
      if (banned < logits.cols()) logits(0, banned) = -std::numeric_limits<T>::infinity();
    int next = 0;
    if (opt.greedy) {
      logits.maxCoeff(&next);
    } else {
      std::vector<int> idx(static_cast<std::size_t>(logits.cols()));
      std::iota(idx.begin(), idx.end(), 0);
      const auto k = static_cast<std::size_t>(std::min<Index>(opt.top_k, logits.cols()));
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                        [&](int a, int b) { return logits(0, a) > logits(0, b) || (logits(0, a) == logits(0, b) && a < b); });
      const double mx = static_cast<double>(logits(0, idx[0]));
      std::vector<double> w(k);
      for (std::size_t i = 0; i < k; ++i) w[i] = std::exp((static_cast<double>(logits(0, idx[i])) - mx) / opt.temperature);
      next = idx[rng.weighted(std::span<const double>(w))];
    }
    seq.push_back(next);
    if (next == Vocab::kEot) break;
    logits = model.feed(dec, std::span<const int>(&seq.back(), 1));
  }
  return seq;
}

/// Completes a scene graph from an SG prompt; nullopt when the result is
/// malformed or does not start with the prompt.
template <class T>
std::optional<SceneGraph> replay_scene_graph(const SrmModel<T>& model, const Vocab& vocab, const ConceptBank* bank,
                                             const SceneGraph& prompt, Rng& rng, const DecodeOptions& opt) {
  const auto prefix = make_inference_prefix(vocab, prompt, PromptMode::sg);
  if (static_cast<int>(prefix.ids.size()) >= model.cfg.max_len) return std::nullopt;
  const auto seq = srm_decode(model, prefix.ids, rng, opt);
  auto parsed = parse_generation(vocab, seq, PromptMode::sg, bank);
  if (!parsed.well_formed || parsed.graph.size() < prompt.size()) return std::nullopt;
  for (std::size_t i = 0; i < prompt.size(); ++i)
    if (!(parsed.graph.relationships[i] == prompt.relationships[i])) return std::nullopt;
  return parsed.graph;
}

template <class T>
std::optional<std::pair<std::string, std::string>> replay_question_answer(const SrmModel<T>& model, const Vocab& vocab,
                                                                          const ConceptBank* bank, const SceneGraph& prompt,
                                                                          Rng& rng, const DecodeOptions& opt) {
  const auto prefix = make_inference_prefix(vocab, prompt, PromptMode::qa);
  if (static_cast<int>(prefix.ids.size()) >= model.cfg.max_len) return std::nullopt;
  const auto seq = srm_decode(model, prefix.ids, rng, opt);
  auto parsed = parse_generation(vocab, seq, PromptMode::qa, bank);
  if (!parsed.well_formed) return std::nullopt;
  return std::pair{parsed.question, parsed.answer};
}

/// Equal shares of `total` over n tasks; the first total % n get one extra.
inline std::vector<int> replay_shares(int total, int n) {
  if (total < 0) throw ConfigError("replay total must be >= 0");
  if (n <= 0) {
    if (total > 0) throw ConfigError("replay requested with no previous tasks");
    return {};
  }
  std::vector<int> s(static_cast<std::size_t>(n), total / n);
  for (int i = 0; i < total % n; ++i) ++s[static_cast<std::size_t>(i)];
  return s;
}

struct ReplaySet {
  std::vector<ReplayTriplet> triplets;
  std::map<std::string, int> requested, produced;
  int attempts = 0;
  int shortfall() const {
    int s = 0;
    for (const auto& [t, r] : requested) s += r - produced.at(t);
    return s;
  }
};

/// Generates `total` triplets shared equally over `prev_tasks`. Every slot
/// has its own rng substream, so the set is identical for any worker count.
/// A slot that stays malformed after cfg.resample_attempts tries is skipped.
template <class T>
ReplaySet generate_replay_set(const SrmModel<T>& model, const Vocab& vocab, const ConceptBank* bank, const SgPromptDB& db,
                              const std::vector<std::string>& prev_tasks, int total, std::uint64_t seed,
                              const SrmTrainConfig& cfg) {
  const auto shares = replay_shares(total, static_cast<int>(prev_tasks.size()));
  struct Slot {
    std::size_t task;
    int index;
  };
  std::vector<Slot> slots;
  ReplaySet out;
  for (std::size_t t = 0; t < prev_tasks.size(); ++t) {
    db.table(prev_tasks[t]);
    out.requested[prev_tasks[t]] = shares[t];
    out.produced[prev_tasks[t]] = 0;
    for (int i = 0; i < shares[t]; ++i) slots.push_back({t, i});
  }
  const DecodeOptions opt{cfg.max_generation_length, cfg.top_k, cfg.temperature, false};
  std::vector<std::optional<ReplayTriplet>> results(slots.size());
  std::vector<int> tries(slots.size(), 0);
  parallel_for(static_cast<int>(slots.size()), [&](int k) {
    const Slot& slot = slots[static_cast<std::size_t>(k)];
    const std::string& tag = prev_tasks[slot.task];
    Rng rng(substream(seed, "replay/" + tag, static_cast<std::uint64_t>(slot.index)));
    for (int a = 0; a < cfg.resample_attempts; ++a) {
      ++tries[static_cast<std::size_t>(k)];
      const SceneGraph prompt = db.sample(tag, rng);
      auto sg = replay_scene_graph(model, vocab, bank, prompt, rng, opt);
      if (!sg) continue;
      auto qa = replay_question_answer(model, vocab, bank, prompt, rng, opt);
      if (!qa) continue;
      results[static_cast<std::size_t>(k)] = ReplayTriplet{*sg, qa->first, qa->second, prompt, tag};
      return;
    }
  });
  for (std::size_t k = 0; k < slots.size(); ++k) {
    out.attempts += tries[k];
    if (!results[k]) continue;
    ++out.produced[results[k]->source_task];
    out.triplets.push_back(std::move(*results[k]));
  }
  return out;
}

}  // namespace sgp
