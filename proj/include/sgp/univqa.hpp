#pragma once

// Unified VQA answerer: per-modality projections, a fusion transformer with a
// causal decoding block, and a pointer decoder over OCR tokens plus the vocabulary.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "sgp/batch.hpp"
#include "sgp/codec.hpp"
#include "sgp/features.hpp"
#include "sgp/layers.hpp"
#include "sgp/optim.hpp"
#include "sgp/rng.hpp"
#include "sgp/tensor.hpp"
#include "sgp/world.hpp"

namespace sgp {

struct UniVqaConfig {
  int width = 64;
  int fusion_layers = 2;
  int text_layers = 1;
  int heads = 4;
  int mlp_ratio = 2;
  int max_decode_steps = 12;
  int max_text_len = 96;
  bool use_knowledge = false;

  void validate() const {
    if (width < 1 || heads < 1 || width % heads != 0) throw ConfigError("univqa width must be divisible by heads");
    if (max_decode_steps < 1) throw ConfigError("univqa max_decode_steps must be >= 1");
    if (fusion_layers < 1 || text_layers < 0 || mlp_ratio < 1 || max_text_len < 4)
      throw ConfigError("univqa layer configuration invalid");
  }
};

inline json to_json(const UniVqaConfig& c) {
  return {{"width", c.width},         {"fusion_layers", c.fusion_layers},       {"text_layers", c.text_layers},
          {"heads", c.heads},         {"mlp_ratio", c.mlp_ratio},               {"max_decode_steps", c.max_decode_steps},
          {"max_text_len", c.max_text_len}, {"use_knowledge", c.use_knowledge}};
}

inline UniVqaConfig univqa_config_from_json(const json& j) {
  UniVqaConfig c;
  for (const auto& [k, v] : j.items()) {
    if (k == "width") c.width = v.get<int>();
    else if (k == "fusion_layers") c.fusion_layers = v.get<int>();
    else if (k == "text_layers") c.text_layers = v.get<int>();
    else if (k == "heads") c.heads = v.get<int>();
    else if (k == "mlp_ratio") c.mlp_ratio = v.get<int>();
    else if (k == "max_decode_steps") c.max_decode_steps = v.get<int>();
    else if (k == "max_text_len") c.max_text_len = v.get<int>();
    else if (k == "use_knowledge") c.use_knowledge = v.get<bool>();
    else throw ConfigError("unknown univqa key '" + k + "'");
  }
  c.validate();
  return c;
}

enum class Modality { question = 0, sg_text, knowledge, object, ocr, sample, decode };
inline constexpr int kModalityCount = 7;

struct InputBundle {
  std::vector<int> question, sg_text, knowledge;
  std::vector<std::vector<double>> object_appearance, object_box;
  std::vector<int> ocr_ids;  // vocab id of each OCR word (lexical part)
  std::vector<std::string> ocr_words;
  std::vector<std::vector<double>> ocr_region, ocr_trigram, ocr_box;

  std::size_t objects() const { return object_appearance.size(); }
  std::size_t ocr() const { return ocr_words.size(); }
  /// Input positions, including the sample token.
  std::size_t input_count() const {
    return question.size() + sg_text.size() + knowledge.size() + objects() + ocr() + 1;
  }

  /// Modality of every input position, in layout order.
  std::vector<Modality> layout() const {
    std::vector<Modality> m;
    m.insert(m.end(), question.size(), Modality::question);
    m.insert(m.end(), sg_text.size(), Modality::sg_text);
    m.insert(m.end(), knowledge.size(), Modality::knowledge);
    m.insert(m.end(), objects(), Modality::object);
    m.insert(m.end(), ocr(), Modality::ocr);
    m.push_back(Modality::sample);
    return m;
  }

  void validate() const {
    if (question.empty()) throw DataError("input bundle has no question");
    if (objects() == 0 && sg_text.empty()) throw DataError("input bundle needs objects or sg_text");
    if (object_box.size() != objects()) throw DataError("object box count mismatch");
    for (std::size_t i = 0; i < objects(); ++i)
      if (object_appearance[i].size() != kAppearanceDim || object_box[i].size() != kBoxDim)
        throw DataError("object feature dimension mismatch");
    if (ocr_ids.size() != ocr() || ocr_region.size() != ocr() || ocr_trigram.size() != ocr() || ocr_box.size() != ocr())
      throw DataError("ocr entry count mismatch");
    for (std::size_t i = 0; i < ocr(); ++i)
      if (ocr_region[i].size() != kAppearanceDim || ocr_trigram[i].size() != kTrigramDim || ocr_box[i].size() != kBoxDim)
        throw DataError("ocr feature dimension mismatch");
  }
};

namespace detail {
inline std::vector<int> text_ids(const Vocab& v, std::string_view text, int max_len) {
  std::vector<int> ids;
  for (const auto& w : tokenize(text)) ids.push_back(v.id(w));
  if (static_cast<int>(ids.size()) > max_len) ids.resize(static_cast<std::size_t>(max_len));
  return ids;
}
inline std::vector<int> clip(std::vector<int> ids, int max_len) {
  if (static_cast<int>(ids.size()) > max_len) ids.resize(static_cast<std::size_t>(max_len));
  return ids;
}
}  // namespace detail

/// Real sample: question, scene graph as plain text, objects, OCR, knowledge.
inline InputBundle bundle_from_sample(const Vocab& v, const Sample& s, const UniVqaConfig& cfg) {
  InputBundle b;
  b.question = detail::text_ids(v, s.question, cfg.max_text_len);
  b.sg_text = detail::clip(graph_text_ids(v, s.scene_graph), cfg.max_text_len);
  if (cfg.use_knowledge && s.knowledge) b.knowledge = detail::text_ids(v, *s.knowledge, cfg.max_text_len);
  for (const auto& o : s.objects) {
    b.object_appearance.push_back(appearance_vector(o.name, color_in_graph(s.scene_graph, o.name)));
    b.object_box.push_back(box_vector(o.box));
  }
  for (const auto& t : s.ocr_tokens) {
    b.ocr_words.push_back(t.token);
    b.ocr_ids.push_back(v.id(t.token));
    b.ocr_region.push_back(appearance_vector(t.host, color_in_graph(s.scene_graph, t.host)));
    b.ocr_trigram.push_back(trigram_vector(t.token));
    b.ocr_box.push_back(box_vector(t.box));
  }
  return b;
}

/// Replayed sample: no image, so only the scene-graph text and the question.
inline InputBundle bundle_from_text(const Vocab& v, const SceneGraph& sg, std::string_view question,
                                    const UniVqaConfig& cfg) {
  InputBundle b;
  b.question = detail::text_ids(v, question, cfg.max_text_len);
  b.sg_text = detail::clip(graph_text_ids(v, sg), cfg.max_text_len);
  return b;
}

/// Teacher-forcing plan: decoder inputs (<begin>, w1..wm) and joint targets
/// (w1..wm, <end>). A word found in the OCR list targets its first copy slot.
struct AnswerTarget {
  std::vector<int> inputs;
  std::vector<int> targets;
};

inline AnswerTarget answer_target(const Vocab& v, std::string_view answer, const std::vector<std::string>& ocr_words,
                                  int max_decode_steps) {
  const auto words = tokenize(answer);
  if (words.empty()) throw DataError("empty gold answer");
  if (static_cast<int>(words.size()) + 1 > max_decode_steps)
    throw DataError("answer '" + std::string(answer) + "' exceeds max_decode_steps");
  AnswerTarget t;
  t.inputs.push_back(Vocab::kBegin);
  for (const auto& w : words) {
    const auto it = std::find(ocr_words.begin(), ocr_words.end(), w);
    const int id = v.id(w);
    if (it != ocr_words.end()) {
      t.targets.push_back(v.size() + static_cast<int>(it - ocr_words.begin()));
    } else {
      if (id == Vocab::kUnk) throw DataError("answer word '" + w + "' is neither in the vocabulary nor in the OCR list");
      t.targets.push_back(id);
    }
    t.inputs.push_back(id);
  }
  t.targets.push_back(Vocab::kEnd);
  return t;
}

/// Input rows see all input rows; decode row t sees all input rows and decode rows < t.
inline AttentionMask univqa_mask(Index n_inputs, Index n_steps) {
  AttentionMask m(n_inputs + n_steps, n_inputs + n_steps, false);
  for (Index i = 0; i < n_inputs + n_steps; ++i) {
    for (Index j = 0; j < n_inputs; ++j) m.set(i, j, true);
    if (i >= n_inputs)
      for (Index j = n_inputs; j < i; ++j) m.set(i, j, true);
  }
  return m;
}

enum class AnswerSource { vocab, ocr_copy };
enum class StopReason { end_token, step_cap };

struct AnswerDecode {
  std::vector<std::string> words;
  std::vector<AnswerSource> sources;
  StopReason stop = StopReason::step_cap;
  std::string text() const { return detokenize(words); }
};

inline json to_json(const AnswerDecode& d) {
  json src = json::array();
  for (auto s : d.sources) src.push_back(s == AnswerSource::vocab ? "vocab" : "ocr");
  return {{"answer", d.text()}, {"sources", src}, {"stop", d.stop == StopReason::end_token ? "end" : "cap"}};
}

template <class T>
class UniVqaModel {
 public:
  UniVqaConfig cfg;
  int vocab_size = 0;
  ParameterSet<T> params;
  std::size_t word_emb = 0, text_pos = 0, dec_pos = 0, type_emb = 0, sample_token = 0;
  Linear obj_app, obj_box, ocr_region, ocr_trigram, ocr_box;
  LayerNorm obj_ln, ocr_ln;
  std::vector<TransformerBlock> text_blocks, fusion_blocks;
  LayerNorm ln_out;
  Linear classifier, ptr_query, ptr_key;

  static UniVqaModel create(const UniVqaConfig& cfg, int vocab_size, std::uint64_t seed) {
    cfg.validate();
    UniVqaModel m;
    m.cfg = cfg;
    m.vocab_size = vocab_size;
    Rng rng(substream(seed, "univqa/init"));
    const Index d = cfg.width;
    m.word_emb = m.params.add("vqa.word_emb", normal_matrix<T>(vocab_size, d, 0.02, rng));
    m.text_pos = m.params.add("vqa.text_pos", normal_matrix<T>(cfg.max_text_len, d, 0.02, rng));
    m.dec_pos = m.params.add("vqa.dec_pos", normal_matrix<T>(cfg.max_decode_steps, d, 0.02, rng));
    m.type_emb = m.params.add("vqa.type_emb", normal_matrix<T>(kModalityCount, d, 0.02, rng));
    m.sample_token = m.params.add("vqa.sample_token", normal_matrix<T>(1, d, 0.02, rng));
    m.obj_app = Linear::create(m.params, "vqa.obj_app", kAppearanceDim, d, rng, true, 0.1);
    m.obj_box = Linear::create(m.params, "vqa.obj_box", kBoxDim, d, rng, true, 0.1);
    m.obj_ln = LayerNorm::create(m.params, "vqa.obj_ln", d);
    m.ocr_region = Linear::create(m.params, "vqa.ocr_region", kAppearanceDim, d, rng, true, 0.1);
    m.ocr_trigram = Linear::create(m.params, "vqa.ocr_trigram", kTrigramDim, d, rng, true, 0.1);
    m.ocr_box = Linear::create(m.params, "vqa.ocr_box", kBoxDim, d, rng, true, 0.1);
    m.ocr_ln = LayerNorm::create(m.params, "vqa.ocr_ln", d);
    for (int l = 0; l < cfg.text_layers; ++l)
      m.text_blocks.push_back(
          TransformerBlock::create(m.params, "vqa.text" + std::to_string(l), d, cfg.heads, cfg.mlp_ratio, rng));
    for (int l = 0; l < cfg.fusion_layers; ++l)
      m.fusion_blocks.push_back(
          TransformerBlock::create(m.params, "vqa.fusion" + std::to_string(l), d, cfg.heads, cfg.mlp_ratio, rng));
    m.ln_out = LayerNorm::create(m.params, "vqa.ln_out", d);
    m.classifier = Linear::create(m.params, "vqa.classifier", d, vocab_size, rng);
    m.ptr_query = Linear::create(m.params, "vqa.ptr_query", d, d, rng);
    m.ptr_key = Linear::create(m.params, "vqa.ptr_key", d, d, rng);
    return m;
  }

  /// One d-vector per input position (layout order, sample token last).
  Var embed_inputs(Graph<T>& g, const InputBundle& b) const {
    b.validate();
    std::vector<Var> parts;
    std::vector<std::pair<Index, Index>> segments;  // text segments, for the text encoder
    std::vector<int> text_ids, pos_ids, type_ids;
    auto add_text = [&](const std::vector<int>& ids, Modality m) {
      if (ids.empty()) return;
      if (static_cast<int>(ids.size()) > cfg.max_text_len) throw DataError("text segment exceeds max_text_len");
      segments.emplace_back(static_cast<Index>(text_ids.size()), static_cast<Index>(ids.size()));
      for (std::size_t i = 0; i < ids.size(); ++i) {
        text_ids.push_back(ids[i]);
        pos_ids.push_back(static_cast<int>(i));
        type_ids.push_back(static_cast<int>(m));
      }
    };
    add_text(b.question, Modality::question);
    add_text(b.sg_text, Modality::sg_text);
    add_text(b.knowledge, Modality::knowledge);
    Var text = g.add(g.add(g.gather_rows(g.param(word_emb), text_ids), g.gather_rows(g.param(text_pos), pos_ids)),
                     g.gather_rows(g.param(type_emb), type_ids));
    if (!text_blocks.empty()) {
      const auto n = static_cast<Index>(text_ids.size());
      AttentionMask mask(n, n, false);
      for (auto [start, len] : segments)
        for (Index i = start; i < start + len; ++i)
          for (Index j = start; j < start + len; ++j) mask.set(i, j, true);
      for (const auto& blk : text_blocks) text = blk(g, text, mask);
    }
    parts.push_back(text);
    if (b.objects() > 0) {
      Var app = obj_app(g, g.constant(row_matrix<T>(b.object_appearance, kAppearanceDim)));
      Var box = obj_box(g, g.constant(row_matrix<T>(b.object_box, kBoxDim)));
      parts.push_back(g.add_row(obj_ln(g, g.add(app, box)), type_row(g, Modality::object)));
    }
    if (b.ocr() > 0) {
      Var lex = g.gather_rows(g.param(word_emb), b.ocr_ids);
      Var region = ocr_region(g, g.constant(row_matrix<T>(b.ocr_region, kAppearanceDim)));
      Var tri = ocr_trigram(g, g.constant(row_matrix<T>(b.ocr_trigram, kTrigramDim)));
      Var box = ocr_box(g, g.constant(row_matrix<T>(b.ocr_box, kBoxDim)));
      parts.push_back(g.add_row(ocr_ln(g, g.add(g.add(lex, region), g.add(tri, box))), type_row(g, Modality::ocr)));
    }
    parts.push_back(g.add(g.param(sample_token), type_row(g, Modality::sample)));
    return g.concat_rows(parts);
  }

  /// Decoder input rows for the given previous-word ids.
  Var embed_decode(Graph<T>& g, const std::vector<int>& ids) const {
    if (ids.empty() || static_cast<int>(ids.size()) > cfg.max_decode_steps) throw DataError("decode length out of range");
    std::vector<int> pos(ids.size());
    std::iota(pos.begin(), pos.end(), 0);
    return g.add_row(g.add(g.gather_rows(g.param(word_emb), ids), g.gather_rows(g.param(dec_pos), pos)),
                     type_row(g, Modality::decode));
  }

  /// Fused states for [inputs; decode rows].
  Var fuse(Graph<T>& g, Var inputs, Var decode) const {
    const Index n_in = g.rows(inputs), n_dec = g.rows(decode);
    Var x = g.concat_rows(std::vector<Var>{inputs, decode});
    const AttentionMask mask = univqa_mask(n_in, n_dec);
    for (const auto& blk : fusion_blocks) x = blk(g, x, mask);
    return ln_out(g, x);
  }

  /// Joint scores (steps x (vocab + ocr)) for teacher-forced decoder inputs.
  Var step_scores(Graph<T>& g, const InputBundle& b, const std::vector<int>& decode_inputs) const {
    Var inputs = embed_inputs(g, b);
    const Index n_in = g.rows(inputs);
    Var fused = fuse(g, inputs, embed_decode(g, decode_inputs));
    Var dec = g.slice_rows(fused, n_in, static_cast<Index>(decode_inputs.size()));
    Var logits = classifier(g, dec);
    if (b.ocr() == 0) return logits;
    const Index ocr_start = n_in - 1 - static_cast<Index>(b.ocr());
    Var ocr = g.slice_rows(fused, ocr_start, static_cast<Index>(b.ocr()));
    Var ptr = g.scale(g.matmul_nt(ptr_query(g, dec), ptr_key(g, ocr)), T(1) / std::sqrt(T(cfg.width)));
    return g.concat_cols(logits, ptr);
  }

  /// Mean cross-entropy over the supervised decode steps (1x1).
  Var loss(Graph<T>& g, const InputBundle& b, const AnswerTarget& t) const {
    return g.scale(g.cross_entropy_sum(step_scores(g, b, t.inputs), t.targets), T(1) / T(t.targets.size()));
  }

  /// Sum of squared pre-softmax decoder scores at step 0 (1x1).
  Var output_sq_norm(Graph<T>& g, const InputBundle& b) const {
    return g.sum_squares(step_scores(g, b, {Vocab::kBegin}));
  }

  /// Fused output of the learnable sample token, inputs only.
  Eigen::Matrix<T, 1, Eigen::Dynamic> sample_embedding(const InputBundle& b) const {
    Graph<T> g(params);
    Var inputs = embed_inputs(g, b);
    const Index n_in = g.rows(inputs);
    Var x = inputs;
    const AttentionMask mask = AttentionMask::full(n_in, n_in);
    for (const auto& blk : fusion_blocks) x = blk(g, x, mask);
    return g.value(ln_out(g, x)).row(n_in - 1);
  }

  /// Greedy decoding from <begin> until <end> or the step cap.
  AnswerDecode decode(const InputBundle& b, const Vocab& vocab) const {
    AnswerDecode out;
    std::vector<int> inputs{Vocab::kBegin};
    for (int step = 0; step < cfg.max_decode_steps; ++step) {
      Graph<T> g(params);
      const Matrix<T>& scores = g.value(step_scores(g, b, inputs));
      Eigen::Matrix<T, 1, Eigen::Dynamic> row = scores.row(static_cast<Index>(step));
      for (int id = 0; id < Vocab::kEnd; ++id) row(0, id) = -std::numeric_limits<T>::infinity();
      Index best = 0;
      row.maxCoeff(&best);
      if (best == Vocab::kEnd) {
        out.stop = StopReason::end_token;
        return out;
      }
      if (best >= vocab_size) {
        const auto k = static_cast<std::size_t>(best - vocab_size);
        out.words.push_back(b.ocr_words[k]);
        out.sources.push_back(AnswerSource::ocr_copy);
        inputs.push_back(b.ocr_ids[k]);
      } else {
        out.words.push_back(vocab.word(static_cast<int>(best)));
        out.sources.push_back(AnswerSource::vocab);
        inputs.push_back(static_cast<int>(best));
      }
    }
    out.stop = StopReason::step_cap;
    return out;
  }

 private:
  Var type_row(Graph<T>& g, Modality m) const {
    const int id = static_cast<int>(m);
    return g.gather_rows(g.param(type_emb), std::span<const int>(&id, 1));
  }
};

// ---------------------------------------------------------------------------
// Training

struct VqaItem {
  InputBundle input;
  AnswerTarget target;
};

struct UniVqaTrainConfig {
  int epochs = 6;
  int batch_size = 16;
  AdamConfig adam{1e-3, 0.9, 0.999, 1e-8, 0.01, 1.0};
  std::vector<double> milestones{14000.0 / 24000.0, 19000.0 / 24000.0};
  double lr_factor = 0.1;

  void validate() const {
    if (epochs < 0 || batch_size < 1) throw ConfigError("univqa epochs/batch_size invalid");
    if (adam.lr <= 0) throw ConfigError("univqa learning rate must be positive");
  }
};

/// Regularizer hook: adds its gradient to `grads` and returns its value.
template <class T>
using PenaltyFn = std::function<double(const ParameterSet<T>&, Gradients<T>&)>;

struct UniVqaTrainReport {
  std::vector<double> batch_loss;  // data loss + penalty, per optimizer step
  std::vector<double> epoch_loss;
  long steps = 0;
};

/// Minimizes mean loss over a current batch plus mean loss over an extra
/// batch (replay or episodic memory) per step. Each epoch visits every current
/// item once; extra items are spread so that each is also visited once.
template <class T>
UniVqaTrainReport train_univqa(UniVqaModel<T>& model, const std::vector<VqaItem>& current,
                               const std::vector<VqaItem>& extra, const UniVqaTrainConfig& cfg, std::uint64_t seed,
                               const PenaltyFn<T>& penalty = {}) {
  cfg.validate();
  if (current.empty()) throw DataError("univqa training set is empty");
  Rng rng(substream(seed, "univqa/train"));
  Adam<T> opt(model.params, cfg.adam);
  const StaircaseSchedule schedule{cfg.adam.lr, cfg.milestones, cfg.lr_factor};
  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  const std::size_t batches = (current.size() + bs - 1) / bs;
  const long total_steps = static_cast<long>(cfg.epochs) * static_cast<long>(batches);
  std::vector<int> cur_order(current.size()), extra_order(extra.size());
  std::iota(cur_order.begin(), cur_order.end(), 0);
  std::iota(extra_order.begin(), extra_order.end(), 0);
  UniVqaTrainReport report;
  Gradients<T> grads(model.params);
  for (int e = 0; e < cfg.epochs; ++e) {
    rng.shuffle(cur_order);
    rng.shuffle(extra_order);
    double epoch_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t c0 = b * bs, c1 = std::min(current.size(), c0 + bs);
      const std::size_t x0 = extra.size() * b / batches, x1 = extra.size() * (b + 1) / batches;
      const int nc = static_cast<int>(c1 - c0), nx = static_cast<int>(x1 - x0);
      grads.zero();
      const T wc = T(1) / T(nc), wx = nx > 0 ? T(1) / T(nx) : T(0);
      double loss = accumulate_batch(model.params, grads, nc + nx, [&](Graph<T>& g, int i) {
        const VqaItem& it = i < nc ? current[static_cast<std::size_t>(cur_order[c0 + static_cast<std::size_t>(i)])]
                                   : extra[static_cast<std::size_t>(extra_order[x0 + static_cast<std::size_t>(i - nc)])];
        return g.scale(model.loss(g, it.input, it.target), i < nc ? wc : wx);
      });
      if (penalty) loss += penalty(model.params, grads);
      if (!std::isfinite(loss)) throw DivergenceError("non-finite univqa loss");
      opt.step(model.params, grads, schedule.at(report.steps, total_steps));
      ++report.steps;
      report.batch_loss.push_back(loss);
      epoch_sum += loss;
    }
    report.epoch_loss.push_back(epoch_sum / static_cast<double>(batches));
  }
  return report;
}

}  // namespace sgp
