#pragma once

// Word-level vocabulary and the SRM sequence formats:
//   scene graph:  [g] r_1 [s] r_2 [s] ... r_K            -> shifted + [e]
//   qa:           [g] evidence [q] question [a] answer   -> shifted + [e]

#include <array>
#include <cctype>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgp/errors.hpp"
#include "sgp/rng.hpp"
#include "sgp/world.hpp"

namespace sgp {

namespace tok {
inline constexpr std::string_view pad = "<pad>";
inline constexpr std::string_view unk = "<unk>";
inline constexpr std::string_view gen = "[g]";
inline constexpr std::string_view sep = "[s]";
inline constexpr std::string_view ques = "[q]";
inline constexpr std::string_view ans = "[a]";
inline constexpr std::string_view eot = "[e]";
inline constexpr std::string_view begin = "<begin>";
inline constexpr std::string_view end = "<end>";
inline constexpr std::array<std::string_view, 9> all{pad, unk, gen, sep, ques, ans, eot, begin, end};
}  // namespace tok

inline bool is_special_literal(std::string_view w) {
  for (auto s : tok::all)
    if (s == w) return true;
  return false;
}

/// Lowercases, splits on whitespace and detaches '?'.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (c == '?') {
      flush();
      out.emplace_back("?");
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

/// Inverse of tokenize for corpus text: "what is it ?" -> "what is it?".
inline std::string detokenize(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty() && w != "?") out += ' ';
    out += w;
  }
  return out;
}

class Vocab {
 public:
  static constexpr int kPad = 0, kUnk = 1, kGen = 2, kSep = 3, kQues = 4, kAns = 5, kEot = 6, kBegin = 7, kEnd = 8;

  Vocab() : Vocab(std::vector<std::string>{}) {}

  /// Specials first (fixed ids), then `words` in the given order.
  explicit Vocab(const std::vector<std::string>& words) {
    for (auto s : tok::all) add(std::string(s));
    for (const auto& w : words) {
      if (is_special_literal(w)) throw ConfigError("vocabulary word '" + w + "' is a reserved token");
      if (!ids_.count(w)) add(w);
    }
  }

  static Vocab from_bank(const ConceptBank& bank) { return Vocab(bank.lexicon_words()); }

  int size() const { return static_cast<int>(words_.size()); }
  bool contains(std::string_view w) const { return ids_.count(std::string(w)) > 0; }
  int id(std::string_view w) const {
    auto it = ids_.find(std::string(w));
    return it == ids_.end() ? kUnk : it->second;
  }
  const std::string& word(int id) const {
    if (id < 0 || id >= size()) throw DataError("token id " + std::to_string(id) + " out of range");
    return words_[static_cast<std::size_t>(id)];
  }
  static bool is_special(int id) { return id >= 0 && id <= kEnd; }
  const std::vector<std::string>& words() const { return words_; }

  /// Encodes corpus text; reserved literals are rejected.
  std::vector<int> encode_text(std::string_view text) const {
    std::vector<int> ids;
    for (const auto& w : tokenize(text)) {
      if (is_special_literal(w)) throw DataError("control token '" + w + "' inside text");
      ids.push_back(id(w));
    }
    return ids;
  }

  std::string decode_text(const std::vector<int>& ids) const {
    std::vector<std::string> w;
    for (int i : ids) w.push_back(word(i));
    return detokenize(w);
  }

  json to_json() const {
    json j = json::object();
    for (std::size_t i = 0; i < words_.size(); ++i) j[words_[i]] = i;
    return j;
  }
  static Vocab from_json(const json& j) {
    std::vector<std::string> words(j.size());
    for (const auto& [w, id] : j.items()) {
      const auto i = id.get<std::size_t>();
      if (i >= words.size() || !words[i].empty()) throw DataError("vocab ids are not a permutation");
      words[i] = w;
    }
    for (std::size_t i = 0; i < tok::all.size(); ++i)
      if (i >= words.size() || words[i] != tok::all[i]) throw DataError("vocab special tokens out of place");
    return Vocab(std::vector<std::string>(words.begin() + static_cast<std::ptrdiff_t>(tok::all.size()), words.end()));
  }
  std::uint64_t hash() const { return fnv1a(to_json().dump()); }

 private:
  void add(std::string w) {
    ids_.emplace(w, size());
    words_.push_back(std::move(w));
  }
  std::vector<std::string> words_;
  std::map<std::string, int> ids_;
};

enum class TokenRole { sg_lm_input, sg_lm_target, qa_gen_input, qa_gen_target, sg_inference_prefix, qa_inference_prefix };

struct TokenSeq {
  std::vector<int> ids;
  TokenRole role = TokenRole::sg_lm_input;
  std::vector<std::uint8_t> loss_mask;  // targets only; 1 = supervised

  std::size_t size() const { return ids.size(); }
};

struct EncodedPair {
  TokenSeq input, target;
};

enum class PromptMode { sg, qa };

inline PromptMode parse_prompt_mode(std::string_view m) {
  if (m == "sg") return PromptMode::sg;
  if (m == "qa") return PromptMode::qa;
  throw ConfigError("unknown prompt mode '" + std::string(m) + "'");
}

namespace detail {

inline void append_phrase(const Vocab& v, const Relationship& r, std::vector<int>& ids) {
  const std::string text = r.render();
  if (text.empty()) throw DataError("relationship renders empty");
  for (const auto& w : tokenize(text)) {
    if (is_special_literal(w)) throw DataError("control token '" + w + "' inside relationship");
    ids.push_back(v.id(w));
  }
}

inline void append_graph(const Vocab& v, const SceneGraph& g, std::vector<int>& ids) {
  for (std::size_t i = 0; i < g.relationships.size(); ++i) {
    if (i) ids.push_back(Vocab::kSep);
    append_phrase(v, g.relationships[i], ids);
  }
}

inline EncodedPair shifted(std::vector<int> input, TokenRole in_role, TokenRole out_role) {
  EncodedPair p;
  p.target.ids.assign(input.begin() + 1, input.end());
  p.target.ids.push_back(Vocab::kEot);
  p.target.role = out_role;
  p.target.loss_mask.assign(p.target.ids.size(), 1);
  p.input.ids = std::move(input);
  p.input.role = in_role;
  return p;
}

}  // namespace detail

/// "[g] man wearing hat [s] hat on head" / "man wearing hat [s] hat on head [e]".
inline EncodedPair encode_sg_lm(const Vocab& v, const SceneGraph& g) {
  if (g.empty()) throw DataError("cannot encode an empty scene graph");
  std::vector<int> ids{Vocab::kGen};
  detail::append_graph(v, g, ids);
  return detail::shifted(std::move(ids), TokenRole::sg_lm_input, TokenRole::sg_lm_target);
}

/// Loss covers the question, [a], answer and [e] only.
inline EncodedPair encode_qa_gen(const Vocab& v, const SceneGraph& evidence, std::string_view question, std::string_view answer) {
  const auto q = v.encode_text(question);
  const auto a = v.encode_text(answer);
  if (q.empty()) throw DataError("empty question");
  if (a.empty()) throw DataError("empty answer");
  if (evidence.empty()) throw DataError("empty evidence graph");
  std::vector<int> ids{Vocab::kGen};
  detail::append_graph(v, evidence, ids);
  const std::size_t q_pos = ids.size();
  ids.push_back(Vocab::kQues);
  ids.insert(ids.end(), q.begin(), q.end());
  ids.push_back(Vocab::kAns);
  ids.insert(ids.end(), a.begin(), a.end());
  EncodedPair p = detail::shifted(std::move(ids), TokenRole::qa_gen_input, TokenRole::qa_gen_target);
  for (std::size_t i = 0; i < q_pos; ++i) p.target.loss_mask[i] = 0;
  return p;
}

/// sg: "[g] prompt [s]"; qa: "[g] prompt [q]".
inline TokenSeq make_inference_prefix(const Vocab& v, const SceneGraph& prompt, PromptMode mode) {
  if (prompt.empty()) throw DataError("empty prompt");
  TokenSeq t;
  t.ids.push_back(Vocab::kGen);
  detail::append_graph(v, prompt, t.ids);
  t.ids.push_back(mode == PromptMode::sg ? Vocab::kSep : Vocab::kQues);
  t.role = mode == PromptMode::sg ? TokenRole::sg_inference_prefix : TokenRole::qa_inference_prefix;
  return t;
}

/// Splits a word span into a relationship. With a concept bank the phrase
/// must decompose exactly into known object/attribute/relation names;
/// without one, 1 word is an object, 2 words attribute+object, and longer
/// spans subject + predicate words + object.
inline std::optional<Relationship> parse_phrase(const std::vector<std::string>& words, const ConceptBank* bank) {
  if (words.empty()) return std::nullopt;
  auto join = [&](std::size_t a, std::size_t b) {
    std::string s;
    for (std::size_t i = a; i < b; ++i) s += (i > a ? " " : "") + words[i];
    return s;
  };
  const std::size_t n = words.size();
  if (!bank) {
    if (n == 1) return Relationship{words[0], "", ""};
    if (n == 2) return Relationship{words[1], words[0], ""};
    return Relationship{words[0], join(1, n - 1), words[n - 1]};
  }
  if (bank->find_object(join(0, n))) return Relationship{join(0, n), "", ""};
  if (n >= 2 && bank->is_attribute(words[0]) && bank->find_object(join(1, n))) return Relationship{join(1, n), words[0], ""};
  for (std::size_t i = 1; i < n; ++i) {
    if (!bank->find_object(join(0, i))) continue;
    for (std::size_t j = i + 1; j < n; ++j)
      if (bank->is_relation(join(i, j)) && bank->find_object(join(j, n))) return Relationship{join(0, i), join(i, j), join(j, n)};
  }
  return std::nullopt;
}

struct ParsedGeneration {
  bool well_formed = false;
  std::string reason;  // why not well formed
  SceneGraph graph;    // sg mode: the completed graph; qa mode: the prompt
  std::string question;
  std::string answer;
};

/// Parses a full sequence (prefix + continuation) back into a scene graph or
/// a question/answer pair. Anything ill-formed is reported, never thrown.
inline ParsedGeneration parse_generation(const Vocab& v, const std::vector<int>& ids, PromptMode mode,
                                         const ConceptBank* bank = nullptr) {
  ParsedGeneration out;
  auto fail = [&](std::string why) {
    out.well_formed = false;
    out.reason = std::move(why);
    return out;
  };
  if (ids.empty() || ids[0] != Vocab::kGen) return fail("missing [g]");
  std::size_t end = 1;
  while (end < ids.size() && ids[end] != Vocab::kEot) ++end;
  if (end == ids.size()) return fail("missing [e]");
  const int graph_stop = mode == PromptMode::sg ? Vocab::kEot : Vocab::kQues;
  std::size_t i = 1;
  std::vector<std::string> phrase;
  for (;; ++i) {
    const int t = ids[i];
    if (t == Vocab::kEot && mode == PromptMode::qa) return fail("missing [q]");
    if (t == Vocab::kSep || t == graph_stop) {
      auto rel = parse_phrase(phrase, bank);
      if (phrase.empty()) return fail("empty relationship");
      if (!rel) return fail("unparseable relationship '" + detokenize(phrase) + "'");
      out.graph.relationships.push_back(*rel);
      phrase.clear();
      if (t == graph_stop) break;
      continue;
    }
    if (t == Vocab::kUnk) return fail("unknown token");
    if (Vocab::is_special(t)) return fail("unexpected " + v.word(t) + " in scene graph");
    phrase.push_back(v.word(t));
  }
  if (mode == PromptMode::sg) {
    out.well_formed = true;
    return out;
  }
  std::vector<std::string> q, a;
  bool in_answer = false;
  for (++i; i < end; ++i) {
    const int t = ids[i];
    if (t == Vocab::kAns && !in_answer) {
      in_answer = true;
      continue;
    }
    if (t == Vocab::kUnk) return fail("unknown token");
    if (Vocab::is_special(t)) return fail("unexpected " + v.word(t) + " in question or answer");
    (in_answer ? a : q).push_back(v.word(t));
  }
  if (!in_answer) return fail("missing [a]");
  if (q.empty()) return fail("empty question");
  if (a.empty()) return fail("empty answer");
  out.question = detokenize(q);
  out.answer = detokenize(a);
  out.well_formed = true;
  return out;
}

/// Plain-text rendering used as the scene-graph text input of the answerer.
inline std::vector<int> graph_text_ids(const Vocab& v, const SceneGraph& g) {
  std::vector<int> ids;
  detail::append_graph(v, g, ids);
  return ids;
}

}  // namespace sgp
