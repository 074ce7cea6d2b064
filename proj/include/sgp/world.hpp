#pragma once

// Synthetic scene-graph VQA world: concept bank, samples, and the two
// continual-learning task splits (scene-incremental, function-incremental).

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "sgp/errors.hpp"
#include "sgp/rng.hpp"

namespace sgp {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Scene graphs

enum class RelationshipKind { object, attribute, relation };

struct Relationship {
  std::string subject;
  std::string predicate;  // attribute value or relation phrase; empty for a bare object
  std::string object;     // empty unless kind() == relation

  RelationshipKind kind() const {
    if (!object.empty()) return RelationshipKind::relation;
    if (!predicate.empty()) return RelationshipKind::attribute;
    return RelationshipKind::object;
  }

  /// "tree", "red apple", "apple on table".
  std::string render() const {
    switch (kind()) {
      case RelationshipKind::object:
        return subject;
      case RelationshipKind::attribute:
        return predicate + " " + subject;
      case RelationshipKind::relation:
        break;
    }
    return subject + " " + predicate + " " + object;
  }

  friend bool operator==(const Relationship&, const Relationship&) = default;
  friend auto operator<=>(const Relationship&, const Relationship&) = default;
};

struct SceneGraph {
  std::vector<Relationship> relationships;

  bool empty() const { return relationships.empty(); }
  std::size_t size() const { return relationships.size(); }
  bool contains(const Relationship& r) const {
    return std::find(relationships.begin(), relationships.end(), r) != relationships.end();
  }
  friend bool operator==(const SceneGraph&, const SceneGraph&) = default;
};

inline json to_json(const Relationship& r) { return json::array({r.subject, r.predicate, r.object}); }
inline Relationship relationship_from_json(const json& j) {
  if (!j.is_array() || j.size() != 3) throw DataError("relationship must be a 3-element array");
  return {j[0].get<std::string>(), j[1].get<std::string>(), j[2].get<std::string>()};
}
inline json to_json(const SceneGraph& g) {
  json a = json::array();
  for (const auto& r : g.relationships) a.push_back(to_json(r));
  return a;
}
inline SceneGraph scene_graph_from_json(const json& j) {
  SceneGraph g;
  for (const auto& r : j) g.relationships.push_back(relationship_from_json(r));
  return g;
}

// ---------------------------------------------------------------------------
// Concept bank

struct SceneConcept {
  std::string tag;   // one letter, e.g. "b"
  std::string name;  // e.g. "Workplace"
};

struct ObjectConcept {
  std::string name;
  std::string category;  // answer to "what <category> is it?"
  std::string pool;      // scene tag of its unique pool, or "shared"
  bool text_bearing = false;
};

struct AttributeConcept {
  std::string value;
  std::string category;  // "color", ...
};

struct KnowledgeFact {
  std::string subject;
  std::string property;
  std::string value;

  std::string render() const { return subject + " " + property + " " + value; }
};

inline constexpr std::string_view kSharedPool = "shared";

/// Words used by question templates; part of the closed lexicon.
inline const std::vector<std::string>& template_words() {
  static const std::vector<std::string> words{
      "what", "is", "it", "?",      "a",   "or",   "color", "the",   "do",  "and",  "have",
      "same", "different", "colors", "used", "for", "does", "say",   "yes", "no"};
  return words;
}

struct ConceptBank {
  std::vector<SceneConcept> scenes;
  std::vector<ObjectConcept> objects;
  std::vector<AttributeConcept> attributes;
  std::vector<std::string> relations;
  std::vector<std::string> ocr_lexicon;
  std::vector<KnowledgeFact> knowledge_facts;

  static ConceptBank standard() {
    ConceptBank b;
    b.scenes = {{"a", "ShopAndDining"}, {"b", "Workplace"},       {"c", "HomeOrHotel"},
                {"d", "Transportation"}, {"e", "SportAndLeisure"}, {"f", "Outdoors"}};
    auto obj = [&](std::string name, std::string cat, std::string pool, bool text = false) {
      b.objects.push_back({std::move(name), std::move(cat), std::move(pool), text});
    };
    obj("menu", "paper", "a", true);
    obj("pizza", "food", "a");
    obj("wine glass", "glassware", "a");
    obj("cash register", "machine", "a");
    obj("cake", "food", "a");
    obj("fork", "utensil", "a");
    obj("napkin", "cloth", "a");
    obj("waiter", "person", "a");
    obj("computer monitor", "device", "b");
    obj("keyboard", "device", "b");
    obj("printer", "machine", "b");
    obj("stapler", "tool", "b");
    obj("desk", "furniture", "b");
    obj("mouse", "device", "b");
    obj("folder", "paper", "b", true);
    obj("whiteboard", "board", "b", true);
    obj("pillow", "bedding", "c");
    obj("sofa", "furniture", "c");
    obj("lamp", "light", "c");
    obj("bathtub", "fixture", "c");
    obj("bed", "furniture", "c");
    obj("towel", "cloth", "c");
    obj("curtain", "cloth", "c");
    obj("remote control", "device", "c");
    obj("bus", "vehicle", "d", true);
    obj("train", "vehicle", "d", true);
    obj("traffic light", "light", "d");
    obj("suitcase", "luggage", "d", true);
    obj("airplane", "vehicle", "d", true);
    obj("boat", "vehicle", "d", true);
    obj("parking meter", "machine", "d");
    obj("helmet", "clothing", "d");
    obj("tennis racket", "equipment", "e");
    obj("skateboard", "equipment", "e");
    obj("surfboard", "equipment", "e");
    obj("frisbee", "toy", "e");
    obj("baseball bat", "equipment", "e");
    obj("ball", "toy", "e");
    obj("kite", "toy", "e");
    obj("net", "equipment", "e");
    obj("horse", "animal", "f");
    obj("tree", "plant", "f");
    obj("mountain", "landform", "f");
    obj("bench", "furniture", "f");
    obj("cow", "animal", "f");
    obj("bird", "animal", "f");
    obj("flower", "plant", "f");
    obj("fence", "barrier", "f");
    obj("man", "person", "shared");
    obj("woman", "person", "shared");
    obj("dog", "animal", "shared");
    obj("cup", "glassware", "shared");
    obj("bag", "luggage", "shared", true);
    obj("sign", "paper", "shared", true);
    obj("bottle", "container", "shared", true);
    obj("book", "paper", "shared", true);
    obj("shirt", "clothing", "shared", true);
    obj("hat", "clothing", "shared");
    obj("table", "furniture", "shared");
    obj("car", "vehicle", "shared");
    for (const char* c : {"red", "blue", "green", "yellow", "white", "black", "brown", "orange"})
      b.attributes.push_back({c, "color"});
    b.relations = {"on", "near", "under", "behind", "next to", "in front of"};
    b.ocr_lexicon = {"stop", "exit", "open", "sale", "cafe", "hotel", "police", "express", "taxi", "market",
                     "museum", "bakery"};
    auto fact = [&](std::string s, std::string v) { b.knowledge_facts.push_back({std::move(s), "used for", std::move(v)}); };
    fact("menu", "ordering");
    fact("pizza", "eating");
    fact("wine glass", "drinking");
    fact("cash register", "paying");
    fact("computer monitor", "displaying");
    fact("keyboard", "typing");
    fact("printer", "printing");
    fact("stapler", "stapling");
    fact("pillow", "sleeping");
    fact("sofa", "sitting");
    fact("lamp", "lighting");
    fact("bathtub", "bathing");
    fact("bus", "traveling");
    fact("train", "traveling");
    fact("traffic light", "signaling");
    fact("suitcase", "packing");
    fact("tennis racket", "hitting");
    fact("skateboard", "riding");
    fact("surfboard", "surfing");
    fact("frisbee", "throwing");
    fact("horse", "riding");
    fact("bench", "sitting");
    fact("cup", "drinking");
    fact("bag", "carrying");
    fact("sign", "informing");
    fact("bottle", "drinking");
    fact("book", "reading");
    fact("shirt", "wearing");
    fact("hat", "wearing");
    fact("table", "eating");
    fact("car", "driving");
    fact("cake", "eating");
    fact("fork", "eating");
    fact("napkin", "wiping");
    fact("desk", "working");
    fact("mouse", "clicking");
    fact("folder", "filing");
    fact("whiteboard", "writing");
    fact("bed", "sleeping");
    fact("towel", "drying");
    fact("curtain", "covering");
    fact("remote control", "switching");
    fact("airplane", "flying");
    fact("boat", "sailing");
    fact("parking meter", "paying");
    fact("helmet", "protecting");
    fact("baseball bat", "hitting");
    fact("ball", "throwing");
    fact("kite", "flying");
    fact("net", "catching");
    fact("cow", "milking");
    fact("bird", "singing");
    fact("flower", "decorating");
    fact("fence", "enclosing");
    return b;
  }

  const ObjectConcept* find_object(std::string_view name) const {
    for (const auto& o : objects)
      if (o.name == name) return &o;
    return nullptr;
  }
  bool is_attribute(std::string_view v) const {
    return std::any_of(attributes.begin(), attributes.end(), [&](const auto& a) { return a.value == v; });
  }
  bool is_relation(std::string_view v) const {
    return std::find(relations.begin(), relations.end(), v) != relations.end();
  }
  const KnowledgeFact* fact_for(std::string_view subject) const {
    for (const auto& f : knowledge_facts)
      if (f.subject == subject) return &f;
    return nullptr;
  }
  std::vector<std::string> unique_pool(std::string_view scene_tag) const {
    std::vector<std::string> out;
    for (const auto& o : objects)
      if (o.pool == scene_tag) out.push_back(o.name);
    return out;
  }
  const SceneConcept* find_scene(std::string_view key) const {
    for (const auto& s : scenes)
      if (s.tag == key || s.name == key) return &s;
    return nullptr;
  }

  /// Every word any corpus text can contain.
  std::vector<std::string> lexicon_words() const {
    std::set<std::string> words;
    auto add_words = [&](std::string_view phrase) {
      std::size_t i = 0;
      while (i < phrase.size()) {
        const auto j = phrase.find(' ', i);
        const auto end = j == std::string_view::npos ? phrase.size() : j;
        if (end > i) words.emplace(phrase.substr(i, end - i));
        i = end + 1;
      }
    };
    for (const auto& o : objects) {
      add_words(o.name);
      add_words(o.category);
    }
    for (const auto& a : attributes) add_words(a.value);
    for (const auto& r : relations) add_words(r);
    for (const auto& w : ocr_lexicon) add_words(w);
    for (const auto& f : knowledge_facts) {
      add_words(f.property);
      add_words(f.value);
    }
    for (const auto& w : template_words()) words.insert(w);
    return {words.begin(), words.end()};
  }

  void validate() const {
    if (objects.empty()) throw ConfigError("concept bank has no objects");
    if (relations.empty()) throw ConfigError("concept bank has no relations");
    if (attributes.empty()) throw ConfigError("concept bank has no attributes");
    if (ocr_lexicon.empty()) throw ConfigError("concept bank has no ocr_lexicon");
    if (knowledge_facts.empty()) throw ConfigError("concept bank has no knowledge_facts");
    if (scenes.empty()) throw ConfigError("concept bank has no scenes");
    auto clean = [](const std::string& s, const char* what) {
      if (s.empty() || s.front() == ' ' || s.back() == ' ' || s.find("  ") != std::string::npos)
        throw ConfigError(std::string("malformed ") + what + " name '" + s + "'");
      for (char c : s)
        if (c == '[' || c == ']' || c == '<' || c == '>' || c == '?' || c == '\n' || c == '\t')
          throw ConfigError(std::string(what) + " name '" + s + "' contains a reserved character");
    };
    std::map<std::string, std::string> word_role;
    auto claim = [&](const std::string& phrase, const std::string& role) {
      std::size_t i = 0;
      while (i <= phrase.size()) {
        const auto j = std::min(phrase.find(' ', i), phrase.size());
        const std::string w = phrase.substr(i, j - i);
        auto [it, fresh] = word_role.emplace(w, role);
        if (!fresh && it->second != role)
          throw ConfigError("word '" + w + "' is used both as " + it->second + " and " + role);
        i = j + 1;
      }
    };
    std::set<std::string> scene_tags;
    for (const auto& s : scenes) {
      if (s.tag.size() != 1) throw ConfigError("scene tag must be one letter: '" + s.tag + "'");
      if (!scene_tags.insert(s.tag).second) throw ConfigError("duplicate scene tag " + s.tag);
    }
    std::set<std::string> names;
    for (const auto& o : objects) {
      clean(o.name, "object");
      claim(o.name, "object");
      if (!names.insert(o.name).second) throw ConfigError("duplicate object " + o.name);
      if (o.pool != kSharedPool && !scene_tags.count(o.pool))
        throw ConfigError("object " + o.name + " assigned to unknown pool '" + o.pool + "'");
    }
    for (const auto& a : attributes) {
      clean(a.value, "attribute");
      claim(a.value, "attribute");
    }
    for (const auto& r : relations) {
      clean(r, "relation");
      claim(r, "relation");
    }
    for (const auto& w : ocr_lexicon) {
      clean(w, "ocr");
      if (w.find(' ') != std::string::npos) throw ConfigError("ocr token '" + w + "' must be one word");
      if (word_role.count(w) && word_role[w] != "ocr")
        throw ConfigError("ocr token '" + w + "' collides with a " + word_role[w]);
    }
    for (const auto& f : knowledge_facts) {
      if (!find_object(f.subject)) throw ConfigError("knowledge fact about unknown object " + f.subject);
      clean(f.value, "knowledge value");
      clean(f.property, "knowledge property");
    }
  }
};

inline json to_json(const ConceptBank& b) {
  json j;
  for (const auto& s : b.scenes) j["scenes"].push_back({{"tag", s.tag}, {"name", s.name}});
  for (const auto& o : b.objects)
    j["objects"].push_back({{"name", o.name}, {"category", o.category}, {"pool", o.pool}, {"text_bearing", o.text_bearing}});
  for (const auto& a : b.attributes) j["attributes"].push_back({a.value, a.category});
  j["relations"] = b.relations;
  j["ocr_lexicon"] = b.ocr_lexicon;
  for (const auto& f : b.knowledge_facts) j["knowledge_facts"].push_back({f.subject, f.property, f.value});
  return j;
}

inline ConceptBank concept_bank_from_json(const json& j) {
  ConceptBank b;
  try {
    for (const auto& s : j.value("scenes", json::array())) b.scenes.push_back({s.at("tag"), s.at("name")});
    for (const auto& o : j.value("objects", json::array()))
      b.objects.push_back({o.at("name"), o.at("category"), o.at("pool"), o.value("text_bearing", false)});
    for (const auto& a : j.value("attributes", json::array())) b.attributes.push_back({a.at(0), a.at(1)});
    b.relations = j.value("relations", std::vector<std::string>{});
    b.ocr_lexicon = j.value("ocr_lexicon", std::vector<std::string>{});
    for (const auto& f : j.value("knowledge_facts", json::array())) b.knowledge_facts.push_back({f.at(0), f.at(1), f.at(2)});
  } catch (const json::exception& e) {
    throw ConfigError(std::string("concept bank: ") + e.what());
  }
  return b;
}

// ---------------------------------------------------------------------------
// Samples

using Box = std::array<double, 4>;  // x, y, w, h in [0, 1]

struct ObjectInstance {
  std::string name;
  Box box{};
};

struct OcrToken {
  std::string token;
  std::string host;
  Box box{};
};

inline const std::vector<std::string>& program_operations() {
  static const std::vector<std::string> ops{"Select", "Query",  "Choose", "Verify",         "Filter",       "Relate",
                                            "Different", "Same", "Common", "KnowledgeLookup", "SceneTextRead"};
  return ops;
}

struct FunctionalProgram {
  std::vector<std::string> operations;
  std::vector<std::string> arguments;  // parallel to operations

  void validate() const {
    if (operations.empty()) throw DataError("empty functional program");
    if (arguments.size() != operations.size()) throw DataError("program arguments do not match operations");
    for (const auto& op : operations)
      if (std::find(program_operations().begin(), program_operations().end(), op) == program_operations().end())
        throw DataError("unknown program operation '" + op + "'");
  }
  friend bool operator==(const FunctionalProgram&, const FunctionalProgram&) = default;
};

struct Sample {
  std::string id;
  std::string scene;  // scene tag
  SceneGraph scene_graph;
  SceneGraph evidence_graph;
  std::vector<ObjectInstance> objects;
  std::string question;
  std::vector<std::string> annotations;  // exactly 10
  FunctionalProgram program;
  std::string task_tag;
  std::vector<OcrToken> ocr_tokens;
  std::optional<std::string> knowledge;

  /// Most frequent annotation; ties go to the first listed.
  std::string answer() const {
    std::string best;
    int best_count = 0;
    for (const auto& a : annotations) {
      const int c = static_cast<int>(std::count(annotations.begin(), annotations.end(), a));
      if (c > best_count) {
        best = a;
        best_count = c;
      }
    }
    return best;
  }
};

inline json box_json(const Box& b) { return json::array({b[0], b[1], b[2], b[3]}); }
inline Box box_from_json(const json& j) { return {j.at(0), j.at(1), j.at(2), j.at(3)}; }

inline json to_json(const Sample& s) {
  json j;
  j["id"] = s.id;
  j["scene"] = s.scene;
  j["scene_graph"] = to_json(s.scene_graph);
  j["evidence_graph"] = to_json(s.evidence_graph);
  j["objects"] = json::array();
  for (const auto& o : s.objects) j["objects"].push_back({{"name", o.name}, {"box", box_json(o.box)}});
  j["question"] = s.question;
  j["annotations"] = s.annotations;
  j["program"] = {{"operations", s.program.operations}, {"arguments", s.program.arguments}};
  j["task_tag"] = s.task_tag;
  if (!s.ocr_tokens.empty()) {
    j["ocr_tokens"] = json::array();
    for (const auto& t : s.ocr_tokens)
      j["ocr_tokens"].push_back({{"token", t.token}, {"host", t.host}, {"box", box_json(t.box)}});
  }
  if (s.knowledge) j["knowledge"] = *s.knowledge;
  return j;
}

inline Sample sample_from_json(const json& j) {
  Sample s;
  try {
    s.id = j.at("id");
    s.scene = j.at("scene");
    s.scene_graph = scene_graph_from_json(j.at("scene_graph"));
    s.evidence_graph = scene_graph_from_json(j.at("evidence_graph"));
    for (const auto& o : j.at("objects")) s.objects.push_back({o.at("name"), box_from_json(o.at("box"))});
    s.question = j.at("question");
    s.annotations = j.at("annotations").get<std::vector<std::string>>();
    s.program.operations = j.at("program").at("operations").get<std::vector<std::string>>();
    s.program.arguments = j.at("program").at("arguments").get<std::vector<std::string>>();
    s.task_tag = j.at("task_tag");
    if (j.contains("ocr_tokens"))
      for (const auto& t : j.at("ocr_tokens")) s.ocr_tokens.push_back({t.at("token"), t.at("host"), box_from_json(t.at("box"))});
    if (j.contains("knowledge")) s.knowledge = j.at("knowledge").get<std::string>();
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed sample: ") + e.what());
  }
  if (s.annotations.size() != 10) throw DataError("sample " + s.id + " does not carry 10 annotations");
  return s;
}

struct TaskDataset {
  std::string task_tag;
  std::string name;
  std::vector<Sample> train, val, test;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
};

struct ContinualBenchmark {
  std::string kind;  // "function" or "scene"
  std::vector<TaskDataset> tasks;
  std::string order_code;
  std::map<std::string, std::vector<std::string>> unique_answers;  // per task tag (scene splits)

  void validate() const {
    if (order_code.size() != tasks.size()) throw ConfigError("order code length differs from task count");
    std::set<char> seen;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
      if (!seen.insert(order_code[i]).second) throw ConfigError("order code '" + order_code + "' repeats a task");
      if (tasks[i].task_tag != std::string(1, order_code[i])) throw ConfigError("order code does not match task tags");
    }
  }

  /// The same tasks visited in `order`.
  ContinualBenchmark reordered(const std::string& order) const {
    if (order.size() != tasks.size())
      throw ConfigError("order code '" + order + "' must name all " + std::to_string(tasks.size()) + " tasks");
    ContinualBenchmark out;
    out.kind = kind;
    out.unique_answers = unique_answers;
    out.order_code = order;
    std::set<char> seen;
    for (char c : order) {
      if (!seen.insert(c).second) throw ConfigError("order code '" + order + "' repeats task '" + std::string(1, c) + "'");
      auto it = std::find_if(tasks.begin(), tasks.end(), [&](const TaskDataset& t) { return t.task_tag == std::string(1, c); });
      if (it == tasks.end()) throw ConfigError("order code '" + order + "' names unknown task '" + std::string(1, c) + "'");
      out.tasks.push_back(*it);
    }
    return out;
  }
};

// ---------------------------------------------------------------------------
// Function-task assignment

inline constexpr std::string_view kFunctionOrder = "oarlks";

inline std::string function_task_name(char tag) {
  switch (tag) {
    case 'o': return "object recognition";
    case 'a': return "attribute recognition";
    case 'r': return "relation reasoning";
    case 'l': return "logic reasoning";
    case 'k': return "knowledge reasoning";
    case 's': return "scene text recognition";
  }
  throw DataError("unknown function task '" + std::string(1, tag) + "'");
}

/// Maps a program onto exactly one function task. When several rows match,
/// precedence is scene-text > knowledge > logic > relation > attribute > object.
inline char assign_function_task(const FunctionalProgram& program, bool has_ocr, bool has_knowledge) {
  program.validate();
  auto has = [&](std::string_view op) {
    return std::find(program.operations.begin(), program.operations.end(), op) != program.operations.end();
  };
  if (has_ocr || has("SceneTextRead")) return 's';
  if (has_knowledge || has("KnowledgeLookup")) return 'k';
  if (has("Different") || has("Same") || has("Common")) return 'l';
  for (std::size_t i = 0; i < program.operations.size(); ++i)
    if (program.operations[i] == "Choose" && program.arguments[i].rfind("compare:", 0) == 0) return 'l';
  if (has("Relate")) return 'r';
  if (has("Filter")) return 'a';
  for (std::size_t i = 0; i < program.operations.size(); ++i) {
    const auto& op = program.operations[i];
    const auto& arg = program.arguments[i];
    if ((op == "Query" || op == "Verify" || op == "Choose") && arg != "name" && arg.rfind("name:", 0) != 0) return 'a';
  }
  return 'o';
}

// ---------------------------------------------------------------------------
// Generation

struct WorldSpec {
  ConceptBank bank = ConceptBank::standard();
  int min_objects = 3;
  int max_objects = 5;
  int min_relations = 1;
  int max_relations = 3;
  int max_ocr_tokens = 2;
  int train_per_task = 2000;
  int val_per_task = 400;
  int test_per_task = 400;
  double oversample = 1.4;
  double annotator_noise = 0.0;
  double cap_ratio = 3.0;

  int per_task() const { return train_per_task + val_per_task + test_per_task; }

  void validate() const {
    bank.validate();
    if (min_objects < 2 || max_objects < min_objects) throw ConfigError("object count range invalid");
    if (min_relations < 1 || max_relations < min_relations) throw ConfigError("relation count range invalid");
    if (max_ocr_tokens < 1) throw ConfigError("max_ocr_tokens must be >= 1");
    if (train_per_task < 1 || val_per_task < 1 || test_per_task < 1) throw ConfigError("split sizes must be >= 1");
    if (oversample < 1.0) throw ConfigError("oversample must be >= 1");
    if (annotator_noise < 0.0 || annotator_noise >= 0.5) throw ConfigError("annotator_noise must be in [0, 0.5)");
    if (cap_ratio <= 1.0) throw ConfigError("cap_ratio must be > 1");
  }
};

inline json to_json(const WorldSpec& s) {
  return {{"bank", to_json(s.bank)},
          {"min_objects", s.min_objects},
          {"max_objects", s.max_objects},
          {"min_relations", s.min_relations},
          {"max_relations", s.max_relations},
          {"max_ocr_tokens", s.max_ocr_tokens},
          {"train_per_task", s.train_per_task},
          {"val_per_task", s.val_per_task},
          {"test_per_task", s.test_per_task},
          {"oversample", s.oversample},
          {"annotator_noise", s.annotator_noise},
          {"cap_ratio", s.cap_ratio}};
}

/// Parses a spec; any key not listed above is reported by name.
inline WorldSpec world_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("world spec must be a JSON object");
  WorldSpec s;
  for (const auto& [key, val] : j.items()) {
    try {
      if (key == "bank") s.bank = concept_bank_from_json(val);
      else if (key == "min_objects") s.min_objects = val.get<int>();
      else if (key == "max_objects") s.max_objects = val.get<int>();
      else if (key == "min_relations") s.min_relations = val.get<int>();
      else if (key == "max_relations") s.max_relations = val.get<int>();
      else if (key == "max_ocr_tokens") s.max_ocr_tokens = val.get<int>();
      else if (key == "train_per_task") s.train_per_task = val.get<int>();
      else if (key == "val_per_task") s.val_per_task = val.get<int>();
      else if (key == "test_per_task") s.test_per_task = val.get<int>();
      else if (key == "oversample") s.oversample = val.get<double>();
      else if (key == "annotator_noise") s.annotator_noise = val.get<double>();
      else if (key == "cap_ratio") s.cap_ratio = val.get<double>();
      else throw ConfigError("unknown world spec key '" + key + "'");
    } catch (const json::exception& e) {
      throw ConfigError("world spec key '" + key + "': " + e.what());
    }
  }
  return s;
}

struct World {
  std::uint64_t seed = 0;
  WorldSpec spec;
  std::vector<Sample> pool;
};

namespace detail {

inline double quantize(double v) { return std::round(v * 1000.0) / 1000.0; }

inline Box random_box(Rng& rng) {
  const double w = 0.1 + 0.3 * rng.uniform(), h = 0.1 + 0.3 * rng.uniform();
  return {quantize(rng.uniform() * (1.0 - w)), quantize(rng.uniform() * (1.0 - h)), quantize(w), quantize(h)};
}

struct Image {
  std::vector<std::string> objects;
  std::vector<std::string> colors;  // parallel to objects
  std::vector<Relationship> relations;
  std::vector<Box> boxes;
  std::vector<OcrToken> ocr;

  int index_of(std::string_view name) const {
    for (std::size_t i = 0; i < objects.size(); ++i)
      if (objects[i] == name) return static_cast<int>(i);
    return -1;
  }
  Relationship attribute_of(int i) const { return {objects[static_cast<std::size_t>(i)], colors[static_cast<std::size_t>(i)], ""}; }

  SceneGraph graph() const {
    SceneGraph g;
    for (std::size_t i = 0; i < objects.size(); ++i) g.relationships.push_back(attribute_of(static_cast<int>(i)));
    for (const auto& r : relations) g.relationships.push_back(r);
    return g;
  }
};

template <class V>
const auto& pick(const V& v, Rng& rng) {
  return v[rng.below(v.size())];
}

class Generator {
 public:
  Generator(const WorldSpec& spec, std::uint64_t seed) : spec_(spec), bank_(spec.bank), seed_(seed) {
    for (const auto& a : bank_.attributes)
      if (a.category == "color") colors_.push_back(a.value);
    if (colors_.size() < 2) throw ConfigError("concept bank needs at least two color attributes");
  }

  Image make_image(const std::string& scene, Rng& rng, bool want_text) const {
    std::vector<std::string> unique = bank_.unique_pool(scene), shared = bank_.unique_pool(kSharedPool);
    Image img;
    const int n = rng.range(spec_.min_objects, spec_.max_objects);
    const int n_unique = unique.empty() ? 0 : std::min<int>({rng.range(1, 2), n - 1, static_cast<int>(unique.size())});
    rng.shuffle(unique);
    rng.shuffle(shared);
    for (int i = 0; i < n_unique; ++i) img.objects.push_back(unique[static_cast<std::size_t>(i)]);
    for (std::size_t i = 0; static_cast<int>(img.objects.size()) < n && i < shared.size(); ++i) img.objects.push_back(shared[i]);
    if (want_text && !has_text_host(img)) {
      for (const auto& s : shared) {
        const auto* oc = bank_.find_object(s);
        if (oc->text_bearing && img.index_of(s) < 0) {
          img.objects.back() = s;
          break;
        }
      }
    }
    rng.shuffle(img.objects);
    for (std::size_t i = 0; i < img.objects.size(); ++i) {
      img.colors.push_back(pick(colors_, rng));
      img.boxes.push_back(random_box(rng));
    }
    const int n_rel = rng.range(spec_.min_relations, spec_.max_relations);
    std::set<std::pair<int, int>> used;
    for (int tries = 0; static_cast<int>(img.relations.size()) < n_rel && tries < 50; ++tries) {
      const int s = static_cast<int>(rng.below(img.objects.size())), o = static_cast<int>(rng.below(img.objects.size()));
      if (s == o || used.count({std::min(s, o), std::max(s, o)})) continue;
      used.insert({std::min(s, o), std::max(s, o)});
      img.relations.push_back({img.objects[static_cast<std::size_t>(s)], pick(bank_.relations, rng),
                               img.objects[static_cast<std::size_t>(o)]});
    }
    if (want_text) {
      std::vector<std::string> words = bank_.ocr_lexicon;
      rng.shuffle(words);
      std::size_t w = 0;
      for (std::size_t i = 0; i < img.objects.size() && static_cast<int>(img.ocr.size()) < spec_.max_ocr_tokens; ++i) {
        if (!bank_.find_object(img.objects[i])->text_bearing) continue;
        if (!img.ocr.empty() && rng.bernoulli(0.5)) continue;
        const Box& hb = img.boxes[i];
        img.ocr.push_back({words[w++ % words.size()], img.objects[i],
                           {quantize(hb[0] + 0.25 * hb[2]), quantize(hb[1] + 0.25 * hb[3]), quantize(0.5 * hb[2]), quantize(0.5 * hb[3])}});
      }
    }
    return img;
  }

  /// `target`: 0 any answer, 1 answer must be in the scene's unique pool, 2 answer must not be.
  std::optional<Sample> make_sample(char archetype, const std::string& scene, Rng& rng, int target = 0) const {
    const Image img = make_image(scene, rng, archetype == 's');
    std::optional<Sample> s;
    switch (archetype) {
      case 'o': s = object_question(img, rng); break;
      case 'a': s = attribute_question(img, rng); break;
      case 'r': s = relation_question(img, rng); break;
      case 'l': s = logic_question(img, rng); break;
      case 'k': s = knowledge_question(img, rng); break;
      case 's': s = text_question(img, rng); break;
      default: throw DataError("unknown archetype");
    }
    if (!s) return s;
    if (target != 0) {
      const auto pool = bank_.unique_pool(scene);
      const bool uniq = std::find(pool.begin(), pool.end(), s->annotations.front()) != pool.end();
      if ((target == 1) != uniq) return std::nullopt;
    }
    s->scene = scene;
    s->scene_graph = img.graph();
    for (std::size_t i = 0; i < img.objects.size(); ++i) s->objects.push_back({img.objects[i], img.boxes[i]});
    add_noise(*s, rng);
    s->task_tag = std::string(1, assign_function_task(s->program, !s->ocr_tokens.empty(), s->knowledge.has_value()));
    return s;
  }

 private:
  bool has_text_host(const Image& img) const {
    return std::any_of(img.objects.begin(), img.objects.end(), [&](const auto& o) { return bank_.find_object(o)->text_bearing; });
  }

  static Sample start(std::string question, std::string answer, std::vector<std::string> ops, std::vector<std::string> args) {
    Sample s;
    s.question = std::move(question);
    s.annotations.assign(10, std::move(answer));
    s.program = {std::move(ops), std::move(args)};
    return s;
  }

  std::optional<Sample> object_question(const Image& img, Rng& rng) const {
    std::map<std::string, std::vector<int>> by_cat;
    for (std::size_t i = 0; i < img.objects.size(); ++i)
      by_cat[bank_.find_object(img.objects[i])->category].push_back(static_cast<int>(i));
    std::vector<std::pair<std::string, int>> singles;
    for (const auto& [cat, idx] : by_cat)
      if (idx.size() == 1) singles.emplace_back(cat, idx.front());
    if (singles.empty()) return std::nullopt;
    const auto& [cat, i] = pick(singles, rng);
    const std::string& name = img.objects[static_cast<std::size_t>(i)];
    Sample s;
    std::vector<std::string> others;
    for (const auto& o : bank_.objects)
      if (o.category == cat && o.name != name) others.push_back(o.name);
    if (!others.empty() && rng.bernoulli(0.3)) {
      const std::string& other = pick(others, rng);
      const bool first = rng.bernoulli(0.5);
      const std::string x = first ? name : other, y = first ? other : name;
      s = start("is it a " + x + " or a " + y + "?", name, {"Select", "Choose"}, {cat, "name:" + x + "|" + y});
    } else {
      s = start("what " + cat + " is it?", name, {"Select", "Query"}, {cat, "name"});
    }
    s.evidence_graph.relationships.push_back(img.attribute_of(i));
    return s;
  }

  std::optional<Sample> attribute_question(const Image& img, Rng& rng) const {
    const int i = static_cast<int>(rng.below(img.objects.size()));
    const std::string& name = img.objects[static_cast<std::size_t>(i)];
    const std::string& color = img.colors[static_cast<std::size_t>(i)];
    Sample s;
    if (rng.bernoulli(0.6)) {
      s = start("what color is the " + name + "?", color, {"Select", "Query"}, {name, "color"});
    } else {
      const bool yes = rng.bernoulli(0.5);
      std::string asked = color;
      while (!yes && asked == color) asked = pick(colors_, rng);
      s = start("is the " + name + " " + asked + "?", yes ? "yes" : "no", {"Select", "Verify"}, {name, "color:" + asked});
    }
    s.evidence_graph.relationships.push_back(img.attribute_of(i));
    return s;
  }

  std::optional<Sample> relation_question(const Image& img, Rng& rng) const {
    if (img.relations.empty()) return std::nullopt;
    const Relationship& rel = pick(img.relations, rng);
    Sample s;
    if (rng.bernoulli(0.6)) {
      const auto same = std::count_if(img.relations.begin(), img.relations.end(), [&](const Relationship& r) {
        return r.predicate == rel.predicate && r.object == rel.object;
      });
      if (same != 1) return std::nullopt;
      s = start("what is " + rel.predicate + " the " + rel.object + "?", rel.subject, {"Select", "Relate", "Query"},
                {rel.object, rel.predicate + ":subject", "name"});
    } else {
      const bool yes = rng.bernoulli(0.5);
      std::string asked = rel.predicate;
      while (!yes && asked == rel.predicate) asked = pick(bank_.relations, rng);
      s = start("is the " + rel.subject + " " + asked + " the " + rel.object + "?", yes ? "yes" : "no",
                {"Select", "Relate", "Verify"}, {rel.subject, asked + ":" + rel.object, "exists"});
    }
    s.evidence_graph.relationships.push_back(rel);
    return s;
  }

  std::optional<Sample> logic_question(Image img, Rng& rng) const {
    const int i = static_cast<int>(rng.below(img.objects.size()));
    int j = i;
    while (j == i) j = static_cast<int>(rng.below(img.objects.size()));
    const bool want_same = rng.bernoulli(0.5);
    std::string& cj = img.colors[static_cast<std::size_t>(j)];
    const std::string& ci = img.colors[static_cast<std::size_t>(i)];
    if (want_same) {
      cj = ci;
    } else {
      while (cj == ci) cj = pick(colors_, rng);
    }
    const std::string& x = img.objects[static_cast<std::size_t>(i)];
    const std::string& y = img.objects[static_cast<std::size_t>(j)];
    Sample s;
    if (rng.bernoulli(0.5))
      s = start("do the " + x + " and the " + y + " have the same color?", want_same ? "yes" : "no",
                {"Select", "Select", "Same"}, {x, y, "color"});
    else
      s = start("do the " + x + " and the " + y + " have different colors?", want_same ? "no" : "yes",
                {"Select", "Select", "Different"}, {x, y, "color"});
    s.evidence_graph.relationships = {img.attribute_of(i), img.attribute_of(j)};
    // The recolored image is the one the sample describes.
    recolored_ = img;
    return s;
  }

  std::optional<Sample> knowledge_question(const Image& img, Rng& rng) const {
    std::vector<int> known;
    for (std::size_t i = 0; i < img.objects.size(); ++i)
      if (bank_.fact_for(img.objects[i])) known.push_back(static_cast<int>(i));
    if (known.empty()) return std::nullopt;
    const int i = pick(known, rng);
    const KnowledgeFact* f = bank_.fact_for(img.objects[static_cast<std::size_t>(i)]);
    Sample s = start("what is the " + f->subject + " " + f->property + "?", f->value, {"Select", "KnowledgeLookup"},
                     {f->subject, f->property});
    s.knowledge = f->render();
    s.evidence_graph.relationships.push_back(img.attribute_of(i));
    return s;
  }

  std::optional<Sample> text_question(const Image& img, Rng& rng) const {
    if (img.ocr.empty()) return std::nullopt;
    const OcrToken& t = pick(img.ocr, rng);
    Sample s = start("what does the " + t.host + " say?", t.token, {"Select", "SceneTextRead"}, {t.host, "text"});
    s.ocr_tokens = img.ocr;
    s.evidence_graph.relationships.push_back(img.attribute_of(img.index_of(t.host)));
    return s;
  }

  void add_noise(Sample& s, Rng& rng) const {
    if (spec_.annotator_noise <= 0.0) return;
    const std::string truth = s.annotations.front();
    std::vector<std::string> distractors;
    if (truth == "yes" || truth == "no") distractors = {truth == "yes" ? "no" : "yes"};
    else if (bank_.is_attribute(truth)) distractors = colors_;
    else if (bank_.find_object(truth)) for (const auto& o : bank_.objects) distractors.push_back(o.name);
    else distractors = bank_.ocr_lexicon;
    std::erase(distractors, truth);
    if (distractors.empty()) return;
    for (int attempt = 0; attempt < 100; ++attempt) {
      for (auto& a : s.annotations) a = rng.bernoulli(spec_.annotator_noise) ? pick(distractors, rng) : truth;
      if (s.answer() == truth) return;
    }
    s.annotations.assign(10, truth);
  }

  const WorldSpec& spec_;
  const ConceptBank& bank_;
  std::uint64_t seed_;
  std::vector<std::string> colors_;
  mutable std::optional<Image> recolored_;


 public:
  /// Logic questions edit object colors; the emitted scene must reflect the edit.
  std::optional<Sample> make(char archetype, const std::string& scene, Rng& rng, int target = 0) const {
    recolored_.reset();
    if (archetype != 'l') return make_sample(archetype, scene, rng, target);
    Image img = make_image(scene, rng, false);
    std::optional<Sample> s = logic_question(img, rng);
    if (!s) return s;
    img = *recolored_;
    if (target != 0) {
      const auto pool = bank_.unique_pool(scene);
      const bool uniq = std::find(pool.begin(), pool.end(), s->annotations.front()) != pool.end();
      if ((target == 1) != uniq) return std::nullopt;
    }
    s->scene = scene;
    s->scene_graph = img.graph();
    for (std::size_t i = 0; i < img.objects.size(); ++i) s->objects.push_back({img.objects[i], img.boxes[i]});
    add_noise(*s, rng);
    s->task_tag = std::string(1, assign_function_task(s->program, false, false));
    return s;
  }
};

}  // namespace detail

inline double median_count(const std::map<std::string, int>& h) {
  std::vector<int> c;
  for (const auto& [k, v] : h) c.push_back(v);
  if (c.empty()) return 0.0;
  std::sort(c.begin(), c.end());
  const std::size_t n = c.size();
  return n % 2 ? c[n / 2] : 0.5 * (c[n / 2 - 1] + c[n / 2]);
}

inline bool is_gqa_archetype(char a) { return a == 'o' || a == 'a' || a == 'r' || a == 'l'; }

/// Deterministic synthetic corpus. Every scene gets enough samples of every
/// function archetype for the function split, plus enough unique- and
/// common-answer samples for its scene task.
inline World generate_world(std::uint64_t seed, const WorldSpec& spec) {
  spec.validate();
  World w{seed, spec, {}};
  detail::Generator gen(w.spec, seed);
  const auto n_scenes = static_cast<double>(spec.bank.scenes.size());
  const int per_cell = static_cast<int>(std::ceil(spec.oversample * spec.per_task() / n_scenes));
  const int per_half = static_cast<int>(std::ceil(spec.oversample * spec.per_task() / 2.0));
  const double soft_cap = 1.0 + (spec.cap_ratio - 1.0) * 0.8;
  // Samples left after capping each answer at soft_cap * median.
  auto usable = [&](const std::map<std::string, int>& h) {
    const double limit = std::max(1.0, std::floor(soft_cap * median_count(h)));
    int n = 0;
    for (const auto& [a, c] : h) n += static_cast<int>(std::min<double>(c, limit));
    return n;
  };
  std::map<std::string, int> counters;
  std::map<char, std::map<std::string, int>> archetype_hist;
  auto emit = [&](Sample s, char archetype) {
    s.id = s.scene + std::to_string(counters[s.scene]++);
    ++archetype_hist[archetype][s.answer()];
    w.pool.push_back(std::move(s));
  };
  for (const auto& scene : spec.bank.scenes) {
    Rng rng(substream(seed, "world/" + scene.tag));
    std::map<std::string, int> unique_hist, common_hist;
    const auto unique_pool = spec.bank.unique_pool(scene.tag);
    auto emit_scene = [&](Sample s, char archetype) {
      if (is_gqa_archetype(archetype)) {
        const bool uniq = std::find(unique_pool.begin(), unique_pool.end(), s.annotations.front()) != unique_pool.end();
        ++(uniq ? unique_hist : common_hist)[s.answer()];
      }
      emit(std::move(s), archetype);
    };
    for (char archetype : kFunctionOrder) {
      int made = 0, attempts = 0;
      while (made < per_cell) {
        if (++attempts > per_cell * 200) throw ConfigError("world spec cannot produce archetype " + std::string(1, archetype));
        if (auto s = gen.make(archetype, scene.tag, rng)) {
          emit_scene(std::move(*s), archetype);
          ++made;
        }
      }
    }
    // Top up the scene split: unique answers come from object and relation questions.
    for (int attempts = 0; usable(unique_hist) < per_half; ++attempts) {
      if (attempts > per_half * 400) throw ConfigError("scene " + scene.name + " cannot produce enough unique-answer samples");
      const char archetype = rng.bernoulli(0.5) ? 'o' : 'r';
      if (auto s = gen.make(archetype, scene.tag, rng, 1)) emit_scene(std::move(*s), archetype);
    }
    for (int attempts = 0; usable(common_hist) < per_half; ++attempts) {
      if (attempts > per_half * 400) throw ConfigError("scene " + scene.name + " cannot produce enough common-answer samples");
      const char archetype = "oaar"[rng.below(4)];
      if (auto s = gen.make(archetype, scene.tag, rng, 2)) emit_scene(std::move(*s), archetype);
    }
  }
  // Top up function tasks whose answers are too skewed to survive the cap.
  Rng rng(substream(seed, "world/topup"));
  const int need = static_cast<int>(std::ceil(spec.oversample * spec.per_task()));
  for (char archetype : kFunctionOrder) {
    for (int attempts = 0; usable(archetype_hist[archetype]) < need; ++attempts) {
      if (attempts > need * 400) throw ConfigError("world spec cannot balance archetype " + std::string(1, archetype));
      const auto& scene = spec.bank.scenes[static_cast<std::size_t>(attempts) % spec.bank.scenes.size()];
      if (auto s = gen.make(archetype, scene.tag, rng)) emit(std::move(*s), archetype);
    }
  }
  return w;
}

// ---------------------------------------------------------------------------
// Splits

inline std::map<std::string, int> answer_histogram(const std::vector<const Sample*>& samples) {
  std::map<std::string, int> h;
  for (const Sample* s : samples) ++h[s->answer()];
  return h;
}

inline std::map<std::string, int> answer_histogram(const TaskDataset& t) {
  std::vector<const Sample*> all;
  for (const auto* part : {&t.train, &t.val, &t.test})
    for (const auto& s : *part) all.push_back(&s);
  return answer_histogram(all);
}

/// Max answer count over median answer count.
inline double max_median_ratio(const std::map<std::string, int>& h) {
  if (h.empty()) return 0.0;
  int mx = 0;
  for (const auto& [k, v] : h) mx = std::max(mx, v);
  return mx / median_count(h);
}

/// Caps every answer's count at floor(cap_ratio * median). Over-frequent
/// answers are thinned evenly across the concatenated partitions, so no
/// partition loses disproportionately and no answer disappears.
inline TaskDataset smooth_answer_distribution(const TaskDataset& task, double cap_ratio) {
  if (!(cap_ratio > 1.0)) throw ConfigError("cap_ratio must be > 1");
  const auto hist = answer_histogram(task);
  const double limit_d = std::floor(cap_ratio * median_count(hist));
  std::map<std::string, int> limit, seen;
  for (const auto& [a, c] : hist) limit[a] = static_cast<int>(std::max(1.0, std::min<double>(c, limit_d)));
  TaskDataset out;
  out.task_tag = task.task_tag;
  out.name = task.name;
  auto thin = [&](const std::vector<Sample>& in, std::vector<Sample>& dst) {
    for (const auto& s : in) {
      const std::string a = s.answer();
      const int c = hist.at(a), keep = limit.at(a), n = seen[a]++;
      // Keep occurrence n iff it crosses the next evenly spaced threshold.
      const long long before = static_cast<long long>(n) * keep / c;
      const long long after = static_cast<long long>(n + 1) * keep / c;
      if (after > before) dst.push_back(s);
    }
  };
  thin(task.train, out.train);
  thin(task.val, out.val);
  thin(task.test, out.test);
  return out;
}

namespace detail {

/// Draws exactly `n` samples with the flattest answer histogram the
/// candidates allow: every answer gets min(count, L) for the smallest level L
/// that reaches `n`, with the surplus shaved one apiece off randomly chosen
/// answers sitting at L.
inline std::vector<Sample> draw_flat(std::vector<Sample> candidates, std::size_t n, Rng& rng, const std::string& what) {
  if (candidates.size() < n)
    throw DataError(what + ": only " + std::to_string(candidates.size()) + " candidates, need " + std::to_string(n) +
                    " (raise oversample)");
  std::map<std::string, std::vector<Sample>> by_answer;
  for (auto& s : candidates) by_answer[s.answer()].push_back(std::move(s));
  auto fill = [&](std::size_t level) {
    std::size_t t = 0;
    for (const auto& [a, v] : by_answer) t += std::min(v.size(), level);
    return t;
  };
  std::size_t level = 0;
  while (fill(level) < n) ++level;
  std::vector<std::string> at_level;
  for (const auto& [a, v] : by_answer)
    if (v.size() >= level) at_level.push_back(a);
  rng.shuffle(at_level);
  std::set<std::string> shaved(at_level.begin(), at_level.begin() + static_cast<std::ptrdiff_t>(fill(level) - n));
  std::vector<Sample> out;
  for (auto& [a, v] : by_answer) {
    const std::size_t q = std::min(v.size(), level) - (shaved.count(a) ? 1 : 0);
    rng.shuffle(v);
    for (std::size_t i = 0; i < q; ++i) out.push_back(std::move(v[i]));
  }
  return out;
}

inline TaskDataset partition(std::string tag, std::string name, std::vector<Sample> samples, const WorldSpec& spec,
                             double cap_ratio, Rng& rng) {
  rng.shuffle(samples);
  TaskDataset t;
  t.task_tag = tag;
  t.name = std::move(name);
  const auto ntr = static_cast<std::size_t>(spec.train_per_task), nva = static_cast<std::size_t>(spec.val_per_task);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    samples[i].task_tag = tag;
    auto& dst = i < ntr ? t.train : (i < ntr + nva ? t.val : t.test);
    dst.push_back(std::move(samples[i]));
  }
  if (max_median_ratio(answer_histogram(t)) > cap_ratio) t = smooth_answer_distribution(t, cap_ratio);
  return t;
}

}  // namespace detail

/// Function-incremental benchmark in canonical order "oarlks".
inline ContinualBenchmark build_function_splits(const World& world, double cap_ratio) {
  Rng rng(substream(world.seed, "split/function"));
  ContinualBenchmark b;
  b.kind = "function";
  for (char tag : kFunctionOrder) {
    std::vector<Sample> candidates;
    for (const auto& s : world.pool) {
      const char assigned = assign_function_task(s.program, !s.ocr_tokens.empty(), s.knowledge.has_value());
      if (assigned == tag) candidates.push_back(s);
    }
    auto drawn = detail::draw_flat(std::move(candidates), static_cast<std::size_t>(world.spec.per_task()), rng,
                                   "function task " + std::string(1, tag));
    b.tasks.push_back(detail::partition(std::string(1, tag), function_task_name(tag), std::move(drawn), world.spec, cap_ratio, rng));
    b.order_code += tag;
  }
  return b;
}

/// Scene-incremental benchmark. `scene_assignment` maps each scene tag to a
/// task letter; only object/attribute/relation/logic questions take part.
/// Per task, half the samples have a unique answer and half a common one.
inline ContinualBenchmark build_scene_splits(const World& world, const std::map<std::string, std::string>& scene_assignment,
                                             double cap_ratio) {
  const ConceptBank& bank = world.spec.bank;
  std::map<std::string, std::string> owner;  // unique answer -> scene
  for (const auto& o : bank.objects)
    if (o.pool != kSharedPool) owner[o.name] = o.pool;
  for (const auto& s : world.pool) {
    if (!bank.find_scene(s.scene)) throw DataError("sample " + s.id + " has unknown scene '" + s.scene + "'");
    for (const auto& a : s.annotations) {
      auto it = owner.find(a);
      if (it != owner.end() && it->second != s.scene)
        throw SplitIntegrityError("unique answer '" + a + "' of scene " + it->second + " appears in scene " + s.scene);
    }
  }
  Rng rng(substream(world.seed, "split/scene"));
  ContinualBenchmark b;
  b.kind = "scene";
  const auto per_task = static_cast<std::size_t>(world.spec.per_task());
  for (const auto& scene : bank.scenes) {
    auto it = scene_assignment.find(scene.tag);
    if (it == scene_assignment.end()) throw ConfigError("scene " + scene.tag + " has no task assignment");
    const std::string tag = it->second;
    const auto unique_pool = bank.unique_pool(scene.tag);
    std::vector<Sample> uniq, common;
    for (const auto& s : world.pool) {
      if (s.scene != scene.tag || !is_gqa_archetype(s.task_tag.empty() ? ' ' : s.task_tag[0])) continue;
      const bool u = std::find(unique_pool.begin(), unique_pool.end(), s.answer()) != unique_pool.end();
      (u ? uniq : common).push_back(s);
    }
    auto drawn = detail::draw_flat(std::move(uniq), per_task / 2, rng, "scene " + scene.name + " unique");
    auto drawn_common = detail::draw_flat(std::move(common), per_task - per_task / 2, rng, "scene " + scene.name + " common");
    drawn.insert(drawn.end(), std::make_move_iterator(drawn_common.begin()), std::make_move_iterator(drawn_common.end()));
    b.tasks.push_back(detail::partition(tag, scene.name, std::move(drawn), world.spec, cap_ratio, rng));
    b.order_code += tag;
    b.unique_answers[tag] = unique_pool;
  }
  // Unique answers must stay inside their own task.
  for (const auto& t : b.tasks)
    for (const auto* part : {&t.train, &t.val, &t.test})
      for (const auto& s : *part)
        for (const auto& [other, answers] : b.unique_answers)
          if (other != t.task_tag && std::find(answers.begin(), answers.end(), s.answer()) != answers.end())
            throw SplitIntegrityError("unique answer '" + s.answer() + "' of task " + other + " leaked into task " + t.task_tag);
  return b;
}

/// Identity mapping "a" -> "a", ... for the bank's scenes.
inline std::map<std::string, std::string> default_scene_assignment(const ConceptBank& bank) {
  std::map<std::string, std::string> m;
  for (const auto& s : bank.scenes) m[s.tag] = s.tag;
  return m;
}

}  // namespace sgp
