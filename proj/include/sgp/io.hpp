#pragma once

// Files on disk: JSON/JSONL helpers, benchmark directories, parameter checkpoints.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sgp/codec.hpp"
#include "sgp/errors.hpp"
#include "sgp/rng.hpp"
#include "sgp/tensor.hpp"
#include "sgp/world.hpp"

namespace sgp {

namespace fs = std::filesystem;

inline std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

inline json read_json(const fs::path& p) {
  const std::string text = read_text(p);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("cannot parse " + p.string() + ": " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) { write_text(p, j.dump(2) + "\n"); }

inline void write_jsonl(const fs::path& p, const std::vector<json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + "\n";
  write_text(p, s);
}

inline std::vector<json> read_jsonl(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::vector<json> rows;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::parse_error&) {
      throw DataError(p.string() + ":" + std::to_string(n) + ": malformed JSON line");
    }
  }
  return rows;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// ---------------------------------------------------------------------------
// Benchmark directories: benchmark.json plus tasks/<tag>/{train,val,test}.jsonl

/// `generator` (e.g. world seed and spec hash) is stored verbatim when given.
inline void write_benchmark(const fs::path& dir, const ContinualBenchmark& b, const ConceptBank& bank,
                            const json& generator = nullptr) {
  json meta{{"kind", b.kind}, {"order_code", b.order_code}, {"bank", to_json(bank)}, {"tasks", json::array()}};
  if (!generator.is_null()) meta["generator"] = generator;
  if (!b.unique_answers.empty()) meta["unique_answers"] = b.unique_answers;
  for (const auto& t : b.tasks) {
    meta["tasks"].push_back({{"tag", t.task_tag},
                             {"name", t.name},
                             {"train", t.train.size()},
                             {"val", t.val.size()},
                             {"test", t.test.size()},
                             {"files",
                              {{"train", "tasks/" + t.task_tag + "/train.jsonl"},
                               {"val", "tasks/" + t.task_tag + "/val.jsonl"},
                               {"test", "tasks/" + t.task_tag + "/test.jsonl"}}}});
    for (const auto& [split, samples] : {std::pair{"train", &t.train}, {"val", &t.val}, {"test", &t.test}}) {
      std::vector<json> rows;
      for (const auto& s : *samples) rows.push_back(to_json(s));
      write_jsonl(dir / "tasks" / t.task_tag / (std::string(split) + ".jsonl"), rows);
    }
  }
  write_json(dir / "benchmark.json", meta);
}

struct LoadedBenchmark {
  ContinualBenchmark benchmark;
  ConceptBank bank;
};

inline LoadedBenchmark read_benchmark(const fs::path& dir) {
  if (!fs::exists(dir / "benchmark.json")) throw DataError("no benchmark.json in " + dir.string());
  const json meta = read_json(dir / "benchmark.json");
  LoadedBenchmark out;
  try {
    out.bank = concept_bank_from_json(meta.at("bank"));
    out.benchmark.kind = meta.at("kind");
    out.benchmark.order_code = meta.at("order_code");
    if (meta.contains("unique_answers"))
      out.benchmark.unique_answers = meta.at("unique_answers").get<std::map<std::string, std::vector<std::string>>>();
    for (const auto& t : meta.at("tasks")) {
      TaskDataset d;
      d.task_tag = t.at("tag");
      d.name = t.at("name");
      for (const auto& [split, samples] : {std::pair{"train", &d.train}, {"val", &d.val}, {"test", &d.test}}) {
        for (const auto& row : read_jsonl(dir / "tasks" / d.task_tag / (std::string(split) + ".jsonl")))
          samples->push_back(sample_from_json(row));
        if (samples->size() != t.at(split).get<std::size_t>())
          throw DataError("task " + d.task_tag + " " + split + " count differs from benchmark.json");
      }
      out.benchmark.tasks.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw DataError("malformed benchmark in " + dir.string() + ": " + e.what());
  }
  out.benchmark.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: "SGPCKPT1", uint64 header length, JSON header, float32 payload.

template <class T>
void write_checkpoint(const fs::path& p, const ParameterSet<T>& params, json header) {
  header["params"] = json::array();
  for (std::size_t i = 0; i < params.size(); ++i)
    header["params"].push_back({params.name(i), params.value(i).rows(), params.value(i).cols()});
  const std::string h = header.dump();
  std::string blob = "SGPCKPT1";
  const std::uint64_t n = h.size();
  for (int b = 0; b < 8; ++b) blob.push_back(static_cast<char>((n >> (8 * b)) & 0xff));
  blob += h;
  for (std::size_t i = 0; i < params.size(); ++i)
    for (Index k = 0; k < params.value(i).size(); ++k) {
      const float f = static_cast<float>(params.value(i).data()[k]);
      char bytes[4];
      std::memcpy(bytes, &f, 4);
      blob.append(bytes, 4);
    }
  write_text(p, blob);
}

/// Loads values into `params` (names and shapes must match); returns the header.
template <class T>
json read_checkpoint(const fs::path& p, ParameterSet<T>& params) {
  const std::string blob = read_text(p);
  if (blob.size() < 16 || blob.compare(0, 8, "SGPCKPT1") != 0) throw DataError(p.string() + " is not a checkpoint");
  std::uint64_t n = 0;
  for (int b = 0; b < 8; ++b) n |= static_cast<std::uint64_t>(static_cast<unsigned char>(blob[8 + b])) << (8 * b);
  if (16 + n > blob.size()) throw DataError(p.string() + " is truncated");
  const json header = json::parse(blob.substr(16, n));
  const auto& shapes = header.at("params");
  if (shapes.size() != params.size()) throw DataError("checkpoint parameter count mismatch");
  std::size_t off = 16 + n;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (shapes[i].at(0) != params.name(i) || shapes[i].at(1) != params.value(i).rows() ||
        shapes[i].at(2) != params.value(i).cols())
      throw DataError("checkpoint parameter " + params.name(i) + " mismatch");
    if (off + 4 * static_cast<std::size_t>(params.value(i).size()) > blob.size()) throw DataError(p.string() + " is truncated");
    for (Index k = 0; k < params.value(i).size(); ++k, off += 4) {
      float f;
      std::memcpy(&f, blob.data() + off, 4);
      params.value(i).data()[k] = static_cast<T>(f);
    }
  }
  return header;
}

}  // namespace sgp
