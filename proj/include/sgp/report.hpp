#pragma once

// Cross-run tables and figures (CSV + SVG).

#include <algorithm>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sgp/io.hpp"
#include "sgp/metrics.hpp"

namespace sgp {

struct RunRecord {
  std::string dir;
  std::string strategy;
  std::string order;
  std::string benchmark;
  std::uint64_t seed = 0;
  double gamma = 0.0;
  AccuracyMatrix matrix;
  MetricReport metrics;
  std::size_t memory_bytes = 0;
};

inline RunRecord load_run(const fs::path& dir) {
  for (const char* f : {"accuracy_matrix.csv", "config.json", "memory_report.json"})
    if (!fs::exists(dir / f)) throw DataError("run directory " + dir.string() + " has no " + f);
  RunRecord r;
  r.dir = dir.string();
  r.matrix = AccuracyMatrix::from_csv(read_text(dir / "accuracy_matrix.csv"));
  r.metrics = metric_report(r.matrix);
  if (r.metrics.A.size() != r.matrix.size()) throw DataError("run " + dir.string() + " has an incomplete accuracy matrix");
  const json cfg = read_json(dir / "config.json");
  try {
    r.strategy = cfg.at("strategy").at("kind");
    r.gamma = cfg.at("strategy").value("gamma", 0.0);
    r.seed = cfg.at("seed");
    r.benchmark = cfg.value("benchmark", "");
    r.memory_bytes = read_json(dir / "memory_report.json").at("bytes");
  } catch (const json::exception& e) {
    throw DataError("run " + dir.string() + ": " + e.what());
  }
  for (const auto& l : r.matrix.labels()) r.order += l;
  return r;
}

struct Series {
  std::string name;
  std::vector<double> x, y;
};

struct Figure {
  std::string name;  // file stem
  std::string title, x_label, y_label;
  bool bars = false;
  std::vector<std::string> categories;  // bar labels (x = index)
  std::vector<Series> series;

  /// Long format: series,x,y (bars add the category).
  std::string to_csv() const {
    std::ostringstream os;
    os << (bars ? "series,category,x,y\n" : "series,x,y\n");
    char a[40], b[40];
    for (const auto& s : series)
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        std::snprintf(a, sizeof a, "%.17g", s.x[i]);
        std::snprintf(b, sizeof b, "%.17g", s.y[i]);
        os << s.name << ',';
        if (bars) os << categories.at(static_cast<std::size_t>(s.x[i])) << ',';
        os << a << ',' << b << '\n';
      }
    return os.str();
  }

  std::string to_svg() const {
    const double W = 640, H = 400, L = 70, R = 160, T = 40, B = 60;
    double x0 = 1e300, x1 = -1e300, y0 = 0, y1 = -1e300;
    for (const auto& s : series)
      for (std::size_t i = 0; i < s.x.size(); ++i) {
        x0 = std::min(x0, s.x[i]);
        x1 = std::max(x1, s.x[i]);
        y0 = std::min(y0, s.y[i]);
        y1 = std::max(y1, s.y[i]);
      }
    if (x0 > x1) x0 = 0, x1 = 1;
    if (bars) x0 -= 0.5, x1 += 0.5;
    if (x1 == x0) x0 -= 1, x1 += 1;
    if (y1 <= y0) y1 = y0 + 1;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title << "</text>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << py(y0) << "\" x2=\"" << W - R << "\" y2=\"" << py(y0) << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 15 << "\" text-anchor=\"middle\">" << x_label << "</text>\n";
    os << "<text x=\"15\" y=\"" << (T + H - B) / 2 << "\" transform=\"rotate(-90 15 " << (T + H - B) / 2
       << ")\" text-anchor=\"middle\">" << y_label << "</text>\n";
    char buf[64];
    for (int k = 0; k <= 4; ++k) {
      const double v = y0 + (y1 - y0) * k / 4.0;
      std::snprintf(buf, sizeof buf, "%.3g", v);
      os << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\">" << buf << "</text>\n";
    }
    if (bars) {
      for (std::size_t c = 0; c < categories.size(); ++c)
        os << "<text x=\"" << px(static_cast<double>(c)) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << categories[c]
           << "</text>\n";
      const double slot = (px(1) - px(0)) * 0.8 / static_cast<double>(std::max<std::size_t>(series.size(), 1));
      for (std::size_t s = 0; s < series.size(); ++s)
        for (std::size_t i = 0; i < series[s].x.size(); ++i) {
          const double cx = px(series[s].x[i]) - slot * static_cast<double>(series.size()) / 2 + slot * static_cast<double>(s);
          os << "<rect x=\"" << cx << "\" y=\"" << py(series[s].y[i]) << "\" width=\"" << slot << "\" height=\""
             << py(y0) - py(series[s].y[i]) << "\" fill=\"" << colors[s % 8] << "\"/>\n";
        }
    } else {
      std::set<double> ticks;
      for (const auto& s : series) ticks.insert(s.x.begin(), s.x.end());
      if (ticks.size() <= 12)
        for (double t : ticks) {
          std::snprintf(buf, sizeof buf, "%g", t);
          os << "<text x=\"" << px(t) << "\" y=\"" << H - B + 16 << "\" text-anchor=\"middle\">" << buf << "</text>\n";
        }
      for (std::size_t s = 0; s < series.size(); ++s) {
        os << "<polyline fill=\"none\" stroke=\"" << colors[s % 8] << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < series[s].x.size(); ++i) os << px(series[s].x[i]) << ',' << py(series[s].y[i]) << ' ';
        os << "\"/>\n";
        for (std::size_t i = 0; i < series[s].x.size(); ++i)
          os << "<circle cx=\"" << px(series[s].x[i]) << "\" cy=\"" << py(series[s].y[i]) << "\" r=\"3\" fill=\"" << colors[s % 8]
             << "\"/>\n";
      }
    }
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double ly = T + 10 + 18 * static_cast<double>(s);
      os << "<rect x=\"" << W - R + 10 << "\" y=\"" << ly - 9 << "\" width=\"10\" height=\"10\" fill=\"" << colors[s % 8] << "\"/>\n";
      os << "<text x=\"" << W - R + 26 << "\" y=\"" << ly << "\">" << series[s].name << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
  }
};

/// Parses a Figure CSV back into series (line figures).
inline std::vector<Series> series_from_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  std::getline(is, line);
  const bool bars = line.rfind("series,category", 0) == 0;
  std::vector<Series> out;
  while (std::getline(is, line)) {
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    if (cells.size() != (bars ? 4u : 3u)) throw DataError("malformed figure csv row");
    if (out.empty() || out.back().name != cells[0]) out.push_back({cells[0], {}, {}});
    out.back().x.push_back(std::stod(cells[cells.size() - 2]));
    out.back().y.push_back(std::stod(cells.back()));
  }
  return out;
}

struct Report {
  std::vector<RunRecord> runs;
  std::vector<std::string> orders;
  std::vector<std::string> strategies;
  std::map<std::string, std::string> tables;  // file name -> CSV
  std::vector<Figure> figures;
};

inline std::string fmt(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

/// Strategy label; sgp runs carry their gamma.
inline std::string run_label(const RunRecord& r) {
  if (r.strategy != "sgp") return r.strategy;
  char b[32];
  std::snprintf(b, sizeof b, "sgp(g=%g)", r.gamma);
  return b;
}

inline Report build_report(std::vector<RunRecord> runs) {
  if (runs.empty()) throw DataError("report needs at least one run");
  Report rep;
  const std::size_t n = runs.front().matrix.size();
  std::set<std::string> tags;
  for (const auto& l : runs.front().matrix.labels()) tags.insert(l);
  for (const auto& r : runs) {
    if (r.matrix.size() != n) throw DataError("runs have inconsistent task counts (" + r.dir + ")");
    std::set<std::string> t(r.matrix.labels().begin(), r.matrix.labels().end());
    if (t != tags) throw DataError("runs come from different benchmarks (" + r.dir + ")");
    if (r.benchmark != runs.front().benchmark) throw DataError("runs come from different benchmarks (" + r.dir + ")");
  }
  for (const auto& r : runs) {
    if (std::find(rep.orders.begin(), rep.orders.end(), r.order) == rep.orders.end()) rep.orders.push_back(r.order);
    const auto lab = run_label(r);
    if (std::find(rep.strategies.begin(), rep.strategies.end(), lab) == rep.strategies.end()) rep.strategies.push_back(lab);
  }

  // Per-run table.
  {
    std::ostringstream os;
    os << "run,strategy,gamma,order,seed,A,F,B,memory_bytes\n";
    for (const auto& r : runs)
      os << r.dir << ',' << r.strategy << ',' << fmt(r.gamma) << ',' << r.order << ',' << r.seed << ',' << fmt(r.metrics.final_A)
         << ',' << (r.metrics.final_F ? fmt(*r.metrics.final_F) : "") << ',' << (r.metrics.final_B ? fmt(*r.metrics.final_B) : "")
         << ',' << r.memory_bytes << '\n';
    rep.tables["runs.csv"] = os.str();
  }
  // Strategy x order summary per metric, seeds averaged; last column averages orders.
  for (const char* metric : {"A", "F", "B"}) {
    std::ostringstream os;
    os << "strategy";
    for (const auto& o : rep.orders) os << ',' << o;
    os << ",avg\n";
    for (const auto& s : rep.strategies) {
      os << s;
      double total = 0;
      int cells = 0;
      for (const auto& o : rep.orders) {
        double sum = 0;
        int k = 0;
        for (const auto& r : runs) {
          if (run_label(r) != s || r.order != o) continue;
          std::optional<double> v = metric[0] == 'A' ? std::optional<double>(r.metrics.final_A)
                                   : metric[0] == 'F' ? r.metrics.final_F
                                                      : r.metrics.final_B;
          if (!v) continue;
          sum += *v;
          ++k;
        }
        os << ',';
        if (k) {
          os << fmt(sum / k);
          total += sum / k;
          ++cells;
        }
      }
      os << ',' << (cells ? fmt(total / cells) : "") << '\n';
    }
    rep.tables[std::string("summary_") + metric + ".csv"] = os.str();
  }

  // Accuracy over time, one figure per run.
  for (std::size_t k = 0; k < runs.size(); ++k) {
    const auto& r = runs[k];
    Figure f;
    f.name = "curves_run" + std::to_string(k + 1);
    f.title = run_label(r) + " order " + r.order + " seed " + std::to_string(r.seed);
    f.x_label = "after task";
    f.y_label = "accuracy";
    for (std::size_t j = 0; j < n; ++j) {
      Series s{r.matrix.labels()[j], {}, {}};
      for (std::size_t i = j; i < n; ++i) {
        s.x.push_back(static_cast<double>(i + 1));
        s.y.push_back(r.matrix.at(i, j));
      }
      f.series.push_back(std::move(s));
    }
    Series avg{"A_k", {}, {}};
    for (std::size_t i = 0; i < r.metrics.A.size(); ++i) {
      avg.x.push_back(static_cast<double>(i + 1));
      avg.y.push_back(r.metrics.A[i]);
    }
    f.series.push_back(std::move(avg));
    rep.figures.push_back(std::move(f));
  }

  // Final A against gamma for sgp runs.
  {
    std::map<double, std::pair<double, int>> by_gamma;
    for (const auto& r : runs)
      if (r.strategy == "sgp") {
        by_gamma[r.gamma].first += r.metrics.final_A;
        by_gamma[r.gamma].second += 1;
      }
    if (!by_gamma.empty()) {
      Figure f{"gamma_sweep", "replay volume", "gamma", "final A", false, {}, {{"sgp", {}, {}}}};
      for (const auto& [g, p] : by_gamma) {
        f.series[0].x.push_back(g);
        f.series[0].y.push_back(p.first / p.second);
      }
      rep.figures.push_back(std::move(f));
    }
  }

  // Stored bytes per strategy.
  {
    Figure f{"memory", "stored replay state", "strategy", "bytes", true, {}, {{"bytes", {}, {}}}};
    for (const auto& s : rep.strategies) {
      double sum = 0;
      int k = 0;
      for (const auto& r : runs)
        if (run_label(r) == s) {
          sum += static_cast<double>(r.memory_bytes);
          ++k;
        }
      f.series[0].x.push_back(static_cast<double>(f.categories.size()));
      f.series[0].y.push_back(sum / k);
      f.categories.push_back(s);
    }
    rep.figures.push_back(std::move(f));
  }
  rep.runs = std::move(runs);
  return rep;
}

inline void write_report(const fs::path& dir, const Report& rep) {
  for (const auto& [name, csv] : rep.tables) write_text(dir / name, csv);
  for (const auto& f : rep.figures) {
    write_text(dir / (f.name + ".csv"), f.to_csv());
    write_text(dir / (f.name + ".svg"), f.to_svg());
  }
}

}  // namespace sgp
