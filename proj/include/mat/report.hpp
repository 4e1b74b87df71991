#pragma once

// Results table, summary and sweep plots. Everything here is read back from
// recorded stage artifacts; nothing is recomputed.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "mat/error.hpp"
#include "mat/manifest.hpp"

namespace mat {

struct ResultRow {
  std::string model;            // source, benign, or the attack kind
  double test_acc = 0.0;        // this model's clean test accuracy
  double source_acc = 0.0;      // the source model's clean test accuracy
  double trigger_acc = 0.0;
  std::optional<double> p_value;
  std::optional<bool> owned;
};

struct SweepPoint {
  double value = 0.0;
  std::map<std::string, double> trigger_acc;  // model -> trigger accuracy
};

struct Sweep {
  std::string param;
  std::vector<SweepPoint> points;  // ascending value
};

namespace detail {

inline std::string fmt(double v, int precision = 6) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// Rows for the run whose files live under `prefix` inside the store.
inline std::vector<ResultRow> collect_rows(ArtifactStore& store, const RunManifest& m, const std::string& prefix) {
  auto json_of = [&](const std::string& stage) { return store.get_json(prefix + m.output(stage, "metrics").path); };
  auto report_of = [&](const std::string& stage) { return store.get_report(prefix + m.output(stage, "report").path); };
  std::vector<ResultRow> rows;
  const auto src = json_of("train-source");
  const double source_acc = src.at("test_acc").get<double>();

  ResultRow s{.model = "source", .test_acc = source_acc, .source_acc = source_acc,
              .trigger_acc = src.at("trigger_acc").get<double>(), .p_value = {}, .owned = {}};
  if (m.latest_ok("verify/source", m.config_hash())) {
    const auto r = report_of("verify/source");
    s.trigger_acc = r.suspect_trigger_acc;
    s.p_value = r.p_value;
    s.owned = r.owned;
  }
  rows.push_back(s);

  const auto ben = json_of("train-benign");
  rows.push_back({.model = "benign", .test_acc = ben.at("test_acc").get<double>(), .source_acc = source_acc,
                  .trigger_acc = ben.at("trigger_acc").get<double>(), .p_value = {}, .owned = {}});

  for (const auto& stage : m.header()->planned) {
    if (!stage.starts_with("attack/")) continue;
    const auto kind = stage.substr(7);
    const auto meta = json_of(stage);
    const auto r = report_of("verify/" + kind);
    rows.push_back({.model = kind, .test_acc = meta.at("test_acc").get<double>(), .source_acc = source_acc,
                    .trigger_acc = r.suspect_trigger_acc, .p_value = r.p_value, .owned = r.owned});
  }
  return rows;
}

inline void require_complete(const RunManifest& m, const std::string& where) {
  if (!m.header()) throw ReportError(where + "has no run manifest");
  const auto missing = m.missing();
  if (missing.empty()) return;
  std::string list;
  for (const auto& s : missing) list += (list.empty() ? "" : ", ") + s;
  throw ReportError(where + "incomplete run; missing stages: " + list);
}

}  // namespace detail

inline std::string format_results_csv(const std::vector<ResultRow>& rows) {
  std::ostringstream os;
  os << "model,test_acc,source_acc,trigger_acc,p_value,owned\n";
  for (const auto& r : rows) {
    os << r.model << ',' << detail::fmt(r.test_acc) << ',' << detail::fmt(r.source_acc) << ','
       << detail::fmt(r.trigger_acc) << ',' << (r.p_value ? detail::fmt(*r.p_value) : "") << ','
       << (r.owned ? (*r.owned ? "true" : "false") : "") << '\n';
  }
  return os.str();
}

inline std::string format_summary(const std::vector<ResultRow>& rows, const std::vector<Sweep>& sweeps) {
  std::ostringstream os;
  os << "model          test acc  trigger acc  p-value     owned\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(15) << r.model << std::setw(10) << detail::fmt(r.test_acc, 4) << std::setw(13)
       << detail::fmt(r.trigger_acc, 4) << std::setw(12) << (r.p_value ? detail::fmt(*r.p_value, 3) : "-")
       << (r.owned ? (*r.owned ? "yes" : "no") : "-") << '\n';
  }
  for (const auto& s : sweeps) {
    os << "\nsweep " << s.param << " (trigger accuracy)\n";
    for (const auto& p : s.points) {
      os << "  " << s.param << '=' << detail::fmt(p.value) << ':';
      for (const auto& [model, acc] : p.trigger_acc) os << ' ' << model << '=' << detail::fmt(acc, 4);
      os << '\n';
    }
  }
  return os.str();
}

inline std::string format_sweep_csv(const Sweep& s) {
  std::vector<std::string> models;
  for (const auto& p : s.points)
    for (const auto& [m, _] : p.trigger_acc)
      if (std::find(models.begin(), models.end(), m) == models.end()) models.push_back(m);
  std::ostringstream os;
  os << s.param;
  for (const auto& m : models) os << ',' << m;
  os << '\n';
  for (const auto& p : s.points) {
    os << detail::fmt(p.value);
    for (const auto& m : models) {
      auto it = p.trigger_acc.find(m);
      os << ',' << (it == p.trigger_acc.end() ? "" : detail::fmt(it->second));
    }
    os << '\n';
  }
  return os.str();
}

// Trigger accuracy against the swept parameter, one polyline per model.
inline std::string render_sweep_svg(const Sweep& s) {
  constexpr double W = 480, H = 320, L = 56, R = 120, T = 24, B = 44;
  const double pw = W - L - R, ph = H - T - B;
  double lo = s.points.empty() ? 0.0 : s.points.front().value, hi = s.points.empty() ? 1.0 : s.points.back().value;
  if (hi <= lo) hi = lo + 1.0;
  auto x = [&](double v) { return L + (v - lo) / (hi - lo) * pw; };
  auto y = [&](double a) { return T + (1.0 - a) * ph; };
  static constexpr const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

  std::map<std::string, std::vector<std::pair<double, double>>> curves;
  for (const auto& p : s.points)
    for (const auto& [m, a] : p.trigger_acc) curves[m].emplace_back(p.value, a);

  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
     << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T + ph << "\" x2=\"" << L + pw << "\" y2=\"" << T + ph
     << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << T + ph << "\" stroke=\"black\"/>\n";
  for (double a : {0.0, 0.25, 0.5, 0.75, 1.0})
    os << "<text x=\"" << L - 6 << "\" y=\"" << y(a) + 4 << "\" text-anchor=\"end\">" << detail::fmt(a) << "</text>\n";
  for (const auto& p : s.points)
    os << "<text x=\"" << x(p.value) << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\">"
       << detail::fmt(p.value) << "</text>\n";
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\">" << s.param << "</text>\n";
  os << "<text x=\"14\" y=\"" << T + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << T + ph / 2
     << ")\">trigger accuracy</text>\n";
  std::size_t c = 0;
  for (const auto& [m, pts] : curves) {
    const char* col = colours[c % std::size(colours)];
    os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (const auto& [v, a] : pts) os << x(v) << ',' << y(a) << ' ';
    os << "\"/>\n";
    for (const auto& [v, a] : pts)
      os << "<circle cx=\"" << x(v) << "\" cy=\"" << y(a) << "\" r=\"3\" fill=\"" << col << "\"/>\n";
    const double ly = T + 14.0 * static_cast<double>(c);
    os << "<text x=\"" << L + pw + 10 << "\" y=\"" << ly + 4 << "\" fill=\"" << col << "\">" << m << "</text>\n";
    ++c;
  }
  os << "</svg>\n";
  return os.str();
}

// Sweep sub-runs live in sweeps/<param>=<value>/ below the run root.
inline std::vector<Sweep> collect_sweeps(ArtifactStore& store) {
  std::map<std::string, Sweep> by_param;
  const auto dir = store.root() / "sweeps";
  if (!std::filesystem::is_directory(dir)) return {};
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (!e.is_directory()) continue;
    const auto name = e.path().filename().string();
    const auto eq = name.find('=');
    if (eq == std::string::npos) continue;
    const std::string prefix = "sweeps/" + name + "/";
    const auto m = parse_manifest(store.read(prefix + kManifestFile));
    detail::require_complete(m, prefix + ": ");
    SweepPoint p;
    p.value = std::stod(name.substr(eq + 1));
    for (const auto& r : detail::collect_rows(store, m, prefix)) p.trigger_acc[r.model] = r.trigger_acc;
    auto& s = by_param[name.substr(0, eq)];
    s.param = name.substr(0, eq);
    s.points.push_back(p);
  }
  std::vector<Sweep> out;
  for (auto& [_, s] : by_param) {
    std::sort(s.points.begin(), s.points.end(), [](const auto& a, const auto& b) { return a.value < b.value; });
    out.push_back(std::move(s));
  }
  return out;
}

// Writes reports/results.csv, reports/summary.txt and, per sweep, a CSV and
// an SVG plot; appends a "report" record to the manifest.
inline std::vector<ResultRow> emit_report(ArtifactStore& store) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto m = load_manifest(store);
  detail::require_complete(m, "");
  const auto rows = detail::collect_rows(store, m, "");
  const auto sweeps = collect_sweeps(store);

  StageRecord rec;
  rec.stage = "report";
  rec.config_hash = m.config_hash();
  rec.outputs["results"] = store.write("reports/results.csv", format_results_csv(rows));
  rec.outputs["summary"] = store.write("reports/summary.txt", format_summary(rows, sweeps));
  for (const auto& s : sweeps) {
    rec.outputs["sweep_" + s.param] = store.write("reports/sweep_" + s.param + ".csv", format_sweep_csv(s));
    rec.outputs["plot_" + s.param] = store.write("reports/sweep_" + s.param + ".svg", render_sweep_svg(s));
  }
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  store.append(kManifestFile, json(rec).dump());
  return rows;
}

inline std::vector<ResultRow> emit_report(const std::filesystem::path& root) {
  ArtifactStore store(root);
  return emit_report(store);
}

}  // namespace mat
