#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "duw/experiment.hpp"
#include "duw/io.hpp"

namespace duw {

namespace fs = std::filesystem;

namespace {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (header[i] == name) return static_cast<int>(i);
    fail("missing-metrics", "column '" + name + "' not found");
  }
  std::vector<double> numbers(const std::string& name) const {
    const int c = column(name);
    std::vector<double> out;
    for (const auto& r : rows) out.push_back(std::stod(r.at(static_cast<std::size_t>(c))));
    return out;
  }
};

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

Table read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) fail("missing-metrics", path.string() + " not found");
  Table t;
  std::string line;
  if (!std::getline(in, line)) fail("missing-metrics", path.string() + " is empty");
  t.header = split(line);
  while (std::getline(in, line))
    if (!line.empty()) t.rows.push_back(split(line));
  return t;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

struct Series {
  std::string label;
  std::string color;
  std::vector<double> y;
};

// Line chart on a fixed 0..1 y-axis; x values are shared by every series.
std::string line_chart(const std::string& title, const std::string& xlabel, const std::vector<double>& x,
                       const std::vector<Series>& series, bool log_x) {
  const double W = 480, H = 300, L = 50, R = 20, T = 30, B = 40;
  auto tx = [&](double v) { return log_x ? std::log10(v) : v; };
  double x0 = tx(x.front()), x1 = tx(x.back());
  if (x1 == x0) x1 = x0 + 1;
  auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double v) { return H - B - v * (H - T - B); };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << W / 2 << "\" y=\"18\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << W - R << "\" y2=\"" << py(0) << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << L << "\" y1=\"" << py(0) << "\" x2=\"" << L << "\" y2=\"" << py(1) << "\" stroke=\"black\"/>\n";
  for (double v : {0.0, 0.5, 1.0})
    s << "<text x=\"" << L - 6 << "\" y=\"" << py(v) + 4 << "\" text-anchor=\"end\" font-size=\"10\">" << v
      << "</text>\n";
  for (double v : {x.front(), x.back()})
    s << "<text x=\"" << px(v) << "\" y=\"" << H - B + 14 << "\" text-anchor=\"middle\" font-size=\"10\">" << v
      << "</text>\n";
  s << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 8 << "\" text-anchor=\"middle\" font-size=\"11\">" << xlabel
    << "</text>\n";
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& ser = series[i];
    s << "<polyline fill=\"none\" stroke=\"" << ser.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t j = 0; j < x.size() && j < ser.y.size(); ++j) s << num(px(x[j])) << "," << num(py(ser.y[j])) << " ";
    s << "\"/>\n";
    s << "<text x=\"" << W - R - 90 << "\" y=\"" << T + 14 * (i + 1) << "\" font-size=\"11\" fill=\"" << ser.color
      << "\">" << ser.label << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

// Mean WSR and Acc per parameter value of one attack kind.
void sweep(const Table& summary, const std::string& kind, std::vector<double>& x, std::vector<double>& acc,
           std::vector<double>& wsr) {
  const int ck = summary.column("kind"), cp = summary.column("param"), cm = summary.column("model");
  const int ca = summary.column("Acc"), cw = summary.column("WSR");
  for (const auto& r : summary.rows) {
    if (r.at(ck) != kind || r.at(cm) != "duw") continue;
    x.push_back(std::stod(r.at(cp)));
    acc.push_back(std::stod(r.at(ca)));
    wsr.push_back(std::stod(r.at(cw)));
  }
}

}  // namespace

std::vector<fs::path> write_report(const fs::path& run_dir) {
  const Table metrics = read_csv(run_dir / "metrics.csv");
  const Table summary = read_csv(run_dir / "summary.csv");
  if (metrics.rows.empty() || summary.rows.empty()) fail("missing-metrics", "run metrics are empty");
  const fs::path out = run_dir / "report";
  fs::create_directories(out);
  std::vector<fs::path> written;
  auto emit = [&](const std::string& name, const std::string& text) {
    write_text(out / name, text);
    written.push_back(out / name);
  };

  emit("rounds.svg", line_chart("Acc and WSR per round", "round", metrics.numbers("round"),
                                {{"Acc", "#1f77b4", metrics.numbers("mean_acc")},
                                 {"WSR", "#d62728", metrics.numbers("mean_wsr")},
                                 {"TAcc", "#2ca02c", metrics.numbers("tacc")}},
                                false));

  std::string md = "# Run summary\n\n| Acc | ΔAcc | WSR | WSR_Gap | TAcc |\n|---|---|---|---|---|\n";
  const auto& s = summary.rows.front();
  md += "| " + s.at(summary.column("Acc")) + " | " + s.at(summary.column("dAcc")) + " | " + s.at(summary.column("WSR")) +
        " | " + s.at(summary.column("WSR_Gap")) + " | " + s.at(summary.column("TAcc")) + " |\n";

  const fs::path attacks = run_dir / "attacks" / "summary.csv";
  if (fs::exists(attacks)) {
    const Table a = read_csv(attacks);
    for (const auto& [kind, xlabel, log_x] :
         {std::tuple<std::string, std::string, bool>{"prune", "prune rate", false}, {"perturb", "alpha", true}}) {
      std::vector<double> x, acc, wsr;
      sweep(a, kind, x, acc, wsr);
      if (x.size() < 2) continue;
      emit(kind + ".svg",
           line_chart(kind + " sweep", xlabel, x, {{"Acc", "#1f77b4", acc}, {"WSR", "#d62728", wsr}}, log_x));
    }
    md += "\n## Attacks\n\n| kind | param | model | Acc | ΔAcc | WSR | ΔWSR | TAcc | anomaly index |\n"
          "|---|---|---|---|---|---|---|---|---|\n";
    for (const auto& r : a.rows)
      md += "| " + r.at(a.column("kind")) + " | " + r.at(a.column("param")) + " | " + r.at(a.column("model")) + " | " +
            r.at(a.column("Acc")) + " | " + r.at(a.column("dAcc")) + " | " + r.at(a.column("WSR")) + " | " +
            r.at(a.column("dWSR")) + " | " + r.at(a.column("TAcc")) + " | " + r.at(a.column("anomaly_index")) + " |\n";
  }
  emit("summary.md", md);
  return written;
}

}  // namespace duw
