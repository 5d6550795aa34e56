#include "core/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <numeric>

#include "core/common.hpp"

namespace bvo {

namespace {

struct SweepPoint {
  long fp = 0, tp = 0;  // cumulative counts after one distinct threshold
};

struct Sweep {
  long p = 0, n = 0;
  std::vector<SweepPoint> points;  // thresholds in descending score order
};

// Tie-grouped threshold sweep: one point per distinct score value, counts
// accumulated over the whole tied group at once.
Sweep sweep_descending(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size())
    fail(Err::Dimension, "have " + std::to_string(scores.size()) + " scores but " +
                             std::to_string(labels.size()) + " labels");
  if (scores.empty()) fail(Err::InvalidArgument, "no scores to sweep");
  Sweep sw;
  for (size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i])) fail(Err::Numeric, "non-finite score in metric input");
    if (labels[i] != 0 && labels[i] != 1)
      fail(Err::InvalidArgument, "label " + std::to_string(labels[i]) + " is not 0/1");
    (labels[i] ? sw.p : sw.n)++;
  }
  std::vector<size_t> order(scores.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::sort(order.begin(), order.end(),
            [&](size_t a, size_t b) { return scores[a] > scores[b]; });
  long fp = 0, tp = 0;
  for (size_t i = 0; i < order.size();) {
    size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] ? tp : fp)++;
      ++j;
    }
    sw.points.push_back({fp, tp});
    i = j;
  }
  return sw;
}

void need_both_classes(const Sweep& sw) {
  if (sw.p == 0 || sw.n == 0)
    fail(Err::Domain, "metric needs both classes, got " + std::to_string(sw.p) +
                          " positive / " + std::to_string(sw.n) + " negative");
}

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_px(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

// Fixed-layout line plot; output is a pure function of the inputs.
std::string svg_curve(const std::vector<std::pair<double, double>>& pts, const std::string& title,
                      const char* xlabel, const char* ylabel, bool diagonal,
                      const std::string& stamp = "") {
  const double x0 = 60, y0 = 320, w = 380, h = 300;
  auto px = [&](double x) { return fmt_px(x0 + x * w); };
  auto py = [&](double y) { return fmt_px(y0 - y * h); };
  std::string s;
  s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
  s += stamp;  // XML comment; must follow the declaration
  s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"480\" height=\"360\" "
       "viewBox=\"0 0 480 360\">\n";
  s += "<rect x=\"0\" y=\"0\" width=\"480\" height=\"360\" fill=\"white\"/>\n";
  s += "<text x=\"240\" y=\"14\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"13\">" + title + "</text>\n";
  // frame and ticks
  s += "<rect x=\"" + fmt_px(x0) + "\" y=\"" + fmt_px(y0 - h) + "\" width=\"" + fmt_px(w) +
       "\" height=\"" + fmt_px(h) + "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 5; ++t) {
    double v = t / 5.0;
    s += "<line x1=\"" + px(v) + "\" y1=\"" + fmt_px(y0) + "\" x2=\"" + px(v) + "\" y2=\"" +
         fmt_px(y0 + 4) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + px(v) + "\" y=\"" + fmt_px(y0 + 16) +
         "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">" + fmt_px(v) +
         "</text>\n";
    s += "<line x1=\"" + fmt_px(x0 - 4) + "\" y1=\"" + py(v) + "\" x2=\"" + fmt_px(x0) +
         "\" y2=\"" + py(v) + "\" stroke=\"black\"/>\n";
    s += "<text x=\"" + fmt_px(x0 - 8) + "\" y=\"" + fmt_px(y0 - v * h + 3) +
         "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">" + fmt_px(v) +
         "</text>\n";
  }
  s += "<text x=\"240\" y=\"350\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"11\">" + std::string(xlabel) + "</text>\n";
  s += "<text x=\"14\" y=\"170\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       "font-size=\"11\" transform=\"rotate(-90 14 170)\">" + std::string(ylabel) + "</text>\n";
  if (diagonal)
    s += "<line x1=\"" + px(0) + "\" y1=\"" + py(0) + "\" x2=\"" + px(1) + "\" y2=\"" + py(1) +
         "\" stroke=\"#bbbbbb\" stroke-dasharray=\"4 3\"/>\n";
  s += "<polyline fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"1.5\" points=\"";
  for (size_t i = 0; i < pts.size(); ++i) {
    if (i) s += ' ';
    s += px(pts[i].first) + "," + py(pts[i].second);
  }
  s += "\"/>\n";
  // legend
  s += "<line x1=\"300\" y1=\"40\" x2=\"330\" y2=\"40\" stroke=\"#1f6fb2\" "
       "stroke-width=\"1.5\"/>\n";
  s += "<text x=\"336\" y=\"43\" font-family=\"sans-serif\" font-size=\"11\">" + title +
       "</text>\n";
  s += "</svg>\n";
  return s;
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::trunc | std::ios::binary);
  if (!f) fail(Err::Io, "cannot open " + path + " for writing");
  f << body;
  if (!f.good()) fail(Err::Io, "short write to " + path);
}

}  // namespace

double auroc(std::span<const double> scores, std::span<const int> labels) {
  auto sw = sweep_descending(scores, labels);
  need_both_classes(sw);
  // integer-valued trapezoids, one division at the end: each tie group of
  // f negatives and t positives contributes f*tp_before + f*t/2 won pairs
  double won = 0.0;
  long fp_prev = 0, tp_prev = 0;
  for (const auto& pt : sw.points) {
    double f = static_cast<double>(pt.fp - fp_prev);
    double t = static_cast<double>(pt.tp - tp_prev);
    won += f * static_cast<double>(tp_prev) + f * t * 0.5;
    fp_prev = pt.fp;
    tp_prev = pt.tp;
  }
  return won / (static_cast<double>(sw.p) * static_cast<double>(sw.n));
}

double auprc(std::span<const double> scores, std::span<const int> labels, PositiveClass positive) {
  std::vector<double> oriented(scores.begin(), scores.end());
  std::vector<int> pos_labels(labels.begin(), labels.end());
  if (positive == PositiveClass::InDist) {
    for (auto& s : oriented) s = -s;
    for (auto& l : pos_labels) l = 1 - l;
  }
  auto sw = sweep_descending(oriented, pos_labels);
  if (sw.p == 0) fail(Err::Domain, "precision-recall needs at least one positive");
  double area = 0.0;
  long tp_prev = 0;
  for (const auto& pt : sw.points) {
    if (pt.tp == tp_prev) continue;  // no recall gained at this threshold
    double recall_step = static_cast<double>(pt.tp - tp_prev) / static_cast<double>(sw.p);
    double precision = static_cast<double>(pt.tp) / static_cast<double>(pt.tp + pt.fp);
    area += recall_step * precision;
    tp_prev = pt.tp;
  }
  return area;
}

double fpr_at_tpr(std::span<const double> scores, std::span<const int> labels,
                  double tpr_target) {
  if (!(tpr_target >= 0.0 && tpr_target <= 1.0))
    fail(Err::InvalidArgument, "tpr target " + std::to_string(tpr_target) + " outside [0,1]");
  auto sw = sweep_descending(scores, labels);
  need_both_classes(sw);
  if (tpr_target == 0.0) return 0.0;
  for (const auto& pt : sw.points) {
    double tpr = static_cast<double>(pt.tp) / static_cast<double>(sw.p);
    if (tpr >= tpr_target) return static_cast<double>(pt.fp) / static_cast<double>(sw.n);
  }
  fail(Err::Internal, "threshold sweep never reached full recall");
}

EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                           std::string score_name) {
  auto sw = sweep_descending(scores, labels);
  need_both_classes(sw);
  EvalReport r;
  r.score_name = std::move(score_name);
  r.auroc = auroc(scores, labels);
  r.auprc_in = auprc(scores, labels, PositiveClass::InDist);
  r.auprc_out = auprc(scores, labels, PositiveClass::OoD);
  r.fpr80 = fpr_at_tpr(scores, labels, 0.8);
  r.n_in = static_cast<size_t>(sw.n);
  r.n_ood = static_cast<size_t>(sw.p);
  r.roc_points.emplace_back(0.0, 0.0);
  for (const auto& pt : sw.points)
    r.roc_points.emplace_back(static_cast<double>(pt.fp) / static_cast<double>(sw.n),
                              static_cast<double>(pt.tp) / static_cast<double>(sw.p));
  r.pr_points.emplace_back(0.0, 1.0);
  for (const auto& pt : sw.points)
    r.pr_points.emplace_back(static_cast<double>(pt.tp) / static_cast<double>(sw.p),
                             static_cast<double>(pt.tp) / static_cast<double>(pt.tp + pt.fp));
  return r;
}

std::vector<EvalReport> evaluate_labeled(std::span<const LabeledScore> records) {
  std::vector<std::string> names;
  for (const auto& r : records)
    if (std::find(names.begin(), names.end(), r.rec.score_name) == names.end())
      names.push_back(r.rec.score_name);
  std::vector<EvalReport> out;
  for (const auto& name : names) {
    std::vector<double> scores;
    std::vector<int> labels;
    for (const auto& r : records)
      if (r.rec.score_name == name) {
        scores.push_back(r.rec.ood_normalized);
        labels.push_back(r.label);
      }
    out.push_back(evaluate_scores(scores, labels, name));
  }
  return out;
}

std::vector<std::string> export_curves(const EvalReport& report, const std::string& out_dir,
                                       const std::string& manifest_id) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) fail(Err::Io, "cannot create " + out_dir + ": " + ec.message());
  auto base = std::filesystem::path(out_dir) / report.score_name;
  std::vector<std::string> written;
  std::string csv_stamp = manifest_id.empty() ? "" : "# manifest_id=" + manifest_id + "\n";
  std::string svg_stamp = manifest_id.empty() ? "" : "<!-- manifest_id=" + manifest_id + " -->\n";

  std::string roc_csv = csv_stamp + "fpr,tpr\n";
  for (const auto& [x, y] : report.roc_points) roc_csv += fmt_g(x) + "," + fmt_g(y) + "\n";
  written.push_back(base.string() + "_roc.csv");
  write_text(written.back(), roc_csv);

  std::string pr_csv = csv_stamp + "recall,precision\n";
  for (const auto& [x, y] : report.pr_points) pr_csv += fmt_g(x) + "," + fmt_g(y) + "\n";
  written.push_back(base.string() + "_pr.csv");
  write_text(written.back(), pr_csv);

  written.push_back(base.string() + "_roc.svg");
  write_text(written.back(), svg_curve(report.roc_points, report.score_name + " ROC",
                                       "false positive rate", "true positive rate", true,
                                       svg_stamp));
  written.push_back(base.string() + "_pr.svg");
  write_text(written.back(), svg_curve(report.pr_points, report.score_name + " PR", "recall",
                                       "precision", false, svg_stamp));
  return written;
}

void write_report_json(const std::string& path, std::span<const EvalReport> reports,
                       const std::string& manifest_id) {
  nlohmann::json doc;
  if (!manifest_id.empty()) doc["manifest_id"] = manifest_id;
  doc["reports"] = nlohmann::json::array();
  for (const auto& r : reports) {
    doc["reports"].push_back({{"score_name", r.score_name},
                              {"auroc", r.auroc},
                              {"auprc_in", r.auprc_in},
                              {"auprc_out", r.auprc_out},
                              {"fpr80", r.fpr80},
                              {"n_in", r.n_in},
                              {"n_ood", r.n_ood}});
  }
  write_text(path, doc.dump(2) + "\n");
}

}  // namespace bvo
