#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "core/scores.hpp"

namespace bvo {

// All metric inputs are OoD-normalized scores (larger = more out) with labels
// 1 = out-of-distribution, 0 = in-distribution.

enum class PositiveClass { InDist, OoD };

// Trapezoidal area under the tie-grouped ROC sweep; equals the pairwise
// P(score_out > score_in) + half the tie mass.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Step-interpolated precision-recall area for either orientation. InDist
// ranks by ascending score (most in-looking first).
double auprc(std::span<const double> scores, std::span<const int> labels, PositiveClass positive);

// False-positive rate at the first tie-grouped threshold whose TPR reaches
// the target (OoD = positive).
double fpr_at_tpr(std::span<const double> scores, std::span<const int> labels,
                  double tpr_target = 0.8);

struct EvalReport {
  std::string score_name;
  double auroc = 0.0;
  double auprc_in = 0.0;
  double auprc_out = 0.0;
  double fpr80 = 0.0;
  size_t n_in = 0;
  size_t n_ood = 0;
  std::vector<std::pair<double, double>> roc_points;  // (fpr, tpr), (0,0) .. (1,1)
  std::vector<std::pair<double, double>> pr_points;   // (recall, precision), OoD positive
};

EvalReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                           std::string score_name);

// One report per distinct score_name in the records.
std::vector<EvalReport> evaluate_labeled(std::span<const LabeledScore> records);

// <name>_roc.csv / <name>_pr.csv / matching .svg plots; returns paths written.
// Re-export of an identical report is byte-identical. A nonempty manifest_id
// is stamped into every file (CSV comment line, SVG XML comment).
std::vector<std::string> export_curves(const EvalReport& report, const std::string& out_dir,
                                       const std::string& manifest_id = "");

void write_report_json(const std::string& path, std::span<const EvalReport> reports,
                       const std::string& manifest_id = "");

}  // namespace bvo
