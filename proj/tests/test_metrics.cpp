#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>

#include "core/common.hpp"
#include "core/fetch.hpp"
#include "core/metrics.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace bvo;

namespace {

// minimal tag-balance scan; enough to catch unescaped or unclosed markup
bool xml_well_formed(const std::string& s) {
  std::vector<std::string> stack;
  size_t i = 0;
  while ((i = s.find('<', i)) != std::string::npos) {
    if (s.compare(i, 2, "<?") == 0) {
      i = s.find("?>", i);
      if (i == std::string::npos) return false;
      i += 2;
      continue;
    }
    bool closing = s.compare(i, 2, "</") == 0;
    size_t name_start = i + (closing ? 2 : 1);
    size_t j = name_start;
    while (j < s.size() && (std::isalnum(static_cast<unsigned char>(s[j])) || s[j] == '-')) ++j;
    std::string name = s.substr(name_start, j - name_start);
    if (name.empty()) return false;
    size_t end = s.find('>', j);
    if (end == std::string::npos) return false;
    if (closing) {
      if (stack.empty() || stack.back() != name) return false;
      stack.pop_back();
    } else if (s[end - 1] != '/') {
      stack.push_back(name);
    }
    i = end + 1;
  }
  return stack.empty();
}

struct LabeledSet {
  std::vector<double> scores;
  std::vector<int> labels;
};

LabeledSet random_set(std::mt19937_64& rng, bool force_ties) {
  std::uniform_int_distribution<int> n_dist(1, 50);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  std::uniform_int_distribution<int> grid(-4, 4);
  LabeledSet out;
  int n_pos = n_dist(rng), n_neg = n_dist(rng);
  for (int i = 0; i < n_pos + n_neg; ++i) {
    out.labels.push_back(i < n_pos ? 1 : 0);
    out.scores.push_back(force_ties ? grid(rng) / 4.0 : u(rng));
  }
  return out;
}

}  // namespace

TEST_CASE("ranking area matches hand values") {
  std::vector<double> s1 = {0.9, 0.8, 0.1, 0.2};
  std::vector<int> l1 = {1, 1, 0, 0};
  CHECK(auroc(s1, l1) == 1.0);

  std::vector<double> s2(6, 0.42);
  std::vector<int> l2 = {1, 1, 1, 0, 0, 0};
  CHECK(auroc(s2, l2) == 0.5);

  std::vector<double> s3 = {0.8, 0.3, 0.5, 0.1};
  std::vector<int> l3 = {1, 1, 0, 0};
  CHECK(auroc(s3, l3) == 0.75);
}

TEST_CASE("trapezoid sweep equals the pairwise oracle") {
  std::mt19937_64 rng(2024);
  for (int rep = 0; rep < 200; ++rep) {
    auto set = random_set(rng, rep % 2 == 0);
    bool has_pos = false, has_neg = false;
    for (int l : set.labels) (l ? has_pos : has_neg) = true;
    if (!has_pos || !has_neg) {
      --rep;
      continue;
    }
    double fast = auroc(set.scores, set.labels);
    double slow = oracle::auroc_pairwise(set.scores, set.labels);
    CHECK(std::abs(fast - slow) <= 1e-12);
  }
}

TEST_CASE("ranking area ignores monotone rescaling") {
  std::mt19937_64 rng(7);
  auto set = random_set(rng, true);
  set.labels[0] = 1;
  set.labels[set.labels.size() - 1] = 0;
  double base = auroc(set.scores, set.labels);
  auto affine = set.scores;
  for (auto& s : affine) s = 2.0 * s + 3.0;
  CHECK(auroc(affine, set.labels) == base);
  auto expd = set.scores;
  for (auto& s : expd) s = std::exp(s);
  CHECK(auroc(expd, set.labels) == base);
}

TEST_CASE("metric input validation") {
  std::vector<double> s = {1.0, 2.0};
  std::vector<int> ones = {1, 1};
  try {
    auroc(s, ones);
    FAIL("expected domain error");
  } catch (const Error& e) {
    CHECK(e.kind() == Err::Domain);
  }
  std::vector<int> bad = {1, 2};
  CHECK_THROWS_AS(auroc(s, bad), Error);
  std::vector<double> nan_s = {1.0, std::nan("")};
  std::vector<int> l = {1, 0};
  CHECK_THROWS_AS(auroc(nan_s, l), Error);
  std::vector<int> short_l = {1};
  CHECK_THROWS_AS(auroc(s, short_l), Error);
}

TEST_CASE("precision-recall area in both orientations") {
  std::vector<double> perfect = {0.9, 0.8, 0.1, 0.2};
  std::vector<int> lp = {1, 1, 0, 0};
  CHECK(auprc(perfect, lp, PositiveClass::OoD) == 1.0);
  CHECK(auprc(perfect, lp, PositiveClass::InDist) == 1.0);

  // interleaved and unbalanced: the two orientations disagree
  std::vector<double> s = {4, 2, 3, 1, 0.5};
  std::vector<int> l = {1, 1, 0, 0, 0};
  CHECK(auprc(s, l, PositiveClass::OoD) == doctest::Approx(5.0 / 6).epsilon(1e-14));
  CHECK(auprc(s, l, PositiveClass::InDist) == doctest::Approx(11.0 / 12).epsilon(1e-14));

  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> rs;
  std::vector<int> rl;
  for (int i = 0; i < 10000; ++i) {
    rs.push_back(u(rng));
    rl.push_back(i % 2);
  }
  double area = auprc(rs, rl, PositiveClass::OoD);
  CHECK(area > 0.45);
  CHECK(area < 0.55);

  std::vector<int> none = {0, 0};
  std::vector<double> ss = {1, 2};
  try {
    auprc(ss, none, PositiveClass::OoD);
    FAIL("expected domain error");
  } catch (const Error& e) {
    CHECK(e.kind() == Err::Domain);
  }
}

TEST_CASE("false-positive rate at a recall target") {
  std::vector<double> s = {5, 4, 3, 2, 1, 4.5, 0.5, 0.4, 0.3, 0.2};
  std::vector<int> l = {1, 1, 1, 1, 1, 0, 0, 0, 0, 0};
  CHECK(fpr_at_tpr(s, l, 0.8) == 0.2);
  CHECK(fpr_at_tpr(s, l, 0.0) == 0.0);
  CHECK(fpr_at_tpr(s, l, 1.0) == 0.2);  // all five out-scores beat 0.5

  std::vector<double> perfect = {3, 2, 1, 0};
  std::vector<int> pl = {1, 1, 0, 0};
  CHECK(fpr_at_tpr(perfect, pl) == 0.0);

  CHECK_THROWS_AS(fpr_at_tpr(s, l, 1.5), Error);

  std::mt19937_64 rng(55);
  for (int rep = 0; rep < 50; ++rep) {
    auto set = random_set(rng, rep % 2 == 0);
    set.labels[0] = 1;
    set.labels[set.labels.size() - 1] = 0;
    double prev = 0.0;
    for (double t : {1.0, 0.8, 0.6, 0.4, 0.2, 0.0}) {
      double f = fpr_at_tpr(set.scores, set.labels, t);
      if (t == 1.0)
        prev = f;
      else {
        CHECK(f <= prev);  // easier targets never need more false positives
        prev = f;
      }
    }
  }
}

TEST_CASE("report assembly and per-name grouping") {
  std::vector<double> s = {0.8, 0.3, 0.5, 0.1, 0.45};
  std::vector<int> l = {1, 1, 0, 0, 0};
  auto r = evaluate_scores(s, l, "ess");
  CHECK(r.score_name == "ess");
  CHECK(r.n_ood == 2);
  CHECK(r.n_in == 3);
  CHECK(r.roc_points.front() == std::pair<double, double>{0.0, 0.0});
  CHECK(r.roc_points.back() == std::pair<double, double>{1.0, 1.0});
  CHECK(r.roc_points.size() == 6);  // anchor + one per distinct score
  CHECK(r.pr_points.front() == std::pair<double, double>{0.0, 1.0});
  for (double m : {r.auroc, r.auprc_in, r.auprc_out, r.fpr80}) {
    CHECK(m >= 0.0);
    CHECK(m <= 1.0);
  }

  std::vector<LabeledScore> recs;
  for (size_t i = 0; i < s.size(); ++i) {
    recs.push_back({{"a" + std::to_string(i), "ess", s[i], s[i], ""}, l[i]});
    recs.push_back({{"a" + std::to_string(i), "ll", -s[i], -s[i], ""}, l[i]});
  }
  auto reports = evaluate_labeled(recs);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].score_name == "ess");
  CHECK(reports[1].score_name == "ll");
  CHECK(reports[0].auroc == doctest::Approx(1.0 - reports[1].auroc).epsilon(1e-14));
}

TEST_CASE("curve export is complete, stable and well-formed") {
  std::vector<double> s = {0.8, 0.3, 0.5, 0.1, 0.3};
  std::vector<int> l = {1, 1, 0, 0, 0};
  auto r = evaluate_scores(s, l, "ess");
  auto dir = (fs::temp_directory_path() / "bvo-curves").string();
  auto files = export_curves(r, dir);
  REQUIRE(files.size() == 4);

  auto roc_text = read_text_file(files[0]);
  size_t rows = 0;
  for (char c : roc_text) rows += c == '\n';
  CHECK(rows == r.roc_points.size() + 1);  // header + every sweep point

  auto again = export_curves(r, dir);
  CHECK(read_text_file(again[0]) == roc_text);
  for (const auto& f : files)
    if (f.size() > 4 && f.substr(f.size() - 4) == ".svg") {
      auto svg = read_text_file(f);
      CHECK(xml_well_formed(svg));
      CHECK(svg.find("ess") != std::string::npos);
    }

  auto blocked = (fs::temp_directory_path() / "bvo-curves" / "ess_roc.csv" / "sub").string();
  CHECK_THROWS_AS(export_curves(r, blocked), Error);
  fs::remove_all(fs::temp_directory_path() / "bvo-curves");
}

TEST_CASE("summary report serializes to json") {
  std::vector<double> s = {0.8, 0.3, 0.5, 0.1};
  std::vector<int> l = {1, 1, 0, 0};
  std::vector<EvalReport> reports = {evaluate_scores(s, l, "ess")};
  auto dir = fs::temp_directory_path() / "bvo-report";
  fs::create_directories(dir);
  auto path = (dir / "report.json").string();
  write_report_json(path, reports, "mid-1");
  auto doc = nlohmann::json::parse(read_text_file(path));
  CHECK(doc["manifest_id"] == "mid-1");
  REQUIRE(doc["reports"].size() == 1);
  CHECK(doc["reports"][0]["score_name"] == "ess");
  CHECK(doc["reports"][0]["auroc"] == 0.75);
  CHECK(doc["reports"][0]["n_in"] == 2);
  fs::remove_all(dir);
}
