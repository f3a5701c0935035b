#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "veil/common.hpp"

namespace veil {

enum class WindowLabel { unlabeled, normal, risk };

inline const char* label_name(WindowLabel l) {
  switch (l) {
    case WindowLabel::unlabeled: return "unlabeled";
    case WindowLabel::normal: return "normal";
    case WindowLabel::risk: return "risk";
  }
  return "?";
}

inline WindowLabel parse_label(const std::string& s) {
  if (s == "unlabeled") return WindowLabel::unlabeled;
  if (s == "normal") return WindowLabel::normal;
  if (s == "risk") return WindowLabel::risk;
  throw IoError("unknown window label '" + s + "'");
}

/// One scored test window: reconstruction error as the anomaly score.
struct ScoredWindow {
  int64_t index = 0;
  double start_time = 0.0;
  double end_time = 0.0;
  double score = 0.0;
  WindowLabel label = WindowLabel::unlabeled;
};

// ---------------------------------------------------------------------------
// Risk intervals and window labeling.
// ---------------------------------------------------------------------------

struct Interval {
  double start = 0.0;
  double end = 0.0;
};

inline std::vector<Interval> read_intervals_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open intervals file " + path);
  std::string line;
  if (!std::getline(in, line) || line != "start_seconds,end_seconds") {
    throw IoError(path + ": expected header 'start_seconds,end_seconds'");
  }
  std::vector<Interval> out;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    Interval iv;
    if (std::sscanf(line.c_str(), "%lf,%lf", &iv.start, &iv.end) != 2) {
      throw IoError(path + ": bad interval row '" + line + "'");
    }
    out.push_back(iv);
  }
  return out;
}

/// Sorts and merges overlapping/adjacent intervals; rejects malformed ones.
inline std::vector<Interval> merge_intervals(std::vector<Interval> ivs) {
  for (const auto& iv : ivs) {
    if (!std::isfinite(iv.start) || !std::isfinite(iv.end) ||
        !(iv.start < iv.end)) {
      throw Error(detail::format_msg(
          "malformed interval [%g, %g): start must be < end", iv.start,
          iv.end));
    }
  }
  std::sort(ivs.begin(), ivs.end(),
            [](const Interval& a, const Interval& b) {
              return a.start < b.start;
            });
  std::vector<Interval> out;
  for (const auto& iv : ivs) {
    if (!out.empty() && iv.start <= out.back().end) {
      out.back().end = std::max(out.back().end, iv.end);
    } else {
      out.push_back(iv);
    }
  }
  return out;
}

/// Labels each window risk iff its overlap with the merged risk intervals is
/// at least `overlap_threshold` of the window duration.
inline void label_windows(std::vector<ScoredWindow>& windows,
                          const std::vector<Interval>& risk_intervals,
                          double overlap_threshold = 0.5) {
  if (!(overlap_threshold > 0.0) || overlap_threshold > 1.0) {
    throw ConfigError("overlap threshold must be in (0, 1]");
  }
  const std::vector<Interval> merged = merge_intervals(risk_intervals);
  for (auto& w : windows) {
    const double dur = w.end_time - w.start_time;
    if (!(dur > 0.0)) throw Error("window with non-positive duration");
    double overlap = 0.0;
    for (const auto& iv : merged) {
      overlap += std::max(0.0, std::min(w.end_time, iv.end) -
                                   std::max(w.start_time, iv.start));
    }
    w.label = overlap / dur >= overlap_threshold ? WindowLabel::risk
                                                 : WindowLabel::normal;
  }
}

// ---------------------------------------------------------------------------
// ROC / PR curves. Equal scores are processed as one threshold group, which
// makes the trapezoidal ROC area identical to the pairwise-comparison value
// with half credit for ties.
// ---------------------------------------------------------------------------

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = 0.0;
};

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
  double threshold = 0.0;
};

struct RocCurve {
  std::vector<RocPoint> points;
  double auc = 0.0;
};

struct PrCurve {
  std::vector<PrPoint> points;
  double auc = 0.0;
};

namespace detail {

struct TieGroup {
  double score;
  int64_t pos;
  int64_t neg;
};

inline std::vector<TieGroup> tie_groups(const std::vector<ScoredWindow>& sw,
                                        int64_t* pos_total,
                                        int64_t* neg_total) {
  std::vector<std::pair<double, int>> v;
  v.reserve(sw.size());
  int64_t p = 0, n = 0;
  for (const auto& w : sw) {
    if (w.label == WindowLabel::unlabeled) {
      throw Error("auc: window " + std::to_string(w.index) + " is unlabeled");
    }
    if (!std::isfinite(w.score)) throw Error("auc: non-finite score");
    const int y = w.label == WindowLabel::risk ? 1 : 0;
    v.emplace_back(w.score, y);
    y ? ++p : ++n;
  }
  *pos_total = p;
  *neg_total = n;
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
    return a.first > b.first;  // descending score
  });
  std::vector<TieGroup> groups;
  for (size_t i = 0; i < v.size();) {
    size_t j = i;
    TieGroup g{v[i].first, 0, 0};
    while (j < v.size() && v[j].first == v[i].first) {
      v[j].second ? ++g.pos : ++g.neg;
      ++j;
    }
    groups.push_back(g);
    i = j;
  }
  return groups;
}

}  // namespace detail

/// ROC curve swept over all distinct thresholds, area by trapezoid. The
/// accumulation is exact integer arithmetic, so it matches the pairwise
/// count (#(s_pos > s_neg) + 0.5 #ties) / (P*N) to double rounding.
inline RocCurve roc_curve(const std::vector<ScoredWindow>& scored) {
  int64_t P = 0, N = 0;
  const auto groups = detail::tie_groups(scored, &P, &N);
  if (P == 0 || N == 0) {
    throw Error("auc_roc needs at least one positive and one negative");
  }
  RocCurve out;
  out.points.push_back(
      {0.0, 0.0, std::numeric_limits<double>::infinity()});
  int64_t tp = 0, fp = 0;
  __int128 area2 = 0;  // 2 * P * N * area
  for (const auto& g : groups) {
    // trapezoid: dFP * (TP_before + TP_after)
    area2 += static_cast<__int128>(g.neg) * (2 * tp + g.pos);
    tp += g.pos;
    fp += g.neg;
    out.points.push_back({static_cast<double>(fp) / static_cast<double>(N),
                          static_cast<double>(tp) / static_cast<double>(P),
                          g.score});
  }
  out.auc = static_cast<double>(area2) /
            (2.0 * static_cast<double>(P) * static_cast<double>(N));
  return out;
}

inline double auc_roc(const std::vector<ScoredWindow>& scored) {
  return roc_curve(scored).auc;
}

/// Precision-recall curve with step interpolation: the area is
/// sum over threshold groups of (R_i - R_{i-1}) * P_i.
inline PrCurve pr_curve(const std::vector<ScoredWindow>& scored) {
  int64_t P = 0, N = 0;
  const auto groups = detail::tie_groups(scored, &P, &N);
  if (P == 0) throw Error("auc_pr needs at least one positive");
  PrCurve out;
  int64_t tp = 0, fp = 0;
  double prev_recall = 0.0;
  double area = 0.0;
  out.points.push_back({0.0, 1.0, std::numeric_limits<double>::infinity()});
  for (const auto& g : groups) {
    tp += g.pos;
    fp += g.neg;
    const double recall = static_cast<double>(tp) / static_cast<double>(P);
    const double precision =
        static_cast<double>(tp) / static_cast<double>(tp + fp);
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    out.points.push_back({recall, precision, g.score});
  }
  out.auc = area;
  return out;
}

inline double auc_pr(const std::vector<ScoredWindow>& scored) {
  return pr_curve(scored).auc;
}

// ---------------------------------------------------------------------------
// Report.
// ---------------------------------------------------------------------------

struct MetricsReport {
  double auc_roc = 0.0;
  double auc_pr = 0.0;
  double prevalence = 0.0;
  int64_t positives = 0;
  int64_t negatives = 0;
  RocCurve roc;
  PrCurve pr;
  uint64_t config_hash = 0;
};

inline MetricsReport compute_metrics(const std::vector<ScoredWindow>& scored,
                                     uint64_t config_hash = 0) {
  MetricsReport r;
  r.roc = roc_curve(scored);
  r.pr = pr_curve(scored);
  r.auc_roc = r.roc.auc;
  r.auc_pr = r.pr.auc;
  for (const auto& w : scored) {
    w.label == WindowLabel::risk ? ++r.positives : ++r.negatives;
  }
  r.prevalence = static_cast<double>(r.positives) /
                 static_cast<double>(r.positives + r.negatives);
  r.config_hash = config_hash;
  return r;
}

/// metrics.json plus one CSV per curve; byte-identical across re-runs on the
/// same inputs.
inline void write_report(const MetricsReport& r, const std::string& json_path,
                         const std::string& roc_csv_path,
                         const std::string& pr_csv_path) {
  nlohmann::json j;
  j["auc_roc"] = r.auc_roc;
  j["auc_pr"] = r.auc_pr;
  j["prevalence"] = r.prevalence;
  j["P"] = r.positives;
  j["N"] = r.negatives;
  j["config_hash"] = hash_hex(r.config_hash);
  std::ofstream out(json_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + json_path);
  out << j.dump(2) << "\n";
  out.flush();
  if (!out) throw IoError("write failed for " + json_path);

  std::ofstream roc(roc_csv_path, std::ios::binary);
  if (!roc) throw IoError("cannot write " + roc_csv_path);
  roc << "fpr,tpr,threshold\n";
  for (const auto& p : r.roc.points) {
    roc << detail::format_msg("%.17g,%.17g,%.17g\n", p.fpr, p.tpr,
                              p.threshold);
  }
  roc.flush();
  if (!roc) throw IoError("write failed for " + roc_csv_path);

  std::ofstream pr(pr_csv_path, std::ios::binary);
  if (!pr) throw IoError("cannot write " + pr_csv_path);
  pr << "recall,precision,threshold\n";
  for (const auto& p : r.pr.points) {
    pr << detail::format_msg("%.17g,%.17g,%.17g\n", p.recall, p.precision,
                             p.threshold);
  }
  pr.flush();
  if (!pr) throw IoError("write failed for " + pr_csv_path);
}

inline MetricsReport read_report_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  nlohmann::json j;
  in >> j;
  MetricsReport r;
  r.auc_roc = j.at("auc_roc").get<double>();
  r.auc_pr = j.at("auc_pr").get<double>();
  r.prevalence = j.at("prevalence").get<double>();
  r.positives = j.at("P").get<int64_t>();
  r.negatives = j.at("N").get<int64_t>();
  r.config_hash =
      std::stoull(j.at("config_hash").get<std::string>(), nullptr, 16);
  return r;
}

}  // namespace veil
