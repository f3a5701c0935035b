// Window labeling and ROC/PR metrics, cross-checked against the brute-force
// pairwise-comparison oracle.

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "veil/common.hpp"
#include "veil/metrics.hpp"

namespace {

using veil::Interval;
using veil::ScoredWindow;
using veil::WindowLabel;

std::vector<ScoredWindow> make_scored(const std::vector<double>& pos,
                                      const std::vector<double>& neg) {
  std::vector<ScoredWindow> out;
  int64_t idx = 0;
  for (const double s : pos) {
    out.push_back({idx++, 0.0, 5.0, s, WindowLabel::risk});
  }
  for (const double s : neg) {
    out.push_back({idx++, 0.0, 5.0, s, WindowLabel::normal});
  }
  return out;
}

// Independent oracle: (#(s_pos > s_neg) + 0.5 * #ties) / (P * N).
double pairwise_auc_oracle(const std::vector<ScoredWindow>& sw) {
  double credit = 0.0;
  int64_t pn = 0;
  for (const auto& a : sw) {
    if (a.label != WindowLabel::risk) continue;
    for (const auto& b : sw) {
      if (b.label != WindowLabel::normal) continue;
      ++pn;
      if (a.score > b.score) credit += 1.0;
      else if (a.score == b.score) credit += 0.5;
    }
  }
  return credit / static_cast<double>(pn);
}

TEST(LabelWindows, OverlapFractionRule) {
  std::vector<ScoredWindow> w{{0, 10.0, 15.0, 0.1, WindowLabel::unlabeled}};
  // Window fully inside a risk interval.
  veil::label_windows(w, {{8.0, 20.0}});
  EXPECT_EQ(w[0].label, WindowLabel::risk);
  // Zero overlap.
  veil::label_windows(w, {{20.0, 30.0}});
  EXPECT_EQ(w[0].label, WindowLabel::normal);
  // 2 s overlap of a 5 s window: normal at threshold 0.5, risk at 0.25.
  veil::label_windows(w, {{13.0, 17.0}}, 0.5);
  EXPECT_EQ(w[0].label, WindowLabel::normal);
  veil::label_windows(w, {{13.0, 17.0}}, 0.25);
  EXPECT_EQ(w[0].label, WindowLabel::risk);
}

TEST(LabelWindows, RejectsMalformedInput) {
  std::vector<ScoredWindow> w{{0, 0.0, 5.0, 0.1, WindowLabel::unlabeled}};
  EXPECT_THROW(veil::label_windows(w, {{5.0, 5.0}}), veil::Error);
  EXPECT_THROW(veil::label_windows(w, {{7.0, 3.0}}), veil::Error);
  EXPECT_THROW(veil::label_windows(w, {{0.0, 1.0}}, 0.0), veil::ConfigError);
  EXPECT_THROW(veil::label_windows(w, {{0.0, 1.0}}, 1.5), veil::ConfigError);
}

TEST(MergeIntervals, OverlapsCollapse) {
  const auto merged =
      veil::merge_intervals({{5.0, 9.0}, {1.0, 3.0}, {2.0, 6.0}});
  ASSERT_EQ(merged.size(), 1u);
  EXPECT_EQ(merged[0].start, 1.0);
  EXPECT_EQ(merged[0].end, 9.0);
}

TEST(AucRoc, AnalyticCases) {
  EXPECT_EQ(veil::auc_roc(make_scored({0.9, 0.8}, {0.1, 0.2})), 1.0);
  EXPECT_EQ(veil::auc_roc(make_scored({0.5, 0.5}, {0.5, 0.5, 0.5})), 0.5);
  // 3 of 4 pairs ordered correctly.
  EXPECT_EQ(veil::auc_roc(make_scored({0.8, 0.4}, {0.6, 0.2})), 0.75);
}

TEST(AucRoc, RejectsSingleClassInput) {
  EXPECT_THROW(veil::auc_roc(make_scored({0.9}, {})), veil::Error);
  EXPECT_THROW(veil::auc_roc(make_scored({}, {0.9})), veil::Error);
  std::vector<ScoredWindow> unlabeled{{0, 0, 5, 0.5, WindowLabel::unlabeled}};
  EXPECT_THROW(veil::auc_roc(unlabeled), veil::Error);
}

TEST(AucRoc, MatchesPairwiseOracleWithTies) {
  veil::Rng rng(2718);
  for (int trial = 0; trial < 60; ++trial) {
    const int n = 2 + static_cast<int>(rng.next_below(200));
    std::vector<ScoredWindow> sw;
    int64_t pos = 0;
    for (int i = 0; i < n; ++i) {
      ScoredWindow w;
      w.index = i;
      w.start_time = 5.0 * i;
      w.end_time = 5.0 * (i + 1);
      // Quantize some trials hard so ties are frequent.
      const int levels = trial % 3 == 0 ? 4 : 1000;
      w.score = std::floor(rng.next_uniform() * levels) / levels;
      w.label = rng.next_below(5) == 0 ? WindowLabel::risk
                                       : WindowLabel::normal;
      pos += w.label == WindowLabel::risk;
      sw.push_back(w);
    }
    if (pos == 0 || pos == n) continue;
    EXPECT_NEAR(veil::auc_roc(sw), pairwise_auc_oracle(sw), 1e-12);
  }
}

TEST(AucRoc, InvariantUnderMonotoneTransform) {
  veil::Rng rng(3141);
  for (int trial = 0; trial < 10; ++trial) {
    auto sw = make_scored({rng.next_uniform(), rng.next_uniform(),
                           rng.next_uniform()},
                          {rng.next_uniform(), rng.next_uniform(),
                           rng.next_uniform(), rng.next_uniform()});
    const double before = veil::auc_roc(sw);
    for (auto& w : sw) w.score = std::exp(3.0 * w.score) - 0.5;
    EXPECT_EQ(veil::auc_roc(sw), before);
  }
}

TEST(AucRoc, ClassFlipMapsToOneMinus) {
  veil::Rng rng(999);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> pos, neg;
    for (int i = 0; i < 6; ++i) pos.push_back(rng.next_uniform());
    for (int i = 0; i < 9; ++i) neg.push_back(rng.next_uniform());
    auto sw = make_scored(pos, neg);
    const double a = veil::auc_roc(sw);
    for (auto& w : sw) {
      w.label = w.label == WindowLabel::risk ? WindowLabel::normal
                                             : WindowLabel::risk;
    }
    EXPECT_NEAR(veil::auc_roc(sw), 1.0 - a, 1e-12);
  }
}

TEST(AucPr, AnalyticCases) {
  EXPECT_EQ(veil::auc_pr(make_scored({0.9, 0.8}, {0.1, 0.2})), 1.0);
  EXPECT_EQ(veil::auc_pr(make_scored({0.99}, {0.5, 0.4, 0.3})), 1.0);
  EXPECT_THROW(veil::auc_pr(make_scored({}, {0.5})), veil::Error);
}

TEST(AucPr, RandomScoresApproachPrevalence) {
  veil::Rng rng(424242);
  const int n = 4000;
  std::vector<ScoredWindow> sw;
  int64_t pos = 0;
  for (int i = 0; i < n; ++i) {
    ScoredWindow w;
    w.index = i;
    w.score = rng.next_uniform();
    w.label = rng.next_uniform() < 0.049 ? WindowLabel::risk
                                         : WindowLabel::normal;
    w.start_time = 5.0 * i;
    w.end_time = 5.0 * (i + 1);
    pos += w.label == WindowLabel::risk;
    sw.push_back(w);
  }
  const double prevalence = static_cast<double>(pos) / n;
  EXPECT_NEAR(veil::auc_pr(sw), prevalence, 0.05);
  EXPECT_NEAR(veil::auc_roc(sw), 0.5, 0.05);
}

TEST(LabelWindows, NineHourTimelineMatchesReportedImbalance) {
  // Roughly 22.55 minutes of risk inside a 9-hour test timeline gives a
  // windowed prevalence near the 0.049 random-classifier baseline.
  std::vector<ScoredWindow> windows;
  const int n = 6480;  // 9 h of 5 s windows
  for (int i = 0; i < n; ++i) {
    windows.push_back({i, 5.0 * i, 5.0 * (i + 1), 0.0,
                       WindowLabel::unlabeled});
  }
  std::vector<Interval> events;
  // Eight events totaling 22.55 minutes = 1353 s.
  double t = 1000.0;
  for (int e = 0; e < 8; ++e) {
    events.push_back({t, t + 1353.0 / 8.0});
    t += 3600.0;
  }
  veil::label_windows(windows, events, 0.5);
  int64_t risk = 0;
  for (const auto& w : windows) risk += w.label == WindowLabel::risk;
  const double prevalence = static_cast<double>(risk) / n;
  EXPECT_GE(prevalence, 0.04);
  EXPECT_LE(prevalence, 0.05);
}

TEST(Report, PrevalenceAndCountsAreExact) {
  const auto sw = make_scored({0.9, 0.7, 0.6}, {0.5, 0.4, 0.3, 0.2});
  const auto r = veil::compute_metrics(sw, 0x1234);
  EXPECT_EQ(r.positives, 3);
  EXPECT_EQ(r.negatives, 4);
  EXPECT_EQ(r.prevalence, 3.0 / 7.0);
  EXPECT_EQ(r.auc_roc, 1.0);
  EXPECT_EQ(r.config_hash, 0x1234u);
}

TEST(Report, ReEmittingIsByteIdentical) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() /
                   ("veil_metrics_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const auto sw = make_scored({0.9, 0.35}, {0.5, 0.4, 0.31});
  const auto r = veil::compute_metrics(sw, 0xfeed);
  std::string blobs[2];
  for (int i = 0; i < 2; ++i) {
    const std::string base = (dir / ("r" + std::to_string(i))).string();
    veil::write_report(r, base + ".json", base + ".roc.csv", base + ".pr.csv");
    for (const char* ext : {".json", ".roc.csv", ".pr.csv"}) {
      std::ifstream in(base + ext, std::ios::binary);
      blobs[i] += std::string((std::istreambuf_iterator<char>(in)),
                              std::istreambuf_iterator<char>());
    }
  }
  EXPECT_EQ(blobs[0], blobs[1]);

  const auto back = veil::read_report_json(
      (dir / "r0").string() + ".json");
  EXPECT_EQ(back.auc_roc, r.auc_roc);
  EXPECT_EQ(back.auc_pr, r.auc_pr);
  EXPECT_EQ(back.config_hash, r.config_hash);
}

TEST(Intervals, CsvRoundTrip) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() /
                   ("veil_intervals_test_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  const std::string path = (dir / "labels.csv").string();
  {
    std::ofstream f(path);
    f << "start_seconds,end_seconds\n100.000,110.000\n300.500,310.500\n";
  }
  const auto ivs = veil::read_intervals_csv(path);
  ASSERT_EQ(ivs.size(), 2u);
  EXPECT_EQ(ivs[1].start, 300.5);
  {
    std::ofstream f(path);
    f << "wrong,header\n";
  }
  EXPECT_THROW(veil::read_intervals_csv(path), veil::IoError);
}

}  // namespace
