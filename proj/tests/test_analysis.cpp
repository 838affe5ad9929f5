#include "aa/analysis.hpp"
#include "aa/errors.hpp"
#include "aa/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

using namespace aa;
using namespace aa::analysis;

namespace {

std::vector<ScoreRecord> random_records(std::uint64_t seed, std::size_t n, std::size_t k,
                                        const std::vector<std::string>& classes, bool quantize = false) {
    Rng rng(seed);
    std::gamma_distribution<double> g(0.7, 1.0);
    std::uniform_int_distribution<std::size_t> pick(0, classes.size() - 1);
    std::vector<ScoreRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> p(k);
        double s = 0.0;
        for (double& v : p) s += (v = g(rng) + 1e-9);
        for (double& v : p) v /= s;
        // Coarse values create exact ties and window-edge hits.
        if (quantize) {
            for (double& v : p) v = std::round(v * 50.0) / 50.0;
        }
        out.push_back({p, classes[pick(rng)]});
    }
    return out;
}

// Mann-Whitney statistic over all positive/negative pairs, ties counted 1/2.
double pairwise_auc(const std::vector<ScoreRecord>& rs, const std::string& pos, const std::string& neg,
                    std::size_t axis) {
    double wins = 0.0;
    std::size_t pairs = 0;
    for (const auto& a : rs) {
        if (a.true_class != pos) continue;
        for (const auto& b : rs) {
            if (b.true_class != neg) continue;
            ++pairs;
            if (a.probs[axis] > b.probs[axis])
                wins += 1.0;
            else if (a.probs[axis] == b.probs[axis])
                wins += 0.5;
        }
    }
    return wins / static_cast<double>(pairs);
}

}  // namespace

TEST(Centering, MeanOfOneMinusMax) {
    const std::vector<ScoreRecord> rs{{{0.9, 0.1}, "A"}, {{0.5, 0.5}, "A"}, {{0.2, 0.8}, "B"}};
    EXPECT_DOUBLE_EQ(centering(rs, "A"), (0.1 + 0.5) / 2.0);
    EXPECT_NEAR(centering(rs, "B"), 0.2, 1e-15);
    EXPECT_THROW(centering(rs, "C"), LookupError);
    // Upper bound 1 - 1/K is reached at the uniform vector.
    const std::vector<ScoreRecord> u{{{1.0 / 3, 1.0 / 3, 1.0 / 3}, "U"}};
    EXPECT_NEAR(centering(u, "U"), 2.0 / 3.0, 1e-15);
}

TEST(Histogram, NormalizedDensity) {
    const auto rs = random_records(1, 500, 3, {"A"});
    const auto h = pdf_histogram(rs, 1, 25);
    EXPECT_EQ(h.edges.size(), 26u);
    EXPECT_EQ(h.count, 500u);
    EXPECT_NEAR(h.integral(), 1.0, 1e-12);
    // p = 1 lands in the last bin.
    const std::vector<ScoreRecord> edge{{{0.0, 1.0}, "A"}, {{1.0, 0.0}, "A"}};
    const auto e = pdf_histogram(edge, 1, 4);
    EXPECT_DOUBLE_EQ(e.density[3], 0.5 / 0.25);
    EXPECT_DOUBLE_EQ(e.density[0], 0.5 / 0.25);
    EXPECT_THROW(pdf_histogram(rs, 1, 1), ConfigError);
    EXPECT_THROW(pdf_histogram({}, 0, 10), DataError);
    EXPECT_THROW(pdf_histogram(rs, 3, 10), DimensionError);
}

TEST(Histogram, SimplexDensity) {
    const auto rs = random_records(2, 400, 3, {"A"});
    const auto h = simplex_pdf(rs, 0, 1, 20);
    EXPECT_NEAR(h.integral(), 1.0, 1e-12);
    // Every point satisfies p0 + p1 <= 1: cells far beyond the diagonal stay empty.
    EXPECT_EQ(h.at(19, 19), 0.0);
    EXPECT_THROW(simplex_pdf(rs, 0, 0, 20), ConfigError);
    EXPECT_THROW(simplex_pdf(random_records(2, 10, 2, {"A"}), 0, 1, 20), ConfigError);
}

TEST(Roc, MatchesPairwiseOracle) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto rs = random_records(seed, 300, 2, {"S", "B", "X"}, seed % 2 == 0);
        const auto roc = roc_auc(rs, "S", "B", 0);
        EXPECT_NEAR(roc.auc, pairwise_auc(rs, "S", "B", 0), 1e-12) << seed;
        EXPECT_EQ(roc.curve.front().fpr, 0.0);
        EXPECT_EQ(roc.curve.back().fpr, 1.0);
        EXPECT_EQ(roc.curve.back().tpr, 1.0);
        for (std::size_t i = 1; i < roc.curve.size(); ++i) {
            EXPECT_GE(roc.curve[i].fpr, roc.curve[i - 1].fpr);
            EXPECT_GE(roc.curve[i].tpr, roc.curve[i - 1].tpr);
        }
    }
}

TEST(Roc, ExtremesAndTies) {
    const std::vector<ScoreRecord> sep{{{0.9, 0.1}, "S"}, {{0.8, 0.2}, "S"}, {{0.1, 0.9}, "B"}};
    EXPECT_DOUBLE_EQ(roc_auc(sep, "S", "B", 0).auc, 1.0);
    EXPECT_DOUBLE_EQ(roc_auc(sep, "B", "S", 0).auc, 0.0);
    const std::vector<ScoreRecord> tie{{{0.5, 0.5}, "S"}, {{0.5, 0.5}, "B"}, {{0.5, 0.5}, "B"}};
    EXPECT_DOUBLE_EQ(roc_auc(tie, "S", "B", 0).auc, 0.5);
    EXPECT_THROW(roc_auc(sep, "S", "Z", 0), LookupError);
}

TEST(NaiveScore, OneMinusNormalProbabilities) {
    const ScoreRecord r{{0.2, 0.3, 0.5}, "x"};
    const std::vector<std::size_t> axes{0, 1};
    EXPECT_DOUBLE_EQ(naive_anomaly_prob(r, axes), 0.5);
    EXPECT_THROW(naive_anomaly_prob(r, std::vector<std::size_t>{}), ConfigError);
    EXPECT_NE(std::string(kNaiveScoreCaveat).find("naive"), std::string::npos);
}

TEST(Efficiency, InclusiveBoundsAndBinomialError) {
    const std::vector<ScoreRecord> rs{{{0.6, 0.4}, "A"}, {{0.5, 0.5}, "A"}, {{0.3, 0.7}, "A"}, {{0.8, 0.2}, "A"},
                                      {{0.55, 0.45}, "B"}};
    const auto e = window_efficiency(rs, {0.4, 0.5, 1});
    EXPECT_EQ(e.at("A").passed, 2u);  // 0.4 and 0.5 sit on the bounds
    EXPECT_EQ(e.at("A").total, 4u);
    EXPECT_DOUBLE_EQ(e.at("A").value, 0.5);
    EXPECT_DOUBLE_EQ(e.at("A").stat_error, std::sqrt(0.25 / 4));
    EXPECT_EQ(e.at("B").passed, 1u);
    EXPECT_FALSE(e.count("C"));
    EXPECT_THROW(window_efficiency(rs, {0.5, 0.5, 1}), ConfigError);
    EXPECT_THROW(window_efficiency(rs, {-0.1, 0.5, 1}), ConfigError);
}

TEST(ComputeR, HandEvaluatedExample) {
    // 5e4 fb * 0.01 + 2e3 fb * 0.02 = 540 fb; R = 0.5 / sqrt(540)
    const std::map<std::string, double> eff{{"EFT", 0.5}, {"QCD", 0.01}, {"Top", 0.02}};
    const CrossSectionTable xs{{"QCD", 5e4}, {"Top", 2e3}};
    const std::vector<std::string> bkg{"QCD", "Top"};
    const auto r = compute_R(eff, xs, "EFT", bkg);
    EXPECT_FALSE(r.zero_background);
    EXPECT_NEAR(r.value / 0.02151657414559676, 1.0, 1e-9);
    EXPECT_NEAR(r.value, 0.021517, 5e-7);
}

TEST(ComputeR, ZeroBackgroundAndErrors) {
    const CrossSectionTable xs{{"QCD", 5e4}, {"Top", 2e3}};
    const std::vector<std::string> bkg{"QCD", "Top"};
    auto r = compute_R({{"EFT", 0.3}, {"QCD", 0.0}, {"Top", 0.0}}, xs, "EFT", bkg);
    EXPECT_TRUE(r.zero_background);
    EXPECT_TRUE(std::isinf(r.value));
    r = compute_R({{"EFT", 0.0}, {"QCD", 0.0}, {"Top", 0.0}}, xs, "EFT", bkg);
    EXPECT_TRUE(r.zero_background);
    EXPECT_EQ(r.value, 0.0);
    EXPECT_THROW(compute_R({{"EFT", 0.3}, {"QCD", 0.1}}, xs, "EFT", bkg), LookupError);
    EXPECT_THROW(compute_R({{"EFT", -0.3}, {"QCD", 0.1}, {"Top", 0.1}}, xs, "EFT", bkg), NumericError);
    EXPECT_THROW(compute_R({{"EFT", std::nan("")}, {"QCD", 0.1}, {"Top", 0.1}}, xs, "EFT", bkg), NumericError);
    EXPECT_THROW(compute_R({{"EFT", 0.3}, {"QCD", 0.1}, {"Top", 0.1}}, {{"QCD", 1.0}}, "EFT", bkg), LookupError);
    EXPECT_THROW(compute_R({{"EFT", 0.3}, {"QCD", 0.1}, {"Top", 0.1}}, {{"QCD", -1.0}, {"Top", 1.0}}, "EFT", bkg),
                 NumericError);
}

TEST(Scan, CentersAndWindows) {
    const auto c = scan_centers(0.1, 0.01);
    ASSERT_EQ(c.size(), 91u);
    EXPECT_DOUBLE_EQ(c.front(), 0.05);
    EXPECT_NEAR(c.back(), 0.95, 1e-12);
    EXPECT_EQ(scan_centers(1.0, 0.5).size(), 1u);
    EXPECT_EQ(scan_centers(0.12, 0.012).size(), 74u);  // floor(0.88 / 0.012) + 1
    const auto w = centered_window(0.02, 0.1, 1);
    EXPECT_EQ(w.p_min, 0.0);
    EXPECT_DOUBLE_EQ(w.p_max, 0.07);
    EXPECT_THROW(scan_centers(0.0, 0.01), ConfigError);
    EXPECT_THROW(scan_centers(0.1, 0.2), ConfigError);
}

TEST(Scan, EqualsBruteForceRecomputation) {
    const CrossSectionTable xs{{"QCD", 5e4}, {"Top", 2e3}};
    const std::vector<std::string> bkg{"QCD", "Top"};
    for (std::uint64_t seed = 0; seed < 12; ++seed) {
        const auto rs = random_records(seed, 1000, 2, {"QCD", "Top", "EFT"}, seed % 3 == 0);
        for (double delta : {0.08, 0.1, 0.12}) {
            const double step = delta / 10.0;
            const auto s = scan_windows(rs, delta, step, xs, "EFT", bkg, 1);
            const auto centers = scan_centers(delta, step);
            ASSERT_EQ(s.points.size(), centers.size());
            double best = 0.0;
            std::optional<std::size_t> arg;
            std::size_t excluded = 0;
            for (std::size_t i = 0; i < centers.size(); ++i) {
                const double lo = std::max(0.0, centers[i] - delta / 2), hi = std::min(1.0, centers[i] + delta / 2);
                std::map<std::string, std::pair<std::size_t, std::size_t>> count;
                for (const auto& r : rs) {
                    auto& [pass, tot] = count[r.true_class];
                    ++tot;
                    if (r.probs[1] >= lo && r.probs[1] <= hi) ++pass;
                }
                std::map<std::string, double> eff;
                for (const auto& [cls, pt] : count) {
                    eff[cls] = static_cast<double>(pt.first) / static_cast<double>(pt.second);
                    EXPECT_EQ(s.points[i].efficiency.at(cls).passed, pt.first);
                    EXPECT_EQ(s.points[i].efficiency.at(cls).value, eff[cls]);
                }
                const double denom = 5e4 * eff["QCD"] + 2e3 * eff["Top"];
                EXPECT_EQ(s.points[i].window.p_min, lo);
                EXPECT_EQ(s.points[i].window.p_max, hi);
                if (denom == 0.0) {
                    ++excluded;
                    EXPECT_TRUE(s.points[i].r.zero_background);
                    continue;
                }
                const double r = eff["EFT"] / std::sqrt(denom);
                EXPECT_EQ(s.points[i].r.value, r);
                if (!arg || r > best) {
                    best = r;
                    arg = i;
                }
            }
            EXPECT_EQ(s.r_max, best);
            EXPECT_EQ(s.argmax, arg);
            EXPECT_EQ(s.excluded_zero_background, excluded);
        }
    }
}

TEST(Scan, ZeroBackgroundWindowsAreExcluded) {
    // The anomaly lives where no background does.
    std::vector<ScoreRecord> rs;
    for (int i = 0; i < 50; ++i) rs.push_back({{0.5, 0.5}, "EFT"});
    for (int i = 0; i < 50; ++i) rs.push_back({{0.95, 0.05}, "QCD"});
    for (int i = 0; i < 50; ++i) rs.push_back({{0.05, 0.95}, "Top"});
    rs.push_back({{0.9, 0.1}, "EFT"});
    const CrossSectionTable xs{{"QCD", 5e4}, {"Top", 2e3}};
    const std::vector<std::string> bkg{"QCD", "Top"};
    const auto s = scan_windows(rs, 0.1, 0.01, xs, "EFT", bkg, 1);
    EXPECT_GT(s.excluded_zero_background, 0u);
    ASSERT_TRUE(s.argmax.has_value());
    EXPECT_TRUE(std::isfinite(s.r_max));
    EXPECT_FALSE(s.points[*s.argmax].r.zero_background);
    const nlohmann::json j = s;
    bool saw_null = false;
    for (const auto& p : j.at("points")) saw_null = saw_null || p.at("R").is_null();
    EXPECT_TRUE(saw_null);
}

TEST(Significance, Formulas) {
    EXPECT_DOUBLE_EQ(significance(50.0, 100.0), 5.0);
    EXPECT_THROW(significance(1.0, 0.0), NumericError);
    EXPECT_THROW(significance(-1.0, 4.0), NumericError);

    const double r = 0.021517;
    for (double lumi : {100.0, 300.0, 3000.0}) {
        const double s = sigma_min(r, lumi);
        EXPECT_NEAR(s * r * std::sqrt(lumi), kDiscoveryThreshold, 1e-12);
        EXPECT_NEAR(sigma_min(r, 2 * lumi) * std::sqrt(2.0), s, 1e-12 * s);
        // With sigma = sigma_min the anomaly sits exactly at the threshold.
        const double n_sm = lumi * 540.0;
        const double n_an = s * lumi * 0.5;
        EXPECT_NEAR(significance(n_an, n_sm), 5.0 * (0.5 / std::sqrt(540.0)) / r, 1e-9);
    }
    EXPECT_THROW(sigma_min(0.0, 100.0), NumericError);
    EXPECT_THROW(sigma_min(std::numeric_limits<double>::infinity(), 100.0), NumericError);
    EXPECT_THROW(sigma_min(0.1, 0.0), NumericError);
    EXPECT_EQ(kHighLuminosity, 3000.0);
}

TEST(CrossSections, Validation) {
    EXPECT_NO_THROW(validate_cross_sections({{"QCD", kQcdCrossSection}, {"Top", kTopCrossSectionPlaceholder}}));
    EXPECT_THROW(validate_cross_sections({{"QCD", 0.0}}), ConfigError);
    EXPECT_THROW(validate_cross_sections({{"QCD", std::nan("")}}), ConfigError);
}
