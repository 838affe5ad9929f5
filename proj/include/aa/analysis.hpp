#pragma once

// Detection statistics on classifier outputs: score extraction, PDFs, ROC,
// window efficiencies, the window figure of merit
//
//     R = eps_An / sqrt(sum_b sigma_b * eps_b)          [fb^-1/2]
//
// and the smallest anomaly cross section reaching N_An / sqrt(N_SM) = 5,
// sigma_min = 5 / (R_max * sqrt(L)).

#include "aa/eventgen.hpp"
#include "aa/network.hpp"

#include <json.hpp>

#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aa::analysis {

struct ScoreRecord {
    std::vector<double> probs;
    std::string true_class;
};

std::vector<ScoreRecord> score_dataset(const nn::Params& model, const eventgen::Dataset& ds);
std::vector<ScoreRecord> score_split(const nn::Params& model, const eventgen::Dataset& ds, const std::string& split);
std::vector<ScoreRecord> filter_class(std::span<const ScoreRecord> records, const std::string& cls);

// Mean of (1 - max_k p_k) over the records of one class. Throws LookupError
// if the class has no records.
double centering(std::span<const ScoreRecord> records, const std::string& cls);

struct Histogram {
    std::vector<double> edges;    // bins + 1 edges on [0, 1]
    std::vector<double> density;  // count / (N * width)
    std::size_t count = 0;
    double integral() const;
};

Histogram pdf_histogram(std::span<const ScoreRecord> records, std::size_t axis, int bins);

struct Histogram2D {
    int bins = 0;
    std::vector<double> density;  // density[ix * bins + iy] over [0,1]^2
    std::size_t count = 0;
    double at(int ix, int iy) const { return density[static_cast<std::size_t>(ix) * bins + iy]; }
    double cell_area() const { return 1.0 / (static_cast<double>(bins) * bins); }
    double integral() const;
};

Histogram2D simplex_pdf(std::span<const ScoreRecord> records, std::size_t axis_x, std::size_t axis_y, int bins);

struct RocPoint {
    double threshold = 0.0;
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocResult {
    std::vector<RocPoint> curve;  // from (0,0) to (1,1)
    double auc = 0.0;
};

// Events with probs[axis] >= threshold are called positive.
RocResult roc_auc(std::span<const ScoreRecord> records, const std::string& positive, const std::string& negative,
                  std::size_t axis);

// 1 - sum of probs over the given normal axes.
double naive_anomaly_prob(const ScoreRecord& record, std::span<const std::size_t> normal_axes);
inline constexpr const char* kNaiveScoreCaveat =
    "naive anomaly probability 1 - P(Top) - P(QCD): too naive for a physics search, it ignores how many "
    "normal events survive a given working point";

struct Window {
    double p_min = 0.0;
    double p_max = 1.0;
    std::size_t axis = 0;

    void validate() const;  // 0 <= p_min < p_max <= 1
};

struct Efficiency {
    double value = 0.0;
    double stat_error = 0.0;  // binomial sqrt(eps (1 - eps) / n)
    std::size_t passed = 0;
    std::size_t total = 0;
};

// Classes without records are absent from the map. Bounds are inclusive.
std::map<std::string, Efficiency> window_efficiency(std::span<const ScoreRecord> records, const Window& window);
std::map<std::string, double> efficiency_values(const std::map<std::string, Efficiency>& eff);

using CrossSectionTable = std::map<std::string, double>;  // fb
void validate_cross_sections(const CrossSectionTable& table);

struct RValue {
    double value = 0.0;            // +inf when zero_background and eps_An > 0
    bool zero_background = false;  // every background efficiency is 0
};

RValue compute_R(const std::map<std::string, double>& eff, const CrossSectionTable& xsec,
                 const std::string& anomaly, std::span<const std::string> backgrounds);

struct ScanPoint {
    double center = 0.0;
    Window window;
    std::map<std::string, Efficiency> efficiency;
    RValue r;
};

struct ScanResult {
    double delta = 0.0;
    double step = 0.0;
    std::size_t axis = 0;
    std::string anomaly;
    std::vector<ScanPoint> points;
    double r_max = 0.0;
    std::optional<std::size_t> argmax;   // index into points
    std::size_t excluded_zero_background = 0;
};

// Window centers delta/2 + i * step up to 1 - delta/2.
std::vector<double> scan_centers(double delta, double step);
Window centered_window(double center, double delta, std::size_t axis);

// Zero-background windows are kept in `points` but excluded from r_max.
ScanResult scan_windows(std::span<const ScoreRecord> records, double delta, double step,
                        const CrossSectionTable& xsec, const std::string& anomaly,
                        std::span<const std::string> backgrounds, std::size_t axis);

// N_An / sqrt(N_SM).
double significance(double n_anomaly, double n_sm);
// threshold / (r_max * sqrt(luminosity)), fb.
double sigma_min(double r_max, double luminosity, double threshold = 5.0);

inline constexpr double kDiscoveryThreshold = 5.0;
inline constexpr double kHighLuminosity = 3000.0;  // fb^-1
inline constexpr double kQcdCrossSection = 5.0e4;  // fb, order of magnitude after selection
inline constexpr double kTopCrossSectionPlaceholder = 2.0e3;  // fb, placeholder; supply a real value

void to_json(nlohmann::json& j, const ScanResult& s);
void to_json(nlohmann::json& j, const Histogram& h);
void to_json(nlohmann::json& j, const Histogram2D& h);
void to_json(nlohmann::json& j, const RocResult& r);

}  // namespace aa::analysis
