#include "aa/analysis.hpp"

#include "aa/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace aa::analysis {

namespace {

void check_axis(std::span<const ScoreRecord> records, std::size_t axis) {
    for (const auto& r : records)
        if (axis >= r.probs.size())
            throw DimensionError("axis " + std::to_string(axis) + " out of range for " +
                                 std::to_string(r.probs.size()) + "-class scores");
}

}  // namespace

std::vector<ScoreRecord> score_dataset(const nn::Params& model, const eventgen::Dataset& ds) {
    std::vector<ScoreRecord> out;
    out.reserve(ds.images.size());
    nn::ForwardTrace trace;
    for (const auto& im : ds.images) {
        const auto x = eventgen::normalized_pixels(im);
        nn::forward_into<float>(model, x, trace);
        out.push_back({trace.output_probs, im.label});
    }
    return out;
}

std::vector<ScoreRecord> score_split(const nn::Params& model, const eventgen::Dataset& ds, const std::string& split) {
    std::vector<ScoreRecord> out;
    const auto& idx = ds.split(split);
    out.reserve(idx.size());
    nn::ForwardTrace trace;
    for (std::size_t i : idx) {
        const auto x = eventgen::normalized_pixels(ds.images[i]);
        nn::forward_into<float>(model, x, trace);
        out.push_back({trace.output_probs, ds.images[i].label});
    }
    return out;
}

std::vector<ScoreRecord> filter_class(std::span<const ScoreRecord> records, const std::string& cls) {
    std::vector<ScoreRecord> out;
    for (const auto& r : records)
        if (r.true_class == cls) out.push_back(r);
    return out;
}

double centering(std::span<const ScoreRecord> records, const std::string& cls) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
        if (r.true_class != cls) continue;
        sum += 1.0 - *std::max_element(r.probs.begin(), r.probs.end());
        ++n;
    }
    if (n == 0) throw LookupError("centering: no records of class '" + cls + "'");
    return sum / static_cast<double>(n);
}

double Histogram::integral() const {
    double s = 0.0;
    for (std::size_t i = 0; i < density.size(); ++i) s += density[i] * (edges[i + 1] - edges[i]);
    return s;
}

Histogram pdf_histogram(std::span<const ScoreRecord> records, std::size_t axis, int bins) {
    if (bins < 2) throw ConfigError("pdf_histogram: bins must be >= 2");
    if (records.empty()) throw DataError("pdf_histogram: empty record list");
    check_axis(records, axis);
    Histogram h;
    h.edges.resize(static_cast<std::size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i) h.edges[static_cast<std::size_t>(i)] = static_cast<double>(i) / bins;
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins), 0);
    for (const auto& r : records) {
        const double v = std::clamp(r.probs[axis], 0.0, 1.0);
        const auto b = std::min(static_cast<std::size_t>(v * bins), static_cast<std::size_t>(bins - 1));
        ++counts[b];
    }
    h.count = records.size();
    h.density.resize(counts.size());
    const double width = 1.0 / bins;
    for (std::size_t i = 0; i < counts.size(); ++i)
        h.density[i] = static_cast<double>(counts[i]) / (static_cast<double>(h.count) * width);
    return h;
}

double Histogram2D::integral() const {
    double s = 0.0;
    for (double d : density) s += d;
    return s * cell_area();
}

Histogram2D simplex_pdf(std::span<const ScoreRecord> records, std::size_t axis_x, std::size_t axis_y, int bins) {
    if (bins < 2) throw ConfigError("simplex_pdf: bins must be >= 2");
    if (records.empty()) throw DataError("simplex_pdf: empty record list");
    if (records.front().probs.size() < 3) throw ConfigError("simplex_pdf: needs K >= 3 classes");
    if (axis_x == axis_y) throw ConfigError("simplex_pdf: axes must be distinct");
    check_axis(records, std::max(axis_x, axis_y));
    Histogram2D h;
    h.bins = bins;
    h.count = records.size();
    std::vector<std::size_t> counts(static_cast<std::size_t>(bins) * bins, 0);
    const auto cell = [bins](double v) {
        return std::min(static_cast<std::size_t>(std::clamp(v, 0.0, 1.0) * bins), static_cast<std::size_t>(bins - 1));
    };
    for (const auto& r : records) ++counts[cell(r.probs[axis_x]) * bins + cell(r.probs[axis_y])];
    h.density.resize(counts.size());
    const double norm = 1.0 / (static_cast<double>(h.count) * h.cell_area());
    for (std::size_t i = 0; i < counts.size(); ++i) h.density[i] = static_cast<double>(counts[i]) * norm;
    return h;
}

RocResult roc_auc(std::span<const ScoreRecord> records, const std::string& positive, const std::string& negative,
                  std::size_t axis) {
    check_axis(records, axis);
    std::vector<std::pair<double, bool>> scored;
    std::size_t n_pos = 0, n_neg = 0;
    for (const auto& r : records) {
        if (r.true_class == positive) {
            scored.emplace_back(r.probs[axis], true);
            ++n_pos;
        } else if (r.true_class == negative) {
            scored.emplace_back(r.probs[axis], false);
            ++n_neg;
        }
    }
    if (n_pos == 0) throw LookupError("roc_auc: no records of positive class '" + positive + "'");
    if (n_neg == 0) throw LookupError("roc_auc: no records of negative class '" + negative + "'");
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

    RocResult out;
    out.curve.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < scored.size();) {
        const double t = scored[i].first;
        // Equal scores move together, which makes tied groups diagonal segments.
        for (; i < scored.size() && scored[i].first == t; ++i) (scored[i].second ? tp : fp)++;
        out.curve.push_back({t, static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos});
    }
    for (std::size_t i = 1; i < out.curve.size(); ++i) {
        const auto& a = out.curve[i - 1];
        const auto& b = out.curve[i];
        out.auc += (b.fpr - a.fpr) * 0.5 * (a.tpr + b.tpr);
    }
    return out;
}

double naive_anomaly_prob(const ScoreRecord& record, std::span<const std::size_t> normal_axes) {
    if (normal_axes.empty()) throw ConfigError("naive_anomaly_prob: normal axes unset");
    double p = 1.0;
    for (std::size_t a : normal_axes) {
        if (a >= record.probs.size()) throw DimensionError("naive_anomaly_prob: axis out of range");
        p -= record.probs[a];
    }
    return p;
}

void Window::validate() const {
    if (!(p_min >= 0.0 && p_min < p_max && p_max <= 1.0))
        throw ConfigError("window: require 0 <= p_min < p_max <= 1");
}

std::map<std::string, Efficiency> window_efficiency(std::span<const ScoreRecord> records, const Window& window) {
    window.validate();
    check_axis(records, window.axis);
    std::map<std::string, Efficiency> out;
    for (const auto& r : records) {
        auto& e = out[r.true_class];
        ++e.total;
        const double v = r.probs[window.axis];
        if (v >= window.p_min && v <= window.p_max) ++e.passed;
    }
    for (auto& [cls, e] : out) {
        e.value = static_cast<double>(e.passed) / static_cast<double>(e.total);
        e.stat_error = std::sqrt(e.value * (1.0 - e.value) / static_cast<double>(e.total));
    }
    return out;
}

std::map<std::string, double> efficiency_values(const std::map<std::string, Efficiency>& eff) {
    std::map<std::string, double> out;
    for (const auto& [cls, e] : eff) out[cls] = e.value;
    return out;
}

void validate_cross_sections(const CrossSectionTable& table) {
    for (const auto& [cls, s] : table)
        if (!(s > 0.0) || !std::isfinite(s))
            throw ConfigError("cross section for '" + cls + "' must be finite and > 0");
}

RValue compute_R(const std::map<std::string, double>& eff, const CrossSectionTable& xsec,
                 const std::string& anomaly, std::span<const std::string> backgrounds) {
    const auto lookup = [&](const std::string& cls) {
        auto it = eff.find(cls);
        if (it == eff.end()) throw LookupError("compute_R: no efficiency for class '" + cls + "'");
        if (!(it->second >= 0.0) || !std::isfinite(it->second))
            throw NumericError("compute_R: efficiency for '" + cls + "' must be finite and >= 0");
        return it->second;
    };
    const double eps_an = lookup(anomaly);
    double denom = 0.0;
    for (const auto& b : backgrounds) {
        auto it = xsec.find(b);
        if (it == xsec.end()) throw LookupError("compute_R: no cross section for background '" + b + "'");
        if (!(it->second >= 0.0) || !std::isfinite(it->second))
            throw NumericError("compute_R: cross section for '" + b + "' must be finite and >= 0");
        denom += it->second * lookup(b);
    }
    RValue r;
    r.zero_background = denom == 0.0;
    if (eps_an == 0.0)
        r.value = 0.0;
    else if (r.zero_background)
        r.value = std::numeric_limits<double>::infinity();
    else
        r.value = eps_an / std::sqrt(denom);
    return r;
}

std::vector<double> scan_centers(double delta, double step) {
    if (!(delta > 0.0 && delta <= 1.0)) throw ConfigError("scan: delta must lie in (0, 1]");
    if (!(step > 0.0 && step <= delta)) throw ConfigError("scan: step must lie in (0, delta]");
    const auto n = static_cast<std::size_t>(std::floor((1.0 - delta) / step + 1e-9)) + 1;
    std::vector<double> centers(n);
    for (std::size_t i = 0; i < n; ++i) centers[i] = 0.5 * delta + static_cast<double>(i) * step;
    return centers;
}

Window centered_window(double center, double delta, std::size_t axis) {
    return {std::max(0.0, center - 0.5 * delta), std::min(1.0, center + 0.5 * delta), axis};
}

ScanResult scan_windows(std::span<const ScoreRecord> records, double delta, double step,
                        const CrossSectionTable& xsec, const std::string& anomaly,
                        std::span<const std::string> backgrounds, std::size_t axis) {
    const auto centers = scan_centers(delta, step);
    if (centers.empty()) throw ConfigError("scan: no valid window");
    check_axis(records, axis);

    // Sorted scores per class turn each window count into two binary searches.
    std::map<std::string, std::vector<double>> sorted;
    for (const auto& r : records) sorted[r.true_class].push_back(r.probs[axis]);
    for (auto& [cls, v] : sorted) std::sort(v.begin(), v.end());

    ScanResult out;
    out.delta = delta;
    out.step = step;
    out.axis = axis;
    out.anomaly = anomaly;
    out.points.reserve(centers.size());
    for (double c : centers) {
        ScanPoint pt;
        pt.center = c;
        pt.window = centered_window(c, delta, axis);
        for (const auto& [cls, v] : sorted) {
            Efficiency e;
            e.total = v.size();
            e.passed = static_cast<std::size_t>(std::upper_bound(v.begin(), v.end(), pt.window.p_max) -
                                                std::lower_bound(v.begin(), v.end(), pt.window.p_min));
            e.value = static_cast<double>(e.passed) / static_cast<double>(e.total);
            e.stat_error = std::sqrt(e.value * (1.0 - e.value) / static_cast<double>(e.total));
            pt.efficiency[cls] = e;
        }
        pt.r = compute_R(efficiency_values(pt.efficiency), xsec, anomaly, backgrounds);
        if (pt.r.zero_background) {
            ++out.excluded_zero_background;
        } else if (!out.argmax || pt.r.value > out.r_max) {
            out.r_max = pt.r.value;
            out.argmax = out.points.size();
        }
        out.points.push_back(std::move(pt));
    }
    return out;
}

double significance(double n_anomaly, double n_sm) {
    if (!(n_sm > 0.0)) throw NumericError("significance: N_SM must be > 0");
    if (!(n_anomaly >= 0.0)) throw NumericError("significance: N_An must be >= 0");
    return n_anomaly / std::sqrt(n_sm);
}

double sigma_min(double r_max, double luminosity, double threshold) {
    if (!(r_max > 0.0) || !std::isfinite(r_max)) throw NumericError("sigma_min: R_max must be finite and > 0");
    if (!(luminosity > 0.0)) throw NumericError("sigma_min: luminosity must be > 0");
    if (!(threshold > 0.0)) throw NumericError("sigma_min: threshold must be > 0");
    return threshold / (r_max * std::sqrt(luminosity));
}

void to_json(nlohmann::json& j, const ScanResult& s) {
    nlohmann::json points = nlohmann::json::array();
    for (const auto& p : s.points) {
        nlohmann::json eff = nlohmann::json::object();
        for (const auto& [cls, e] : p.efficiency)
            eff[cls] = {{"value", e.value}, {"stat_error", e.stat_error}, {"passed", e.passed}, {"total", e.total}};
        points.push_back({{"center", p.center},
                          {"p_min", p.window.p_min},
                          {"p_max", p.window.p_max},
                          {"efficiency", eff},
                          {"R", p.r.zero_background ? nlohmann::json(nullptr) : nlohmann::json(p.r.value)},
                          {"zero_background", p.r.zero_background}});
    }
    j = {{"delta", s.delta},
         {"step", s.step},
         {"axis", s.axis},
         {"anomaly", s.anomaly},
         {"R_max", s.r_max},
         {"argmax", s.argmax ? nlohmann::json(*s.argmax) : nlohmann::json(nullptr)},
         {"excluded_zero_background", s.excluded_zero_background},
         {"points", points}};
    if (s.argmax) {
        const auto& w = s.points[*s.argmax].window;
        j["best_window"] = {{"p_min", w.p_min}, {"p_max", w.p_max}};
    }
}

void to_json(nlohmann::json& j, const Histogram& h) {
    j = {{"edges", h.edges}, {"density", h.density}, {"count", h.count}};
}

void to_json(nlohmann::json& j, const Histogram2D& h) {
    j = {{"bins", h.bins}, {"density", h.density}, {"count", h.count}, {"layout", "density[ix * bins + iy]"}};
}

void to_json(nlohmann::json& j, const RocResult& r) {
    std::vector<double> fpr, tpr;
    for (const auto& p : r.curve) {
        fpr.push_back(p.fpr);
        tpr.push_back(p.tpr);
    }
    j = {{"auc", r.auc}, {"fpr", fpr}, {"tpr", tpr}};
}

}  // namespace aa::analysis
