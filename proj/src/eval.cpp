#include "echorange/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "echorange/errors.hpp"

namespace echorange::eval {

std::vector<ErrorPair> frame_errors(const std::vector<double>& predictions,
                                    const scene::SceneAnnotation& annotation) {
    if (predictions.size() != annotation.frames())
        throw ShapeError("frame_errors: prediction/annotation length mismatch");
    std::vector<ErrorPair> pairs;
    for (std::size_t t = 0; t < predictions.size(); ++t)
        if (annotation.activity[t])
            pairs.push_back({annotation.distance[t],
                             std::abs(predictions[t] - annotation.distance[t])});
    return pairs;
}

EvalSummary summarize(const std::vector<double>& abs_errors) {
    if (abs_errors.empty()) throw NoDataError("summarize: no errors to summarize");
    EvalSummary s;
    s.n_frames = abs_errors.size();
    double sum = 0.0;
    for (double e : abs_errors) sum += e;
    s.mean_abs_err = sum / static_cast<double>(abs_errors.size());

    std::vector<double> sorted = abs_errors;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t n = sorted.size();
    s.median_abs_err = n % 2 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);

    double ss = 0.0;
    for (double e : abs_errors) ss += (e - s.mean_abs_err) * (e - s.mean_abs_err);
    s.std_abs_err = std::sqrt(ss / static_cast<double>(n));
    return s;
}

double avg_pred_baseline(const std::vector<scene::SceneRecord>& train_records) {
    double sum = 0.0;
    std::size_t count = 0;
    for (const auto& r : train_records)
        for (std::size_t t = 0; t < r.activity.size(); ++t)
            if (r.activity[t]) {
                sum += r.distance[t];
                ++count;
            }
    if (count == 0) throw NoDataError("avg_pred_baseline: no active frames in the train split");
    return sum / static_cast<double>(count);
}

ErrorCurve binned_error_curve(const std::vector<ErrorPair>& pairs, double bin_width) {
    if (pairs.empty()) throw NoDataError("binned_error_curve: no pairs");
    if (!(bin_width > 0.0)) throw DomainError("binned_error_curve: bin_width must be > 0");

    double lo = pairs[0].y_true, hi = pairs[0].y_true;
    for (const auto& p : pairs) {
        lo = std::min(lo, p.y_true);
        hi = std::max(hi, p.y_true);
    }
    const double origin = std::floor(lo / bin_width) * bin_width;
    const std::size_t n_bins =
        std::max<std::size_t>(1, static_cast<std::size_t>((hi - origin) / bin_width) + 1);

    ErrorCurve curve;
    curve.bin_width = bin_width;
    curve.bins.resize(n_bins);
    std::vector<std::vector<double>> per_bin(n_bins);
    for (const auto& p : pairs) {
        std::size_t b = static_cast<std::size_t>((p.y_true - origin) / bin_width);
        if (b >= n_bins) b = n_bins - 1;  // hi lands exactly on the last edge
        per_bin[b].push_back(p.abs_err);
    }
    for (std::size_t b = 0; b < n_bins; ++b) {
        auto& bin = curve.bins[b];
        bin.lo = origin + static_cast<double>(b) * bin_width;
        bin.hi = bin.lo + bin_width;
        bin.count = per_bin[b].size();
        if (bin.count == 0) continue;
        double sum = 0.0;
        for (double e : per_bin[b]) sum += e;
        bin.mean_err = sum / static_cast<double>(bin.count);
        if (bin.count >= 2) {
            double ss = 0.0;
            for (double e : per_bin[b]) ss += (e - bin.mean_err) * (e - bin.mean_err);
            const double sd = std::sqrt(ss / static_cast<double>(bin.count));
            bin.ci95 = 1.96 * sd / std::sqrt(static_cast<double>(bin.count));
        }
    }
    return curve;
}

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

// Minimal dependency-free SVG line plot: one polyline per series.
void write_svg(const std::filesystem::path& path,
               const std::vector<std::pair<std::string, std::vector<std::pair<double, double>>>>&
                   series,
               const std::string& x_label, const std::string& y_label) {
    constexpr double W = 800.0, H = 400.0, pad = 50.0;
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    for (const auto& [name, pts] : series)
        for (const auto& [x, y] : pts) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    if (x1 <= x0) x1 = x0 + 1.0;
    if (y1 <= y0) y1 = y0 + 1.0;
    auto sx = [&](double x) { return pad + (x - x0) / (x1 - x0) * (W - 2 * pad); };
    auto sy = [&](double y) { return H - pad - (y - y0) / (y1 - y0) * (H - 2 * pad); };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("emit_report: cannot write " + path.string());
    out << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 800 400\">\n"
        << "<rect width=\"800\" height=\"400\" fill=\"white\"/>\n"
        << "<line x1=\"" << pad << "\" y1=\"" << H - pad << "\" x2=\"" << W - pad << "\" y2=\""
        << H - pad << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << pad << "\" y1=\"" << pad << "\" x2=\"" << pad << "\" y2=\"" << H - pad
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << x_label
        << "</text>\n"
        << "<text x=\"14\" y=\"" << H / 2
        << "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " << H / 2 << ")\">" << y_label
        << "</text>\n";
    int ci = 0;
    double legend_y = pad;
    for (const auto& [name, pts] : series) {
        const char* color = colors[ci % 5];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& [x, y] : pts) out << fmt(sx(x)) << "," << fmt(sy(y)) << " ";
        out << "\"/>\n";
        out << "<text x=\"" << W - pad - 150 << "\" y=\"" << legend_y << "\" fill=\"" << color
            << "\">" << name << "</text>\n";
        legend_y += 16.0;
        ++ci;
    }
    out << "</svg>\n";
}

}  // namespace

void emit_report(const std::vector<SummaryRow>& rows, const ErrorCurve& curve,
                 const std::vector<Trace>& traces, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("emit_report: cannot create " + out_dir.string() + ": " + ec.message());

    {
        std::ofstream out(out_dir / "summary.csv", std::ios::binary);
        if (!out) throw IoError("emit_report: cannot write summary.csv");
        out << "experiment,regressor,mean,median,std,n\n";
        for (const auto& r : rows)
            out << r.experiment << "," << r.regressor << "," << fmt(r.summary.mean_abs_err) << ","
                << fmt(r.summary.median_abs_err) << "," << fmt(r.summary.std_abs_err) << ","
                << r.summary.n_frames << "\n";
    }
    {
        std::ofstream out(out_dir / "curve.csv", std::ios::binary);
        if (!out) throw IoError("emit_report: cannot write curve.csv");
        out << "bin_lo,bin_hi,mean_err,count,ci95\n";
        for (const auto& b : curve.bins)
            out << fmt(b.lo) << "," << fmt(b.hi) << "," << fmt(b.mean_err) << "," << b.count << ","
                << (b.ci95 ? fmt(*b.ci95) : std::string("")) << "\n";
    }

    std::vector<std::pair<double, double>> curve_pts;
    for (const auto& b : curve.bins)
        if (b.count > 0) curve_pts.push_back({0.5 * (b.lo + b.hi), b.mean_err});
    write_svg(out_dir / "curve.svg", {{"mean abs error", curve_pts}}, "true distance (m)",
              "mean abs error (m)");

    for (const auto& trace : traces) {
        std::ofstream out(out_dir / ("trace_" + trace.scene_id + ".csv"), std::ios::binary);
        if (!out) throw IoError("emit_report: cannot write trace csv");
        out << "frame,time_s,y_true,y_hat,d_true,d_hat\n";
        for (const auto& s : trace.samples)
            out << s.frame << "," << fmt(s.time_s) << "," << fmt(s.y_true) << "," << fmt(s.y_hat)
                << "," << s.d_true << "," << fmt(s.d_hat) << "\n";
    }
    if (!traces.empty()) {
        const auto& t = traces.front();
        std::vector<std::pair<double, double>> truth, pred;
        for (const auto& s : t.samples) {
            if (s.d_true) truth.push_back({s.time_s, s.y_true});
            if (s.d_true) pred.push_back({s.time_s, s.y_hat});
        }
        write_svg(out_dir / "trace.svg", {{"ground truth", truth}, {"prediction", pred}},
                  "time (s)", "distance (m)");
    }
}

std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_summary_csv: cannot open " + path.string());
    std::vector<SummaryRow> rows;
    std::string line;
    std::getline(in, line);  // header
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        SummaryRow r;
        std::string field;
        std::getline(ss, r.experiment, ',');
        std::getline(ss, r.regressor, ',');
        std::getline(ss, field, ',');
        r.summary.mean_abs_err = std::stod(field);
        std::getline(ss, field, ',');
        r.summary.median_abs_err = std::stod(field);
        std::getline(ss, field, ',');
        r.summary.std_abs_err = std::stod(field);
        std::getline(ss, field, ',');
        r.summary.n_frames = static_cast<std::size_t>(std::stoull(field));
        rows.push_back(std::move(r));
    }
    return rows;
}

ErrorCurve read_curve_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("read_curve_csv: cannot open " + path.string());
    ErrorCurve curve;
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        ErrorCurveBin b;
        std::string field;
        std::getline(ss, field, ',');
        b.lo = std::stod(field);
        std::getline(ss, field, ',');
        b.hi = std::stod(field);
        std::getline(ss, field, ',');
        b.mean_err = std::stod(field);
        std::getline(ss, field, ',');
        b.count = static_cast<std::size_t>(std::stoull(field));
        std::getline(ss, field, ',');
        if (!field.empty()) b.ci95 = std::stod(field);
        curve.bins.push_back(b);
    }
    if (curve.bins.size() >= 1) curve.bin_width = curve.bins[0].hi - curve.bins[0].lo;
    return curve;
}

}  // namespace echorange::eval
