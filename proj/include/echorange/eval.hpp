#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "echorange/geometry.hpp"
#include "echorange/scene.hpp"

namespace echorange::eval {

struct EvalSummary {
    double mean_abs_err = 0.0;
    double median_abs_err = 0.0;
    double std_abs_err = 0.0;  // population (divisor n)
    std::size_t n_frames = 0;
};

struct ErrorPair {
    double y_true = 0.0;
    double abs_err = 0.0;
};

// Pairs (y_true, |y_hat - y_true|) collected only where d_t = 1.
std::vector<ErrorPair> frame_errors(const std::vector<double>& predictions,
                                    const scene::SceneAnnotation& annotation);

// Mean, median (midpoint for even counts) and population std of |errors|.
EvalSummary summarize(const std::vector<double>& abs_errors);

// Mean true distance over all active frames of the train split; used as the
// constant predictor baseline.
double avg_pred_baseline(const std::vector<scene::SceneRecord>& train_records);

struct ErrorCurveBin {
    double lo = 0.0, hi = 0.0;
    double mean_err = 0.0;
    std::size_t count = 0;
    std::optional<double> ci95;  // 1.96 * std / sqrt(count); missing for count < 2
};

struct ErrorCurve {
    double bin_width = 0.25;
    std::vector<ErrorCurveBin> bins;  // covers [min y_true, max y_true]
};

ErrorCurve binned_error_curve(const std::vector<ErrorPair>& pairs, double bin_width);

struct TraceSample {
    std::size_t frame = 0;
    double time_s = 0.0;
    double y_true = 0.0;
    double y_hat = 0.0;
    int d_true = 0;
    double d_hat = 0.0;
};

struct Trace {
    std::string scene_id;
    std::vector<TraceSample> samples;
};

struct SummaryRow {
    std::string experiment;
    std::string regressor;
    EvalSummary summary;
};

// Writes summary.csv, curve.csv, per-trace CSVs and self-contained SVG plots
// (fixed 800x400 viewBox, one polyline per series).
void emit_report(const std::vector<SummaryRow>& rows, const ErrorCurve& curve,
                 const std::vector<Trace>& traces, const std::filesystem::path& out_dir);

// Re-parses what emit_report writes (used by the combined report command).
std::vector<SummaryRow> read_summary_csv(const std::filesystem::path& path);
ErrorCurve read_curve_csv(const std::filesystem::path& path);

}  // namespace echorange::eval
