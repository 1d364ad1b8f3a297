#pragma once

#include "cshape/agent.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cshape {

/// Mean after sorting and trimming floor(n/4) values from each end.
double iqm(std::vector<double> values);
double median(std::vector<double> values);
double mean(const std::vector<double>& values);

/// Trailing moving average; the first window-1 entries average what exists.
std::vector<double> smooth(const std::vector<double>& curve, int window = 10);

struct RunSummary {
    std::string method;
    std::string env;
    std::uint64_t seed = 0;
    double best_return = 0.0;   // max over the smoothed eval curve
    double final_return = 0.0;  // last smoothed eval
    int steps_to_best = 0;
};

RunSummary summarize_run(const std::vector<CurvePoint>& curve, std::string method, std::string env,
                         std::uint64_t seed, int window = 10);

struct NormalizedStats {
    double mean = 0.0;
    double median = 0.0;
    double iqm = 0.0;
};

/// Divides each per-environment score by the baseline's, then summarizes.
NormalizedStats normalized_stats(const std::vector<double>& method_scores, const std::vector<double>& baseline_scores);

struct AggregateRow {
    std::string method;
    std::map<std::string, double> env_score;   // mean best return over seeds
    std::map<std::string, double> normalized;  // env_score / baseline env_score
    NormalizedStats stats;
};

/// Per-environment score is the mean over seeds of the best smoothed eval.
std::vector<AggregateRow> aggregate(const std::vector<RunSummary>& runs, const std::string& baseline_method);

/// Three rows (mean, median, IQM) with one column per method.
void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::filesystem::path& path);
void write_runs_csv(const std::vector<RunSummary>& runs, const std::filesystem::path& path);

std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path);

struct ChartSeries {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;
};

/// Minimal standalone SVG line chart.
void write_line_chart_svg(const std::vector<ChartSeries>& series, const std::string& title,
                          const std::filesystem::path& path);

}  // namespace cshape
