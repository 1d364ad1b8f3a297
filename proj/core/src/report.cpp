#include "cshape/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace cshape {

double iqm(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("iqm: empty input");
    std::sort(values.begin(), values.end());
    const std::size_t k = values.size() / 4;
    double sum = 0.0;
    for (std::size_t i = k; i < values.size() - k; ++i) sum += values[i];
    return sum / static_cast<double>(values.size() - 2 * k);
}

double median(std::vector<double> values) {
    if (values.empty()) throw std::invalid_argument("median: empty input");
    std::sort(values.begin(), values.end());
    const std::size_t n = values.size();
    return n % 2 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double mean(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("mean: empty input");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

std::vector<double> smooth(const std::vector<double>& curve, int window) {
    if (window < 1) throw std::invalid_argument("smooth: window must be >= 1");
    std::vector<double> out(curve.size());
    for (std::size_t i = 0; i < curve.size(); ++i) {
        const std::size_t lo = i + 1 >= static_cast<std::size_t>(window) ? i + 1 - static_cast<std::size_t>(window) : 0;
        double sum = 0.0;
        for (std::size_t j = lo; j <= i; ++j) sum += curve[j];
        out[i] = sum / static_cast<double>(i + 1 - lo);
    }
    return out;
}

RunSummary summarize_run(const std::vector<CurvePoint>& curve, std::string method, std::string env,
                         std::uint64_t seed, int window) {
    if (curve.empty()) throw std::invalid_argument("summarize_run: empty curve");
    std::vector<double> raw;
    raw.reserve(curve.size());
    for (const auto& p : curve) raw.push_back(p.eval_mean);
    const auto sm = smooth(raw, window);
    const auto best = std::max_element(sm.begin(), sm.end());
    return {std::move(method), std::move(env), seed, *best, sm.back(),
            curve[static_cast<std::size_t>(best - sm.begin())].step};
}

NormalizedStats normalized_stats(const std::vector<double>& method_scores, const std::vector<double>& baseline_scores) {
    if (method_scores.size() != baseline_scores.size() || method_scores.empty())
        throw std::invalid_argument("normalized_stats: score lists must be nonempty and equally long");
    std::vector<double> ratio(method_scores.size());
    for (std::size_t i = 0; i < ratio.size(); ++i) {
        if (baseline_scores[i] == 0.0) throw std::invalid_argument("normalized_stats: zero baseline score");
        ratio[i] = method_scores[i] / baseline_scores[i];
    }
    return {mean(ratio), median(ratio), iqm(ratio)};
}

std::vector<AggregateRow> aggregate(const std::vector<RunSummary>& runs, const std::string& baseline_method) {
    std::map<std::string, std::map<std::string, std::vector<double>>> best;  // method -> env -> seeds
    for (const auto& r : runs) best[r.method][r.env].push_back(r.best_return);
    const auto base_it = best.find(baseline_method);
    if (base_it == best.end()) throw std::invalid_argument("aggregate: no runs for baseline '" + baseline_method + "'");
    std::map<std::string, double> base_score;
    for (const auto& [env, v] : base_it->second) {
        base_score[env] = mean(v);
        if (base_score[env] == 0.0) throw std::invalid_argument("aggregate: baseline best return is zero on " + env);
    }

    std::vector<AggregateRow> rows;
    for (const auto& [method, envs] : best) {
        AggregateRow row;
        row.method = method;
        std::vector<double> m, b;
        for (const auto& [env, v] : envs) {
            const auto bs = base_score.find(env);
            if (bs == base_score.end()) throw std::invalid_argument("aggregate: baseline missing env " + env);
            row.env_score[env] = mean(v);
            row.normalized[env] = row.env_score[env] / bs->second;
            m.push_back(row.env_score[env]);
            b.push_back(bs->second);
        }
        row.stats = normalized_stats(m, b);
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_aggregate_csv(const std::vector<AggregateRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    out << "statistic";
    for (const auto& r : rows) out << ',' << r.method;
    out << '\n';
    const std::pair<const char*, double NormalizedStats::*> stats[] = {
        {"normalized_mean", &NormalizedStats::mean},
        {"normalized_median", &NormalizedStats::median},
        {"normalized_iqm", &NormalizedStats::iqm}};
    for (const auto& [name, field] : stats) {
        out << name;
        for (const auto& r : rows) out << ',' << r.stats.*field;
        out << '\n';
    }
}

void write_runs_csv(const std::vector<RunSummary>& runs, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.precision(17);
    out << "method,env,seed,best_return,final_return,steps_to_best\n";
    for (const auto& r : runs)
        out << r.method << ',' << r.env << ',' << r.seed << ',' << r.best_return << ',' << r.final_return << ','
            << r.steps_to_best << '\n';
}

std::vector<CurvePoint> read_curve_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != "step,eval_mean,eval_std,episodes")
        throw ParseError("unexpected curve header in " + path.string(), 1);
    std::vector<CurvePoint> curve;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        CurvePoint p;
        char c1 = 0, c2 = 0, c3 = 0;
        if (!(ls >> p.step >> c1 >> p.eval_mean >> c2 >> p.eval_std >> c3 >> p.episodes) || c1 != ',' || c2 != ',' ||
            c3 != ',')
            throw ParseError("malformed curve row in " + path.string(), lineno);
        curve.push_back(p);
    }
    return curve;
}

void write_line_chart_svg(const std::vector<ChartSeries>& series, const std::string& title,
                          const std::filesystem::path& path) {
    constexpr double W = 640, H = 400, L = 70, R = 160, T = 40, B = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!(x1 > x0)) x1 = x0 + 1.0;
    if (!(y1 > y0)) y1 = y0 + 1.0;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
        << title << "</text>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        out << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << xv << "</text>\n";
        out << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << yv << "</text>\n";
    }
    for (std::size_t k = 0; k < series.size(); ++k) {
        const auto& s = series[k];
        const char* color = colors[k % std::size(colors)];
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) out << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        out << "\"/>\n";
        out << "<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (k + 1) << "\" fill=\"" << color
            << "\" font-family=\"sans-serif\" font-size=\"12\">" << s.label << "</text>\n";
    }
    out << "</svg>\n";
}

}  // namespace cshape
