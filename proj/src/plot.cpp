#include <r4/plot.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <ostream>

namespace r4 {

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"};

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            default: out += c;
        }
    }
    return out;
}

double parse_or_nan(const std::string& s) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        return pos == s.size() ? v : std::numeric_limits<double>::quiet_NaN();
    } catch (const std::exception&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

// Value of `name` either as a plain column or inside the key=value extra column.
double field(const CsvTable& t, const std::vector<std::string>& row, const std::string& name) {
    const auto it = std::find(t.header.begin(), t.header.end(), name);
    if (it != t.header.end()) return parse_or_nan(row[static_cast<std::size_t>(it - t.header.begin())]);
    const auto ex = std::find(t.header.begin(), t.header.end(), "extra");
    if (ex == t.header.end()) throw InputError("plot: unknown column '" + name + "'");
    const std::string& extra = row[static_cast<std::size_t>(ex - t.header.begin())];
    std::size_t start = 0;
    while (start <= extra.size()) {
        const std::size_t end = std::min(extra.find(';', start), extra.size());
        const std::string kv = extra.substr(start, end - start);
        const auto eq = kv.find('=');
        if (eq != std::string::npos && kv.substr(0, eq) == name) return parse_or_nan(kv.substr(eq + 1));
        start = end + 1;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

} // namespace

void write_svg(std::ostream& os, const PlotSpec& spec, int width, int height) {
    const double left = 80, right = 170, top = 40, bottom = 60;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    auto ty = [&](double y) { return spec.log_y ? std::log10(y) : y; };
    for (const auto& s : spec.series)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (spec.log_y && s.y[i] <= 0)) continue;
            xmin = std::min(xmin, s.x[i]);
            xmax = std::max(xmax, s.x[i]);
            ymin = std::min(ymin, ty(s.y[i]));
            ymax = std::max(ymax, ty(s.y[i]));
        }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double pw = width - left - right, ph = height - top - bottom;
    auto px = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    auto py = [&](double y) { return top + (1.0 - (ty(y) - ymin) / (ymax - ymin)) * ph; };

    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << escape(spec.title)
       << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double fx = xmin + (xmax - xmin) * i / 4.0;
        const double fy = ymin + (ymax - ymin) * i / 4.0;
        const double gx = left + pw * i / 4.0, gy = top + ph * (1.0 - i / 4.0);
        os << "<text x=\"" << gx << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << fx << "</text>\n";
        os << "<text x=\"" << left - 6 << "\" y=\"" << gy + 4 << "\" text-anchor=\"end\">"
           << (spec.log_y ? "1e" : "") << fy << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 15 << "\" text-anchor=\"middle\">" << escape(spec.xlabel)
       << "</text>\n";
    os << "<text transform=\"translate(18," << top + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
       << escape(spec.ylabel) << (spec.log_y ? " (log10)" : "") << "</text>\n";

    for (std::size_t k = 0; k < spec.series.size(); ++k) {
        const auto& s = spec.series[k];
        const char* color = kPalette[k % std::size(kPalette)];
        std::vector<std::size_t> order(s.x.size());
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s.x[a] < s.x[b]; });
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\""
           << (s.dashed ? " stroke-dasharray=\"6,4\"" : "") << " points=\"";
        for (std::size_t i : order) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i]) || (spec.log_y && s.y[i] <= 0)) continue;
            os << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
        }
        os << "\"/>\n";
        const double ly = top + 14 + 18.0 * static_cast<double>(k);
        os << "<line x1=\"" << left + pw + 10 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 34 << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"6,4\"" : "")
           << "/>\n";
        os << "<text x=\"" << left + pw + 40 << "\" y=\"" << ly + 4 << "\">" << escape(s.label) << "</text>\n";
    }
    os << "</svg>\n";
}

PlotSpec plot_from_aggregate(const CsvTable& table, const std::string& experiment_id, const std::string& x,
                             const std::vector<std::string>& y_columns, const std::string& group,
                             const std::vector<std::string>& dashed) {
    const std::size_t id_col = table.column("experiment_id");
    const std::size_t group_col = table.column(group);
    PlotSpec spec;
    spec.title = experiment_id;
    spec.xlabel = x;
    spec.ylabel = y_columns.size() == 1 ? y_columns.front() : "value";
    std::map<std::string, std::size_t> index;
    for (const auto& row : table.rows) {
        if (row[id_col] != experiment_id) continue;
        for (const auto& y : y_columns) {
            const std::string label = row[group_col] + " " + y;
            auto [it, inserted] = index.try_emplace(label, spec.series.size());
            if (inserted) {
                PlotSeries s;
                s.label = label;
                s.dashed = std::find(dashed.begin(), dashed.end(), y) != dashed.end();
                spec.series.push_back(std::move(s));
            }
            spec.series[it->second].x.push_back(field(table, row, x));
            spec.series[it->second].y.push_back(field(table, row, y));
        }
    }
    if (spec.series.empty()) throw InputError("plot: no aggregate rows for experiment '" + experiment_id + "'");
    return spec;
}

} // namespace r4
