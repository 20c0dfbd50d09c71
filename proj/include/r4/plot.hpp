#pragma once

#include <r4/csv.hpp>

#include <iosfwd>
#include <string>
#include <vector>

namespace r4 {

struct PlotSeries {
    std::string label;
    std::vector<double> x, y;
    bool dashed = false;
};

struct PlotSpec {
    std::string title;
    std::string xlabel;
    std::string ylabel;
    bool log_y = false;
    std::vector<PlotSeries> series;
};

/// Static SVG line chart.
void write_svg(std::ostream& os, const PlotSpec& spec, int width = 720, int height = 480);

/**
 * One series per distinct value of `group` (e.g. sketch_kind) and y column,
 * taken from aggregate rows of `experiment_id`. Columns named in `dashed`
 * are drawn dashed (estimates), the others solid (bounds).
 */
PlotSpec plot_from_aggregate(const CsvTable& table, const std::string& experiment_id, const std::string& x,
                             const std::vector<std::string>& y_columns, const std::string& group,
                             const std::vector<std::string>& dashed = {});

} // namespace r4
