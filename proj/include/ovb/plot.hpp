#pragma once

#include "ovb/common.hpp"
#include "ovb/sensitivity.hpp"

#include <string>
#include <utility>
#include <vector>

namespace ovb {

using Point = std::pair<double, double>;
using Polyline = std::vector<Point>;

// Iso-lines of z (indexed [i over xs][j over ys]) at `level` by marching
// squares, in axis coordinates. Segments sharing a cell edge are joined into
// polylines; saddles are split using the cell-centre average. Cells with a
// non-finite corner are skipped.
std::vector<Polyline> iso_lines(const std::vector<double>& xs, const std::vector<double>& ys,
                                const Matrix& z, double level);

struct PlotMarker {
    std::string label;
    double x = 0.0;  // eta_d2
    double y = 0.0;  // eta_y2
};

struct SvgOptions {
    int width = 560;
    int height = 520;
    int extra_levels = 8;  // background iso-lines between min and max
    std::string title;
};

// Contour plot of the grid's quantity with the critical (threshold) contour
// highlighted, the diagonal drawn dashed and markers plotted as points.
std::string render_contour_svg(const ContourGrid& grid, const std::vector<PlotMarker>& markers,
                               const SvgOptions& options = {});

}  // namespace ovb
