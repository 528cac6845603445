#include "ovb/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace ovb {

namespace {

struct Grid {
    const std::vector<double>& xs;
    const std::vector<double>& ys;
    const Matrix& z;
    double level;

    long key_h(long i, long j) const { return 2 * (i * static_cast<long>(ys.size()) + j); }
    long key_v(long i, long j) const { return key_h(i, j) + 1; }

    // Crossing point on the edge from corner a to corner b.
    Point cross(long ia, long ja, long ib, long jb) const {
        const double za = z(ia, ja), zb = z(ib, jb);
        const double t = zb == za ? 0.5 : (level - za) / (zb - za);
        const double x = xs[static_cast<std::size_t>(ia)] +
                         t * (xs[static_cast<std::size_t>(ib)] - xs[static_cast<std::size_t>(ia)]);
        const double y = ys[static_cast<std::size_t>(ja)] +
                         t * (ys[static_cast<std::size_t>(jb)] - ys[static_cast<std::size_t>(ja)]);
        return {x, y};
    }
};

}  // namespace

std::vector<Polyline> iso_lines(const std::vector<double>& xs, const std::vector<double>& ys,
                                const Matrix& z, double level) {
    if (z.rows() != static_cast<Eigen::Index>(xs.size()) ||
        z.cols() != static_cast<Eigen::Index>(ys.size()))
        throw Error("invalid_input", "iso_lines: grid shape does not match axes");
    std::vector<Polyline> out;
    if (xs.size() < 2 || ys.size() < 2 || !std::isfinite(level)) return out;
    const Grid g{xs, ys, z, level};

    std::map<long, Point> points;
    std::vector<std::pair<long, long>> segs;
    std::map<long, std::vector<std::size_t>> at;
    auto add = [&](long a, long b) {
        at[a].push_back(segs.size());
        at[b].push_back(segs.size());
        segs.emplace_back(a, b);
    };

    const long nx = static_cast<long>(xs.size()), ny = static_cast<long>(ys.size());
    for (long i = 0; i + 1 < nx; ++i) {
        for (long j = 0; j + 1 < ny; ++j) {
            const double c0 = z(i, j), c1 = z(i + 1, j), c2 = z(i + 1, j + 1), c3 = z(i, j + 1);
            if (!std::isfinite(c0) || !std::isfinite(c1) || !std::isfinite(c2) || !std::isfinite(c3))
                continue;
            const bool b0 = c0 >= level, b1 = c1 >= level, b2 = c2 >= level, b3 = c3 >= level;
            const long e0 = g.key_h(i, j), e1 = g.key_v(i + 1, j), e2 = g.key_h(i, j + 1),
                       e3 = g.key_v(i, j);
            std::vector<long> edges;
            if (b0 != b1) { edges.push_back(e0); points.emplace(e0, g.cross(i, j, i + 1, j)); }
            if (b1 != b2) { edges.push_back(e1); points.emplace(e1, g.cross(i + 1, j, i + 1, j + 1)); }
            if (b3 != b2) { edges.push_back(e2); points.emplace(e2, g.cross(i, j + 1, i + 1, j + 1)); }
            if (b0 != b3) { edges.push_back(e3); points.emplace(e3, g.cross(i, j, i, j + 1)); }
            if (edges.size() == 2) {
                add(edges[0], edges[1]);
            } else if (edges.size() == 4) {
                const bool centre = 0.25 * (c0 + c1 + c2 + c3) >= level;
                if (centre == b0) {
                    add(e0, e1);
                    add(e2, e3);
                } else {
                    add(e0, e3);
                    add(e1, e2);
                }
            }
        }
    }

    std::vector<bool> used(segs.size(), false);
    auto walk = [&](long start) {
        Polyline line{points.at(start)};
        long cur = start;
        for (;;) {
            std::size_t next_seg = segs.size();
            for (std::size_t s : at[cur])
                if (!used[s]) {
                    next_seg = s;
                    break;
                }
            if (next_seg == segs.size()) break;
            used[next_seg] = true;
            cur = segs[next_seg].first == cur ? segs[next_seg].second : segs[next_seg].first;
            line.push_back(points.at(cur));
        }
        out.push_back(std::move(line));
    };
    for (const auto& [key, ids] : at)
        if (ids.size() == 1 && !used[ids[0]]) walk(key);
    for (std::size_t s = 0; s < segs.size(); ++s)
        if (!used[s]) walk(segs[s].first);
    return out;
}

namespace {

std::string num(double v, const char* fmt = "%.4g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, fmt, v);
    return buf;
}

std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

}  // namespace

std::string render_contour_svg(const ContourGrid& grid, const std::vector<PlotMarker>& markers,
                               const SvgOptions& options) {
    const auto& xs = grid.eta_d2_axis;
    const auto& ys = grid.eta_y2_axis;
    if (xs.empty() || ys.empty()) throw Error("invalid_input", "empty contour grid");
    const Matrix z = grid.values();

    const double left = 70, right = 20, top = 40, bottom = 60;
    const double pw = options.width - left - right, ph = options.height - top - bottom;
    const double x0 = xs.front(), x1 = xs.back() > xs.front() ? xs.back() : xs.front() + 1.0;
    const double y0 = ys.front(), y1 = ys.back() > ys.front() ? ys.back() : ys.front() + 1.0;
    auto px = [&](double x) { return left + (x - x0) / (x1 - x0) * pw; };
    auto py = [&](double y) { return top + ph - (y - y0) / (y1 - y0) * ph; };
    auto path = [&](const Polyline& line) {
        std::string s;
        for (const auto& [x, y] : line) s += num(px(x), "%.2f") + "," + num(py(y), "%.2f") + " ";
        if (!s.empty()) s.pop_back();
        return s;
    };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << options.width << "\" height=\""
       << options.height << "\" viewBox=\"0 0 " << options.width << ' ' << options.height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect x=\"0\" y=\"0\" width=\"" << options.width << "\" height=\"" << options.height
       << "\" fill=\"white\"/>\n";
    const std::string title = options.title.empty()
                                  ? "Sensitivity contours: " + to_string(grid.quantity)
                                  : options.title;
    os << "<text x=\"" << options.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">"
       << escape(title) << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";

    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4.0, yv = y0 + (y1 - y0) * k / 4.0;
        os << "<line x1=\"" << num(px(xv), "%.2f") << "\" y1=\"" << top + ph << "\" x2=\""
           << num(px(xv), "%.2f") << "\" y2=\"" << top + ph + 5 << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << num(px(xv), "%.2f") << "\" y=\"" << top + ph + 18
           << "\" text-anchor=\"middle\">" << num(xv, "%.3g") << "</text>\n";
        os << "<line x1=\"" << left - 5 << "\" y1=\"" << num(py(yv), "%.2f") << "\" x2=\"" << left
           << "\" y2=\"" << num(py(yv), "%.2f") << "\" stroke=\"black\"/>\n";
        os << "<text x=\"" << left - 8 << "\" y=\"" << num(py(yv) + 4, "%.2f")
           << "\" text-anchor=\"end\">" << num(yv, "%.3g") << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << options.height - 15
       << "\" text-anchor=\"middle\">partial R2 of confounders with the treatment (eta_d2)</text>\n";
    os << "<text transform=\"translate(16," << top + ph / 2
       << ") rotate(-90)\" text-anchor=\"middle\">partial R2 of confounders with the outcome "
          "(eta_y2)</text>\n";

    // Diagonal over the shared range.
    const double lo = std::max(x0, y0), hi = std::min(x1, y1);
    if (hi > lo)
        os << "<line x1=\"" << num(px(lo), "%.2f") << "\" y1=\"" << num(py(lo), "%.2f")
           << "\" x2=\"" << num(px(hi), "%.2f") << "\" y2=\"" << num(py(hi), "%.2f")
           << "\" stroke=\"#888\" stroke-dasharray=\"4 4\"/>\n";

    double zmin = INFINITY, zmax = -INFINITY;
    for (Eigen::Index i = 0; i < z.size(); ++i)
        if (std::isfinite(z.data()[i])) {
            zmin = std::min(zmin, z.data()[i]);
            zmax = std::max(zmax, z.data()[i]);
        }
    if (std::isfinite(zmin) && zmax > zmin) {
        for (int k = 1; k <= options.extra_levels; ++k) {
            const double level = zmin + (zmax - zmin) * k / (options.extra_levels + 1.0);
            const auto lines = iso_lines(xs, ys, z, level);
            for (std::size_t l = 0; l < lines.size(); ++l) {
                os << "<polyline fill=\"none\" stroke=\"#999\" stroke-width=\"1\" points=\""
                   << path(lines[l]) << "\"/>\n";
                if (l == 0 && !lines[l].empty()) {
                    const auto& mid = lines[l][lines[l].size() / 2];
                    os << "<text x=\"" << num(px(mid.first) + 2, "%.2f") << "\" y=\""
                       << num(py(mid.second) - 2, "%.2f") << "\" fill=\"#666\" font-size=\"9\">"
                       << num(level) << "</text>\n";
                }
            }
        }
    }
    for (const auto& line : iso_lines(xs, ys, z, grid.critical_threshold))
        os << "<polyline fill=\"none\" stroke=\"#c0392b\" stroke-width=\"2.5\" points=\""
           << path(line) << "\"/>\n";

    for (const auto& m : markers) {
        os << "<circle cx=\"" << num(px(m.x), "%.2f") << "\" cy=\"" << num(py(m.y), "%.2f")
           << "\" r=\"4\" fill=\"#1f4e79\"/>\n";
        os << "<text x=\"" << num(px(m.x) + 6, "%.2f") << "\" y=\"" << num(py(m.y) - 6, "%.2f")
           << "\" fill=\"#1f4e79\">" << escape(m.label) << "</text>\n";
    }
    os << "<text x=\"" << left + pw - 4 << "\" y=\"" << top + 14
       << "\" text-anchor=\"end\" fill=\"#c0392b\">critical contour = "
       << num(grid.critical_threshold) << "</text>\n";
    os << "</svg>\n";
    return os.str();
}

}  // namespace ovb
