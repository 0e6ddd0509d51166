#include "tokdet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace tokdet {

double area(const Box& b) {
    double w = b.x1 - b.x0;
    double h = b.y1 - b.y0;
    if (w <= 0.0 || h <= 0.0) return 0.0;
    return w * h;
}

double intersection_area(const Box& a, const Box& b) {
    double w = std::min(a.x1, b.x1) - std::max(a.x0, b.x0);
    double h = std::min(a.y1, b.y1) - std::max(a.y0, b.y0);
    if (w <= 0.0 || h <= 0.0) return 0.0;
    return w * h;
}

double iou(const Box& a, const Box& b) {
    double inter = intersection_area(a, b);
    double uni = area(a) + area(b) - inter;
    if (uni <= 0.0) return 0.0;
    return inter / uni;
}

bool point_in_box(const Point& p, const Box& b) {
    return p.x >= b.x0 && p.x <= b.x1 && p.y >= b.y0 && p.y <= b.y1;
}

namespace {

double cross(const Point& o, const Point& a, const Point& b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

bool on_segment(const Point& p, const Point& a, const Point& b) {
    if (cross(a, b, p) != 0.0) return false;
    return p.x >= std::min(a.x, b.x) && p.x <= std::max(a.x, b.x) &&
           p.y >= std::min(a.y, b.y) && p.y <= std::max(a.y, b.y);
}

} // namespace

bool point_in_polygon(const Point& p, const Polygon& poly) {
    if (poly.size() < 3) {
        throw InvalidInputError("polygon needs at least 3 vertices, got " +
                                std::to_string(poly.size()));
    }
    const std::size_t n = poly.size();
    // Inclusive boundary: an exact hit on any edge is inside.
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        if (on_segment(p, poly[j], poly[i])) return true;
    }
    bool inside = false;
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
        const Point& a = poly[i];
        const Point& b = poly[j];
        if ((a.y > p.y) != (b.y > p.y)) {
            double x_cross = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if (p.x < x_cross) inside = !inside;
        }
    }
    return inside;
}

Mask::Mask(int width, int height) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
        throw InvalidInputError("mask dimensions must be positive, got " +
                                std::to_string(width) + "x" + std::to_string(height));
    }
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
}

bool Mask::at(int ix, int iy) const {
    if (ix < 0 || ix >= width_ || iy < 0 || iy >= height_) {
        throw InvalidInputError("mask index out of range: (" + std::to_string(ix) +
                                ", " + std::to_string(iy) + ")");
    }
    return data_[static_cast<std::size_t>(iy) * width_ + ix] != 0;
}

void Mask::set(int ix, int iy, bool value) {
    if (ix < 0 || ix >= width_ || iy < 0 || iy >= height_) {
        throw InvalidInputError("mask index out of range: (" + std::to_string(ix) +
                                ", " + std::to_string(iy) + ")");
    }
    data_[static_cast<std::size_t>(iy) * width_ + ix] = value ? 1 : 0;
}

bool Mask::contains(const Point& p) const {
    double fx = std::floor(p.x);
    double fy = std::floor(p.y);
    if (fx < 0.0 || fy < 0.0 || fx >= width_ || fy >= height_) return false;
    return at(static_cast<int>(fx), static_cast<int>(fy));
}

std::int64_t Mask::count() const {
    std::int64_t total = 0;
    for (std::uint8_t v : data_) total += v;
    return total;
}

namespace {

bool degenerate_polygon(const Polygon& poly) {
    if (poly.size() < 3) return true;
    // All vertices collinear means zero enclosed area. Anchor the direction
    // on the first vertex distinct from poly[0] so duplicates don't fool it.
    std::size_t j = 1;
    while (j < poly.size() && poly[j].x == poly[0].x && poly[j].y == poly[0].y) ++j;
    if (j == poly.size()) return true;
    for (std::size_t i = j + 1; i < poly.size(); ++i) {
        if (cross(poly[0], poly[j], poly[i]) != 0.0) return false;
    }
    return true;
}

} // namespace

Mask rasterize(const Polygon& poly, int width, int height) {
    Mask mask(width, height);
    if (degenerate_polygon(poly)) return mask;
    for (int iy = 0; iy < height; ++iy) {
        for (int ix = 0; ix < width; ++ix) {
            Point center{static_cast<double>(ix) + 0.5, static_cast<double>(iy) + 0.5};
            if (point_in_polygon(center, poly)) mask.set(ix, iy, true);
        }
    }
    return mask;
}

Box polygon_aabb(const Polygon& poly) {
    if (poly.size() < 3) {
        throw InvalidInputError("polygon needs at least 3 vertices, got " +
                                std::to_string(poly.size()));
    }
    Box box{poly[0].x, poly[0].y, poly[0].x, poly[0].y};
    for (const Point& p : poly) {
        box.x0 = std::min(box.x0, p.x);
        box.y0 = std::min(box.y0, p.y);
        box.x1 = std::max(box.x1, p.x);
        box.y1 = std::max(box.y1, p.y);
    }
    return box;
}

std::vector<Point> convex_hull(std::vector<Point> points) {
    std::sort(points.begin(), points.end(), [](const Point& a, const Point& b) {
        return a.x < b.x || (a.x == b.x && a.y < b.y);
    });
    points.erase(std::unique(points.begin(), points.end(),
                             [](const Point& a, const Point& b) {
                                 return a.x == b.x && a.y == b.y;
                             }),
                 points.end());
    const std::size_t n = points.size();
    if (n < 3) return points;

    std::vector<Point> hull(2 * n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) { // lower chain
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], points[i]) <= 0.0) --k;
        hull[k++] = points[i];
    }
    for (std::size_t i = n - 1, lower = k + 1; i-- > 0;) { // upper chain
        while (k >= lower && cross(hull[k - 2], hull[k - 1], points[i]) <= 0.0) --k;
        hull[k++] = points[i];
    }
    hull.resize(k - 1); // last point repeats the first
    return hull;
}

namespace {

// Extents and center of a point set in the orthonormal frame (u, v).
struct FrameFit {
    double width;
    double height;
    Point center;
};

FrameFit fit_frame(const std::vector<Point>& pts, double ux, double uy) {
    double min_u = 0.0, max_u = 0.0, min_v = 0.0, max_v = 0.0;
    bool first = true;
    for (const Point& p : pts) {
        double su = p.x * ux + p.y * uy;
        double sv = -p.x * uy + p.y * ux;
        if (first) {
            min_u = max_u = su;
            min_v = max_v = sv;
            first = false;
        } else {
            min_u = std::min(min_u, su);
            max_u = std::max(max_u, su);
            min_v = std::min(min_v, sv);
            max_v = std::max(max_v, sv);
        }
    }
    double cu = 0.5 * (min_u + max_u);
    double cv = 0.5 * (min_v + max_v);
    FrameFit fit;
    fit.width = max_u - min_u;
    fit.height = max_v - min_v;
    fit.center = Point{cu * ux - cv * uy, cu * uy + cv * ux};
    return fit;
}

double axis_angle_deg(double ux, double uy) {
    double deg = std::atan2(uy, ux) * 180.0 / std::numbers::pi;
    double a = std::fmod(deg, 90.0);
    if (a < 0.0) a += 90.0;
    if (a >= 90.0) a -= 90.0; // fmod rounding right at the seam
    return a;
}

RotatedRect rect_of_points(const std::vector<Point>& pts) {
    std::vector<Point> hull = convex_hull(pts);
    if (hull.size() == 1) {
        return RotatedRect{hull[0], 0.0, 0.0, 0.0};
    }
    if (hull.size() == 2) {
        double dx = hull[1].x - hull[0].x;
        double dy = hull[1].y - hull[0].y;
        double len = std::hypot(dx, dy);
        RotatedRect rect;
        rect.center = Point{0.5 * (hull[0].x + hull[1].x), 0.5 * (hull[0].y + hull[1].y)};
        rect.width = len;
        rect.height = 0.0;
        rect.angle_deg = axis_angle_deg(dx / len, dy / len);
        return rect;
    }

    // The minimum-area enclosing rectangle has a side flush with some hull
    // edge, so trying every edge direction is exact.
    double best_area = -1.0;
    RotatedRect best;
    const std::size_t n = hull.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Point& a = hull[i];
        const Point& b = hull[(i + 1) % n];
        double dx = b.x - a.x;
        double dy = b.y - a.y;
        double len = std::hypot(dx, dy);
        if (len == 0.0) continue;
        double ux = dx / len;
        double uy = dy / len;
        FrameFit fit = fit_frame(hull, ux, uy);
        double rect_area = fit.width * fit.height;
        if (best_area < 0.0 || rect_area < best_area) {
            best_area = rect_area;
            best.center = fit.center;
            best.width = fit.width;
            best.height = fit.height;
            best.angle_deg = axis_angle_deg(ux, uy);
        }
    }
    if (best.width < best.height) std::swap(best.width, best.height);
    return best;
}

} // namespace

RotatedRect min_area_rect(const Mask& mask) {
    std::vector<Point> centers;
    centers.reserve(static_cast<std::size_t>(mask.count()));
    for (int iy = 0; iy < mask.height(); ++iy) {
        for (int ix = 0; ix < mask.width(); ++ix) {
            if (mask.at(ix, iy)) {
                centers.push_back(Point{static_cast<double>(ix) + 0.5,
                                        static_cast<double>(iy) + 0.5});
            }
        }
    }
    if (centers.empty()) {
        throw EmptyMaskError("min_area_rect on a mask with no set pixels");
    }
    // Each set pixel occupies the unit square around its center, so the
    // rectangle must cover those footprints, not just the center points.
    // Hull the centers first (cheap), then widen each hull vertex to its four
    // pixel corners; hulling that small corner set is equivalent to hulling
    // every pixel corner in the mask.
    std::vector<Point> hull = convex_hull(std::move(centers));
    std::vector<Point> corners;
    corners.reserve(hull.size() * 4);
    for (const Point& c : hull) {
        corners.push_back(Point{c.x - 0.5, c.y - 0.5});
        corners.push_back(Point{c.x + 0.5, c.y - 0.5});
        corners.push_back(Point{c.x - 0.5, c.y + 0.5});
        corners.push_back(Point{c.x + 0.5, c.y + 0.5});
    }
    return rect_of_points(corners);
}

std::optional<Point> center_point_of(const Mask& mask) {
    RotatedRect rect = min_area_rect(mask);
    if (!mask.contains(rect.center)) return std::nullopt;
    return rect.center;
}

} // namespace tokdet
