#pragma once

// Exact 2-D geometry primitives shared by the reward functions, the
// evaluation metrics, and the mask-to-point reduction.

#include <cstdint>
#include <optional>
#include <vector>

#include "tokdet/errors.hpp"

namespace tokdet {

struct Point {
    double x = 0.0;
    double y = 0.0;
};

// Axis-aligned box with corners (x0, y0) top-left and (x1, y1) bottom-right.
// A box with x1 <= x0 or y1 <= y0 is degenerate: zero area, zero overlap.
struct Box {
    double x0 = 0.0;
    double y0 = 0.0;
    double x1 = 0.0;
    double y1 = 0.0;

    double width() const { return x1 - x0; }
    double height() const { return y1 - y0; }
};

double area(const Box& b);
double intersection_area(const Box& a, const Box& b);

// Intersection over union. Degenerate pairs (zero union) yield 0 rather
// than NaN.
double iou(const Box& a, const Box& b);

// Closed-boundary containment: points on an edge count as inside.
bool point_in_box(const Point& p, const Box& b);

using Polygon = std::vector<Point>;

// Even-odd ray-casting containment with an inclusive boundary: a point
// lying exactly on a polygon edge counts as inside. Requires at least 3
// vertices.
bool point_in_polygon(const Point& p, const Polygon& poly);

// Dense binary mask over a width x height pixel grid, row-major, one byte
// per pixel.
class Mask {
public:
    Mask(int width, int height);

    int width() const { return width_; }
    int height() const { return height_; }

    bool at(int ix, int iy) const;
    void set(int ix, int iy, bool value);

    // True when the pixel containing continuous point p is in bounds and set.
    bool contains(const Point& p) const;

    std::int64_t count() const;

private:
    int width_;
    int height_;
    std::vector<std::uint8_t> data_;
};

// Pixel (ix, iy) of the result is set iff the pixel center
// (ix + 0.5, iy + 0.5) passes point_in_polygon. A degenerate polygon
// (fewer than 3 vertices, or all vertices collinear) yields an empty mask.
Mask rasterize(const Polygon& poly, int width, int height);

// Smallest axis-aligned box containing every vertex.
Box polygon_aabb(const Polygon& poly);

// Convex hull of a point set (Andrew monotone chain), counter-clockwise,
// first vertex not repeated, collinear boundary points dropped.
std::vector<Point> convex_hull(std::vector<Point> points);

// Minimum-area rectangle enclosing a point set. The two axes of a rectangle
// are perpendicular, so their direction is a single value modulo 90 degrees;
// angle_deg reports it in [0, 90). width >= height always.
struct RotatedRect {
    Point center;
    double width = 0.0;
    double height = 0.0;
    double angle_deg = 0.0;
};

// Minimum-area enclosing rectangle of all set pixels, each treated as the
// unit square it covers, found by an exact edge-direction search over the
// convex hull. A single set pixel therefore gives a 1x1 rectangle, and an
// axis-aligned filled block gives exactly that block. Throws EmptyMaskError
// when no pixel is set.
RotatedRect min_area_rect(const Mask& mask);

// Reduce a mask to a single representative point: the center of its
// minimum-area enclosing rectangle, but only when that center actually lies
// on the mask (the pixel under it is set). Concave shapes whose rectangle
// center falls in a hole yield nullopt. Throws EmptyMaskError on an empty
// mask.
std::optional<Point> center_point_of(const Mask& mask);

} // namespace tokdet
