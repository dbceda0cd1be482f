#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <vector>

#include "currilearn/error.hpp"

namespace currilearn {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double distance(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Axis-aligned lesion rectangle in pixel coordinates. x_max/y_max are
/// exclusive pixel edges, so a box covering pixel columns [3,7] has x_min=3, x_max=8.
struct LesionBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;

  int width() const { return x_max - x_min; }
  int height() const { return y_max - y_min; }
  long area() const { return static_cast<long>(width()) * height(); }

  std::array<Point, 4> corners() const {
    return {Point{double(x_min), double(y_min)}, Point{double(x_max), double(y_min)},
            Point{double(x_min), double(y_max)}, Point{double(x_max), double(y_max)}};
  }

  bool valid_for(int image_width, int image_height) const {
    return 0 <= x_min && x_min < x_max && x_max <= image_width && 0 <= y_min &&
           y_min < y_max && y_max <= image_height;
  }

  friend bool operator==(const LesionBox&, const LesionBox&) = default;
};

/// Circular patch. Centers are continuous; pixel rounding happens at crop time.
struct DiscPatch {
  double center_x = 0.0;
  double center_y = 0.0;
  double diameter = 0.0;

  double radius() const { return 0.5 * diameter; }
  Point center() const { return {center_x, center_y}; }

  bool contains(Point p, double tolerance = 1e-9) const {
    return distance(center(), p) <= radius() + tolerance;
  }

  bool contains(const LesionBox& box, double tolerance = 1e-9) const {
    for (const Point& p : box.corners()) {
      if (!contains(p, tolerance)) return false;
    }
    return true;
  }

  /// True when the disc lies fully inside [0,side]x[0,side].
  bool inside_square(double side, double tolerance = 1e-9) const {
    const double r = radius();
    return center_x - r >= -tolerance && center_x + r <= side + tolerance &&
           center_y - r >= -tolerance && center_y + r <= side + tolerance;
  }

  static DiscPatch full_image(double side) { return {0.5 * side, 0.5 * side, side}; }

  friend bool operator==(const DiscPatch&, const DiscPatch&) = default;
};

namespace detail {

inline DiscPatch disc_from_two(Point a, Point b) {
  return {0.5 * (a.x + b.x), 0.5 * (a.y + b.y), distance(a, b)};
}

inline DiscPatch disc_from_three(Point a, Point b, Point c) {
  const double bx = b.x - a.x, by = b.y - a.y;
  const double cx = c.x - a.x, cy = c.y - a.y;
  const double d = 2.0 * (bx * cy - by * cx);
  const double scale = std::max({std::abs(bx), std::abs(by), std::abs(cx), std::abs(cy), 1.0});
  if (std::abs(d) <= 1e-12 * scale * scale) {
    // Collinear: the widest pair spans the other point.
    DiscPatch best = disc_from_two(a, b);
    for (const DiscPatch cand : {disc_from_two(a, c), disc_from_two(b, c)}) {
      if (cand.diameter > best.diameter) best = cand;
    }
    return best;
  }
  const double b2 = bx * bx + by * by;
  const double c2 = cx * cx + cy * cy;
  const double ux = (cy * b2 - by * c2) / d;
  const double uy = (bx * c2 - cx * b2) / d;
  return {a.x + ux, a.y + uy, 2.0 * std::hypot(ux, uy)};
}

}  // namespace detail

/// Smallest disc containing every point (incremental Welzl construction).
inline DiscPatch minimal_enclosing_disc(std::span<const Point> points) {
  if (points.empty()) throw ValidationError("no lesions");
  constexpr double kEps = 1e-9;
  DiscPatch disc{points[0].x, points[0].y, 0.0};
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (disc.contains(points[i], kEps)) continue;
    disc = {points[i].x, points[i].y, 0.0};
    for (std::size_t j = 0; j < i; ++j) {
      if (disc.contains(points[j], kEps)) continue;
      disc = detail::disc_from_two(points[i], points[j]);
      for (std::size_t k = 0; k < j; ++k) {
        if (disc.contains(points[k], kEps)) continue;
        disc = detail::disc_from_three(points[i], points[j], points[k]);
      }
    }
  }
  return disc;
}

/// Smallest disc containing every box; a disc contains a box iff it contains its corners.
inline DiscPatch minimal_enclosing_disc(std::span<const LesionBox> boxes) {
  if (boxes.empty()) throw ValidationError("no lesions");
  std::vector<Point> corners;
  corners.reserve(boxes.size() * 4);
  for (const LesionBox& b : boxes) {
    for (const Point& p : b.corners()) corners.push_back(p);
  }
  return minimal_enclosing_disc(std::span<const Point>(corners));
}

}  // namespace currilearn
