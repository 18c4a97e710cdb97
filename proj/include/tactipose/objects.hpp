#pragma once

// Contact objects for the simulator and the servo loop.
//
// Every object is a solid described by a signed distance (negative inside)
// and an outward unit normal. Heightfields use the first-order distance
// (z - h) / sqrt(1 + |grad h|^2), which has the correct sign everywhere and
// is exact on planar patches.

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <variant>
#include <vector>

#include "tactipose/pose.hpp"

namespace tactipose {

/// Solid half-space z <= 0.
struct Plane {
  double signed_distance(const Vec3& p) const { return p.z(); }
  Vec3 normal(const Vec3&) const { return Vec3::UnitZ(); }
};

namespace detail {

// Distance for the quarter-space {u <= 0, z <= 0} given the in-plane signed
// distance u to a boundary curve and the height z above the top face.
inline double quarter_space_distance(double u, double z) {
  if (u <= 0.0 && z <= 0.0) return std::max(u, z);
  const double a = std::max(u, 0.0);
  const double b = std::max(z, 0.0);
  return std::sqrt(a * a + b * b);
}

// Gradient of quarter_space_distance as (d/du, d/dz).
inline std::pair<double, double> quarter_space_gradient(double u, double z) {
  if (u <= 0.0 && z <= 0.0) return u > z ? std::pair{1.0, 0.0} : std::pair{0.0, 1.0};
  const double a = std::max(u, 0.0);
  const double b = std::max(z, 0.0);
  const double n = std::sqrt(a * a + b * b);
  return {a / n, b / n};
}

}  // namespace detail

/// Flat top face z = 0 truncated by a straight boundary at x = edge_x
/// running along y; the solid occupies x <= edge_x, z <= 0.
struct HalfPlaneEdge {
  double edge_x = 0.0;

  double signed_distance(const Vec3& p) const {
    return detail::quarter_space_distance(p.x() - edge_x, p.z());
  }
  Vec3 normal(const Vec3& p) const {
    const auto [gu, gz] = detail::quarter_space_gradient(p.x() - edge_x, p.z());
    return {gu, 0.0, gz};
  }

  /// Nearest point on the boundary line, outward direction, tangent.
  struct EdgeFrame {
    Vec3 point;
    Vec3 outward;
    Vec3 tangent;
  };
  EdgeFrame edge_frame(const Vec3& p) const {
    return {{edge_x, p.y(), 0.0}, Vec3::UnitX(), Vec3::UnitY()};
  }
};

/// Ball of given radius; solid inside.
struct Sphere {
  Vec3 center = Vec3::Zero();
  double radius = 60.0;

  double signed_distance(const Vec3& p) const { return (p - center).norm() - radius; }
  Vec3 normal(const Vec3& p) const {
    const Vec3 d = p - center;
    const double n = d.norm();
    return n > 0.0 ? Vec3(d / n) : Vec3(Vec3::UnitZ());
  }
};

/// Extruded rounded rectangle with top face z = 0: a box-like container top
/// whose rim is a closed edge contour.
struct RoundedBox {
  double half_x = 60.0;
  double half_y = 40.0;
  double corner_radius = 20.0;

  // In-plane signed distance to the rounded rectangle and its gradient.
  std::pair<double, Eigen::Vector2d> planar(double x, double y) const {
    const double qx = std::abs(x) - (half_x - corner_radius);
    const double qy = std::abs(y) - (half_y - corner_radius);
    const double sx = x < 0 ? -1.0 : 1.0;
    const double sy = y < 0 ? -1.0 : 1.0;
    if (qx > 0.0 && qy > 0.0) {
      const double n = std::hypot(qx, qy);
      return {n - corner_radius, {sx * qx / n, sy * qy / n}};
    }
    if (qx > qy) return {qx - corner_radius, {sx, 0.0}};
    return {qy - corner_radius, {0.0, sy}};
  }

  double signed_distance(const Vec3& p) const {
    return detail::quarter_space_distance(planar(p.x(), p.y()).first, p.z());
  }
  Vec3 normal(const Vec3& p) const {
    const auto [u, g] = planar(p.x(), p.y());
    const auto [gu, gz] = detail::quarter_space_gradient(u, p.z());
    return {gu * g.x(), gu * g.y(), gz};
  }

  HalfPlaneEdge::EdgeFrame edge_frame(const Vec3& p) const {
    const auto [u, g] = planar(p.x(), p.y());
    const Vec3 outward(g.x(), g.y(), 0.0);
    const Vec3 point = Vec3(p.x(), p.y(), 0.0) - u * outward;
    return {point, outward, Vec3::UnitZ().cross(outward)};
  }
};

/// Solid below a bilinearly interpolated height grid. Queries outside the
/// footprint clamp to the border heights.
class Heightfield {
 public:
  Heightfield() = default;
  Heightfield(double x0, double y0, double cell, std::size_t nx, std::size_t ny,
              std::vector<double> heights)
      : x0_(x0), y0_(y0), cell_(cell), nx_(nx), ny_(ny), h_(std::move(heights)) {
    if (nx_ < 2 || ny_ < 2 || cell_ <= 0.0 || h_.size() != nx_ * ny_)
      throw std::invalid_argument("heightfield grid must be rectangular with at least 2x2 nodes");
    for (double v : h_)
      if (!std::isfinite(v)) throw std::invalid_argument("heightfield contains non-finite height");
  }

  static Heightfield from_function(double x0, double y0, double cell, std::size_t nx,
                                   std::size_t ny, const std::function<double(double, double)>& f) {
    std::vector<double> h(nx * ny);
    for (std::size_t j = 0; j < ny; ++j)
      for (std::size_t i = 0; i < nx; ++i)
        h[j * nx + i] = f(x0 + static_cast<double>(i) * cell, y0 + static_cast<double>(j) * cell);
    return {x0, y0, cell, nx, ny, std::move(h)};
  }

  /// Gaussian bump of given height and width centred at the origin on a
  /// square footprint of side 2*extent.
  static Heightfield bump(double height = 12.0, double sigma = 40.0, double extent = 160.0,
                          double cell = 1.0) {
    const auto n = static_cast<std::size_t>(std::lround(2.0 * extent / cell)) + 1;
    return from_function(-extent, -extent, cell, n, n, [&](double x, double y) {
      return height * std::exp(-(x * x + y * y) / (2.0 * sigma * sigma));
    });
  }

  double x0() const { return x0_; }
  double y0() const { return y0_; }
  double cell() const { return cell_; }
  std::size_t nx() const { return nx_; }
  std::size_t ny() const { return ny_; }
  const std::vector<double>& heights() const { return h_; }

  /// Height and gradient (dh/dx, dh/dy) at (x, y).
  std::tuple<double, double, double> sample(double x, double y) const {
    const double fx = std::clamp((x - x0_) / cell_, 0.0, static_cast<double>(nx_ - 1));
    const double fy = std::clamp((y - y0_) / cell_, 0.0, static_cast<double>(ny_ - 1));
    const auto i = std::min(static_cast<std::size_t>(fx), nx_ - 2);
    const auto j = std::min(static_cast<std::size_t>(fy), ny_ - 2);
    const double tx = fx - static_cast<double>(i);
    const double ty = fy - static_cast<double>(j);
    const double h00 = at(i, j), h10 = at(i + 1, j), h01 = at(i, j + 1), h11 = at(i + 1, j + 1);
    const double h = (1 - tx) * (1 - ty) * h00 + tx * (1 - ty) * h10 + (1 - tx) * ty * h01 +
                     tx * ty * h11;
    const double dx = ((1 - ty) * (h10 - h00) + ty * (h11 - h01)) / cell_;
    const double dy = ((1 - tx) * (h01 - h00) + tx * (h11 - h10)) / cell_;
    return {h, dx, dy};
  }

  double signed_distance(const Vec3& p) const {
    const auto [h, dx, dy] = sample(p.x(), p.y());
    return (p.z() - h) / std::sqrt(1.0 + dx * dx + dy * dy);
  }
  Vec3 normal(const Vec3& p) const {
    const auto [h, dx, dy] = sample(p.x(), p.y());
    return Vec3(-dx, -dy, 1.0).normalized();
  }

 private:
  double at(std::size_t i, std::size_t j) const { return h_[j * nx_ + i]; }

  double x0_ = 0.0, y0_ = 0.0, cell_ = 1.0;
  std::size_t nx_ = 0, ny_ = 0;
  std::vector<double> h_;
};

using ContactObject = std::variant<Plane, HalfPlaneEdge, Heightfield, Sphere, RoundedBox>;

inline double signed_distance(const ContactObject& obj, const Vec3& p) {
  return std::visit([&](const auto& o) { return o.signed_distance(p); }, obj);
}

inline Vec3 surface_normal(const ContactObject& obj, const Vec3& p) {
  return std::visit([&](const auto& o) -> Vec3 { return o.normal(p); }, obj);
}

/// True for objects whose natural pose parametrisation is an edge.
inline bool has_edge(const ContactObject& obj) {
  return std::holds_alternative<HalfPlaneEdge>(obj) || std::holds_alternative<RoundedBox>(obj);
}

inline std::string object_name(const ContactObject& obj) {
  switch (obj.index()) {
    case 0: return "plane";
    case 1: return "edge";
    case 2: return "heightfield";
    case 3: return "sphere";
    default: return "rounded_box";
  }
}

}  // namespace tactipose
