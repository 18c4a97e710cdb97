#pragma once

// Contact pose types, parameter ranges and rigid transforms.
//
// Conventions
// ~~~~~~~~~~~
// Lengths are millimetres, angles are degrees; radians appear only inside
// trig calls. The sensor frame has +z pointing away from the object, with
// the dome apex at the origin. A pose places that frame relative to the
// local object frame (surface plane z = 0, object below):
//
//   translation = (x, y, depth)
//   rotation    = Rx(roll) * Ry(pitch) * Rz(yaw)   (intrinsic x, y', z'')
//
// so depth < 0 means the apex is pressed into the object.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Geometry>

#include "tactipose/random.hpp"

namespace tactipose {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

inline constexpr double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline constexpr double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

enum class Component { x, y, depth, roll, pitch, yaw };
inline constexpr std::size_t kNumComponents = 6;

enum class ObjectType { surface, edge };

inline constexpr std::string_view to_string(Component c) {
  switch (c) {
    case Component::x: return "x";
    case Component::y: return "y";
    case Component::depth: return "depth";
    case Component::roll: return "roll";
    case Component::pitch: return "pitch";
    case Component::yaw: return "yaw";
  }
  return "?";
}

inline constexpr std::string_view to_string(ObjectType t) {
  return t == ObjectType::surface ? "surface" : "edge";
}

inline ObjectType object_type_from_string(std::string_view s) {
  if (s == "surface") return ObjectType::surface;
  if (s == "edge") return ObjectType::edge;
  throw std::invalid_argument("unknown object type '" + std::string(s) + "'");
}

inline std::optional<Component> component_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kNumComponents; ++i) {
    const auto c = static_cast<Component>(i);
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

inline constexpr bool is_angular(Component c) {
  return c == Component::roll || c == Component::pitch || c == Component::yaw;
}

/// Label components, in output order, for each object type.
inline std::span<const Component> label_components(ObjectType t) {
  static constexpr std::array<Component, 3> surface{Component::depth, Component::roll,
                                                    Component::pitch};
  static constexpr std::array<Component, 5> edge{Component::x, Component::depth, Component::roll,
                                                 Component::pitch, Component::yaw};
  if (t == ObjectType::surface) return surface;
  return edge;
}

inline std::size_t label_size(ObjectType t) { return label_components(t).size(); }

struct Interval {
  double lo = 0.0;
  double hi = 0.0;

  double max_abs() const { return std::max(std::abs(lo), std::abs(hi)); }
  double half_width() const { return 0.5 * (hi - lo); }
  bool contains(double v) const { return v >= lo && v <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

class PoseRanges {
 public:
  PoseRanges() = default;

  PoseRanges& set(Component c, Interval iv) {
    if (!(iv.lo <= iv.hi))
      throw std::invalid_argument("range for " + std::string(to_string(c)) + " has lo > hi");
    ranges_[index(c)] = iv;
    return *this;
  }

  bool has(Component c) const { return ranges_[index(c)].has_value(); }

  const Interval& at(Component c) const {
    const auto& r = ranges_[index(c)];
    if (!r) throw std::invalid_argument("missing range for component " + std::string(to_string(c)));
    return *r;
  }

  std::vector<Component> present() const {
    std::vector<Component> out;
    for (std::size_t i = 0; i < kNumComponents; ++i)
      if (ranges_[i]) out.push_back(static_cast<Component>(i));
    return out;
  }

  /// Labelled ranges must cover exactly the object's label components.
  void validate_labels(ObjectType t) const {
    const auto want = label_components(t);
    for (auto c : want)
      if (!has(c))
        throw std::invalid_argument(std::string(to_string(t)) + " label ranges are missing " +
                                    std::string(to_string(c)));
    if (present().size() != want.size())
      throw std::invalid_argument(std::string(to_string(t)) +
                                  " label ranges contain extra components");
  }

  friend bool operator==(const PoseRanges&, const PoseRanges&) = default;

 private:
  static std::size_t index(Component c) { return static_cast<std::size_t>(c); }
  std::array<std::optional<Interval>, kNumComponents> ranges_{};
};

/// Label ranges for the labelled pose components.
inline PoseRanges default_label_ranges(ObjectType t) {
  PoseRanges r;
  if (t == ObjectType::edge) r.set(Component::x, {-5, 5});
  r.set(Component::depth, {-5, -1}).set(Component::roll, {-15, 15}).set(Component::pitch, {-15, 15});
  if (t == ObjectType::edge) r.set(Component::yaw, {-45, 45});
  return r;
}

/// Unlabelled perturbation ranges applied on top of every sample.
inline PoseRanges default_perturbation_ranges() {
  PoseRanges r;
  r.set(Component::x, {-5, 5})
      .set(Component::y, {-5, 5})
      .set(Component::depth, {0, 0})
      .set(Component::roll, {-5, 5})
      .set(Component::pitch, {-5, 5})
      .set(Component::yaw, {-5, 5});
  return r;
}

struct SurfacePose {
  double depth = 0.0;
  double roll = 0.0;
  double pitch = 0.0;
  friend bool operator==(const SurfacePose&, const SurfacePose&) = default;
};

struct EdgePose {
  double x_horizontal = 0.0;
  double depth = 0.0;
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  friend bool operator==(const EdgePose&, const EdgePose&) = default;
};

using Pose = std::variant<SurfacePose, EdgePose>;

inline ObjectType object_type_of(const Pose& p) {
  return std::holds_alternative<SurfacePose>(p) ? ObjectType::surface : ObjectType::edge;
}

/// Label vector in label_components() order.
inline std::vector<double> to_vector(const Pose& p) {
  if (const auto* s = std::get_if<SurfacePose>(&p)) return {s->depth, s->roll, s->pitch};
  const auto& e = std::get<EdgePose>(p);
  return {e.x_horizontal, e.depth, e.roll, e.pitch, e.yaw};
}

inline Pose pose_from_vector(ObjectType t, std::span<const double> v) {
  if (v.size() != label_size(t))
    throw std::invalid_argument("label vector has " + std::to_string(v.size()) +
                                " components, expected " + std::to_string(label_size(t)));
  if (t == ObjectType::surface) return SurfacePose{v[0], v[1], v[2]};
  return EdgePose{v[0], v[1], v[2], v[3], v[4]};
}

/// Unlabelled shear motion; d_depth is always zero.
struct Perturbation {
  double dx = 0.0;
  double dy = 0.0;
  double d_depth = 0.0;
  double d_roll = 0.0;
  double d_pitch = 0.0;
  double d_yaw = 0.0;

  std::array<double, 6> components() const { return {dx, dy, d_depth, d_roll, d_pitch, d_yaw}; }
  friend bool operator==(const Perturbation&, const Perturbation&) = default;
};

inline Mat3 euler_to_matrix(double roll_deg, double pitch_deg, double yaw_deg) {
  using Eigen::AngleAxisd;
  return (AngleAxisd(deg_to_rad(roll_deg), Vec3::UnitX()) *
          AngleAxisd(deg_to_rad(pitch_deg), Vec3::UnitY()) *
          AngleAxisd(deg_to_rad(yaw_deg), Vec3::UnitZ()))
      .toRotationMatrix();
}

/// Inverse of euler_to_matrix for |pitch| < 90 deg. Returns {roll, pitch, yaw}.
inline std::array<double, 3> matrix_to_euler(const Mat3& r) {
  const double pitch = std::asin(std::clamp(r(0, 2), -1.0, 1.0));
  const double roll = std::atan2(-r(1, 2), r(2, 2));
  const double yaw = std::atan2(-r(0, 1), r(0, 0));
  return {rad_to_deg(roll), rad_to_deg(pitch), rad_to_deg(yaw)};
}

/// Rigid motion stored as translation plus axis-angle rotation.
class RigidTransform {
 public:
  RigidTransform() = default;

  RigidTransform(const Vec3& translation, double angle_deg, const Vec3& axis)
      : translation_(translation) {
    set_rotation(Eigen::AngleAxisd(deg_to_rad(angle_deg), axis.normalized()).toRotationMatrix());
  }

  static RigidTransform identity() { return {}; }

  static RigidTransform from_matrix(const Mat3& rotation, const Vec3& translation) {
    RigidTransform t;
    t.translation_ = translation;
    t.set_rotation(rotation);
    return t;
  }

  static RigidTransform from_euler(const Vec3& translation, double roll, double pitch, double yaw) {
    return from_matrix(euler_to_matrix(roll, pitch, yaw), translation);
  }

  const Vec3& translation() const { return translation_; }
  double angle_deg() const { return angle_deg_; }
  const Vec3& axis() const { return axis_; }
  const Mat3& rotation() const { return rotation_; }

  Vec3 apply(const Vec3& p) const { return rotation_ * p + translation_; }
  Vec3 apply_direction(const Vec3& d) const { return rotation_ * d; }

  RigidTransform inverse() const {
    const Mat3 rt = rotation_.transpose();
    return from_matrix(rt, -(rt * translation_));
  }

  Eigen::Matrix4d homogeneous() const {
    Eigen::Matrix4d h = Eigen::Matrix4d::Identity();
    h.topLeftCorner<3, 3>() = rotation_;
    h.topRightCorner<3, 1>() = translation_;
    return h;
  }

 private:
  void set_rotation(const Mat3& r) {
    rotation_ = r;
    const Eigen::AngleAxisd aa(r);
    angle_deg_ = rad_to_deg(aa.angle());
    if (aa.angle() == 0.0 || !aa.axis().allFinite()) {
      angle_deg_ = 0.0;
      axis_ = Vec3::UnitZ();
    } else {
      axis_ = aa.axis().normalized();
    }
  }

  Vec3 translation_ = Vec3::Zero();
  double angle_deg_ = 0.0;
  Vec3 axis_ = Vec3::UnitZ();
  Mat3 rotation_ = Mat3::Identity();
};

/// a ∘ b: apply b (expressed in a's frame) then a.
inline RigidTransform compose(const RigidTransform& a, const RigidTransform& b) {
  return RigidTransform::from_matrix(a.rotation() * b.rotation(),
                                     a.rotation() * b.translation() + a.translation());
}

inline RigidTransform to_transform(const Pose& p) {
  if (const auto* s = std::get_if<SurfacePose>(&p))
    return RigidTransform::from_euler({0, 0, s->depth}, s->roll, s->pitch, 0.0);
  const auto& e = std::get<EdgePose>(p);
  return RigidTransform::from_euler({e.x_horizontal, 0, e.depth}, e.roll, e.pitch, e.yaw);
}

inline RigidTransform to_transform(const Perturbation& d) {
  return RigidTransform::from_euler({d.dx, d.dy, d.d_depth}, d.d_roll, d.d_pitch, d.d_yaw);
}

template <typename Random>
Pose sample_pose(const PoseRanges& ranges, ObjectType t, Random& rng) {
  const auto comps = label_components(t);
  std::vector<double> v;
  v.reserve(comps.size());
  for (auto c : comps) {
    const auto& iv = ranges.at(c);
    v.push_back(rng.uniform(iv.lo, iv.hi));
  }
  return pose_from_vector(t, v);
}

template <typename Random>
Perturbation sample_perturbation(const PoseRanges& ranges, Random& rng) {
  Perturbation p;
  const auto draw = [&](Component c) {
    const auto& iv = ranges.at(c);
    return rng.uniform(iv.lo, iv.hi);
  };
  p.dx = draw(Component::x);
  p.dy = draw(Component::y);
  p.d_roll = draw(Component::roll);
  p.d_pitch = draw(Component::pitch);
  p.d_yaw = draw(Component::yaw);
  return p;
}

/// Largest |bound| per label component, in label order.
inline std::vector<double> label_scales(const PoseRanges& ranges, ObjectType t) {
  std::vector<double> out;
  for (auto c : label_components(t)) {
    const double m = ranges.at(c).max_abs();
    if (m == 0.0)
      throw std::invalid_argument("zero maximum bound for component " +
                                  std::string(to_string(c)));
    out.push_back(m);
  }
  return out;
}

/// weight_c = 1 / max|bound_c|^2, giving unit loss for an error of one range maximum.
inline std::vector<double> loss_weights(const PoseRanges& ranges, ObjectType t) {
  auto w = label_scales(ranges, t);
  for (auto& v : w) v = 1.0 / (v * v);
  return w;
}

}  // namespace tactipose
