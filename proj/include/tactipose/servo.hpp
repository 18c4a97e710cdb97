#pragma once

// Closed-loop tactile servoing.
//
// Each step renders the sensor at its current world pose (the previous move
// acts as the shear perturbation), estimates the local pose, applies a PI
// correction in the sensor frame and then advances tangentially.

#include <array>
#include <cmath>
#include <functional>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tactipose/dataset.hpp"
#include "tactipose/objects.hpp"
#include "tactipose/pose.hpp"
#include "tactipose/tactile_sim.hpp"

namespace tactipose {

struct ServoConfig {
  ObjectType object_type = ObjectType::surface;
  std::vector<double> kp;  // per label component; empty: defaults
  std::vector<double> ki;
  double step_mm = 1.0;
  double reference_depth = -3.0;
  double heading_deg = 0.0;  // surface following direction, fixed in the sensor's tangent plane
  std::size_t max_steps = 200;

  static ServoConfig defaults(ObjectType t) {
    ServoConfig c;
    c.object_type = t;
    for (auto comp : label_components(t)) {
      const bool translation = comp == Component::x || comp == Component::y || comp == Component::depth;
      c.kp.push_back(0.5);
      c.ki.push_back(translation ? 0.3 : 0.1);
    }
    return c;
  }

  Pose reference() const {
    if (object_type == ObjectType::surface) return SurfacePose{reference_depth, 0.0, 0.0};
    return EdgePose{0.0, reference_depth, 0.0, 0.0, 0.0};
  }

  void validate() const {
    const auto n = label_size(object_type);
    if (kp.size() != n || ki.size() != n)
      throw std::invalid_argument("servo gains need " + std::to_string(n) + " components");
    for (std::size_t i = 0; i < n; ++i)
      if (kp[i] < 0 || ki[i] < 0) throw std::invalid_argument("servo gains must be non-negative");
    if (!(step_mm > 0)) throw std::invalid_argument("servo step must be positive");
  }
};

/// Discrete PI law: ds = Kp e(t) + Ki sum_{t'<=t} e(t'). The accumulator
/// starts at zero and is not clamped.
class PiController {
 public:
  PiController(std::vector<double> kp, std::vector<double> ki)
      : kp_(std::move(kp)), ki_(std::move(ki)), sum_(kp_.size(), 0.0) {
    if (kp_.size() != ki_.size()) throw std::invalid_argument("gain vectors differ in length");
  }

  std::vector<double> step(std::span<const double> e) {
    if (e.size() != sum_.size()) throw std::invalid_argument("error dimension mismatch");
    std::vector<double> ds(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) {
      if (!std::isfinite(e[i])) throw std::invalid_argument("servo error is not finite");
      sum_[i] += e[i];
      ds[i] = std::fma(ki_[i], sum_[i], kp_[i] * e[i]);  // one rounding, independent of contraction
    }
    return ds;
  }

  const std::vector<double>& accumulator() const { return sum_; }
  void reset() { std::fill(sum_.begin(), sum_.end(), 0.0); }

 private:
  std::vector<double> kp_, ki_, sum_;
};

class NoContact : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exact local pose of a sensor at `sensor_to_world` relative to the tangent
/// plane (surface) or the nearest edge (edge) of the object.
inline Pose oracle_pose(const ContactObject& object, const RigidTransform& sensor_to_world,
                        ObjectType type, double contact_range = 0.0,
                        double edge_reach = 20.0) {
  const Vec3 apex = sensor_to_world.translation();
  const Mat3& r = sensor_to_world.rotation();
  const double sd = signed_distance(object, apex);
  if (type == ObjectType::surface) {
    if (sd > contact_range)
      throw NoContact("sensor apex is " + std::to_string(sd) + " mm away from the " +
                      object_name(object));
    const Vec3 q = apex - sd * surface_normal(object, apex);
    const Vec3 n = surface_normal(object, q);
    const Vec3 ns = r.transpose() * n;
    const double roll = rad_to_deg(std::asin(std::clamp(ns.y(), -1.0, 1.0)));
    const double pitch = rad_to_deg(std::atan2(-ns.x(), ns.z()));
    return SurfacePose{n.dot(apex - q), roll, pitch};
  }
  std::optional<HalfPlaneEdge::EdgeFrame> f;
  if (const auto* e = std::get_if<HalfPlaneEdge>(&object)) f = e->edge_frame(apex);
  if (const auto* b = std::get_if<RoundedBox>(&object)) f = b->edge_frame(apex);
  if (!f) throw std::invalid_argument("object '" + object_name(object) + "' has no edge");
  Mat3 frame;
  frame.col(0) = f->outward;
  frame.col(1) = f->tangent;
  frame.col(2) = f->outward.cross(f->tangent);
  const auto [roll, pitch, yaw] = matrix_to_euler(frame.transpose() * r);
  const Vec3 offset = frame.transpose() * (apex - f->point);
  // The apex may overhang the edge; require it to stay within reach of it.
  if (std::hypot(offset.x(), offset.z()) > edge_reach)
    throw NoContact("sensor apex is " + std::to_string(std::hypot(offset.x(), offset.z())) +
                    " mm from the edge of the " + object_name(object));
  return EdgePose{offset.x(), offset.z(), roll, pitch, yaw};
}

/// Maps a captured image (and, for the oracle, the true world pose) to a
/// local pose estimate.
using PoseEstimator = std::function<Pose(const TactileImage&, const RigidTransform&)>;

inline PoseEstimator oracle_estimator(ContactObject object, ObjectType type) {
  return [object = std::move(object), type](const TactileImage&, const RigidTransform& t) {
    return oracle_pose(object, t, type);
  };
}

enum class ServoStatus { completed, contact_lost, compliance_exceeded };

inline std::string_view to_string(ServoStatus s) {
  switch (s) {
    case ServoStatus::completed: return "completed";
    case ServoStatus::contact_lost: return "contact_lost";
    case ServoStatus::compliance_exceeded: return "compliance_exceeded";
  }
  return "?";
}

struct TrajectoryStep {
  std::size_t t = 0;
  RigidTransform pose;            // sensor in world at capture time
  std::vector<double> estimate;   // local pose estimate
  std::optional<std::vector<double>> truth;  // exact local pose when available
  std::vector<double> error;      // reference - estimate
  std::vector<double> delta;      // PI correction in the sensor frame
  std::size_t contacts = 0;
};

struct Trajectory {
  ObjectType object_type = ObjectType::surface;
  std::vector<TrajectoryStep> steps;
  ServoStatus status = ServoStatus::completed;
  std::string message;

  /// Mean |estimate - truth| per component over steps that have truth.
  std::vector<double> mean_abs_estimation_error() const {
    std::vector<double> acc(label_size(object_type), 0.0);
    std::size_t n = 0;
    for (const auto& s : steps) {
      if (!s.truth) continue;
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += std::abs(s.estimate[i] - (*s.truth)[i]);
      ++n;
    }
    if (n) for (auto& a : acc) a /= static_cast<double>(n);
    return acc;
  }
};

namespace detail {

// Sensor-frame motion for a PI correction vector.
inline RigidTransform correction_transform(ObjectType type, std::span<const double> ds) {
  if (type == ObjectType::surface) return RigidTransform::from_euler({0, 0, ds[0]}, ds[1], ds[2], 0.0);
  return RigidTransform::from_euler({ds[0], 0, ds[1]}, ds[2], ds[3], ds[4]);
}

}  // namespace detail

/// Runs the servo loop from `start` (sensor in world) for up to max_steps.
/// With `record_truth` the exact local pose is logged alongside the estimate.
inline Trajectory explore(const PoseEstimator& estimator, const ContactObject& object,
                          const ServoConfig& cfg, const TactileSimulator& sim,
                          const RigidTransform& start, bool record_truth = true) {
  cfg.validate();
  if (cfg.object_type == ObjectType::edge && !has_edge(object))
    throw std::invalid_argument("edge following needs an object with an edge");
  Trajectory traj;
  traj.object_type = cfg.object_type;
  PiController pi(cfg.kp, cfg.ki);
  const auto reference = to_vector(cfg.reference());
  const double h = deg_to_rad(cfg.heading_deg);
  const Vec3 heading(std::cos(h), std::sin(h), 0.0);

  RigidTransform pose = start;
  RigidTransform motion = RigidTransform::identity();
  for (std::size_t t = 0; t < cfg.max_steps; ++t) {
    TrajectoryStep step;
    step.t = t;
    step.pose = pose;
    PinState pins;
    try {
      pins = sim.contact_world(object, pose, motion);
    } catch (const ContactError& e) {
      traj.status = ServoStatus::compliance_exceeded;
      traj.message = "step " + std::to_string(t) + ": " + e.what();
      return traj;
    }
    step.contacts = pins.contact_count();
    if (step.contacts == 0) {
      traj.status = ServoStatus::contact_lost;
      traj.message = "no pins in contact at step " + std::to_string(t);
      return traj;
    }
    const auto image = sim.render(pins);
    step.estimate = to_vector(estimator(image, pose));
    if (record_truth) {
      try {
        step.truth = to_vector(oracle_pose(object, pose, cfg.object_type));
      } catch (const NoContact&) {
      }
    }
    step.error.resize(reference.size());
    for (std::size_t i = 0; i < reference.size(); ++i) step.error[i] = reference[i] - step.estimate[i];
    step.delta = pi.step(step.error);

    RigidTransform next = compose(pose, detail::correction_transform(cfg.object_type, step.delta));
    Vec3 dir;
    if (cfg.object_type == ObjectType::surface) {
      dir = heading;
    } else {
      // Edge tangent in the corrected sensor frame, from the estimated yaw.
      const double yaw = deg_to_rad(step.estimate[4] + step.delta[4]);
      dir = Vec3(std::sin(yaw), std::cos(yaw), 0.0);
    }
    if (dir.norm() < 1e-12) dir = Vec3::UnitX();
    next = compose(next, RigidTransform::from_matrix(Mat3::Identity(), cfg.step_mm * dir.normalized()));
    motion = compose(pose.inverse(), next);
    pose = next;
    traj.steps.push_back(std::move(step));
  }
  traj.status = ServoStatus::completed;
  return traj;
}

/// Sensor pose in world whose local pose relative to the object's
/// tangent frame at `surface_point` is `local`.
inline RigidTransform place_on_surface(const ContactObject& object, const Vec3& surface_point,
                                       const SurfacePose& local) {
  const Vec3 n = surface_normal(object, surface_point);
  // Tangent frame with x along the world x-axis projected onto the plane.
  Vec3 x = Vec3::UnitX() - Vec3::UnitX().dot(n) * n;
  if (x.norm() < 1e-9) x = Vec3::UnitY() - Vec3::UnitY().dot(n) * n;
  x.normalize();
  Mat3 frame;
  frame.col(0) = x;
  frame.col(1) = n.cross(x);
  frame.col(2) = n;
  const RigidTransform f = RigidTransform::from_matrix(frame, surface_point);
  return compose(f, to_transform(Pose{local}));
}

inline RigidTransform place_on_edge(const HalfPlaneEdge::EdgeFrame& f, const EdgePose& local) {
  Mat3 frame;
  frame.col(0) = f.outward;
  frame.col(1) = f.tangent;
  frame.col(2) = f.outward.cross(f.tangent);
  return compose(RigidTransform::from_matrix(frame, f.point), to_transform(Pose{local}));
}

/// Columns: t, x, y, z, roll, pitch, yaw (world), contacts, then est_<c>,
/// true_<c>, err_<c>, ds_<c> for each label component.
inline std::string trajectory_csv(const Trajectory& traj) {
  const auto comps = label_components(traj.object_type);
  std::string out = "t,x,y,z,roll,pitch,yaw,contacts";
  for (const char* prefix : {"est_", "true_", "err_", "ds_"})
    for (auto c : comps) out += "," + std::string(prefix) + std::string(to_string(c));
  out += "\r\n";
  auto num = [](double v) { return detail::format_double(v); };
  for (const auto& s : traj.steps) {
    const Vec3& p = s.pose.translation();
    const auto e = matrix_to_euler(s.pose.rotation());
    out += std::to_string(s.t) + "," + num(p.x()) + "," + num(p.y()) + "," + num(p.z()) + "," +
           num(e[0]) + "," + num(e[1]) + "," + num(e[2]) + "," + std::to_string(s.contacts);
    for (double v : s.estimate) out += "," + num(v);
    for (std::size_t i = 0; i < comps.size(); ++i) out += "," + (s.truth ? num((*s.truth)[i]) : "");
    for (double v : s.error) out += "," + num(v);
    for (double v : s.delta) out += "," + num(v);
    out += "\r\n";
  }
  return out;
}

/// Path projected onto the world x-y and x-z planes, with the sensor axis
/// drawn as a short glyph every few steps.
inline std::string trajectory_svg(const Trajectory& traj, double glyph_mm = 6.0,
                                  std::size_t glyph_every = 10) {
  constexpr double panel = 360.0, margin = 30.0;
  std::ostringstream svg;
  svg.setf(std::ios::fixed);
  svg.precision(2);
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << 2 * panel + 3 * margin
      << "\" height=\"" << panel + 2 * margin + 20 << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  const std::array<std::pair<int, int>, 2> planes = {{{0, 1}, {0, 2}}};
  const std::array<const char*, 2> titles = {"top view (x-y)", "side view (x-z)"};
  for (std::size_t k = 0; k < planes.size(); ++k) {
    const auto [a, b] = planes[k];
    double lo_a = 1e300, hi_a = -1e300, lo_b = 1e300, hi_b = -1e300;
    for (const auto& s : traj.steps) {
      const Vec3& p = s.pose.translation();
      lo_a = std::min(lo_a, p[a]);
      hi_a = std::max(hi_a, p[a]);
      lo_b = std::min(lo_b, p[b]);
      hi_b = std::max(hi_b, p[b]);
    }
    const double span = std::max({hi_a - lo_a, hi_b - lo_b, 1.0}) + 2 * glyph_mm;
    const double scale = panel / span;
    const double ox = margin + static_cast<double>(k) * (panel + margin);
    const double ca = 0.5 * (lo_a + hi_a), cb = 0.5 * (lo_b + hi_b);
    auto px = [&](double v) { return ox + panel / 2 + (v - ca) * scale; };
    auto py = [&](double v) { return margin + panel / 2 - (v - cb) * scale; };
    svg << "<rect x=\"" << ox << "\" y=\"" << margin << "\" width=\"" << panel << "\" height=\""
        << panel << "\" fill=\"none\" stroke=\"#999\"/>\n"
        << "<text x=\"" << ox << "\" y=\"" << margin - 8 << "\" font-size=\"14\">" << titles[k]
        << "</text>\n";
    if (traj.steps.empty()) continue;
    svg << "<polyline fill=\"none\" stroke=\"#c00\" stroke-width=\"1.5\" points=\"";
    for (const auto& s : traj.steps) {
      const Vec3& p = s.pose.translation();
      svg << px(p[a]) << "," << py(p[b]) << " ";
    }
    svg << "\"/>\n";
    for (std::size_t i = 0; i < traj.steps.size(); i += glyph_every) {
      const auto& s = traj.steps[i];
      const Vec3& p = s.pose.translation();
      const Vec3 q = p + glyph_mm * s.pose.rotation().col(2);
      svg << "<line x1=\"" << px(p[a]) << "\" y1=\"" << py(p[b]) << "\" x2=\"" << px(q[a])
          << "\" y2=\"" << py(q[b]) << "\" stroke=\"#06c\"/>\n";
    }
  }
  svg << "<text x=\"" << margin << "\" y=\"" << panel + 2 * margin + 10
      << "\" font-size=\"12\">status: " << to_string(traj.status) << ", steps: "
      << traj.steps.size() << "</text>\n</svg>\n";
  return svg.str();
}

}  // namespace tactipose
