#pragma once

// Synthetic optical tactile sensor.
//
// A hemispherical-cap skin carries a hexagonal grid of pin markers. Under
// contact, pins that would penetrate the object slide along the skin normal
// (towards the dome centre) until they reach the object surface. Pins in
// contact also carry a stick-shear offset equal to the tangential part of the
// motion that brought the sensor from its first-contact pose to the capture
// pose, scaled by `stick` and attenuated by exp(-r / shear_length) with r the
// distance to the contact centroid. Free pins follow their contacting
// neighbours through an exponential membrane coupling. The binary image is an
// orthographic top-down view of the displaced pin tips drawn as filled discs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "tactipose/checksum.hpp"
#include "tactipose/objects.hpp"
#include "tactipose/pose.hpp"

namespace tactipose {

struct SensorGeometry {
  double tip_diameter = 40.0;  // mm
  double pin_spacing = 4.0;    // mm
  double dome_radius = 25.0;   // mm
  int image_size = 128;        // pixels per side
  double field_of_view = 48.0; // mm imaged across the image width
  double marker_radius = 0.0;  // pixels; 0 selects 0.35 * pin pitch in pixels

  double pixel_size() const { return field_of_view / image_size; }
  double marker_radius_px() const {
    return marker_radius > 0.0 ? marker_radius : 0.35 * pin_spacing / pixel_size();
  }

  void validate() const {
    if (tip_diameter <= 0 || pin_spacing <= 0 || image_size < 8)
      throw std::invalid_argument("sensor geometry: non-positive size");
    if (dome_radius < 0.5 * tip_diameter)
      throw std::invalid_argument("sensor geometry: dome radius smaller than tip radius");
    if (field_of_view < tip_diameter)
      throw std::invalid_argument("sensor geometry: field of view does not cover the tip");
    if (2.0 * marker_radius_px() >= pin_spacing / pixel_size())
      throw std::invalid_argument("sensor geometry: marker discs overlap at rest");
  }

  friend bool operator==(const SensorGeometry&, const SensorGeometry&) = default;
};

struct ContactParams {
  double stick = 0.7;              // mu_s
  double shear_length = 10.0;      // lambda, mm
  double coupling_length = 4.0;    // membrane coupling decay, mm
  double compliance_limit = 6.0;   // max apex indentation, mm

  friend bool operator==(const ContactParams&, const ContactParams&) = default;
};

inline void to_json(nlohmann::json& j, const SensorGeometry& g) {
  j = {{"tip_diameter", g.tip_diameter}, {"pin_spacing", g.pin_spacing},
       {"dome_radius", g.dome_radius},   {"image_size", g.image_size},
       {"field_of_view", g.field_of_view}, {"marker_radius", g.marker_radius}};
}
inline void from_json(const nlohmann::json& j, SensorGeometry& g) {
  SensorGeometry d;
  g.tip_diameter = j.value("tip_diameter", d.tip_diameter);
  g.pin_spacing = j.value("pin_spacing", d.pin_spacing);
  g.dome_radius = j.value("dome_radius", d.dome_radius);
  g.image_size = j.value("image_size", d.image_size);
  g.field_of_view = j.value("field_of_view", d.field_of_view);
  g.marker_radius = j.value("marker_radius", d.marker_radius);
}
inline void to_json(nlohmann::json& j, const ContactParams& c) {
  j = {{"stick", c.stick}, {"shear_length", c.shear_length},
       {"coupling_length", c.coupling_length}, {"compliance_limit", c.compliance_limit}};
}
inline void from_json(const nlohmann::json& j, ContactParams& c) {
  ContactParams d;
  c.stick = j.value("stick", d.stick);
  c.shear_length = j.value("shear_length", d.shear_length);
  c.coupling_length = j.value("coupling_length", d.coupling_length);
  c.compliance_limit = j.value("compliance_limit", d.compliance_limit);
}

class ContactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Pin positions in the sensor frame.
struct PinState {
  std::vector<Vec3> rest;
  std::vector<Vec3> displaced;
  std::vector<std::uint8_t> in_contact;

  std::size_t contact_count() const {
    return static_cast<std::size_t>(std::count(in_contact.begin(), in_contact.end(), 1));
  }
};

class TactileImage {
 public:
  TactileImage() = default;
  explicit TactileImage(int size) : size_(size), pixels_(static_cast<std::size_t>(size) * size) {}
  TactileImage(int size, std::vector<std::uint8_t> pixels) : size_(size), pixels_(std::move(pixels)) {
    if (pixels_.size() != static_cast<std::size_t>(size) * size)
      throw std::invalid_argument("tactile image buffer does not match its size");
    for (auto p : pixels_)
      if (p > 1) throw std::invalid_argument("tactile image is not binary");
  }

  int size() const { return size_; }
  std::uint8_t operator()(int row, int col) const { return pixels_[index(row, col)]; }
  std::uint8_t& operator()(int row, int col) { return pixels_[index(row, col)]; }
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }

  std::size_t count_on() const {
    return static_cast<std::size_t>(std::count(pixels_.begin(), pixels_.end(), 1));
  }

  /// Mean (col, row) of lit pixels.
  std::pair<double, double> centroid() const {
    double sx = 0, sy = 0, n = 0;
    for (int r = 0; r < size_; ++r)
      for (int c = 0; c < size_; ++c)
        if ((*this)(r, c)) {
          sx += c;
          sy += r;
          n += 1;
        }
    return n > 0 ? std::pair{sx / n, sy / n} : std::pair{0.0, 0.0};
  }

  friend bool operator==(const TactileImage&, const TactileImage&) = default;

 private:
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * static_cast<std::size_t>(size_) +
           static_cast<std::size_t>(col);
  }
  int size_ = 0;
  std::vector<std::uint8_t> pixels_;
};

/// Binary PGM (P5, 8-bit, 0/255) encoding of a tactile image.
inline std::string encode_pgm(const TactileImage& img) {
  std::string out = "P5\n" + std::to_string(img.size()) + " " + std::to_string(img.size()) + "\n255\n";
  out.reserve(out.size() + img.pixels().size());
  for (auto p : img.pixels()) out.push_back(static_cast<char>(p ? 255 : 0));
  return out;
}

class PgmError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline TactileImage decode_pgm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() -> std::string {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const auto start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  if (token() != "P5") throw PgmError("not a binary PGM (P5)");
  const auto w = token(), h = token(), maxval = token();
  if (w.empty() || h.empty() || maxval != "255") throw PgmError("unsupported PGM header");
  const int width = std::stoi(w), height = std::stoi(h);
  if (width != height || width <= 0) throw PgmError("tactile images must be square");
  ++pos;  // single whitespace after maxval
  const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  if (bytes.size() < pos + n) throw PgmError("truncated PGM pixel data");
  if (bytes.size() > pos + n) throw PgmError("trailing bytes after PGM pixel data");
  std::vector<std::uint8_t> px(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = static_cast<std::uint8_t>(bytes[pos + i]);
    if (v != 0 && v != 255) throw PgmError("PGM pixel is not 0 or 255");
    px[i] = v ? 1 : 0;
  }
  return {width, std::move(px)};
}

class TactileSimulator {
 public:
  explicit TactileSimulator(SensorGeometry geometry = {}, ContactParams params = {})
      : geometry_(geometry), params_(params) {
    geometry_.validate();
    build_pins();
    rest_image_ = render(rest_state());
  }

  const SensorGeometry& geometry() const { return geometry_; }
  const ContactParams& params() const { return params_; }
  const std::vector<Vec3>& rest_pins() const { return rest_; }
  const TactileImage& rest_image() const { return rest_image_; }
  Vec3 dome_centre() const { return {0.0, 0.0, geometry_.dome_radius}; }

  nlohmann::json config_json() const {
    return {{"geometry", geometry_}, {"contact", params_}};
  }
  std::string config_hash() const { return sha256_hex(config_json().dump()); }

  static TactileSimulator from_json(const nlohmann::json& j) {
    return TactileSimulator(j.value("geometry", nlohmann::json::object()).get<SensorGeometry>(),
                            j.value("contact", nlohmann::json::object()).get<ContactParams>());
  }

  static TactileSimulator from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open simulator config " + path.string());
    return from_json(nlohmann::json::parse(in));
  }

  PinState rest_state() const {
    return {rest_, rest_, std::vector<std::uint8_t>(rest_.size(), 0)};
  }

  /// Contact at a labelled pose, first touched at pose ∘ perturbation⁻¹.
  PinState contact(const ContactObject& object, const Pose& pose, const Perturbation& pert) const {
    const double depth =
        std::visit([](const auto& p) { return p.depth; }, pose);
    if (-depth > params_.compliance_limit)
      throw ContactError("depth " + std::to_string(depth) + " mm exceeds compliance limit of " +
                         std::to_string(params_.compliance_limit) + " mm");
    return contact_world(object, to_transform(pose), to_transform(pert));
  }

  /// Contact with the sensor at `sensor_to_world`; `motion` is the last move
  /// of the sensor expressed in its own frame, so the first-contact pose is
  /// sensor_to_world ∘ motion⁻¹.
  PinState contact_world(const ContactObject& object, const RigidTransform& sensor_to_world,
                         const RigidTransform& motion) const {
    const RigidTransform start = compose(sensor_to_world, motion.inverse());
    const double apex_sd = signed_distance(object, sensor_to_world.translation());
    if (-apex_sd > params_.compliance_limit + 1e-9)
      throw ContactError("apex indentation " + std::to_string(-apex_sd) +
                         " mm exceeds compliance limit");

    const std::size_t n = rest_.size();
    PinState state = rest_state();
    std::vector<Vec3> world(n), moved(n);
    std::vector<Vec3> normals(n);
    const Vec3 centre_w = sensor_to_world.apply(dome_centre());

    // Normal indentation.
    std::size_t n_contact = 0;
    Vec3 centroid = Vec3::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      world[i] = sensor_to_world.apply(rest_[i]);
      moved[i] = world[i];
      if (signed_distance(object, world[i]) < 0.0) {
        moved[i] = project_out(object, world[i], centre_w);
        normals[i] = surface_normal(object, moved[i]);
        state.in_contact[i] = 1;
        centroid += moved[i];
        ++n_contact;
      }
    }
    if (n_contact == 0) return state;
    centroid /= static_cast<double>(n_contact);

    // Stick shear from the approach motion.
    for (std::size_t i = 0; i < n; ++i) {
      if (!state.in_contact[i]) continue;
      const Vec3 m = world[i] - start.apply(rest_[i]);
      const Vec3 tangential = m - m.dot(normals[i]) * normals[i];
      const double r = (moved[i] - centroid).norm();
      moved[i] += params_.stick * std::exp(-r / params_.shear_length) * tangential;
    }

    // Membrane coupling of free pins to their contacting neighbours.
    std::vector<Vec3> disp(n, Vec3::Zero());
    for (std::size_t i = 0; i < n; ++i)
      if (state.in_contact[i]) disp[i] = moved[i] - world[i];
    for (std::size_t i = 0; i < n; ++i) {
      if (state.in_contact[i]) continue;
      double wsum = 0.0, dmin = std::numeric_limits<double>::infinity();
      Vec3 acc = Vec3::Zero();
      for (std::size_t j = 0; j < n; ++j) {
        if (!state.in_contact[j]) continue;
        const double d = (world[i] - world[j]).norm();
        const double w = std::exp(-d / params_.coupling_length);
        acc += w * disp[j];
        wsum += w;
        dmin = std::min(dmin, d);
      }
      moved[i] = world[i] + std::exp(-dmin / params_.coupling_length) * (acc / wsum);
    }

    // Shear and coupling act tangentially to the sensor, not the object, so
    // re-project anything pushed inside.
    for (std::size_t i = 0; i < n; ++i)
      if (signed_distance(object, moved[i]) < 0.0)
        moved[i] = project_out(object, moved[i], centre_w);

    const RigidTransform to_sensor = sensor_to_world.inverse();
    for (std::size_t i = 0; i < n; ++i) state.displaced[i] = to_sensor.apply(moved[i]);
    return state;
  }

  TactileImage render(const PinState& pins) const {
    const int size = geometry_.image_size;
    TactileImage img(size);
    const double pix = geometry_.pixel_size();
    const double half = 0.5 * geometry_.field_of_view;
    const double rad = geometry_.marker_radius_px();
    const double rad2 = rad * rad;
    for (const auto& p : pins.displaced) {
      // Column grows with +x, row grows with -y.
      const double cx = (p.x() + half) / pix;
      const double cy = (half - p.y()) / pix;
      const int c0 = std::max(0, static_cast<int>(std::floor(cx - rad)));
      const int c1 = std::min(size - 1, static_cast<int>(std::ceil(cx + rad)));
      const int r0 = std::max(0, static_cast<int>(std::floor(cy - rad)));
      const int r1 = std::min(size - 1, static_cast<int>(std::ceil(cy + rad)));
      for (int r = r0; r <= r1; ++r) {
        const double dy = r + 0.5 - cy;
        for (int c = c0; c <= c1; ++c) {
          const double dx = c + 0.5 - cx;
          if (dx * dx + dy * dy <= rad2) img(r, c) = 1;
        }
      }
    }
    return img;
  }

  TactileImage capture(const ContactObject& object, const Pose& pose,
                       const Perturbation& pert) const {
    return render(contact(object, pose, pert));
  }

 private:
  void build_pins() {
    const double s = geometry_.pin_spacing;
    const double r_tip = 0.5 * geometry_.tip_diameter;
    const double big_r = geometry_.dome_radius;
    const int rings = static_cast<int>(std::floor(r_tip / s + 1e-9));
    // Axial hex coordinates; ring k holds 6k pins.
    for (int q = -rings; q <= rings; ++q) {
      for (int r = std::max(-rings, -q - rings); r <= std::min(rings, -q + rings); ++r) {
        const double x = s * (q + 0.5 * r);
        const double y = s * (std::sqrt(3.0) / 2.0 * r);
        if (std::hypot(x, y) > r_tip + 1e-9) continue;
        const double z = big_r - std::sqrt(big_r * big_r - x * x - y * y);
        rest_.emplace_back(x, y, z);
      }
    }
  }

  // Slides a penetrating point along the segment towards `outside` until it
  // reaches the surface; the result never lies inside the object.
  static Vec3 project_out(const ContactObject& object, const Vec3& inside, const Vec3& outside) {
    if (signed_distance(object, outside) < 0.0) {
      // Dome centre buried: fall back to Newton steps along the object normal.
      Vec3 p = inside;
      for (int k = 0; k < 8; ++k) {
        const double d = signed_distance(object, p);
        if (d >= 0.0) return p;
        p -= (d - 1e-12) * surface_normal(object, p);
      }
      return p;
    }
    Vec3 a = inside, b = outside;
    for (int k = 0; k < 64; ++k) {
      const Vec3 mid = 0.5 * (a + b);
      if (signed_distance(object, mid) < 0.0)
        a = mid;
      else
        b = mid;
      if ((b - a).squaredNorm() < 1e-26) break;
    }
    return b;
  }

  SensorGeometry geometry_;
  ContactParams params_;
  std::vector<Vec3> rest_;
  TactileImage rest_image_;
};

/// Simulator object matching a dataset object type.
inline ContactObject default_object(ObjectType t) {
  if (t == ObjectType::surface) return Plane{};
  return HalfPlaneEdge{};
}

}  // namespace tactipose
