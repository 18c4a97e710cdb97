#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"
#include "tactipose/objects.hpp"
#include "tactipose/tactile_sim.hpp"

using namespace tactipose;

namespace {

const TactileSimulator& sim128() {
  static const TactileSimulator s;
  return s;
}

Perturbation shear_x(double dx) {
  Perturbation p;
  p.dx = dx;
  return p;
}

double mean_abs_difference(const TactileImage& a, const TactileImage& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i) s += std::abs(a.pixels()[i] - b.pixels()[i]);
  return s / static_cast<double>(a.pixels().size());
}

}  // namespace

// --- objects ---------------------------------------------------------------

TEST(Objects, SignedDistanceSigns) {
  const Vec3 above(0.3, -0.2, 2.0), below(0.3, -0.2, -2.0);
  for (const ContactObject& o :
       {ContactObject(Plane{}), ContactObject(HalfPlaneEdge{10.0}), ContactObject(RoundedBox{}),
        ContactObject(Heightfield::bump(1.0, 40.0, 60.0, 1.0))}) {
    EXPECT_GT(signed_distance(o, above + Vec3(0, 0, 1)), 0.0) << object_name(o);
    EXPECT_LT(signed_distance(o, below), 0.0) << object_name(o);
  }
  EXPECT_NEAR(signed_distance(Sphere{Vec3::Zero(), 10.0}, Vec3(0, 0, 12)), 2.0, 1e-15);
}

TEST(Objects, NormalsAreUnitAndMatchDistanceGradient) {
  Rng rng(1);
  const std::vector<ContactObject> objs{Plane{}, HalfPlaneEdge{2.0}, Sphere{Vec3(0, 0, -60), 60.0},
                                        RoundedBox{}, Heightfield::bump()};
  for (const auto& o : objs) {
    for (int i = 0; i < 200; ++i) {
      Vec3 p(rng.uniform(-70, 70), rng.uniform(-50, 50), rng.uniform(-3, 3));
      const Vec3 n = surface_normal(o, p);
      EXPECT_NEAR(n.norm(), 1.0, 1e-9) << object_name(o);
      if (std::holds_alternative<Heightfield>(o)) continue;  // first-order distance only
      const double h = 1e-6;
      Vec3 g;
      for (int k = 0; k < 3; ++k) {
        Vec3 e = Vec3::Zero();
        e[k] = h;
        g[k] = (signed_distance(o, p + e) - signed_distance(o, p - e)) / (2 * h);
      }
      // Skip points on a crease of the distance field.
      if (std::abs(g.norm() - 1.0) > 1e-4) continue;
      EXPECT_LT((g - n).norm(), 1e-4) << object_name(o) << " at " << p.transpose();
    }
  }
}

TEST(Objects, HeightfieldIsExactOnPlanarPatches) {
  const auto flat = Heightfield::from_function(-10, -10, 0.5, 41, 41, [](double x, double y) {
    return 0.1 * x - 0.2 * y + 1.0;
  });
  const Vec3 p(1.3, 2.7, 5.0);
  const auto [h, dx, dy] = flat.sample(p.x(), p.y());
  EXPECT_NEAR(h, 0.1 * 1.3 - 0.2 * 2.7 + 1.0, 1e-12);
  EXPECT_NEAR(dx, 0.1, 1e-12);
  EXPECT_NEAR(dy, -0.2, 1e-12);
  const Vec3 n = Vec3(-0.1, 0.2, 1.0).normalized();
  EXPECT_NEAR(flat.signed_distance(p), n.dot(p - Vec3(0, 0, 1.0)), 1e-12);
}

TEST(Objects, HeightfieldValidation) {
  EXPECT_THROW(Heightfield(0, 0, 1, 1, 3, {0, 0, 0}), std::invalid_argument);
  EXPECT_THROW(Heightfield(0, 0, 1, 2, 2, {0, 0, 0}), std::invalid_argument);
  EXPECT_THROW(Heightfield(0, 0, 1, 2, 2, {0, 0, 0, std::nan("")}), std::invalid_argument);
  EXPECT_THROW(Heightfield(0, 0, 0, 2, 2, {0, 0, 0, 0}), std::invalid_argument);
}

TEST(Objects, RoundedBoxEdgeFrame) {
  const RoundedBox box;
  const auto f = box.edge_frame(Vec3(box.half_x + 2.0, 3.0, -1.0));
  EXPECT_LT((f.point - Vec3(box.half_x, 3.0, 0)).norm(), 1e-12);
  EXPECT_LT((f.outward - Vec3::UnitX()).norm(), 1e-12);
  EXPECT_LT((f.tangent - Vec3::UnitY()).norm(), 1e-12);
  // Round corner at 45 degrees.
  const double c = box.corner_radius;
  const Vec3 centre(box.half_x - c, box.half_y - c, 0);
  const auto g = box.edge_frame(centre + Vec3(1, 1, 0) * 5.0);
  EXPECT_NEAR((g.point - centre).norm(), c, 1e-12);
  EXPECT_NEAR(g.outward.dot(g.tangent), 0.0, 1e-12);
}

// --- sensor geometry ----------------------------------------------------------

TEST(SensorGeometry, DefaultPinLayout) {
  const auto& s = sim128();
  const auto& pins = s.rest_pins();
  EXPECT_GT(pins.size(), 30u);
  EXPECT_EQ(pins.size(), 91u);
  for (const auto& p : pins) {
    EXPECT_LE(std::hypot(p.x(), p.y()), 20.0 + 1e-9);
    // On the dome: distance to the dome centre equals its radius.
    EXPECT_NEAR((p - s.dome_centre()).norm(), 25.0, 1e-9);
  }
  double min_gap = 1e9;
  for (std::size_t i = 0; i < pins.size(); ++i)
    for (std::size_t j = i + 1; j < pins.size(); ++j)
      min_gap = std::min(min_gap, std::hypot(pins[i].x() - pins[j].x(), pins[i].y() - pins[j].y()));
  EXPECT_NEAR(min_gap, 4.0, 1e-9);
  EXPECT_LT(2 * s.geometry().marker_radius_px() * s.geometry().pixel_size(), min_gap);
}

TEST(SensorGeometry, RejectsOverlappingMarkers) {
  SensorGeometry g;
  g.marker_radius = 20;
  EXPECT_THROW(TactileSimulator{g}, std::invalid_argument);
  g = {};
  g.dome_radius = 10;
  EXPECT_THROW(TactileSimulator{g}, std::invalid_argument);
}

TEST(SensorGeometry, ConfigRoundTrip) {
  SensorGeometry g;
  g.image_size = 64;
  ContactParams c;
  c.stick = 0.5;
  const TactileSimulator a(g, c);
  const auto b = TactileSimulator::from_json(nlohmann::json::parse(a.config_json().dump()));
  EXPECT_EQ(b.geometry(), g);
  EXPECT_EQ(b.params(), c);
  EXPECT_EQ(a.config_hash(), b.config_hash());
  EXPECT_NE(a.config_hash(), sim128().config_hash());
  const auto partial = TactileSimulator::from_json({{"geometry", {{"image_size", 32}}}});
  EXPECT_EQ(partial.geometry().image_size, 32);
  EXPECT_EQ(partial.geometry().tip_diameter, 40.0);
}

// --- contact ----------------------------------------------------------------

TEST(Contact, ZeroDepthLeavesPinsAtRest) {
  const auto st = sim128().contact(Plane{}, SurfacePose{0, 0, 0}, {});
  EXPECT_EQ(st.displaced, st.rest);
  EXPECT_EQ(st.contact_count(), 0u);
  EXPECT_EQ(sim128().render(st), sim128().rest_image());
}

TEST(Contact, ClearOfObjectIsRestState) {
  const auto st = sim128().contact(Plane{}, SurfacePose{2.0, 5, 5}, shear_x(3));
  EXPECT_EQ(st.displaced, st.rest);
}

TEST(Contact, BeyondComplianceLimitThrows) {
  EXPECT_THROW(sim128().contact(Plane{}, SurfacePose{-6.5, 0, 0}, {}), ContactError);
  EXPECT_NO_THROW(sim128().contact(Plane{}, SurfacePose{-6.0, 0, 0}, {}));
}

TEST(Contact, FlatPressIsSymmetricUnderHalfTurn) {
  const auto st = sim128().contact(Plane{}, SurfacePose{-3, 0, 0}, {});
  ASSERT_GT(st.contact_count(), 0u);
  for (const auto& p : st.displaced) {
    const Vec3 q(-p.x(), -p.y(), p.z());
    double best = 1e9;
    for (const auto& r : st.displaced) best = std::min(best, (r - q).norm());
    EXPECT_LT(best, 1e-9);
  }
}

TEST(Contact, PerturbationMovesContactingPinsOnly) {
  Perturbation a, b;
  a.dx = 2;
  a.d_yaw = -3;
  b.dy = -4;
  b.d_roll = 2;
  const Pose pose = SurfacePose{-3, 4, -2};
  const auto sa = sim128().contact(Plane{}, pose, a);
  const auto sb = sim128().contact(Plane{}, pose, b);
  EXPECT_EQ(sa.in_contact, sb.in_contact);
  double diff = 0;
  for (std::size_t i = 0; i < sa.displaced.size(); ++i)
    if (sa.in_contact[i])
      diff = std::max(diff, std::hypot(sa.displaced[i].x() - sb.displaced[i].x(),
                                       sa.displaced[i].y() - sb.displaced[i].y()));
  EXPECT_GT(diff, 0.1);
}

TEST(Contact, NeverPenetrates) {
  Rng rng(17);
  const std::vector<ContactObject> objs{Plane{}, HalfPlaneEdge{}, Heightfield::bump(0.8, 15, 60),
                                        Sphere{Vec3(0, 0, -60), 60}, RoundedBox{}};
  const auto ranges = default_perturbation_ranges();
  for (const auto& o : objs) {
    const auto type = has_edge(o) ? ObjectType::edge : ObjectType::surface;
    for (int i = 0; i < 40; ++i) {
      Pose pose = sample_pose(default_label_ranges(type), type, rng);
      if (std::holds_alternative<RoundedBox>(o)) std::get<EdgePose>(pose).x_horizontal += 60.0;
      const auto pert = sample_perturbation(ranges, rng);
      const auto st = sim128().contact(o, pose, pert);
      const auto t = to_transform(pose);
      for (const auto& p : st.displaced)
        EXPECT_GE(signed_distance(o, t.apply(p)), -1e-6) << object_name(o);
    }
  }
}

TEST(Contact, ContactAreaGrowsWithDepth) {
  std::size_t prev = 0;
  for (double d = -1.0; d >= -5.0; d -= 0.25) {
    const auto n = sim128().contact(Plane{}, SurfacePose{d, 0, 0}, {}).contact_count();
    EXPECT_GE(n, prev) << "depth " << d;
    prev = n;
  }
  EXPECT_GT(prev, 0u);
}

// --- rendering --------------------------------------------------------------

TEST(Render, BinaryDeterministicAndLitWhenInContact) {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Pose pose = sample_pose(default_label_ranges(ObjectType::surface), ObjectType::surface, rng);
    const auto pert = sample_perturbation(default_perturbation_ranges(), rng);
    const auto a = sim128().capture(Plane{}, pose, pert);
    const auto b = sim128().capture(Plane{}, pose, pert);
    EXPECT_EQ(a, b);
    for (auto v : a.pixels()) EXPECT_LE(v, 1);
    EXPECT_GT(a.count_on(), 0u);
    EXPECT_EQ(a.size(), 128);
  }
}

TEST(Render, AllPinsInsideImage) {
  // Every marker of the rest image is a full disc: lit pixel count equals
  // pins times the disc area, within rasterisation error.
  const auto& s = sim128();
  const double r = s.geometry().marker_radius_px();
  const double expected = static_cast<double>(s.rest_pins().size()) * std::numbers::pi * r * r;
  EXPECT_NEAR(static_cast<double>(s.rest_image().count_on()), expected, 0.15 * expected);
}

TEST(Render, ShearShiftsCentroidMonotonically) {
  const Pose pose = SurfacePose{-3, 0, 0};
  double prev = -1e9;
  std::vector<double> xs;
  for (int dx = 0; dx <= 5; ++dx) {
    const double cx = sim128().capture(Plane{}, pose, shear_x(dx)).centroid().first;
    xs.push_back(cx);
    EXPECT_GT(cx, prev) << "dx " << dx;
    prev = cx;
  }
}

TEST(Render, PerturbationIsVisible) {
  const Pose pose = SurfacePose{-3, 5, 5};
  const auto a = sim128().capture(Plane{}, pose, {});
  const auto b = sim128().capture(Plane{}, pose, {});
  const auto c = sim128().capture(Plane{}, pose, shear_x(5));
  EXPECT_EQ(mean_abs_difference(a, b), 0.0);
  EXPECT_GT(mean_abs_difference(a, c), 0.0);
}

TEST(Render, DistantEdgeLooksLikeAPlane) {
  Rng rng(4);
  for (int i = 0; i < 10; ++i) {
    const auto v = to_vector(sample_pose(default_label_ranges(ObjectType::surface), ObjectType::surface, rng));
    const Pose pose = EdgePose{0, v[0], v[1], v[2], 0};
    const auto pert = sample_perturbation(default_perturbation_ranges(), rng);
    EXPECT_EQ(sim128().capture(HalfPlaneEdge{100.0}, pose, pert), sim128().capture(Plane{}, pose, pert));
  }
}

TEST(Render, EdgeDiffersFromPlane) {
  const Pose pose = EdgePose{0, -3, 0, 0, 0};
  EXPECT_NE(sim128().capture(HalfPlaneEdge{}, pose, {}), sim128().capture(Plane{}, pose, {}));
}

TEST(Pgm, RoundTripAndErrors) {
  const auto img = sim128().capture(Plane{}, SurfacePose{-2, 3, 1}, shear_x(1));
  const auto bytes = encode_pgm(img);
  EXPECT_EQ(decode_pgm(bytes), img);
  EXPECT_THROW(decode_pgm("P2\n2 2\n255\n"), PgmError);
  EXPECT_THROW(decode_pgm(bytes.substr(0, bytes.size() - 1)), PgmError);
  auto grey = bytes;
  grey.back() = 7;
  EXPECT_THROW(decode_pgm(grey), PgmError);
  EXPECT_THROW(TactileImage(2, {0, 1, 2, 0}), std::invalid_argument);
}
