#include <cmath>
#include <fstream>

#include "doctest.h"
#include "lidarfield/simlidar.hpp"
#include "test_helpers.hpp"

using namespace lidarfield;
using geom::Aabb;
using simlidar::AnalyticScene;
using simlidar::BeamPattern;

namespace {

AnalyticScene flat_ground() {
  AnalyticScene scene;
  scene.ground_plane = simlidar::Plane{Vec3::Zero(), Vec3::UnitZ()};
  return scene;
}

Mat34 sensor_at(const Vec3& position) {
  Mat34 pose = cloud::identity_pose();
  pose.col(3) = position;
  return pose;
}

// Distance from a point to the surface of the scene's nearest primitive.
double surface_distance(const AnalyticScene& scene, const Vec3& p) {
  double best = std::abs(scene.ground_plane.normal.dot(p - scene.ground_plane.point));
  for (const Aabb& box : scene.boxes) {
    const Vec3 center = box.center();
    const Vec3 half = 0.5 * box.extent();
    const Vec3 q = (p - center).cwiseAbs() - half;
    const double outside = q.cwiseMax(0.0).norm();
    const double inside = std::min(q.maxCoeff(), 0.0);
    best = std::min(best, std::abs(outside + inside));
  }
  return best;
}

}  // namespace

TEST_SUITE("simlidar") {

TEST_CASE("cast straight down and up") {
  const AnalyticScene scene = flat_ground();
  const auto down = simlidar::cast_ray_exact(scene, Vec3(0, 0, 1.5), Vec3(0, 0, -1));
  REQUIRE(down.has_value());
  CHECK(*down == doctest::Approx(1.5));
  CHECK_FALSE(simlidar::cast_ray_exact(scene, Vec3(0, 0, 1.5), Vec3(0, 0, 1)).has_value());
}

TEST_CASE("cast 45 degrees onto a box face") {
  AnalyticScene scene;
  scene.ground_plane = simlidar::Plane{Vec3(0, 0, -100), Vec3::UnitZ()};  // out of the way
  scene.boxes.push_back(Aabb{Vec3(3, -2, -10), Vec3(5, 2, 10)});
  const Vec3 dir = Vec3(1, 0, -1).normalized();
  const auto hit = simlidar::cast_ray_exact(scene, Vec3::Zero(), dir);
  REQUIRE(hit.has_value());
  CHECK(*hit == doctest::Approx(3.0 * std::sqrt(2.0)));
}

TEST_CASE("closest primitive wins and labels match") {
  AnalyticScene scene = flat_ground();
  scene.boxes.push_back(Aabb{Vec3(2, -1, 0), Vec3(4, 1, 3)});
  const auto hit = simlidar::cast_ray_labeled(scene, Vec3(0, 0, 1.5), Vec3(1, 0, 0));
  REQUIRE(hit.has_value());
  CHECK(hit->depth == doctest::Approx(2.0));
  CHECK(hit->label == simlidar::kFirstBoxLabel);
}

TEST_CASE("simulate_scan on an empty scene returns no points") {
  AnalyticScene scene;
  scene.ground_plane = simlidar::Plane{Vec3(0, 0, -1e9), Vec3::UnitZ()};
  BeamPattern pattern;
  pattern.n_beams = 4;
  pattern.horizontal_step_deg = 90.0;
  const auto scan = simlidar::simulate_scan(scene, sensor_at(Vec3(0, 0, 1.7)), pattern);
  CHECK(scan.points.empty());
}

TEST_CASE("flat plane depths follow the closed form") {
  const AnalyticScene scene = flat_ground();
  BeamPattern pattern;
  pattern.n_beams = 8;
  pattern.vertical_fov_min_deg = -30.0;
  pattern.vertical_fov_max_deg = -5.0;
  pattern.horizontal_step_deg = 30.0;
  const double h = 1.7;
  std::vector<int> labels;
  const auto scan = simlidar::simulate_scan(scene, sensor_at(Vec3(0, 0, h)), pattern, &labels);
  REQUIRE(scan.points.size() == 8u * 12u);  // all beams point down and hit
  std::size_t i = 0;
  for (int b = 0; b < 8; ++b) {
    const double elev_deg = -30.0 + (25.0 * b) / 7.0;
    const double expected = h / std::sin(std::abs(elev_deg) * M_PI / 180.0);
    for (int a = 0; a < 12; ++a, ++i) {
      CHECK(scan.points[i].norm() == doctest::Approx(expected).epsilon(1e-9));
      CHECK(labels[i] == simlidar::kGroundLabel);
    }
  }
}

TEST_CASE("simulate_scan is deterministic") {
  AnalyticScene scene = flat_ground();
  scene.boxes.push_back(Aabb{Vec3(4, -2, 0.3), Vec3(6, 0, 2.3)});
  BeamPattern pattern;
  pattern.n_beams = 6;
  pattern.horizontal_step_deg = 10.0;
  const auto a = simlidar::simulate_scan(scene, sensor_at(Vec3(1, 0, 1.7)), pattern);
  const auto b = simlidar::simulate_scan(scene, sensor_at(Vec3(1, 0, 1.7)), pattern);
  REQUIRE(a.points.size() == b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) CHECK(a.points[i] == b.points[i]);
}

TEST_CASE("every simulated point lies on a scene surface") {
  const AnalyticScene scene = simlidar::make_boxworld({});
  BeamPattern pattern;
  pattern.n_beams = 12;
  pattern.horizontal_step_deg = 6.0;
  const Mat34 pose = sensor_at(Vec3(10, 0, 1.7));
  const auto scan = simlidar::simulate_scan(scene, pose, pattern);
  REQUIRE(!scan.points.empty());
  for (const Vec3& p : scan.points) {
    CHECK(surface_distance(scene, scan.to_world(p)) < 1e-6);
  }
}

TEST_CASE("depths are invariant under a joint rigid motion") {
  AnalyticScene scene = flat_ground();
  scene.boxes.push_back(Aabb{Vec3(3, 1, 0.3), Vec3(5, 3, 2.0)});
  BeamPattern pattern;
  pattern.n_beams = 8;
  pattern.horizontal_step_deg = 15.0;
  const Mat34 pose = sensor_at(Vec3(0, 0, 1.7));
  const auto base = simlidar::simulate_scan(scene, pose, pattern);

  // Axis-aligned rigid motion: +90 degree yaw plus a translation.
  const Vec3 shift(7, -3, 2);
  Eigen::Matrix3d rot;
  rot << 0, -1, 0, 1, 0, 0, 0, 0, 1;
  AnalyticScene moved;
  moved.ground_plane.point = rot * scene.ground_plane.point + shift;
  moved.ground_plane.normal = rot * scene.ground_plane.normal;
  for (const Aabb& box : scene.boxes) {
    const Vec3 a = rot * box.min_corner + shift;
    const Vec3 b = rot * box.max_corner + shift;
    moved.boxes.push_back(Aabb{a.cwiseMin(b), a.cwiseMax(b)});
  }
  Mat34 moved_pose;
  moved_pose.leftCols<3>() = rot * pose.leftCols<3>();
  moved_pose.col(3) = rot * pose.col(3) + shift;
  const auto turned = simlidar::simulate_scan(moved, moved_pose, pattern);

  REQUIRE(base.points.size() == turned.points.size());
  for (std::size_t i = 0; i < base.points.size(); ++i) {
    CHECK(base.points[i].norm() == doctest::Approx(turned.points[i].norm()).epsilon(1e-9));
  }
}

TEST_CASE("marching oracle trivial cases") {
  const Aabb cube{Vec3(0, 0, 0), Vec3(1, 1, 1)};
  const auto hit = simlidar::marching_oracle(Vec3(-1, 0.5, 0.5), Vec3(1, 0, 0), cube, 1e-4);
  REQUIRE(hit.has_value());
  CHECK(hit->t_enter == doctest::Approx(1.0).epsilon(1e-3));
  CHECK(hit->t_exit == doctest::Approx(2.0).epsilon(1e-3));
  CHECK_FALSE(
      simlidar::marching_oracle(Vec3(-1, 2, 0.5), Vec3(1, 0, 0), cube, 1e-4).has_value());
}

TEST_CASE("beam pattern validation") {
  BeamPattern bad;
  bad.horizontal_step_deg = 7.0;  // does not divide 360
  CHECK_THROWS_AS(simlidar::validate_pattern(bad), ConfigError);
  bad.horizontal_step_deg = 1.0;
  bad.n_beams = 0;
  CHECK_THROWS_AS(simlidar::validate_pattern(bad), ConfigError);
}

TEST_CASE("scene file round trip") {
  const std::string dir = testutil::temp_dir("simlidar_scene");
  AnalyticScene scene = simlidar::make_boxworld({});
  simlidar::save_scene(scene, dir + "/scene.txt");
  const AnalyticScene loaded = simlidar::load_scene(dir + "/scene.txt");
  CHECK(loaded.scene_id == scene.scene_id);
  CHECK(loaded.ground_plane.point.z() == doctest::Approx(0.0));
  REQUIRE(loaded.boxes.size() == scene.boxes.size());
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    CHECK(loaded.boxes[i].min_corner.isApprox(scene.boxes[i].min_corner, 1e-9));
    CHECK(loaded.boxes[i].max_corner.isApprox(scene.boxes[i].max_corner, 1e-9));
  }

  std::ofstream(dir + "/bad.txt") << "ground_z = 0\nwidget = 3\n";
  CHECK_THROWS_AS(simlidar::load_scene(dir + "/bad.txt"), DataError);
}

TEST_CASE("boxworld layout honors its constraints") {
  simlidar::BoxworldParams params;
  params.n_boxes = 8;
  const AnalyticScene scene = simlidar::make_boxworld(params);
  REQUIRE(scene.boxes.size() == 8);
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    const Aabb& box = scene.boxes[i];
    CHECK(box.min_corner.z() == doctest::Approx(params.box_clearance));
    // Driving corridor along y=0 stays clear.
    CHECK((box.min_corner.y() >= 1.5 || box.max_corner.y() <= -1.5));
    for (std::size_t j = i + 1; j < scene.boxes.size(); ++j) {
      const Aabb grown = geom::inflate(scene.boxes[j], params.min_box_gap - 1e-9);
      const bool overlaps = (box.min_corner.array() <= grown.max_corner.array()).all() &&
                            (box.max_corner.array() >= grown.min_corner.array()).all();
      CHECK_FALSE(overlaps);
    }
  }
  // Deterministic for a fixed seed.
  const AnalyticScene again = simlidar::make_boxworld(params);
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    CHECK(again.boxes[i].min_corner == scene.boxes[i].min_corner);
  }
}

}  // TEST_SUITE
