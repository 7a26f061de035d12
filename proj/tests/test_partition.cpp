#include <algorithm>
#include <cmath>
#include <set>

#include "doctest.h"
#include "lidarfield/partition.hpp"
#include "lidarfield/simlidar.hpp"
#include "test_helpers.hpp"

using namespace lidarfield;
using geom::Aabb;
using partition::ChildSegment;
using partition::PartitionParams;

namespace {

Mat34 yaw_pose(double yaw_deg, const Vec3& translation) {
  const double yaw = yaw_deg * M_PI / 180.0;
  Mat34 pose = Mat34::Zero();
  pose(0, 0) = std::cos(yaw);
  pose(0, 1) = -std::sin(yaw);
  pose(1, 0) = std::sin(yaw);
  pose(1, 1) = std::cos(yaw);
  pose(2, 2) = 1.0;
  pose.col(3) = translation;
  return pose;
}

}  // namespace

TEST_SUITE("partition") {

TEST_CASE("split_trajectory") {
  SUBCASE("straight trajectory splits by max_scans") {
    std::vector<Mat34> poses(100, yaw_pose(0, Vec3::Zero()));
    const auto ranges = partition::split_trajectory(poses, 30.0, 50);
    REQUIRE(ranges.size() == 2);
    CHECK(ranges[0] == std::pair<int, int>{0, 50});
    CHECK(ranges[1] == std::pair<int, int>{50, 100});
  }
  SUBCASE("single pose") {
    const auto ranges = partition::split_trajectory({yaw_pose(10, Vec3::Zero())}, 30.0, 50);
    REQUIRE(ranges.size() == 1);
    CHECK(ranges[0] == std::pair<int, int>{0, 1});
  }
  SUBCASE("zig-zag closes a range at every turn") {
    std::vector<Mat34> poses;
    for (int i = 0; i < 40; ++i) {
      const double yaw = (i / 10) % 2 == 0 ? 0.0 : 40.0;
      poses.push_back(yaw_pose(yaw, Vec3(i, 0, 0)));
    }
    const auto ranges = partition::split_trajectory(poses, 30.0, 50);
    REQUIRE(ranges.size() == 4);
    for (const auto& [begin, end] : ranges) CHECK(end - begin == 10);
  }
  SUBCASE("ranges cover the trajectory without gaps") {
    Rng rng(1);
    std::vector<Mat34> poses;
    double yaw = 0;
    for (int i = 0; i < 83; ++i) {
      yaw += rng.uniform(-15, 15);
      poses.push_back(yaw_pose(yaw, Vec3(i, 0, 0)));
    }
    const auto ranges = partition::split_trajectory(poses, 30.0, 17);
    int cursor = 0;
    for (const auto& [begin, end] : ranges) {
      CHECK(begin == cursor);
      CHECK(end > begin);
      CHECK(end - begin <= 17);
      cursor = end;
    }
    CHECK(cursor == 83);
  }
}

TEST_CASE("filter_ground") {
  PartitionParams params;
  SUBCASE("plane plus an outlier") {
    std::vector<Vec3> points;
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
      points.emplace_back(rng.uniform(-10, 10), rng.uniform(-10, 10), 0.0);
    }
    points.emplace_back(1.0, 1.0, 5.0);
    const auto split = partition::filter_ground(points, params);
    CHECK(split.plane_found);
    CHECK(split.ground.size() == 200);
    REQUIRE(split.non_ground.size() == 1);
    CHECK(points[static_cast<std::size_t>(split.non_ground[0])].z() == doctest::Approx(5.0));
  }
  SUBCASE("vertical wall yields no ground") {
    std::vector<Vec3> points;
    Rng rng(3);
    for (int i = 0; i < 100; ++i) {
      points.emplace_back(0.0, rng.uniform(-10, 10), rng.uniform(0, 5));
    }
    const auto split = partition::filter_ground(points, params);
    CHECK_FALSE(split.plane_found);
    CHECK(split.ground.empty());
    CHECK(split.non_ground.size() == 100);
  }
  SUBCASE("too few points") {
    CHECK_THROWS_AS(partition::filter_ground({Vec3::Zero(), Vec3::Ones()}, params), DataError);
  }
}

TEST_CASE("cluster_regions") {
  SUBCASE("two distant blobs form two clusters") {
    std::vector<Vec3> points;
    Rng rng(4);
    for (int i = 0; i < 40; ++i) {
      points.emplace_back(rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0);
    }
    for (int i = 0; i < 30; ++i) {
      points.emplace_back(10 + rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 0);
    }
    const auto clusters = partition::cluster_regions(points, 0.5, 5);
    REQUIRE(clusters.size() == 2);
    CHECK(clusters[0].size() == 40);  // ordered by smallest point index
    CHECK(clusters[1].size() == 30);
  }
  SUBCASE("below min_size is noise") {
    CHECK(partition::cluster_regions({Vec3::Zero()}, 0.5, 5).empty());
  }
  SUBCASE("permutation invariance as point sets") {
    Rng rng(5);
    std::vector<Vec3> points;
    for (int blob = 0; blob < 3; ++blob) {
      for (int i = 0; i < 25; ++i) {
        points.emplace_back(4.0 * blob + rng.uniform(-0.4, 0.4),
                            rng.uniform(-0.4, 0.4), rng.uniform(-0.4, 0.4));
      }
    }
    auto clusters_as_sets = [](const std::vector<Vec3>& pts,
                               const std::vector<std::vector<int>>& clusters) {
      std::set<std::set<std::array<double, 3>>> sets;
      for (const auto& cluster : clusters) {
        std::set<std::array<double, 3>> one;
        for (int i : cluster) {
          const Vec3& p = pts[static_cast<std::size_t>(i)];
          one.insert({p.x(), p.y(), p.z()});
        }
        sets.insert(std::move(one));
      }
      return sets;
    };
    const auto base = clusters_as_sets(points, partition::cluster_regions(points, 0.5, 5));
    std::vector<Vec3> shuffled = points;
    Rng shuffle_rng(6);
    shuffle_rng.shuffle(shuffled);
    const auto permuted =
        clusters_as_sets(shuffled, partition::cluster_regions(shuffled, 0.5, 5));
    CHECK(base == permuted);
  }
}

TEST_CASE("build_children") {
  std::vector<Vec3> ground{Vec3(0, 0, 0), Vec3(5, 5, 0)};
  SUBCASE("ground only") {
    const auto children = partition::build_children(ground, {});
    REQUIRE(children.size() == 1);
    CHECK(children[0].kind == ChildSegment::Kind::kGround);
    CHECK(children[0].child_id == 0);
    CHECK(children[0].point_count == 2);
  }
  SUBCASE("ground plus three clusters") {
    std::vector<std::vector<Vec3>> clusters{
        {Vec3(1, 1, 1), Vec3(1.2, 1, 1)},
        {Vec3(4, 4, 1)},
        {Vec3(8, 2, 1), Vec3(8, 2.5, 1)},
    };
    const auto children = partition::build_children(ground, clusters);
    REQUIRE(children.size() == 4);
    CHECK(children[0].kind == ChildSegment::Kind::kGround);
    int total = 0;
    for (std::size_t i = 0; i < children.size(); ++i) {
      CHECK(children[i].child_id == static_cast<int>(i));
      total += children[i].point_count;
    }
    CHECK(total == 2 + 2 + 1 + 2);
  }
}

TEST_CASE("assign_ray_children picks the smallest containing child") {
  std::vector<ChildSegment> children(2);
  children[0].child_id = 0;
  children[0].aabb = Aabb{Vec3(-10, -10, -1), Vec3(10, 10, 1)};  // big
  children[1].child_id = 1;
  children[1].aabb = Aabb{Vec3(-1, -1, -1), Vec3(1, 1, 1)};  // small, overlapping

  std::vector<geom::Ray> rays(3);
  rays[0].endpoint = Vec3(5, 5, 0);    // only the big child
  rays[1].endpoint = Vec3(0, 0, 0);    // both -> smaller volume wins
  rays[2].endpoint = Vec3(50, 50, 50); // neither
  partition::assign_ray_children(rays, children);
  CHECK(rays[0].child_index == 0);
  CHECK(rays[1].child_index == 1);
  CHECK(rays[2].child_index == geom::kNoChild);
}

TEST_CASE("scene graph io round trip") {
  const std::string dir = testutil::temp_dir("partition_graph");
  partition::SceneGraph graph;
  partition::ParentBlock block;
  block.scan_begin = 0;
  block.scan_end = 20;
  block.aabb = Aabb{Vec3(-1, -9, -1), Vec3(31, 9, 6)};
  ChildSegment ground;
  ground.kind = ChildSegment::Kind::kGround;
  ground.child_id = 0;
  ground.point_count = 1234;
  ground.aabb = Aabb{Vec3(0, -8, 0), Vec3(30, 8, 0)};
  ChildSegment box;
  box.kind = ChildSegment::Kind::kCluster;
  box.child_id = 1;
  box.point_count = 77;
  box.aabb = Aabb{Vec3(3, 3, 0.3), Vec3(5, 5, 2.3)};
  block.children = {ground, box};
  graph.parents.push_back(block);

  partition::save_scene_graph(graph, dir + "/graph.txt");
  const auto loaded = partition::load_scene_graph(dir + "/graph.txt");
  REQUIRE(loaded.parents.size() == 1);
  CHECK(loaded.parents[0].scan_begin == 0);
  CHECK(loaded.parents[0].scan_end == 20);
  CHECK(loaded.parents[0].aabb.min_corner.isApprox(block.aabb.min_corner));
  REQUIRE(loaded.parents[0].children.size() == 2);
  CHECK(loaded.parents[0].children[0].kind == ChildSegment::Kind::kGround);
  CHECK(loaded.parents[0].children[0].point_count == 1234);
  CHECK(loaded.parents[0].children[1].kind == ChildSegment::Kind::kCluster);
  CHECK(loaded.parents[0].children[1].aabb.max_corner.isApprox(box.aabb.max_corner));

  CHECK(loaded.parent_of_scan(5) == 0);
  CHECK(loaded.parent_of_scan(20) == -1);
}

TEST_CASE("scene graph construction on a small boxworld") {
  simlidar::BoxworldParams bw;
  bw.n_boxes = 3;
  const auto scene = simlidar::make_boxworld(bw);
  const auto poses = simlidar::boxworld_trajectory(bw, 6);
  simlidar::BeamPattern pattern;
  pattern.n_beams = 16;
  pattern.horizontal_step_deg = 3.0;

  std::vector<cloud::LidarScan> scans;
  std::vector<int> train_ids;
  for (int s = 0; s < 6; ++s) {
    auto scan = simlidar::simulate_scan(scene, poses[static_cast<std::size_t>(s)], pattern);
    scan.scan_index = s;
    scans.push_back(std::move(scan));
    train_ids.push_back(s);
  }
  PartitionParams params;
  params.cluster_min_size = 5;
  const auto graph = partition::build_scene_graph(scans, train_ids, params);
  REQUIRE(graph.parents.size() == 1);
  const auto& block = graph.parents[0];
  CHECK(block.children.size() == 4);  // ground + 3 boxes
  CHECK(block.children[0].kind == ChildSegment::Kind::kGround);
  for (const auto& child : block.children) {
    CHECK(block.aabb.contains(child.aabb));
  }

  // All training endpoints stay inside the parent and land in some child
  // after assignment.
  auto fused = cloud::fuse_scans(scans, params.fuse_max_range);
  partition::assign_ray_children(fused.rays, block.children);
  std::size_t assigned = 0;
  for (const auto& ray : fused.rays) {
    CHECK(block.aabb.contains(ray.endpoint));
    if (ray.has_child()) ++assigned;
  }
  CHECK(assigned == fused.rays.size());
}

}  // TEST_SUITE
