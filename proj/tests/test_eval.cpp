#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "doctest.h"
#include "lidarfield/eval.hpp"
#include "test_helpers.hpp"

using namespace lidarfield;
using eval::SplitSpec;

namespace {

std::vector<int> iota_ids(int n) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  return ids;
}

double brute_chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  auto one_way = [](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double sum = 0.0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to) best = std::min(best, (p - q).norm());
      sum += best;
    }
    return sum / from.size();
  };
  return 0.5 * (one_way(a, b) + one_way(b, a));
}

double brute_f_score(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double tau) {
  auto fraction_within = [tau](const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    double count = 0.0;
    for (const Vec3& p : from) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : to) best = std::min(best, (p - q).norm());
      if (best <= tau) count += 1.0;
    }
    return count / from.size();
  };
  const double precision = fraction_within(a, b);
  const double recall = fraction_within(b, a);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

std::vector<Vec3> random_cloud(Rng& rng, int n, double scale = 10.0) {
  std::vector<Vec3> cloud;
  cloud.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    cloud.emplace_back(rng.uniform(-scale, scale), rng.uniform(-scale, scale),
                       rng.uniform(-scale, scale));
  }
  return cloud;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("split_scans every kth") {
  SplitSpec spec;
  spec.mode = SplitSpec::Mode::kEveryKth;
  spec.k = 5;
  const auto split = eval::split_scans(iota_ids(50), spec);
  CHECK(split.test.size() == 10);
  CHECK(split.train.size() == 40);
  for (int idx : split.test) CHECK(idx % 5 == 2);

  SUBCASE("k equal to the scan count leaves one test scan") {
    SplitSpec whole;
    whole.k = 50;
    const auto one = eval::split_scans(iota_ids(50), whole);
    CHECK(one.test.size() == 1);
    CHECK(one.test[0] == 2);
  }
  SUBCASE("partition property") {
    std::set<int> all(split.train.begin(), split.train.end());
    all.insert(split.test.begin(), split.test.end());
    CHECK(all.size() == 50);
  }
}

TEST_CASE("split_scans loss rate") {
  SplitSpec spec;
  spec.mode = SplitSpec::Mode::kLossRate;
  spec.train_fraction = 1.0 / 3.0;
  const auto split = eval::split_scans(iota_ids(50), spec);
  CHECK(split.train.size() == 17);  // ceil(50/3)
  CHECK(split.test.size() == 33);

  SUBCASE("deterministic") {
    const auto again = eval::split_scans(iota_ids(50), spec);
    CHECK(again.train == split.train);
    CHECK(again.test == split.test);
  }
  SUBCASE("random keep mode is seeded") {
    SplitSpec random_spec = spec;
    random_spec.random_keep = true;
    random_spec.seed = 11;
    const auto a = eval::split_scans(iota_ids(50), random_spec);
    const auto b = eval::split_scans(iota_ids(50), random_spec);
    CHECK(a.train == b.train);
    CHECK(a.train.size() == 17);
    CHECK(a.train != split.train);  // differs from the evenly spaced keep-set
  }
  SUBCASE("empty side errors") {
    CHECK_THROWS_AS(eval::split_scans(iota_ids(1), spec), DataError);
  }
  SUBCASE("invalid fraction") {
    SplitSpec bad = spec;
    bad.train_fraction = 1.0;
    CHECK_THROWS_AS(eval::split_scans(iota_ids(10), bad), ConfigError);
  }
}

TEST_CASE("depth metrics") {
  SUBCASE("perfect predictions") {
    const std::vector<std::optional<double>> preds{1.0, 2.0, 3.0};
    const auto m = eval::depth_metrics(preds, {1.0, 2.0, 3.0}, {0.2, 1.0});
    CHECK(m.avg_error == 0.0);
    CHECK(m.acc[0] == 1.0);
    CHECK(m.acc[1] == 1.0);
    CHECK(m.n_resolved == 3);
  }
  SUBCASE("constant half-meter bias") {
    const std::vector<std::optional<double>> preds{1.5, 2.5, 3.5};
    const auto m = eval::depth_metrics(preds, {1.0, 2.0, 3.0}, {0.2, 1.0});
    CHECK(m.avg_error == doctest::Approx(0.5));
    CHECK(m.acc[0] == 0.0);
    CHECK(m.acc[1] == 1.0);
  }
  SUBCASE("random fixture matches a direct loop and acc is monotone") {
    Rng rng(7);
    std::vector<std::optional<double>> preds;
    std::vector<double> truths;
    for (int i = 0; i < 200; ++i) {
      truths.push_back(rng.uniform(1, 30));
      if (rng.uniform01() < 0.1) {
        preds.emplace_back(std::nullopt);
      } else {
        preds.emplace_back(truths.back() + rng.uniform(-2, 2));
      }
    }
    const auto m = eval::depth_metrics(preds, truths, {0.2, 1.0});
    double sum = 0.0;
    int resolved = 0, in02 = 0, in10 = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (!preds[i]) continue;
      ++resolved;
      const double err = std::abs(*preds[i] - truths[i]);
      sum += err;
      if (err <= 0.2) ++in02;
      if (err <= 1.0) ++in10;
    }
    CHECK(m.n_resolved == resolved);
    CHECK(m.avg_error == doctest::Approx(sum / resolved));
    CHECK(m.acc[0] == doctest::Approx(static_cast<double>(in02) / resolved));
    CHECK(m.acc[1] == doctest::Approx(static_cast<double>(in10) / resolved));
    CHECK(m.acc[0] <= m.acc[1]);
  }
  SUBCASE("zero resolved rays error") {
    const std::vector<std::optional<double>> none{std::nullopt, std::nullopt};
    CHECK_THROWS_AS(eval::depth_metrics(none, {1.0, 2.0}, {0.2}), DataError);
  }
}

TEST_CASE("chamfer distance") {
  Rng rng(8);
  SUBCASE("identical clouds have zero distance") {
    const auto cloud = random_cloud(rng, 64);
    CHECK(eval::chamfer_distance(cloud, cloud) == doctest::Approx(0.0));
  }
  SUBCASE("two points a meter apart") {
    CHECK(eval::chamfer_distance({Vec3(0, 0, 0)}, {Vec3(1, 0, 0)}) == doctest::Approx(1.0));
  }
  SUBCASE("matches the quadratic oracle to 1e-9") {
    for (int trial = 0; trial < 5; ++trial) {
      const auto a = random_cloud(rng, 100);
      const auto b = random_cloud(rng, 100);
      CHECK(eval::chamfer_distance(a, b) == doctest::Approx(brute_chamfer(a, b)).epsilon(1e-9));
      CHECK(eval::chamfer_distance(a, b) == doctest::Approx(eval::chamfer_distance(b, a)));
    }
  }
  SUBCASE("clustered clouds exercise the ring expansion") {
    // Two tight blobs far apart force long grid walks.
    std::vector<Vec3> a, b;
    for (int i = 0; i < 40; ++i) {
      a.emplace_back(rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0);
      b.emplace_back(25 + rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1), 0);
    }
    CHECK(eval::chamfer_distance(a, b) == doctest::Approx(brute_chamfer(a, b)).epsilon(1e-9));
  }
  SUBCASE("empty cloud errors") {
    CHECK_THROWS_AS(eval::chamfer_distance({}, {Vec3::Zero()}), DataError);
  }
}

TEST_CASE("f-score") {
  Rng rng(9);
  SUBCASE("identical clouds score one") {
    const auto cloud = random_cloud(rng, 64);
    CHECK(eval::f_score(cloud, cloud, 0.2) == doctest::Approx(1.0));
  }
  SUBCASE("translation below the threshold keeps the score at one") {
    const auto cloud = random_cloud(rng, 64);
    std::vector<Vec3> shifted;
    for (const Vec3& p : cloud) shifted.push_back(p + Vec3(0.05, 0.05, 0.05));
    CHECK(eval::f_score(cloud, shifted, 0.2) == doctest::Approx(1.0));
  }
  SUBCASE("matches the quadratic oracle") {
    for (int trial = 0; trial < 5; ++trial) {
      const auto a = random_cloud(rng, 100, 3.0);
      const auto b = random_cloud(rng, 100, 3.0);
      for (double tau : {0.2, 1.0}) {
        const double fast = eval::f_score(a, b, tau);
        CHECK(fast == doctest::Approx(brute_f_score(a, b, tau)).epsilon(1e-12));
        CHECK(fast >= 0.0);
        CHECK(fast <= 1.0);
      }
      CHECK(eval::f_score(a, b, 0.2) <= eval::f_score(a, b, 1.0) + 1e-12);
      CHECK(eval::f_score(a, b, 0.5) == doctest::Approx(eval::f_score(b, a, 0.5)));
    }
  }
}

TEST_CASE("evaluate_run") {
  const std::string dir = testutil::temp_dir("eval_run");
  Rng rng(10);
  std::vector<eval::TestRay> rays;
  for (int i = 0; i < 100; ++i) {
    eval::TestRay ray;
    ray.origin = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), 1.5);
    Vec3 dir(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, -0.2));
    ray.direction = dir.normalized();
    ray.truth = rng.uniform(2, 20);
    rays.push_back(ray);
  }

  SUBCASE("oracle inference gives perfect metrics and writes files") {
    const auto report = eval::evaluate_run(
        rays,
        [](const eval::TestRay& ray, std::size_t) {
          return std::make_pair(std::optional<double>(ray.truth), std::string("oracle"));
        },
        1, dir + "/report.json", dir + "/outcomes.csv", dir + "/pred.ply");
    CHECK(report.avg_error_m == doctest::Approx(0.0));
    CHECK(report.cd_m == doctest::Approx(0.0));
    CHECK(report.f_0p2 == doctest::Approx(1.0));
    CHECK(report.f_1p0 == doctest::Approx(1.0));
    CHECK(report.n_resolved == 100);
    CHECK(report.n_unresolved == 0);
    CHECK(std::ifstream(dir + "/report.json").good());
    CHECK(std::ifstream(dir + "/outcomes.csv").good());
    CHECK(std::ifstream(dir + "/pred.ply").good());
  }
  SUBCASE("nothing resolved raises a data error") {
    CHECK_THROWS_AS(eval::evaluate_run(
                        rays,
                        [](const eval::TestRay&, std::size_t) {
                          return std::make_pair(std::optional<double>(), std::string("none"));
                        },
                        1, "", "", ""),
                    DataError);
  }
  SUBCASE("report fields equal independently recomputed metrics") {
    Rng noise(11);
    std::vector<double> offsets;
    for (int i = 0; i < 100; ++i) offsets.push_back(noise.uniform(-1.5, 1.5));
    const auto report = eval::evaluate_run(
        rays,
        [&offsets](const eval::TestRay& ray, std::size_t i) {
          if (i % 7 == 3) return std::make_pair(std::optional<double>(), std::string("none"));
          return std::make_pair(std::optional<double>(ray.truth + offsets[i]),
                                std::string("fixture"));
        },
        2, "", "", "");

    std::vector<std::optional<double>> preds;
    std::vector<double> truths;
    std::vector<Vec3> pred_cloud, truth_cloud;
    for (std::size_t i = 0; i < rays.size(); ++i) {
      truths.push_back(rays[i].truth);
      truth_cloud.push_back(rays[i].origin + rays[i].truth * rays[i].direction);
      if (i % 7 == 3) {
        preds.emplace_back(std::nullopt);
      } else {
        preds.emplace_back(rays[i].truth + offsets[i]);
        pred_cloud.push_back(rays[i].origin + *preds.back() * rays[i].direction);
      }
    }
    const auto dm = eval::depth_metrics(preds, truths, {0.2, 1.0});
    CHECK(report.avg_error_m == doctest::Approx(dm.avg_error));
    CHECK(report.acc_0p2 == doctest::Approx(dm.acc[0]));
    CHECK(report.acc_1p0 == doctest::Approx(dm.acc[1]));
    CHECK(report.n_unresolved == dm.n_unresolved);
    CHECK(report.cd_m == doctest::Approx(eval::chamfer_distance(pred_cloud, truth_cloud)));
    CHECK(report.f_0p2 == doctest::Approx(eval::f_score(pred_cloud, truth_cloud, 0.2)));
    CHECK(report.f_1p0 == doctest::Approx(eval::f_score(pred_cloud, truth_cloud, 1.0)));
  }
}

TEST_CASE("report json carries the documented keys") {
  const std::string dir = testutil::temp_dir("eval_json");
  eval::MetricsReport report;
  report.avg_error_m = 0.25;
  report.acc_0p2 = 0.5;
  report.acc_1p0 = 0.75;
  report.cd_m = 0.125;
  report.f_0p2 = 0.8;
  report.f_1p0 = 0.9;
  report.n_resolved = 90;
  report.n_unresolved = 10;
  eval::write_report_json(report, dir + "/report.json");
  std::ifstream in(dir + "/report.json");
  const std::string text((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  for (const char* key : {"avg_error_m", "acc_0p2", "acc_1p0", "cd_m", "f_0p2", "f_1p0",
                          "n_unresolved"}) {
    CHECK(text.find(key) != std::string::npos);
  }
}

}  // TEST_SUITE
