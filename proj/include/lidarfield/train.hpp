#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lidarfield/field.hpp"

namespace lidarfield::train {

using field::FieldModel;
using field::RenderResult;
using field::SamplingConfig;
using geom::Aabb;
using geom::RayInterval;

struct LossConfig {
  double lambda_pd = 1.0;
  double lambda_cf = 1e6;
  double lambda_cd = 1e5;
  double lambda_in = 0.1;
  double gamma = 2.0;    // smooth transition margin of the child depth loss
  double epsilon = 0.2;  // child near/far bound inflation
  double t0 = 0.0;       // integration lower limit
};

void validate_loss(const LossConfig& config);

struct TrainConfig {
  double lr = 4e-5;
  std::vector<int> milestones = {5, 10, 20};
  double decay = 0.1;
  int batch_rays = 1024;
  int epochs = 1;
  std::uint64_t seed = 1;
};

void validate_train(const TrainConfig& config);

// lr for a 0-based epoch index: lr * decay^(#milestones <= epoch).
double lr_for_epoch(const TrainConfig& config, int epoch);

// 0.1 * SmoothL1(10x, 10y): quadratic within |x-y| < 0.1 m, linear beyond.
double smooth_l1_prime(double x, double y);
double smooth_l1_prime_dx(double x, double y);

// Integration bounds of one training ray, fixed before the epoch loop.
struct RayIntervals {
  double t_lo = 0.0;      // max(t0, parent entry)
  double f_parent = 0.0;  // parent exit
  bool has_child = false;
  double child_lo = 0.0;  // n - epsilon, clipped to the parent interval
  double child_hi = 0.0;  // f + epsilon, clipped
};

struct TrainRay {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitX();
  double depth = 0.0;
  RayIntervals intervals;
};

struct LossBreakdown {
  double pd = 0.0;
  double cf = 0.0;
  double cd = 0.0;
  double total(const LossConfig& config) const {
    return config.lambda_pd * pd + config.lambda_cf * cf + config.lambda_cd * cd;
  }
};

// The three per-ray losses over one rendered ray.
LossBreakdown ray_loss(const RenderResult& render, const RayIntervals& intervals,
                       double truth_depth, const LossConfig& config);

// d(total)/d(w_k), lambda-weighted.
Eigen::VectorXd ray_loss_weight_grad(const RenderResult& render, const RayIntervals& intervals,
                                     double truth_depth, const LossConfig& config);

// Chain rule through the rendering quadrature: d(loss)/d(sigma_k) given
// d(loss)/d(w_k). Sample depths are constants.
Eigen::VectorXd weight_grad_to_sigma(const RenderResult& render,
                                     const Eigen::VectorXd& dweight);

// Builds training rays from assigned world-frame rays: parent/child slab
// intervals with the epsilon bound inflation. Rays missing the parent AABB
// are dropped; rays whose child AABB is somehow missed fall back to
// parent-only supervision. Counters report both.
struct RayBuildStats {
  int dropped_no_parent = 0;
  int child_interval_missing = 0;
};
std::vector<TrainRay> make_train_rays(const std::vector<geom::Ray>& rays,
                                      const Aabb& parent_aabb,
                                      const std::vector<Aabb>& child_aabbs,
                                      const LossConfig& config, RayBuildStats* stats = nullptr);

struct BatchResult {
  LossBreakdown mean_loss;
  Eigen::VectorXd grad;  // gradient of the mean batch loss
  int n_rays = 0;
};

// Renders every ray (segmented coarse where a child is assigned, then fine),
// evaluates the total loss, and backpropagates exactly through the quadrature
// and the network. Deterministic for a fixed seed and worker count.
BatchResult batch_loss_and_grad(const FieldModel& model, std::span<const TrainRay> rays,
                                const LossConfig& loss_config,
                                const SamplingConfig& sampling, Rng& rng, int threads);

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m, v;
  long step_count = 0;

  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr);
};

struct LossLogRow {
  int epoch = 0;  // 1-based
  int batch = 0;
  double pd = 0.0, cf = 0.0, cd = 0.0, total = 0.0, lr = 0.0;
};

void write_loss_log(const std::vector<LossLogRow>& rows, const std::string& path);

struct TrainResult {
  FieldModel model;
  std::vector<LossLogRow> log;
};

// Adam over shuffled ray batches with milestone lr decay. checkpoint_cb, when
// set, is invoked with epoch 0 (initial parameters) and after every epoch.
TrainResult train_model(FieldModel model, const std::vector<TrainRay>& rays,
                        const LossConfig& loss_config, const SamplingConfig& sampling,
                        const TrainConfig& train_config, int threads,
                        const std::function<void(int, const FieldModel&)>& checkpoint_cb = {});

}  // namespace lidarfield::train
