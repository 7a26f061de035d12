#include "lidarfield/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace lidarfield::train {

void validate_loss(const LossConfig& c) {
  if (c.lambda_pd < 0 || c.lambda_cf < 0 || c.lambda_cd < 0) {
    throw ConfigError("loss: lambda weights must be >= 0");
  }
  if (c.lambda_in < 0 || c.lambda_in > 1) throw ConfigError("loss: lambda_in must be in [0,1]");
  if (c.gamma < 0) throw ConfigError("loss: gamma must be >= 0");
  if (c.epsilon < 0) throw ConfigError("loss: epsilon must be >= 0");
  if (c.t0 < 0) throw ConfigError("loss: t0 must be >= 0");
}

void validate_train(const TrainConfig& c) {
  if (!(c.lr > 0)) throw ConfigError("train: lr must be positive");
  for (std::size_t i = 1; i < c.milestones.size(); ++i) {
    if (c.milestones[i] <= c.milestones[i - 1]) {
      throw ConfigError("train: milestones must be strictly increasing");
    }
  }
  if (c.batch_rays < 1) throw ConfigError("train: batch_rays must be >= 1");
  if (c.epochs < 0) throw ConfigError("train: epochs must be >= 0");
}

double lr_for_epoch(const TrainConfig& config, int epoch) {
  double lr = config.lr;
  for (int m : config.milestones) {
    if (m <= epoch) lr *= config.decay;
  }
  return lr;
}

double smooth_l1_prime(double x, double y) {
  const double d = std::abs(10.0 * x - 10.0 * y);
  const double s = d < 1.0 ? 0.5 * d * d : d - 0.5;
  return 0.1 * s;
}

double smooth_l1_prime_dx(double x, double y) {
  // 0.1 * d/dx SmoothL1(10x, 10y) = clamp(10(x-y), -1, 1)
  return std::clamp(10.0 * (x - y), -1.0, 1.0);
}

namespace {

// Child-free region: [t_lo, child_lo) and (child_hi, f_parent].
inline bool in_free_region(const RayIntervals& iv, double t) {
  return (t >= iv.t_lo && t < iv.child_lo) || (t > iv.child_hi && t <= iv.f_parent);
}

}  // namespace

LossBreakdown ray_loss(const RenderResult& render, const RayIntervals& iv,
                       double truth_depth, const LossConfig& config) {
  LossBreakdown out;
  const double d_parent = field::render_depth(render, iv.t_lo, iv.f_parent);
  out.pd = smooth_l1_prime(d_parent, truth_depth);
  if (iv.has_child) {
    double cf = 0.0;
    for (std::size_t k = 0; k < render.t.size(); ++k) {
      if (in_free_region(iv, render.t[k])) cf += render.weight[k] * render.weight[k];
    }
    out.cf = cf;
    // Child depth bounds clip to the parent interval, so a wide gamma
    // reproduces the parent loss exactly.
    const double cd_lo = std::max(iv.child_lo - config.gamma, iv.t_lo);
    const double cd_hi = std::min(iv.child_hi + config.gamma, iv.f_parent);
    const double d_child = field::render_depth(render, cd_lo, cd_hi);
    out.cd = smooth_l1_prime(d_child, truth_depth);
  }
  return out;
}

Eigen::VectorXd ray_loss_weight_grad(const RenderResult& render, const RayIntervals& iv,
                                     double truth_depth, const LossConfig& config) {
  const std::size_t n = render.t.size();
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  const double d_parent = field::render_depth(render, iv.t_lo, iv.f_parent);
  const double pd_slope = config.lambda_pd * smooth_l1_prime_dx(d_parent, truth_depth);
  for (std::size_t k = 0; k < n; ++k) {
    const double t = render.t[k];
    if (t >= iv.t_lo && t <= iv.f_parent) g[static_cast<Eigen::Index>(k)] += pd_slope * t;
  }
  if (iv.has_child) {
    const double cd_lo = std::max(iv.child_lo - config.gamma, iv.t_lo);
    const double cd_hi = std::min(iv.child_hi + config.gamma, iv.f_parent);
    const double d_child = field::render_depth(render, cd_lo, cd_hi);
    const double cd_slope = config.lambda_cd * smooth_l1_prime_dx(d_child, truth_depth);
    for (std::size_t k = 0; k < n; ++k) {
      const double t = render.t[k];
      Eigen::Index idx = static_cast<Eigen::Index>(k);
      if (in_free_region(iv, t)) g[idx] += config.lambda_cf * 2.0 * render.weight[k];
      if (t >= cd_lo && t <= cd_hi) g[idx] += cd_slope * t;
    }
  }
  return g;
}

Eigen::VectorXd weight_grad_to_sigma(const RenderResult& render,
                                     const Eigen::VectorXd& dweight) {
  // w_k = T_k (1 - exp(-a_k)) with a_k = sigma_k delta_k and
  // T_k = exp(-sum_{j<k} a_j), so
  //   dL/da_k = g_k T_k exp(-a_k) - sum_{j>k} g_j w_j.
  const std::size_t n = render.t.size();
  Eigen::VectorXd dsigma(static_cast<Eigen::Index>(n));
  double suffix = 0.0;  // sum_{j>k} g_j w_j
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t k = n - 1 - r;
    const Eigen::Index idx = static_cast<Eigen::Index>(k);
    const double exp_neg_a = 1.0 - render.alpha[k];
    const double da = dweight[idx] * render.transmittance[k] * exp_neg_a - suffix;
    dsigma[idx] = da * render.delta[k];
    suffix += dweight[idx] * render.weight[k];
  }
  return dsigma;
}

std::vector<TrainRay> make_train_rays(const std::vector<geom::Ray>& rays,
                                      const Aabb& parent_aabb,
                                      const std::vector<Aabb>& child_aabbs,
                                      const LossConfig& config, RayBuildStats* stats) {
  std::vector<TrainRay> out;
  out.reserve(rays.size());
  RayBuildStats local;
  for (const geom::Ray& ray : rays) {
    const auto parent = geom::ray_aabb_intersect(ray.origin, ray.direction, parent_aabb);
    if (!parent) {
      ++local.dropped_no_parent;
      continue;
    }
    TrainRay tr;
    tr.origin = ray.origin;
    tr.direction = ray.direction;
    tr.depth = ray.depth;
    tr.intervals.t_lo = std::max(config.t0, parent->t_enter);
    tr.intervals.f_parent = parent->t_exit;
    if (tr.intervals.f_parent <= tr.intervals.t_lo) {
      ++local.dropped_no_parent;
      continue;
    }
    if (ray.has_child() && ray.child_index < static_cast<int>(child_aabbs.size())) {
      const auto child =
          geom::ray_aabb_intersect(ray.origin, ray.direction, child_aabbs[ray.child_index]);
      if (child) {
        tr.intervals.has_child = true;
        tr.intervals.child_lo = std::max(child->t_enter - config.epsilon, tr.intervals.t_lo);
        tr.intervals.child_hi = std::min(child->t_exit + config.epsilon, tr.intervals.f_parent);
      } else {
        ++local.child_interval_missing;
      }
    }
    out.push_back(tr);
  }
  if (stats) *stats = local;
  return out;
}

namespace {

// Union of coarse and fine depths, exact duplicates removed.
std::vector<double> merge_depths(const std::vector<double>& coarse,
                                 const std::vector<double>& fine) {
  std::vector<double> merged(coarse.size() + fine.size());
  std::merge(coarse.begin(), coarse.end(), fine.begin(), fine.end(), merged.begin());
  merged.erase(std::unique(merged.begin(), merged.end()), merged.end());
  return merged;
}

void stack_positions(const Vec3& origin, const Vec3& dir, const std::vector<double>& depths,
                     Eigen::Matrix<double, Eigen::Dynamic, 3>& out, Eigen::Index row) {
  for (double t : depths) {
    out.row(row++) = (origin + t * dir).transpose();
  }
}

struct WorkerAccum {
  Eigen::VectorXd grad;
  LossBreakdown loss_sum;
};

}  // namespace

BatchResult batch_loss_and_grad(const FieldModel& model, std::span<const TrainRay> rays,
                                const LossConfig& loss_config, const SamplingConfig& sampling,
                                Rng& rng, int threads) {
  field::validate_sampling(sampling);
  const std::size_t n_rays = rays.size();
  BatchResult result;
  result.n_rays = static_cast<int>(n_rays);
  result.grad = Eigen::VectorXd::Zero(model.params.size());
  if (n_rays == 0) return result;

  // Per-ray rng streams drawn up front so worker count cannot change results.
  std::vector<std::uint64_t> seeds(n_rays);
  for (auto& s : seeds) s = rng.next_u64();

  const std::size_t chunk_rays = 32;  // GEMM-friendly sample blocks
  const std::size_t n_chunks = (n_rays + chunk_rays - 1) / chunk_rays;
  std::vector<WorkerAccum> accums(static_cast<std::size_t>(std::max(1, threads)));

  parallel_for(n_chunks, threads, [&](std::size_t chunk_begin, std::size_t chunk_end, int worker) {
    WorkerAccum& acc = accums[static_cast<std::size_t>(worker)];
    if (acc.grad.size() != model.params.size()) {
      acc.grad = Eigen::VectorXd::Zero(model.params.size());
    }
    field::ForwardCache cache;
    for (std::size_t c = chunk_begin; c < chunk_end; ++c) {
      const std::size_t begin = c * chunk_rays;
      const std::size_t end = std::min(n_rays, begin + chunk_rays);
      const std::size_t count = end - begin;

      // Coarse pass: segmented sampling where a child is assigned.
      std::vector<std::vector<double>> coarse_depths(count);
      Eigen::Index total_coarse = 0;
      for (std::size_t i = 0; i < count; ++i) {
        const TrainRay& ray = rays[begin + i];
        Rng ray_rng(seeds[begin + i]);
        const RayInterval parent{ray.intervals.t_lo, ray.intervals.f_parent};
        if (ray.intervals.has_child) {
          const RayInterval child{ray.intervals.child_lo, ray.intervals.child_hi};
          coarse_depths[i] = field::sample_child_segmented(parent, child, sampling.n_coarse,
                                                           loss_config.lambda_in, &ray_rng);
        } else {
          coarse_depths[i] = field::sample_coarse_uniform(parent, sampling.n_coarse, &ray_rng);
        }
        total_coarse += static_cast<Eigen::Index>(coarse_depths[i].size());
      }
      Eigen::Matrix<double, Eigen::Dynamic, 3> coarse_pts(total_coarse, 3);
      Eigen::Index row = 0;
      for (std::size_t i = 0; i < count; ++i) {
        stack_positions(rays[begin + i].origin, rays[begin + i].direction, coarse_depths[i],
                        coarse_pts, row);
        row += static_cast<Eigen::Index>(coarse_depths[i].size());
      }
      const Eigen::VectorXd coarse_sigma = field::forward_sigma(model, coarse_pts);

      // Fine pass placement from the coarse renders.
      std::vector<std::vector<double>> union_depths(count);
      Eigen::Index total_union = 0;
      row = 0;
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t nc = coarse_depths[i].size();
        std::vector<double> sig(coarse_sigma.data() + row, coarse_sigma.data() + row + nc);
        row += static_cast<Eigen::Index>(nc);
        const field::RenderResult coarse_render = field::render_weights(coarse_depths[i], sig);
        Rng fine_rng(seeds[begin + i] ^ 0x5851f42d4c957f2dULL);
        std::vector<double> fine = field::sample_fine(coarse_render, sampling.n_fine, fine_rng);
        union_depths[i] = merge_depths(coarse_depths[i], fine);
        total_union += static_cast<Eigen::Index>(union_depths[i].size());
      }
      Eigen::Matrix<double, Eigen::Dynamic, 3> union_pts(total_union, 3);
      row = 0;
      for (std::size_t i = 0; i < count; ++i) {
        stack_positions(rays[begin + i].origin, rays[begin + i].direction, union_depths[i],
                        union_pts, row);
        row += static_cast<Eigen::Index>(union_depths[i].size());
      }
      const Eigen::VectorXd union_sigma = field::forward_sigma(model, union_pts, &cache);

      // Losses and the sigma cotangent of every sample in the chunk.
      Eigen::VectorXd dsigma(total_union);
      row = 0;
      for (std::size_t i = 0; i < count; ++i) {
        const TrainRay& ray = rays[begin + i];
        const std::size_t nu = union_depths[i].size();
        std::vector<double> sig(union_sigma.data() + row, union_sigma.data() + row + nu);
        const field::RenderResult render = field::render_weights(union_depths[i], sig);
        const LossBreakdown loss = ray_loss(render, ray.intervals, ray.depth, loss_config);
        acc.loss_sum.pd += loss.pd;
        acc.loss_sum.cf += loss.cf;
        acc.loss_sum.cd += loss.cd;
        const Eigen::VectorXd gw =
            ray_loss_weight_grad(render, ray.intervals, ray.depth, loss_config);
        dsigma.segment(row, static_cast<Eigen::Index>(nu)) = weight_grad_to_sigma(render, gw);
        row += static_cast<Eigen::Index>(nu);
      }
      field::backward_sigma(model, cache, dsigma, acc.grad);
    }
  });

  for (const WorkerAccum& acc : accums) {
    if (acc.grad.size() == model.params.size()) result.grad += acc.grad;
    result.mean_loss.pd += acc.loss_sum.pd;
    result.mean_loss.cf += acc.loss_sum.cf;
    result.mean_loss.cd += acc.loss_sum.cd;
  }
  const double inv = 1.0 / static_cast<double>(n_rays);
  result.grad *= inv;
  result.mean_loss.pd *= inv;
  result.mean_loss.cf *= inv;
  result.mean_loss.cd *= inv;
  if (!result.grad.allFinite()) {
    throw NumericError("non-finite gradient in batch of " + std::to_string(n_rays) + " rays");
  }
  return result;
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double lr) {
  if (m.size() != params.size()) {
    m = Eigen::VectorXd::Zero(params.size());
    v = Eigen::VectorXd::Zero(params.size());
    step_count = 0;
  }
  ++step_count;
  m = beta1 * m + (1.0 - beta1) * grad;
  v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
  params -= (lr / bc1) * m.cwiseQuotient(((v / bc2).cwiseSqrt().array() + eps).matrix());
}

void write_loss_log(const std::vector<LossLogRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write loss log: " + path);
  out << "epoch,batch,pd,cf,cd,total,lr\n";
  char buf[192];
  for (const LossLogRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.epoch, r.batch,
                  r.pd, r.cf, r.cd, r.total, r.lr);
    out << buf;
  }
}

TrainResult train_model(FieldModel model, const std::vector<TrainRay>& rays,
                        const LossConfig& loss_config, const SamplingConfig& sampling,
                        const TrainConfig& train_config, int threads,
                        const std::function<void(int, const FieldModel&)>& checkpoint_cb) {
  validate_loss(loss_config);
  validate_train(train_config);
  field::validate_sampling(sampling);

  TrainResult result;
  if (checkpoint_cb) checkpoint_cb(0, model);

  Rng rng(train_config.seed);
  Adam adam;
  std::vector<std::size_t> order(rays.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<TrainRay> batch;
  batch.reserve(static_cast<std::size_t>(train_config.batch_rays));

  for (int epoch = 0; epoch < train_config.epochs; ++epoch) {
    const double lr = lr_for_epoch(train_config, epoch);
    rng.shuffle(order);
    const std::size_t batch_size = static_cast<std::size_t>(train_config.batch_rays);
    const std::size_t n_batches = order.empty() ? 0 : (order.size() + batch_size - 1) / batch_size;
    for (std::size_t b = 0; b < n_batches; ++b) {
      batch.clear();
      const std::size_t begin = b * batch_size;
      const std::size_t end = std::min(order.size(), begin + batch_size);
      for (std::size_t i = begin; i < end; ++i) batch.push_back(rays[order[i]]);
      BatchResult br = batch_loss_and_grad(model, batch, loss_config, sampling, rng, threads);
      if (!std::isfinite(br.mean_loss.total(loss_config))) {
        throw NumericError("non-finite training loss at epoch " + std::to_string(epoch + 1));
      }
      adam.step(model.params, br.grad, lr);
      LossLogRow row;
      row.epoch = epoch + 1;
      row.batch = static_cast<int>(b);
      row.pd = br.mean_loss.pd;
      row.cf = br.mean_loss.cf;
      row.cd = br.mean_loss.cd;
      row.total = br.mean_loss.total(loss_config);
      row.lr = lr;
      result.log.push_back(row);
    }
    if (checkpoint_cb) checkpoint_cb(epoch + 1, model);
  }
  result.model = std::move(model);
  return result;
}

}  // namespace lidarfield::train
