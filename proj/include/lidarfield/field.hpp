#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lidarfield/geom.hpp"

namespace lidarfield::field {

using geom::Aabb;
using geom::RayInterval;

// Gap assigned to the last sample, so its opacity stays finite.
constexpr double kLastDeltaCap = 1e3;

struct FieldConfig {
  int encoding_levels = 10;
  int hidden_layers = 8;
  int hidden_width = 256;
  int skip_layer = 4;  // hidden layer whose input is re-concatenated with the encoding

  int input_dim() const { return 3 + 6 * encoding_levels; }
};

std::size_t param_count(const FieldConfig& config);

// Density-only neural field. Inputs are normalized to the domain AABB
// before frequency encoding; the output head is softplus so sigma >= 0.
struct FieldModel {
  FieldConfig config;
  Aabb domain;
  Eigen::VectorXd params;
};

FieldModel make_model(const FieldConfig& config, const Aabb& domain, Rng& rng);

// [x, sin(2^0 pi x), cos(2^0 pi x), ..., sin(2^{L-1} pi x), cos(2^{L-1} pi x)]
Eigen::VectorXd positional_encode(const Vec3& x, int levels);

// Per-batch activations kept for the backward pass.
struct ForwardCache {
  std::vector<Eigen::MatrixXd> inputs;   // actual input of each hidden layer
  std::vector<Eigen::MatrixXd> preacts;  // pre-activation of each hidden layer
  Eigen::VectorXd out_preact;
};

// points: n x 3 world coordinates inside the (possibly inflated) domain.
Eigen::VectorXd forward_sigma(const FieldModel& model,
                              const Eigen::Matrix<double, Eigen::Dynamic, 3>& points,
                              ForwardCache* cache = nullptr);
double field_sigma(const FieldModel& model, const Vec3& x);

// Accumulates d(loss)/d(params) into grad given d(loss)/d(sigma) per sample.
void backward_sigma(const FieldModel& model, const ForwardCache& cache,
                    const Eigen::VectorXd& dsigma, Eigen::VectorXd& grad);

struct SamplingConfig {
  int n_coarse = 768;
  int n_fine = 1536;
  double lambda_in = 0.1;
};

void validate_sampling(const SamplingConfig& config);

// Stratified uniform depths over the interval; rng == nullptr places midpoints.
std::vector<double> sample_coarse_uniform(const RayInterval& interval, int n, Rng* rng);

// ceil(lambda_in * n) stratified draws inside the child interval, the rest
// stratified over the whole parent interval; merged and sorted.
std::vector<double> sample_child_segmented(const RayInterval& parent,
                                           const RayInterval& child, int n,
                                           double lambda_in, Rng* rng);

struct RenderResult {
  std::vector<double> t;       // strictly increasing sample depths
  std::vector<double> sigma;
  std::vector<double> delta;
  std::vector<double> alpha;
  std::vector<double> transmittance;
  std::vector<double> weight;

  double total_weight() const;
  int peak_index() const;  // argmax weight, -1 if empty
};

// Discrete volume rendering quadrature:
//   delta_k = t_{k+1} - t_k (last capped), alpha_k = 1 - exp(-sigma_k delta_k),
//   T_k = prod_{j<k} (1 - alpha_j), w_k = T_k alpha_k.
RenderResult render_weights(const std::vector<double>& depths,
                            const std::vector<double>& sigmas);

// Inverse-CDF draws from the piecewise-constant density proportional to the
// coarse weights (1e-5 floor per bin, which doubles as the uniform fallback
// when all weights vanish).
std::vector<double> sample_fine(const RenderResult& coarse, int n_fine, Rng& rng);

// Unnormalized sum_{lo <= t_k <= hi} w_k t_k; the varying integration limits
// of the depth losses and one-step inference.
double render_depth(const RenderResult& result, double lo, double hi);
// sum_{lo <= t_k <= hi} w_k.
double weight_mass(const RenderResult& result, double lo, double hi);

// Versioned little-endian checkpoint: magic, field config, domain, params.
void save_checkpoint(const std::string& path, const FieldModel& model);
FieldModel load_checkpoint(const std::string& path);

}  // namespace lidarfield::field
