#include "lidarfield/field.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace lidarfield::field {

namespace {

constexpr char kCheckpointMagic[8] = {'L', 'F', 'I', 'E', 'L', 'D', 'C', '1'};

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct LayerSpec {
  std::size_t w_offset = 0;
  std::size_t b_offset = 0;
  int rows = 0;  // output width
  int cols = 0;  // input width
};

// Hidden layers followed by the scalar output head.
std::vector<LayerSpec> layer_specs(const FieldConfig& c) {
  std::vector<LayerSpec> specs;
  specs.reserve(static_cast<std::size_t>(c.hidden_layers) + 1);
  std::size_t offset = 0;
  const int in_dim = c.input_dim();
  for (int l = 0; l < c.hidden_layers; ++l) {
    int cols = l == 0 ? in_dim : c.hidden_width;
    if (l > 0 && l == c.skip_layer) cols += in_dim;
    LayerSpec s;
    s.rows = c.hidden_width;
    s.cols = cols;
    s.w_offset = offset;
    offset += static_cast<std::size_t>(s.rows) * s.cols;
    s.b_offset = offset;
    offset += static_cast<std::size_t>(s.rows);
    specs.push_back(s);
  }
  LayerSpec out;
  out.rows = 1;
  out.cols = c.hidden_layers > 0 ? c.hidden_width : in_dim;
  out.w_offset = offset;
  offset += static_cast<std::size_t>(out.cols);
  out.b_offset = offset;
  specs.push_back(out);
  return specs;
}

using ConstMat = Eigen::Map<const Eigen::MatrixXd>;
using MutMat = Eigen::Map<Eigen::MatrixXd>;

Eigen::MatrixXd encode_rows(const Eigen::MatrixXd& normalized, int levels) {
  const Eigen::Index n = normalized.rows();
  Eigen::MatrixXd encoded(n, 3 + 6 * levels);
  encoded.leftCols<3>() = normalized;
  for (int l = 0; l < levels; ++l) {
    const double freq = M_PI * std::pow(2.0, l);
    encoded.middleCols(3 + 6 * l, 3) = (freq * normalized).array().sin();
    encoded.middleCols(6 + 6 * l, 3) = (freq * normalized).array().cos();
  }
  return encoded;
}

}  // namespace

std::size_t param_count(const FieldConfig& config) {
  const auto specs = layer_specs(config);
  const LayerSpec& last = specs.back();
  return last.b_offset + 1;
}

FieldModel make_model(const FieldConfig& config, const Aabb& domain, Rng& rng) {
  FieldModel model;
  model.config = config;
  model.domain = domain;
  model.params = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(param_count(config)));
  for (const LayerSpec& s : layer_specs(config)) {
    const double bound = std::sqrt(6.0 / (s.cols + s.rows));
    double* w = model.params.data() + s.w_offset;
    for (std::size_t i = 0; i < static_cast<std::size_t>(s.rows) * s.cols; ++i) {
      w[i] = rng.uniform(-bound, bound);
    }
    // Biases start at zero.
  }
  return model;
}

Eigen::VectorXd positional_encode(const Vec3& x, int levels) {
  Eigen::MatrixXd row(1, 3);
  row << x.x(), x.y(), x.z();
  return encode_rows(row, levels).row(0);
}

Eigen::VectorXd forward_sigma(const FieldModel& model,
                              const Eigen::Matrix<double, Eigen::Dynamic, 3>& points,
                              ForwardCache* cache) {
  const FieldConfig& c = model.config;
  const auto specs = layer_specs(c);
  const Eigen::Index n = points.rows();

  const Vec3 center = model.domain.center();
  Vec3 half = 0.5 * model.domain.extent();
  for (int a = 0; a < 3; ++a) half[a] = std::max(half[a], 1e-9);
  Eigen::MatrixXd normalized =
      (points.rowwise() - center.transpose()).array().rowwise() /
      half.transpose().array();
  Eigen::MatrixXd encoded = encode_rows(normalized, c.encoding_levels);

  if (cache) {
    cache->inputs.clear();
    cache->preacts.clear();
    cache->inputs.reserve(static_cast<std::size_t>(c.hidden_layers) + 1);
    cache->preacts.reserve(static_cast<std::size_t>(c.hidden_layers));
  }

  Eigen::MatrixXd x = encoded;
  for (int l = 0; l < c.hidden_layers; ++l) {
    if (l > 0 && l == c.skip_layer) {
      // Re-concatenate the encoding with the previous activations.
      Eigen::MatrixXd with_skip(n, x.cols() + encoded.cols());
      with_skip << x, encoded;
      x = std::move(with_skip);
    }
    const LayerSpec& s = specs[static_cast<std::size_t>(l)];
    ConstMat w(model.params.data() + s.w_offset, s.rows, s.cols);
    ConstMat b(model.params.data() + s.b_offset, s.rows, 1);
    Eigen::MatrixXd preact = x * w.transpose();
    preact.rowwise() += b.col(0).transpose();
    if (cache) {
      cache->inputs.push_back(std::move(x));
      cache->preacts.push_back(preact);
    }
    x = preact.unaryExpr([](double v) { return softplus(v); });
  }

  const LayerSpec& out = specs.back();
  ConstMat w_out(model.params.data() + out.w_offset, out.cols, 1);
  const double b_out = model.params[static_cast<Eigen::Index>(out.b_offset)];
  Eigen::VectorXd z = (x * w_out).col(0).array() + b_out;
  if (cache) {
    cache->inputs.push_back(std::move(x));
    cache->out_preact = z;
  }
  if (!z.allFinite()) throw NumericError("field forward produced non-finite values");
  return z.unaryExpr([](double v) { return softplus(v); });
}

double field_sigma(const FieldModel& model, const Vec3& x) {
  Eigen::Matrix<double, Eigen::Dynamic, 3> pts(1, 3);
  pts.row(0) = x.transpose();
  return forward_sigma(model, pts)[0];
}

void backward_sigma(const FieldModel& model, const ForwardCache& cache,
                    const Eigen::VectorXd& dsigma, Eigen::VectorXd& grad) {
  const FieldConfig& c = model.config;
  const auto specs = layer_specs(c);
  if (grad.size() != model.params.size()) {
    grad = Eigen::VectorXd::Zero(model.params.size());
  }

  // Output head: sigma = softplus(z), z = h . w_out + b_out.
  Eigen::VectorXd dz =
      dsigma.array() * cache.out_preact.unaryExpr([](double v) { return sigmoid(v); }).array();
  const LayerSpec& out = specs.back();
  const Eigen::MatrixXd& h_last = cache.inputs.back();
  MutMat gw_out(grad.data() + out.w_offset, out.cols, 1);
  gw_out.col(0).noalias() += h_last.transpose() * dz;
  grad[static_cast<Eigen::Index>(out.b_offset)] += dz.sum();

  ConstMat w_out(model.params.data() + out.w_offset, out.cols, 1);
  Eigen::MatrixXd dh = dz * w_out.col(0).transpose();  // n x width

  for (int l = c.hidden_layers - 1; l >= 0; --l) {
    const LayerSpec& s = specs[static_cast<std::size_t>(l)];
    const Eigen::MatrixXd& preact = cache.preacts[static_cast<std::size_t>(l)];
    const Eigen::MatrixXd& input = cache.inputs[static_cast<std::size_t>(l)];
    Eigen::MatrixXd da =
        dh.array() * preact.unaryExpr([](double v) { return sigmoid(v); }).array();
    MutMat gw(grad.data() + s.w_offset, s.rows, s.cols);
    gw.noalias() += da.transpose() * input;
    MutMat gb(grad.data() + s.b_offset, s.rows, 1);
    gb.col(0) += da.colwise().sum().transpose();
    if (l == 0) break;
    ConstMat w(model.params.data() + s.w_offset, s.rows, s.cols);
    Eigen::MatrixXd dx = da * w;
    if (l == c.skip_layer) {
      // The re-concatenated encoding is constant; only the activations carry gradient.
      dh = dx.leftCols(c.hidden_width);
    } else {
      dh = std::move(dx);
    }
  }
}

void validate_sampling(const SamplingConfig& config) {
  if (config.n_coarse < 2) throw ConfigError("sampling: n_coarse must be >= 2");
  if (config.n_fine < 0) throw ConfigError("sampling: n_fine must be >= 0");
  if (config.lambda_in < 0.0 || config.lambda_in > 1.0) {
    throw ConfigError("sampling: lambda_in must be in [0,1]");
  }
}

std::vector<double> sample_coarse_uniform(const RayInterval& interval, int n, Rng* rng) {
  std::vector<double> depths;
  if (n <= 0) return depths;
  depths.reserve(static_cast<std::size_t>(n));
  const double width = interval.length() / n;
  for (int i = 0; i < n; ++i) {
    const double u = rng ? rng->uniform01() : 0.5;
    depths.push_back(interval.t_enter + (i + u) * width);
  }
  return depths;
}

std::vector<double> sample_child_segmented(const RayInterval& parent,
                                           const RayInterval& child, int n,
                                           double lambda_in, Rng* rng) {
  RayInterval clipped{std::max(child.t_enter, parent.t_enter),
                      std::min(child.t_exit, parent.t_exit)};
  if (clipped.t_enter > clipped.t_exit) clipped = parent;
  const int n_in = static_cast<int>(std::ceil(lambda_in * n));
  std::vector<double> depths = sample_coarse_uniform(parent, n - n_in, rng);
  std::vector<double> inside = sample_coarse_uniform(clipped, n_in, rng);
  depths.insert(depths.end(), inside.begin(), inside.end());
  std::sort(depths.begin(), depths.end());
  return depths;
}

double RenderResult::total_weight() const {
  double sum = 0.0;
  for (double w : weight) sum += w;
  return sum;
}

int RenderResult::peak_index() const {
  if (weight.empty()) return -1;
  return static_cast<int>(std::max_element(weight.begin(), weight.end()) - weight.begin());
}

RenderResult render_weights(const std::vector<double>& depths,
                            const std::vector<double>& sigmas) {
  const std::size_t n = depths.size();
  RenderResult r;
  r.t = depths;
  r.sigma = sigmas;
  r.delta.resize(n);
  r.alpha.resize(n);
  r.transmittance.resize(n);
  r.weight.resize(n);
  double optical_depth = 0.0;  // running sum of sigma_j delta_j, j < k
  for (std::size_t k = 0; k < n; ++k) {
    r.delta[k] = (k + 1 < n) ? depths[k + 1] - depths[k] : kLastDeltaCap;
    const double a = sigmas[k] * r.delta[k];
    r.transmittance[k] = std::exp(-optical_depth);
    r.alpha[k] = -std::expm1(-a);
    r.weight[k] = r.transmittance[k] * r.alpha[k];
    optical_depth += a;
  }
  return r;
}

std::vector<double> sample_fine(const RenderResult& coarse, int n_fine, Rng& rng) {
  std::vector<double> depths;
  if (n_fine <= 0 || coarse.t.size() < 2) return depths;
  const std::size_t bins = coarse.t.size() - 1;
  std::vector<double> cdf(bins + 1, 0.0);
  for (std::size_t k = 0; k < bins; ++k) {
    cdf[k + 1] = cdf[k] + coarse.weight[k] + 1e-5;
  }
  const double total = cdf.back();
  depths.reserve(static_cast<std::size_t>(n_fine));
  for (int i = 0; i < n_fine; ++i) {
    const double u = rng.uniform01() * total;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    std::size_t k = std::min<std::size_t>(bins - 1,
                                          static_cast<std::size_t>(it - cdf.begin()) - 1);
    const double mass = cdf[k + 1] - cdf[k];
    const double frac = mass > 0 ? (u - cdf[k]) / mass : 0.5;
    depths.push_back(coarse.t[k] + frac * (coarse.t[k + 1] - coarse.t[k]));
  }
  std::sort(depths.begin(), depths.end());
  return depths;
}

double render_depth(const RenderResult& result, double lo, double hi) {
  double sum = 0.0;
  for (std::size_t k = 0; k < result.t.size(); ++k) {
    if (result.t[k] >= lo && result.t[k] <= hi) sum += result.weight[k] * result.t[k];
  }
  return sum;
}

double weight_mass(const RenderResult& result, double lo, double hi) {
  double sum = 0.0;
  for (std::size_t k = 0; k < result.t.size(); ++k) {
    if (result.t[k] >= lo && result.t[k] <= hi) sum += result.weight[k];
  }
  return sum;
}

namespace {
template <typename T>
void write_raw(std::ofstream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}
template <typename T>
void read_raw(std::ifstream& in, T& value) {
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
}
}  // namespace

void save_checkpoint(const std::string& path, const FieldModel& model) {
  if (!model.params.allFinite()) {
    throw NumericError("refusing to checkpoint non-finite parameters");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  const std::int32_t header[4] = {model.config.encoding_levels, model.config.hidden_layers,
                                  model.config.hidden_width, model.config.skip_layer};
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  double domain[6] = {model.domain.min_corner.x(), model.domain.min_corner.y(),
                      model.domain.min_corner.z(), model.domain.max_corner.x(),
                      model.domain.max_corner.y(), model.domain.max_corner.z()};
  out.write(reinterpret_cast<const char*>(domain), sizeof(domain));
  const std::uint64_t count = static_cast<std::uint64_t>(model.params.size());
  write_raw(out, count);
  out.write(reinterpret_cast<const char*>(model.params.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
  if (!out) throw DataError("checkpoint write failed: " + path);
}

FieldModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw DataError("bad checkpoint magic: " + path);
  }
  std::int32_t header[4];
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  FieldModel model;
  model.config.encoding_levels = header[0];
  model.config.hidden_layers = header[1];
  model.config.hidden_width = header[2];
  model.config.skip_layer = header[3];
  double domain[6];
  in.read(reinterpret_cast<char*>(domain), sizeof(domain));
  model.domain.min_corner = Vec3(domain[0], domain[1], domain[2]);
  model.domain.max_corner = Vec3(domain[3], domain[4], domain[5]);
  std::uint64_t count = 0;
  read_raw(in, count);
  if (!in || count != param_count(model.config)) {
    throw DataError("checkpoint parameter count mismatch: " + path);
  }
  model.params.resize(static_cast<Eigen::Index>(count));
  in.read(reinterpret_cast<char*>(model.params.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw DataError("truncated checkpoint: " + path);
  if (!model.params.allFinite()) throw DataError("checkpoint holds non-finite parameters");
  return model;
}

}  // namespace lidarfield::field
