#include "voxsurf/field.hpp"

#include "voxsurf/error.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace voxsurf {

int encoded_dim(int dim, int n_freq) { return dim * (1 + 2 * n_freq); }

std::vector<double> positional_encode(std::span<const double> v, int n_freq) {
  if (n_freq < 0) throw FieldError("negative frequency count");
  const std::size_t d = v.size();
  std::vector<double> out(static_cast<std::size_t>(encoded_dim(static_cast<int>(d), n_freq)));
  std::copy(v.begin(), v.end(), out.begin());
  for (int k = 0; k < n_freq; ++k) {
    const double w = std::ldexp(std::numbers::pi, k);
    for (std::size_t i = 0; i < d; ++i) {
      out[d * (1 + 2 * k) + i] = std::sin(w * v[i]);
      out[d * (2 + 2 * k) + i] = std::cos(w * v[i]);
    }
  }
  return out;
}

namespace {

MlpSpec make_geometry_spec(const FieldConfig& c) {
  MlpSpec s;
  s.dims.push_back(encoded_dim(c.embedding_dim, c.embedding_freqs));
  for (int l = 0; l + 1 < c.geometry_layers; ++l) s.dims.push_back(c.geometry_hidden);
  s.dims.push_back(1 + c.feature_dim);
  s.hidden = Activation::Softplus;
  s.output = Activation::Identity;
  s.softplus_beta = c.softplus_beta;
  return s;
}

MlpSpec make_appearance_spec(const FieldConfig& c) {
  MlpSpec s;
  s.dims.push_back(c.feature_dim + encoded_dim(3, c.direction_freqs) +
                   encoded_dim(c.embedding_dim, c.embedding_freqs));
  for (int l = 0; l + 1 < c.appearance_layers; ++l) s.dims.push_back(c.appearance_hidden);
  s.dims.push_back(3);
  s.hidden = Activation::Relu;
  s.output = Activation::Sigmoid;
  return s;
}

void init_uniform_fan_in(const MlpSpec& spec, std::span<float> params, std::mt19937_64& rng) {
  for (int l = 0; l < spec.layers(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.dims[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    const std::size_t begin = spec.weight_offset(l);
    const std::size_t end = spec.weight_offset(l + 1);
    for (std::size_t i = begin; i < end; ++i) params[i] = static_cast<float>(dist(rng));
  }
}

}  // namespace

FieldModel::FieldModel(const FieldConfig& config, std::uint64_t seed)
    : config_(config), geometry_(make_geometry_spec(config)), appearance_(make_appearance_spec(config)) {
  if (config.embedding_dim <= 0 || config.feature_dim < 0 || config.geometry_layers < 1 ||
      config.appearance_layers < 1)
    throw FieldError("invalid field configuration");
  params_.assign(geometry_.param_count() + appearance_.param_count() + 1, 0.0f);
  std::mt19937_64 rng(seed);
  init_uniform_fan_in(geometry_, std::span<float>(params_).subspan(0, geometry_.param_count()), rng);
  init_uniform_fan_in(appearance_,
                      std::span<float>(params_).subspan(geometry_.param_count(), appearance_.param_count()), rng);
  params_.back() = 0.0f;  // s = 1
}

bool FieldModel::finite() const {
  return std::all_of(params_.begin(), params_.end(), [](float v) { return std::isfinite(v); });
}

template <typename Real>
FieldKernels<Real>::FieldKernels(const FieldModel& model)
    : config(model.config()),
      geometry(model.geometry_spec(), model.geometry_params()),
      appearance(model.appearance_spec(), model.appearance_params()),
      s(model.s()) {}

void FieldGradients::reset(const FieldModel& model, const VoxelGrid& grid) {
  params.assign(model.params().size(), 0.0);
  embedding_dim = grid.embedding_dim();
  embeddings.assign(grid.vertex_count() * static_cast<std::size_t>(embedding_dim), 0.0);
  touched.assign(grid.vertex_count(), 0);
}

void FieldGradients::add(const FieldGradients& other) {
  for (std::size_t i = 0; i < params.size(); ++i) params[i] += other.params[i];
  for (std::size_t v = 0; v < touched.size(); ++v) {
    if (!other.touched[v]) continue;
    touched[v] = 1;
    const std::size_t base = v * static_cast<std::size_t>(embedding_dim);
    for (int j = 0; j < embedding_dim; ++j) embeddings[base + j] += other.embeddings[base + j];
  }
}

void FieldGradients::scale(double factor) {
  for (auto& g : params) g *= factor;
  for (auto& g : embeddings) g *= factor;
}

bool FieldGradients::all_zero() const {
  return std::all_of(params.begin(), params.end(), [](double g) { return g == 0.0; }) &&
         std::all_of(embeddings.begin(), embeddings.end(), [](double g) { return g == 0.0; });
}

template <typename Real>
void FieldPass<Real>::forward(std::span<const Vec3> points, std::span<const std::uint32_t> voxels,
                              std::span<const Vec3> dirs, bool want_gradient) {
  const FieldConfig& cfg = kernels_->config;
  const int le = cfg.embedding_dim;
  const int freqs = cfg.embedding_freqs;
  n_ = points.size();
  has_gradient_ = want_gradient;
  has_color_ = !dirs.empty();
  const auto n = static_cast<Eigen::Index>(n_);
  const double inv_h = 1.0 / grid_->voxel_size();

  corners_.resize(n_);
  weights_.resize(n_);
  if (want_gradient) dweights_.resize(n_);
  embedding_.setZero(le, n);
  d_embedding_.assign(want_gradient ? 3 : 0, Mat::Zero(le, n));

  const std::span<const float> store = grid_->embeddings();
  for (std::size_t i = 0; i < n_; ++i) {
    const std::uint32_t v = voxels[i];
    const Vec3 u = grid_->local_coords(v, points[i]);
    corners_[i] = grid_->corners(v);
    weights_[i] = trilinear_weights(u);
    if (want_gradient) {
      dweights_[i] = trilinear_weight_derivatives(u);
      for (auto& axis : dweights_[i])
        for (auto& d : axis) d *= inv_h;
    }
    for (int c = 0; c < 8; ++c) {
      const float* e = store.data() + static_cast<std::size_t>(corners_[i][c]) * le;
      const Real w = static_cast<Real>(weights_[i][c]);
      for (int j = 0; j < le; ++j) embedding_(j, static_cast<Eigen::Index>(i)) += w * static_cast<Real>(e[j]);
      if (want_gradient) {
        for (int k = 0; k < 3; ++k) {
          const Real dw = static_cast<Real>(dweights_[i][k][c]);
          for (int j = 0; j < le; ++j) d_embedding_[k](j, static_cast<Eigen::Index>(i)) += dw * static_cast<Real>(e[j]);
        }
      }
    }
  }

  // Positional encoding of the embedding and its tangents.
  const int enc = encoded_dim(le, freqs);
  encoded_.resize(enc, n);
  encoded_.topRows(le) = embedding_;
  d_encoded_.assign(want_gradient ? 3 : 0, Mat(enc, n));
  for (int k = 0; k < static_cast<int>(d_encoded_.size()); ++k) d_encoded_[k].topRows(le) = d_embedding_[k];
  for (int f = 0; f < freqs; ++f) {
    const Real w = static_cast<Real>(std::ldexp(std::numbers::pi, f));
    auto s = encoded_.middleRows(le * (1 + 2 * f), le);
    auto c = encoded_.middleRows(le * (2 + 2 * f), le);
    s.array() = (w * embedding_.array()).sin();
    c.array() = (w * embedding_.array()).cos();
    for (int k = 0; k < static_cast<int>(d_encoded_.size()); ++k) {
      d_encoded_[k].middleRows(le * (1 + 2 * f), le).array() = w * c.array() * d_embedding_[k].array();
      d_encoded_[k].middleRows(le * (2 + 2 * f), le).array() = -w * s.array() * d_embedding_[k].array();
    }
  }

  kernels_->geometry.forward(encoded_, d_encoded_, 1, geometry_cache_);

  if (has_color_) {
    const int lf = cfg.feature_dim;
    const int dir_dim = encoded_dim(3, cfg.direction_freqs);
    Mat input(lf + dir_dim + enc, n);
    input.topRows(lf) = geometry_cache_.a.back().bottomRows(lf);
    std::vector<double> d3(3);
    for (std::size_t i = 0; i < n_; ++i) {
      d3 = {dirs[i].x(), dirs[i].y(), dirs[i].z()};
      const auto pe = positional_encode(d3, cfg.direction_freqs);
      for (int r = 0; r < dir_dim; ++r) input(lf + r, static_cast<Eigen::Index>(i)) = static_cast<Real>(pe[r]);
    }
    input.bottomRows(enc) = encoded_;
    kernels_->appearance.forward(input, {}, 0, appearance_cache_);
  }
}

template <typename Real>
Vec3 FieldPass<Real>::gradient(std::size_t i) const {
  const auto& da = geometry_cache_.da.back();
  return {static_cast<double>(da[0](0, i)), static_cast<double>(da[1](0, i)), static_cast<double>(da[2](0, i))};
}

template <typename Real>
Vec3 FieldPass<Real>::color(std::size_t i) const {
  const auto& a = appearance_cache_.a.back();
  return {static_cast<double>(a(0, i)), static_cast<double>(a(1, i)), static_cast<double>(a(2, i))};
}

template <typename Real>
void FieldPass<Real>::backward(std::span<const double> g_sdf, std::span<const Vec3> g_gradient,
                               std::span<const Vec3> g_color, FieldGradients& out) const {
  const FieldConfig& cfg = kernels_->config;
  const int le = cfg.embedding_dim;
  const int lf = cfg.feature_dim;
  const int freqs = cfg.embedding_freqs;
  const int enc = encoded_dim(le, freqs);
  const auto n = static_cast<Eigen::Index>(n_);
  const std::size_t geo_params = kernels_->geometry.spec().param_count();

  Mat g_out = Mat::Zero(1 + lf, n);
  for (Eigen::Index i = 0; i < n; ++i) g_out(0, i) = static_cast<Real>(g_sdf[i]);
  Mat g_encoded = Mat::Zero(enc, n);

  if (has_color_ && !g_color.empty()) {
    Mat g_rgb(3, n);
    for (Eigen::Index i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c) g_rgb(c, i) = static_cast<Real>(g_color[i][c]);
    Mat g_in;
    kernels_->appearance.backward(
        appearance_cache_, g_rgb, {},
        std::span<double>(out.params).subspan(geo_params, kernels_->appearance.spec().param_count()), &g_in,
        nullptr);
    g_out.bottomRows(lf) = g_in.topRows(lf);
    g_encoded += g_in.bottomRows(enc);
  }

  std::vector<Mat> g_tangent_out;
  const bool tangents = has_gradient_ && !g_gradient.empty();
  if (tangents) {
    g_tangent_out.assign(3, Mat(1, n));
    for (Eigen::Index i = 0; i < n; ++i)
      for (int k = 0; k < 3; ++k) g_tangent_out[k](0, i) = static_cast<Real>(g_gradient[i][k]);
  }
  Mat g_in;
  std::vector<Mat> g_d_in;
  kernels_->geometry.backward(geometry_cache_, g_out, g_tangent_out,
                              std::span<double>(out.params).subspan(0, geo_params), &g_in,
                              tangents ? &g_d_in : nullptr);
  g_encoded += g_in;

  // Back through the positional encoding.
  Mat g_e = g_encoded.topRows(le);
  std::vector<Mat> g_de;
  if (tangents) {
    g_de.resize(3);
    for (int k = 0; k < 3; ++k) g_de[k] = g_d_in[k].topRows(le);
  }
  for (int f = 0; f < freqs; ++f) {
    const Real w = static_cast<Real>(std::ldexp(std::numbers::pi, f));
    const auto s = encoded_.middleRows(le * (1 + 2 * f), le).array();
    const auto c = encoded_.middleRows(le * (2 + 2 * f), le).array();
    const auto gs = g_encoded.middleRows(le * (1 + 2 * f), le).array();
    const auto gc = g_encoded.middleRows(le * (2 + 2 * f), le).array();
    g_e.array() += w * (c * gs - s * gc);
    if (!tangents) continue;
    for (int k = 0; k < 3; ++k) {
      const auto gds = g_d_in[k].middleRows(le * (1 + 2 * f), le).array();
      const auto gdc = g_d_in[k].middleRows(le * (2 + 2 * f), le).array();
      const auto de = d_embedding_[k].array();
      g_e.array() -= (w * w) * (gds * s + gdc * c) * de;
      g_de[k].array() += w * (gds * c - gdc * s);
    }
  }

  // Scatter to the corner embeddings.
  for (std::size_t i = 0; i < n_; ++i) {
    for (int c = 0; c < 8; ++c) {
      const std::uint32_t vert = corners_[i][c];
      out.touched[vert] = 1;
      double* dst = out.embeddings.data() + static_cast<std::size_t>(vert) * le;
      const double w = weights_[i][c];
      for (int j = 0; j < le; ++j) {
        double g = w * static_cast<double>(g_e(j, static_cast<Eigen::Index>(i)));
        if (tangents)
          for (int k = 0; k < 3; ++k) g += dweights_[i][k][c] * static_cast<double>(g_de[k](j, static_cast<Eigen::Index>(i)));
        dst[j] += g;
      }
    }
  }
}

template struct FieldKernels<float>;
template struct FieldKernels<double>;
template class FieldPass<float>;
template class FieldPass<double>;

namespace {

void require_finite(const FieldModel& model) {
  if (!model.finite()) throw FieldError("non-finite field parameters");
}

}  // namespace

GeometryOutput geometry_eval(const FieldModel& model, std::span<const double> embedding) {
  require_finite(model);
  const FieldConfig& cfg = model.config();
  if (static_cast<int>(embedding.size()) != cfg.embedding_dim) throw FieldError("embedding length mismatch");
  const FieldKernels<double> k(model);
  const auto pe = positional_encode(embedding, cfg.embedding_freqs);
  Eigen::MatrixXd x = Eigen::Map<const Eigen::VectorXd>(pe.data(), static_cast<Eigen::Index>(pe.size()));
  MlpKernel<double>::Cache cache;
  k.geometry.forward(x, {}, 0, cache);
  GeometryOutput out;
  const auto& y = cache.a.back();
  out.sdf = y(0, 0);
  out.feature.assign(y.data() + 1, y.data() + y.rows());
  return out;
}

Vec3 appearance_eval(const FieldModel& model, std::span<const double> feature, const Vec3& dir,
                     std::span<const double> embedding) {
  require_finite(model);
  const FieldConfig& cfg = model.config();
  if (!(dir.norm() > 0.0)) throw FieldError("zero-length direction");
  if (std::abs(dir.norm() - 1.0) > 1e-6) throw FieldError("direction must be unit length");
  if (static_cast<int>(feature.size()) != cfg.feature_dim) throw FieldError("feature length mismatch");
  if (static_cast<int>(embedding.size()) != cfg.embedding_dim) throw FieldError("embedding length mismatch");
  const FieldKernels<double> k(model);
  const std::vector<double> d3{dir.x(), dir.y(), dir.z()};
  const auto pd = positional_encode(d3, cfg.direction_freqs);
  const auto pe = positional_encode(embedding, cfg.embedding_freqs);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(feature.size() + pd.size() + pe.size()), 1);
  Eigen::Index r = 0;
  for (double v : feature) x(r++, 0) = v;
  for (double v : pd) x(r++, 0) = v;
  for (double v : pe) x(r++, 0) = v;
  MlpKernel<double>::Cache cache;
  k.appearance.forward(x, {}, 0, cache);
  return cache.a.back().col(0);
}

double sdf_at(const VoxelGrid& grid, const FieldModel& model, const Vec3& p) {
  std::vector<double> e(static_cast<std::size_t>(grid.embedding_dim()));
  if (!grid.gamma(p, e)) throw FieldError("miss");
  return geometry_eval(model, e).sdf;
}

Vec3 sdf_gradient(const VoxelGrid& grid, const FieldModel& model, const Vec3& p) {
  require_finite(model);
  const auto v = grid.locate(p);
  if (!v) throw FieldError("miss");
  const FieldKernels<double> k(model);
  FieldPass<double> pass(k, grid);
  const Vec3 pts[1] = {p};
  const std::uint32_t ids[1] = {*v};
  pass.forward(pts, ids, {}, true);
  return pass.gradient(0);
}

namespace {
constexpr std::size_t kChunk = 4096;
}

NeuralField::NeuralField(const FieldModel& model, bool double_precision)
    : double_(double_precision), s_(model.s()) {
  if (double_)
    double_kernels_ = FieldKernels<double>(model);
  else
    float_kernels_ = FieldKernels<float>(model);
}

template <typename Real>
void NeuralField::run(const FieldKernels<Real>& kernels, const VoxelGrid& grid, std::span<const Vec3> points,
                      std::span<const std::uint32_t> voxels, std::span<const Vec3> dirs, bool want_gradient,
                      std::span<double> sdf, std::span<Vec3> rgb, std::span<Vec3> grad) const {
  FieldPass<Real> pass(kernels, grid);
  for (std::size_t begin = 0; begin < points.size(); begin += kChunk) {
    const std::size_t count = std::min(kChunk, points.size() - begin);
    pass.forward(points.subspan(begin, count), voxels.subspan(begin, count),
                 dirs.empty() ? dirs : dirs.subspan(begin, count), want_gradient);
    for (std::size_t i = 0; i < count; ++i) {
      sdf[begin + i] = pass.sdf(i);
      if (!rgb.empty()) rgb[begin + i] = pass.color(i);
      if (!grad.empty()) grad[begin + i] = pass.gradient(i);
    }
  }
}

void NeuralField::sdf(const VoxelGrid& grid, std::span<const Vec3> points, std::span<const std::uint32_t> voxels,
                      std::span<double> out) const {
  if (double_)
    run(double_kernels_, grid, points, voxels, {}, false, out, {}, {});
  else
    run(float_kernels_, grid, points, voxels, {}, false, out, {}, {});
}

void NeuralField::shade(const VoxelGrid& grid, std::span<const Vec3> points, std::span<const std::uint32_t> voxels,
                        std::span<const Vec3> dirs, std::span<double> sdf, std::span<Vec3> rgb) const {
  if (double_)
    run(double_kernels_, grid, points, voxels, dirs, false, sdf, rgb, {});
  else
    run(float_kernels_, grid, points, voxels, dirs, false, sdf, rgb, {});
}

void NeuralField::gradients(const VoxelGrid& grid, std::span<const Vec3> points,
                            std::span<const std::uint32_t> voxels, std::span<double> sdf,
                            std::span<Vec3> grad) const {
  if (double_)
    run(double_kernels_, grid, points, voxels, {}, true, sdf, {}, grad);
  else
    run(float_kernels_, grid, points, voxels, {}, true, sdf, {}, grad);
}

void AnalyticField::sdf(const VoxelGrid&, std::span<const Vec3> points, std::span<const std::uint32_t>,
                        std::span<double> out) const {
  for (std::size_t i = 0; i < points.size(); ++i) out[i] = sdf_(points[i]);
}

void AnalyticField::shade(const VoxelGrid&, std::span<const Vec3> points, std::span<const std::uint32_t>,
                          std::span<const Vec3> dirs, std::span<double> sdf, std::span<Vec3> rgb) const {
  for (std::size_t i = 0; i < points.size(); ++i) {
    sdf[i] = sdf_(points[i]);
    rgb[i] = color_ ? color_(points[i], dirs[i]) : Vec3::Zero();
  }
}

}  // namespace voxsurf
