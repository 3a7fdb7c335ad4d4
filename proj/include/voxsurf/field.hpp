#pragma once

#include "voxsurf/network.hpp"
#include "voxsurf/voxgrid.hpp"

#include <functional>
#include <memory>

namespace voxsurf {

/// Network shapes. Defaults follow the object-scale setup: 16-d embeddings,
/// 4-layer x 128-unit extractors, 4 encoding frequencies on embeddings and 8 on
/// view directions.
struct FieldConfig {
  int embedding_dim = 16;
  int feature_dim = 128;
  int geometry_hidden = 128;
  int geometry_layers = 4;  // linear layers, so layers - 1 hidden activations
  int appearance_hidden = 128;
  int appearance_layers = 4;
  int embedding_freqs = 4;
  int direction_freqs = 8;
  double softplus_beta = 100.0;
};

int encoded_dim(int dim, int n_freq);

/// concat(v, sin(2^k pi v), cos(2^k pi v) for k = 0..n_freq-1).
std::vector<double> positional_encode(std::span<const double> v, int n_freq);

/// Learned extractors plus the S-density sharpness. All trainable scalars sit
/// in one flat float array: geometry MLP, appearance MLP, then log(s).
class FieldModel {
 public:
  FieldModel() = default;
  FieldModel(const FieldConfig& config, std::uint64_t seed);

  const FieldConfig& config() const { return config_; }
  const MlpSpec& geometry_spec() const { return geometry_; }
  const MlpSpec& appearance_spec() const { return appearance_; }

  std::span<float> params() { return params_; }
  std::span<const float> params() const { return params_; }
  std::span<const float> geometry_params() const { return {params_.data(), geometry_.param_count()}; }
  std::span<const float> appearance_params() const {
    return {params_.data() + geometry_.param_count(), appearance_.param_count()};
  }
  std::size_t geometry_offset() const { return 0; }
  std::size_t appearance_offset() const { return geometry_.param_count(); }
  std::size_t log_s_offset() const { return params_.size() - 1; }

  float log_s() const { return params_.back(); }
  void set_log_s(float v) { params_.back() = v; }
  double s() const { return std::exp(static_cast<double>(params_.back())); }

  bool finite() const;

 private:
  FieldConfig config_;
  MlpSpec geometry_;
  MlpSpec appearance_;
  std::vector<float> params_;
};

/// Network weights converted to the compute precision once per use.
template <typename Real>
struct FieldKernels {
  FieldKernels() = default;
  explicit FieldKernels(const FieldModel& model);

  FieldConfig config;
  MlpKernel<Real> geometry;
  MlpKernel<Real> appearance;
  double s = 1.0;
};

/// Gradient sink shaped like a model + grid pair.
struct FieldGradients {
  std::vector<double> params;      // FieldModel::params layout
  std::vector<double> embeddings;  // vertex-major, embedding_dim per vertex
  std::vector<std::uint8_t> touched;
  int embedding_dim = 0;

  void reset(const FieldModel& model, const VoxelGrid& grid);
  void add(const FieldGradients& other);
  void scale(double factor);
  bool all_zero() const;
};

/// Batched forward/backward over points with known voxels. Keeps what the
/// reverse pass needs; call backward at most once per forward.
template <typename Real>
class FieldPass {
 public:
  using Mat = typename MlpKernel<Real>::Mat;

  FieldPass(const FieldKernels<Real>& kernels, const VoxelGrid& grid) : kernels_(&kernels), grid_(&grid) {}

  /// `dirs` empty skips the appearance extractor. `want_gradient` computes the
  /// spatial SDF gradient via forward-mode tangents.
  void forward(std::span<const Vec3> points, std::span<const std::uint32_t> voxels, std::span<const Vec3> dirs,
               bool want_gradient);

  std::size_t size() const { return n_; }
  double sdf(std::size_t i) const { return static_cast<double>(geometry_cache_.a.back()(0, i)); }
  Vec3 gradient(std::size_t i) const;
  Vec3 color(std::size_t i) const;
  double feature(std::size_t i, int k) const { return static_cast<double>(geometry_cache_.a.back()(1 + k, i)); }

  /// Accumulate parameter and embedding gradients for the given adjoints.
  /// `g_gradient` and `g_color` may be empty.
  void backward(std::span<const double> g_sdf, std::span<const Vec3> g_gradient, std::span<const Vec3> g_color,
                FieldGradients& out) const;

 private:
  const FieldKernels<Real>* kernels_;
  const VoxelGrid* grid_;
  std::size_t n_ = 0;
  bool has_gradient_ = false;
  bool has_color_ = false;
  std::vector<std::array<std::uint32_t, 8>> corners_;
  std::vector<std::array<double, 8>> weights_;
  std::vector<std::array<std::array<double, 8>, 3>> dweights_;  // d w / d p
  Mat embedding_;                 // L_e x n
  std::vector<Mat> d_embedding_;  // per axis
  Mat encoded_;                   // PE(e)
  std::vector<Mat> d_encoded_;
  typename MlpKernel<Real>::Cache geometry_cache_;
  typename MlpKernel<Real>::Cache appearance_cache_;
};

extern template struct FieldKernels<float>;
extern template struct FieldKernels<double>;
extern template class FieldPass<float>;
extern template class FieldPass<double>;

struct GeometryOutput {
  double sdf = 0.0;
  std::vector<double> feature;
};

/// F_sigma on a raw embedding. Throws FieldError on non-finite parameters or a
/// wrong embedding length.
GeometryOutput geometry_eval(const FieldModel& model, std::span<const double> embedding);

/// F_c; `dir` must be unit length within 1e-6.
Vec3 appearance_eval(const FieldModel& model, std::span<const double> feature, const Vec3& dir,
                     std::span<const double> embedding);

/// SDF at p through the grid; throws FieldError("miss") outside all voxels.
double sdf_at(const VoxelGrid& grid, const FieldModel& model, const Vec3& p);

/// Exact spatial gradient of the SDF at p (containing voxel by [min, max)).
Vec3 sdf_gradient(const VoxelGrid& grid, const FieldModel& model, const Vec3& p);

/// Everything the renderer needs from a field: SDF, colour and sharpness.
class RadianceField : public SdfField {
 public:
  virtual void shade(const VoxelGrid& grid, std::span<const Vec3> points, std::span<const std::uint32_t> voxels,
                     std::span<const Vec3> dirs, std::span<double> sdf, std::span<Vec3> rgb) const = 0;
  virtual double sharpness() const = 0;
};

/// Radiance field backed by a trained model. Holds converted weights; rebuild
/// after the model changes. Evaluates in float unless asked for double.
class NeuralField final : public RadianceField {
 public:
  explicit NeuralField(const FieldModel& model, bool double_precision = false);

  void sdf(const VoxelGrid& grid, std::span<const Vec3> points, std::span<const std::uint32_t> voxels,
           std::span<double> out) const override;
  void shade(const VoxelGrid& grid, std::span<const Vec3> points, std::span<const std::uint32_t> voxels,
             std::span<const Vec3> dirs, std::span<double> sdf, std::span<Vec3> rgb) const override;
  double sharpness() const override { return s_; }

  /// SDF gradients at points inside known voxels.
  void gradients(const VoxelGrid& grid, std::span<const Vec3> points, std::span<const std::uint32_t> voxels,
                 std::span<double> sdf, std::span<Vec3> grad) const;

  bool double_precision() const { return double_; }

 private:
  template <typename Real>
  void run(const FieldKernels<Real>& kernels, const VoxelGrid& grid, std::span<const Vec3> points,
           std::span<const std::uint32_t> voxels, std::span<const Vec3> dirs, bool want_gradient,
           std::span<double> sdf, std::span<Vec3> rgb, std::span<Vec3> grad) const;

  bool double_ = false;
  double s_ = 1.0;
  FieldKernels<float> float_kernels_;
  FieldKernels<double> double_kernels_;
};

/// Closed-form field for tests and oracles: SDF and colour are functions of
/// the grid-local position.
class AnalyticField final : public RadianceField {
 public:
  using SdfFn = std::function<double(const Vec3&)>;
  using ColorFn = std::function<Vec3(const Vec3&, const Vec3&)>;

  AnalyticField(SdfFn sdf, ColorFn color, double sharpness)
      : sdf_(std::move(sdf)), color_(std::move(color)), s_(sharpness) {}

  void sdf(const VoxelGrid& grid, std::span<const Vec3> points, std::span<const std::uint32_t> voxels,
           std::span<double> out) const override;
  void shade(const VoxelGrid& grid, std::span<const Vec3> points, std::span<const std::uint32_t> voxels,
             std::span<const Vec3> dirs, std::span<double> sdf, std::span<Vec3> rgb) const override;
  double sharpness() const override { return s_; }

 private:
  SdfFn sdf_;
  ColorFn color_;
  double s_;
};

}  // namespace voxsurf
