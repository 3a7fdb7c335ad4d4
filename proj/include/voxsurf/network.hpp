#pragma once

#include <Eigen/Core>

#include <span>
#include <vector>

namespace voxsurf {

enum class Activation { Identity, Softplus, Relu, Sigmoid };

/// Shape of a fully connected network: dims = {input, hidden..., output}.
/// Parameters live in a flat float array, per layer: weights row-major
/// (out x in), then biases.
struct MlpSpec {
  std::vector<int> dims;
  Activation hidden = Activation::Softplus;
  Activation output = Activation::Identity;
  double softplus_beta = 100.0;

  int layers() const { return static_cast<int>(dims.size()) - 1; }
  int input_dim() const { return dims.front(); }
  int output_dim() const { return dims.back(); }
  std::size_t weight_offset(int layer) const;
  std::size_t bias_offset(int layer) const;
  std::size_t param_count() const;
};

/// Batched evaluation of an MLP with columns as samples. Supports forward-mode
/// tangents (directional derivatives of the output with respect to the input)
/// and reverse accumulation through both the values and the tangents, which
/// is what an input-gradient penalty needs for its parameter gradients.
template <typename Real>
class MlpKernel {
 public:
  using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

  struct Cache {
    std::vector<Mat> a;                // a[0] = input, a[l+1] = output of layer l
    std::vector<Mat> d1;               // activation first derivative per layer
    std::vector<std::vector<Mat>> da;  // tangents of a[l], one Mat per direction
    std::vector<std::vector<Mat>> dz;  // tangents of pre-activations
    int tangent_rows = 0;              // output rows that carry tangents
  };

  MlpKernel() = default;
  MlpKernel(const MlpSpec& spec, std::span<const float> params);

  const MlpSpec& spec() const { return spec_; }

  /// Forward pass. With `input_tangents` non-empty, propagates one tangent per
  /// entry; at the output layer only the first `tangent_rows` rows are kept.
  void forward(const Mat& input, std::span<const Mat> input_tangents, int tangent_rows, Cache& cache) const;

  /// Reverse pass. `grad_output_tangents` (may be empty) holds adjoints of the
  /// output tangents, each with `tangent_rows` rows. Parameter gradients are
  /// added into `grad_params` (flat layout).
  void backward(const Cache& cache, const Mat& grad_output, std::span<const Mat> grad_output_tangents,
                std::span<double> grad_params, Mat* grad_input, std::vector<Mat>* grad_input_tangents) const;

 private:
  MlpSpec spec_;
  std::vector<Mat> weights_;
  std::vector<Vec> biases_;
};

extern template class MlpKernel<float>;
extern template class MlpKernel<double>;

}  // namespace voxsurf
