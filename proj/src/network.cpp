#include "voxsurf/network.hpp"

#include "voxsurf/error.hpp"

#include <cmath>

namespace voxsurf {

std::size_t MlpSpec::weight_offset(int layer) const {
  std::size_t off = 0;
  for (int l = 0; l < layer; ++l) off += static_cast<std::size_t>(dims[l] + 1) * dims[l + 1];
  return off;
}

std::size_t MlpSpec::bias_offset(int layer) const {
  return weight_offset(layer) + static_cast<std::size_t>(dims[layer]) * dims[layer + 1];
}

std::size_t MlpSpec::param_count() const { return weight_offset(layers()); }

template <typename Real>
MlpKernel<Real>::MlpKernel(const MlpSpec& spec, std::span<const float> params) : spec_(spec) {
  if (params.size() != spec.param_count()) throw FieldError("parameter count mismatch");
  const int layers = spec.layers();
  weights_.resize(layers);
  biases_.resize(layers);
  for (int l = 0; l < layers; ++l) {
    const int in = spec.dims[l];
    const int out = spec.dims[l + 1];
    const float* w = params.data() + spec.weight_offset(l);
    const float* b = params.data() + spec.bias_offset(l);
    weights_[l].resize(out, in);
    for (int o = 0; o < out; ++o)
      for (int i = 0; i < in; ++i) weights_[l](o, i) = static_cast<Real>(w[static_cast<std::size_t>(o) * in + i]);
    biases_[l].resize(out);
    for (int o = 0; o < out; ++o) biases_[l](o) = static_cast<Real>(b[o]);
  }
}

template <typename Real>
void MlpKernel<Real>::forward(const Mat& input, std::span<const Mat> input_tangents, int tangent_rows,
                              Cache& cache) const {
  const int layers = spec_.layers();
  const auto n = input.cols();
  const std::size_t tangents = input_tangents.size();
  const Real beta = static_cast<Real>(spec_.softplus_beta);

  cache.a.resize(layers + 1);
  cache.d1.resize(layers);
  cache.a[0] = input;
  cache.tangent_rows = tangents ? tangent_rows : 0;
  if (tangents) {
    cache.da.assign(layers + 1, std::vector<Mat>(tangents));
    cache.dz.assign(layers, std::vector<Mat>(tangents));
    for (std::size_t k = 0; k < tangents; ++k) cache.da[0][k] = input_tangents[k];
  } else {
    cache.da.clear();
    cache.dz.clear();
  }

  for (int l = 0; l < layers; ++l) {
    const Activation act = (l + 1 == layers) ? spec_.output : spec_.hidden;
    Mat z = weights_[l] * cache.a[l];
    z.colwise() += biases_[l];
    Mat& a = cache.a[l + 1];
    Mat& d1 = cache.d1[l];
    switch (act) {
      case Activation::Identity:
        a = std::move(z);
        d1.resize(0, 0);
        break;
      case Activation::Softplus: {
        a.resize(z.rows(), n);
        d1.resize(z.rows(), n);
        auto x = (beta * z.array()).eval();
        auto e = (-x.abs()).exp().eval();
        a.array() = (x.max(Real(0)) + (Real(1) + e).log()) / beta;
        // sigmoid(x) from e = exp(-|x|)
        d1.array() = (x >= Real(0)).select(Real(1) / (Real(1) + e), e / (Real(1) + e));
        break;
      }
      case Activation::Relu:
        a = z.cwiseMax(Real(0));
        d1 = (z.array() > Real(0)).template cast<Real>().matrix();
        break;
      case Activation::Sigmoid: {
        auto e = (-z.array().abs()).exp().eval();
        a.resize(z.rows(), n);
        a.array() = (z.array() >= Real(0)).select(Real(1) / (Real(1) + e), e / (Real(1) + e));
        d1.array() = a.array() * (Real(1) - a.array());
        break;
      }
    }
    if (!tangents) continue;
    const int rows = (l + 1 == layers) ? tangent_rows : spec_.dims[l + 1];
    for (std::size_t k = 0; k < tangents; ++k) {
      Mat& dz = cache.dz[l][k];
      dz.noalias() = weights_[l].topRows(rows) * cache.da[l][k];
      if (act == Activation::Identity)
        cache.da[l + 1][k] = dz;
      else
        cache.da[l + 1][k] = d1.topRows(rows).cwiseProduct(dz);
    }
  }
}

template <typename Real>
void MlpKernel<Real>::backward(const Cache& cache, const Mat& grad_output, std::span<const Mat> grad_output_tangents,
                               std::span<double> grad_params, Mat* grad_input,
                               std::vector<Mat>* grad_input_tangents) const {
  const int layers = spec_.layers();
  const Real beta = static_cast<Real>(spec_.softplus_beta);
  const bool with_tangents = !grad_output_tangents.empty() && !cache.dz.empty();
  const std::size_t tangents = with_tangents ? grad_output_tangents.size() : 0;

  Mat g_a = grad_output;
  std::vector<Mat> g_da(grad_output_tangents.begin(), grad_output_tangents.begin() + tangents);
  Mat g_z;
  std::vector<Mat> g_dz(tangents);

  for (int l = layers - 1; l >= 0; --l) {
    const Activation act = (l + 1 == layers) ? spec_.output : spec_.hidden;
    const int rows = (l + 1 == layers) ? cache.tangent_rows : spec_.dims[l + 1];
    const Mat& d1 = cache.d1[l];
    if (act == Activation::Identity) {
      g_z = std::move(g_a);
      for (std::size_t k = 0; k < tangents; ++k) g_dz[k] = std::move(g_da[k]);
    } else {
      g_z = g_a.cwiseProduct(d1);
      for (std::size_t k = 0; k < tangents; ++k) {
        const auto d1r = d1.topRows(rows);
        if (act == Activation::Softplus) {
          // d2 = beta * s * (1 - s)
          auto d2 = (beta * d1r.array() * (Real(1) - d1r.array())).eval();
          g_z.topRows(rows).array() += g_da[k].array() * d2 * cache.dz[l][k].array();
        } else if (act == Activation::Sigmoid) {
          const auto ar = cache.a[l + 1].topRows(rows).array();
          auto d2 = (d1r.array() * (Real(1) - Real(2) * ar)).eval();
          g_z.topRows(rows).array() += g_da[k].array() * d2 * cache.dz[l][k].array();
        }
        g_dz[k] = g_da[k].cwiseProduct(d1r);
      }
    }

    const int in = spec_.dims[l];
    const int out = spec_.dims[l + 1];
    Mat g_w = g_z * cache.a[l].transpose();
    for (std::size_t k = 0; k < tangents; ++k) g_w.topRows(rows).noalias() += g_dz[k] * cache.da[l][k].transpose();
    const Vec g_b = g_z.rowwise().sum();
    double* pw = grad_params.data() + spec_.weight_offset(l);
    double* pb = grad_params.data() + spec_.bias_offset(l);
    for (int o = 0; o < out; ++o) {
      for (int i = 0; i < in; ++i) pw[static_cast<std::size_t>(o) * in + i] += static_cast<double>(g_w(o, i));
      pb[o] += static_cast<double>(g_b(o));
    }

    if (l == 0 && !grad_input && !grad_input_tangents) break;
    g_a.noalias() = weights_[l].transpose() * g_z;
    g_da.resize(tangents);
    for (std::size_t k = 0; k < tangents; ++k) g_da[k].noalias() = weights_[l].topRows(rows).transpose() * g_dz[k];
  }
  if (grad_input) *grad_input = std::move(g_a);
  if (grad_input_tangents) {
    grad_input_tangents->resize(tangents);
    for (std::size_t k = 0; k < tangents; ++k) (*grad_input_tangents)[k] = std::move(g_da[k]);
  }
}

template class MlpKernel<float>;
template class MlpKernel<double>;

}  // namespace voxsurf
