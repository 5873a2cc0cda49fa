#include "binloc/nn.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "binloc/error.hpp"
#include "binloc/rng.hpp"

namespace binloc {
namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void check_finite([[maybe_unused]] const Tensor4<T>& t, [[maybe_unused]] const char* where) {
#ifndef NDEBUG
  for (T v : t.values) {
    if (!std::isfinite(v)) throw ContractError(std::string("non-finite activation after ") + where);
  }
#endif
}

// Convolutions run over tiles of whole output rows so the column buffer
// stays cache-resident. Tile width is about kTileColumns positions.
constexpr std::size_t kTileColumns = 256;

std::size_t tile_rows(std::size_t w) { return std::max<std::size_t>(1, kTileColumns / w); }

// cols[(c*9 + u*3 + v)][(i-i0)*W + j] = x_padded[c][i+u][j+v] for rows i in [i0, i1)
template <typename T>
void im2col_rows(std::span<const T> x, std::size_t channels, std::size_t h, std::size_t w,
                 std::size_t i0, std::size_t i1, std::vector<T>& cols) {
  const std::size_t hw = h * w;
  const std::size_t n = (i1 - i0) * w;
  cols.resize(channels * 9 * n);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = x.data() + c * hw;
    for (std::size_t u = 0; u < 3; ++u) {
      for (std::size_t v = 0; v < 3; ++v) {
        T* dst = cols.data() + (c * 9 + u * 3 + v) * n;
        for (std::size_t i = i0; i < i1; ++i) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + u) - 1;
          T* out = dst + (i - i0) * w;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(out, out + w, T(0));
            continue;
          }
          const T* row = src + static_cast<std::size_t>(si) * w;
          // column j reads x[si][j + v - 1]
          if (v == 0) {
            out[0] = T(0);
            std::copy(row, row + w - 1, out + 1);
          } else if (v == 1) {
            std::copy(row, row + w, out);
          } else {
            std::copy(row + 1, row + w, out);
            out[w - 1] = T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_rows_add(const std::vector<T>& cols, std::size_t channels, std::size_t h, std::size_t w,
                     std::size_t i0, std::size_t i1, std::span<T> dx) {
  const std::size_t hw = h * w;
  const std::size_t n = (i1 - i0) * w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* dst = dx.data() + c * hw;
    for (std::size_t u = 0; u < 3; ++u) {
      for (std::size_t v = 0; v < 3; ++v) {
        const T* src = cols.data() + (c * 9 + u * 3 + v) * n;
        for (std::size_t i = i0; i < i1; ++i) {
          const std::ptrdiff_t si = static_cast<std::ptrdiff_t>(i + u) - 1;
          if (si < 0 || si >= static_cast<std::ptrdiff_t>(h)) continue;
          T* row = dst + static_cast<std::size_t>(si) * w;
          const T* in = src + (i - i0) * w;
          const std::size_t j0 = v == 0 ? 1 : 0;
          const std::size_t j1 = v == 2 ? w - 1 : w;
          for (std::size_t j = j0; j < j1; ++j) row[j + v - 1] += in[j];
        }
      }
    }
  }
}

// One batch item: y = W * im2col(x) + b.
template <typename T>
void conv_item_forward(std::span<const T> x, const ConvParams<T>& p, std::size_t h, std::size_t w_dim,
                       std::span<T> y, std::vector<T>& cols) {
  const std::size_t hw = h * w_dim;
  const std::size_t k = p.in_channels * 9;
  const ConstMatrixMap<T> w(p.weight.data(), p.out_channels, k);
  MatrixMap<T> out(y.data(), p.out_channels, hw);
  const std::size_t rows = tile_rows(w_dim);
  for (std::size_t i0 = 0; i0 < h; i0 += rows) {
    const std::size_t i1 = std::min(h, i0 + rows);
    const std::size_t n = (i1 - i0) * w_dim;
    im2col_rows(x, p.in_channels, h, w_dim, i0, i1, cols);
    const ConstMatrixMap<T> c(cols.data(), k, n);
    out.middleCols(i0 * w_dim, n).noalias() = w * c;
  }
  for (std::size_t o = 0; o < p.out_channels; ++o) out.row(o).array() += p.bias[o];
}

// One batch item: accumulates weight/bias gradients and, when `dx` is
// non-empty, adds the input gradient into it.
template <typename T>
void conv_item_backward(std::span<const T> x, const ConvParams<T>& p, std::size_t h,
                        std::size_t w_dim, std::span<const T> dy_item, std::vector<T>& grad_weight,
                        std::vector<T>& grad_bias, std::span<T> dx, std::vector<T>& cols,
                        std::vector<T>& dcols) {
  const std::size_t hw = h * w_dim;
  const std::size_t k = p.in_channels * 9;
  const ConstMatrixMap<T> w(p.weight.data(), p.out_channels, k);
  const ConstMatrixMap<T> dy(dy_item.data(), p.out_channels, hw);
  MatrixMap<T> gw(grad_weight.data(), p.out_channels, k);
  const std::size_t rows = tile_rows(w_dim);
  for (std::size_t i0 = 0; i0 < h; i0 += rows) {
    const std::size_t i1 = std::min(h, i0 + rows);
    const std::size_t n = (i1 - i0) * w_dim;
    const auto dy_tile = dy.middleCols(i0 * w_dim, n);
    im2col_rows(x, p.in_channels, h, w_dim, i0, i1, cols);
    const ConstMatrixMap<T> c(cols.data(), k, n);
    gw.noalias() += dy_tile * c.transpose();
    if (!dx.empty()) {
      dcols.resize(k * n);
      MatrixMap<T> dc(dcols.data(), k, n);
      dc.noalias() = w.transpose() * dy_tile;
      col2im_rows_add(dcols, p.in_channels, h, w_dim, i0, i1, dx);
    }
  }
  // Plain loop: Eigen's vectorized sum depends on the buffer's alignment,
  // which would make results vary from run to run.
  for (std::size_t o = 0; o < p.out_channels; ++o) {
    const T* row = dy_item.data() + o * hw;
    T acc = 0;
    for (std::size_t i = 0; i < hw; ++i) acc += row[i];
    grad_bias[o] += acc;
  }
}

// max(0, max over window) without materializing the ReLU output. Values and
// argmaxes equal maxpool2x2_forward(relu_forward(x)).
template <typename T>
PoolResult<T> relu_pool_forward(const Tensor4<T>& x) {
  const std::size_t oh = x.height / 2;
  const std::size_t ow = x.width / 2;
  PoolResult<T> r;
  r.output = Tensor4<T>(x.batch, x.channels, oh, ow);
  r.argmax.resize(r.output.size());
  std::size_t out_index = 0;
  for (std::size_t bc = 0; bc < x.batch * x.channels; ++bc) {
    const std::size_t base = bc * x.height * x.width;
    for (std::size_t i = 0; i < oh; ++i) {
      const std::size_t row0 = base + 2 * i * x.width;
      const std::size_t row1 = row0 + x.width;
      for (std::size_t j = 0; j < ow; ++j) {
        const std::size_t cand[4] = {row0 + 2 * j, row0 + 2 * j + 1, row1 + 2 * j, row1 + 2 * j + 1};
        std::size_t best = cand[0];
        T best_value = std::max(x.values[cand[0]], T(0));
        for (int q = 1; q < 4; ++q) {
          const T v = std::max(x.values[cand[q]], T(0));
          if (v > best_value) {
            best_value = v;
            best = cand[q];
          }
        }
        r.output.values[out_index] = best_value;
        r.argmax[out_index] = static_cast<std::uint32_t>(best);
        ++out_index;
      }
    }
  }
  return r;
}

// Gradient w.r.t. the pre-activation: routed to the argmax, kept only where
// the pre-activation is positive.
template <typename T>
Tensor4<T> relu_pool_backward(std::span<const std::uint32_t> argmax, const Tensor4<T>& pre,
                              const Tensor4<T>& grad_out) {
  Tensor4<T> g(pre.batch, pre.channels, pre.height, pre.width);
  for (std::size_t i = 0; i < argmax.size(); ++i) {
    if (pre.values[argmax[i]] > T(0)) g.values[argmax[i]] += grad_out.values[i];
  }
  return g;
}

template <typename T>
void uniform_fill(std::vector<T>& v, double bound, std::uint64_t seed) {
  Rng rng(seed);
  for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace

// ---- Parameters ----------------------------------------------------------

template <typename T>
ModelParams<T>::ModelParams(int c_in)
    : input_channels(c_in),
      conv1(kConv1Channels, static_cast<std::size_t>(c_in)),
      conv2(kConv2Channels, kConv1Channels),
      conv3(kConv3Channels, kConv2Channels),
      fc1(kHiddenUnits, kConv3Channels),
      head(1, kHiddenUnits) {
  if (c_in < 1 || c_in > 6) {
    throw ParameterError("input_channels must lie in 1..6, got " + std::to_string(c_in));
  }
}

template <typename T>
std::vector<std::span<T>> ModelParams<T>::blocks() {
  return {conv1.weight, conv1.bias, conv2.weight, conv2.bias, conv3.weight,
          conv3.bias,   fc1.weight,  fc1.bias,     head.weight,  head.bias};
}

template <typename T>
std::vector<std::span<const T>> ModelParams<T>::blocks() const {
  return {conv1.weight, conv1.bias, conv2.weight, conv2.bias, conv3.weight,
          conv3.bias,   fc1.weight,  fc1.bias,     head.weight,  head.bias};
}

template <typename T>
std::vector<std::string> ModelParams<T>::block_names() {
  return {"conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "conv3.weight",
          "conv3.bias",   "fc1.weight", "fc1.bias",     "head.weight", "head.bias"};
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& b : blocks()) n += b.size();
  return n;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out(input_channels);
  auto dst = out.blocks();
  const auto src = blocks();
  for (std::size_t i = 0; i < src.size(); ++i) {
    std::transform(src[i].begin(), src[i].end(), dst[i].begin(),
                   [](T v) { return static_cast<U>(v); });
  }
  return out;
}

std::size_t parameter_count_for(int input_channels) {
  return 288 * static_cast<std::size_t>(input_channels) + 109025;
}

template <typename T>
ModelParams<T> init_params(int input_channels, std::uint64_t seed) {
  ModelParams<T> p(input_channels);
  const auto he = [](std::size_t fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); };
  uniform_fill(p.conv1.weight, he(p.conv1.in_channels * 9), derive_seed(seed, 1));
  uniform_fill(p.conv2.weight, he(p.conv2.in_channels * 9), derive_seed(seed, 2));
  uniform_fill(p.conv3.weight, he(p.conv3.in_channels * 9), derive_seed(seed, 3));
  uniform_fill(p.fc1.weight, he(p.fc1.in_features), derive_seed(seed, 4));
  uniform_fill(p.head.weight, he(p.head.in_features), derive_seed(seed, 5));
  return p;
}

// ---- Convolution ---------------------------------------------------------

template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvParams<T>& p) {
  if (x.channels != p.in_channels) {
    throw PreconditionError("conv2d_forward: input has " + std::to_string(x.channels) +
                            " channels, weights expect " + std::to_string(p.in_channels));
  }
  require(p.weight.size() == p.out_channels * p.in_channels * 9 && p.bias.size() == p.out_channels,
          "conv2d_forward: malformed weights");
  Tensor4<T> y(x.batch, p.out_channels, x.height, x.width);
  std::vector<T> cols;
  for (std::size_t b = 0; b < x.batch; ++b) {
    conv_item_forward<T>(x.item(b), p, x.height, x.width, y.item(b), cols);
  }
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p, const Tensor4<T>& grad_out,
                             bool want_grad_input) {
  if (x.channels != p.in_channels || grad_out.channels != p.out_channels ||
      grad_out.batch != x.batch || grad_out.height != x.height || grad_out.width != x.width) {
    throw PreconditionError("conv2d_backward: shape mismatch");
  }
  ConvGrads<T> g;
  g.grad_weight.assign(p.weight.size(), T(0));
  g.grad_bias.assign(p.bias.size(), T(0));
  if (want_grad_input) g.grad_input = Tensor4<T>(x.batch, x.channels, x.height, x.width);
  std::vector<T> cols;
  std::vector<T> dcols;
  for (std::size_t b = 0; b < x.batch; ++b) {
    conv_item_backward<T>(x.item(b), p, x.height, x.width, grad_out.item(b), g.grad_weight,
                          g.grad_bias, want_grad_input ? g.grad_input.item(b) : std::span<T>(), cols,
                          dcols);
  }
  return g;
}

// ---- Elementwise and pooling ----------------------------------------------

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (T& v : y.values) v = v > T(0) ? v : T(0);
  return y;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
  if (!x.same_shape(grad_out)) throw PreconditionError("relu_backward: shape mismatch");
  Tensor4<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(x.values[i] > T(0))) g.values[i] = T(0);
  }
  return g;
}

template <typename T>
PoolResult<T> maxpool2x2_forward(const Tensor4<T>& x) {
  const std::size_t oh = x.height / 2;
  const std::size_t ow = x.width / 2;
  if (oh == 0 || ow == 0) throw PreconditionError("maxpool2x2_forward: input smaller than 2x2");
  PoolResult<T> r;
  r.output = Tensor4<T>(x.batch, x.channels, oh, ow);
  r.argmax.resize(r.output.size());
  std::size_t out_index = 0;
  for (std::size_t bc = 0; bc < x.batch * x.channels; ++bc) {
    const std::size_t base = bc * x.height * x.width;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        std::size_t best = base + (2 * i) * x.width + 2 * j;
        T best_value = x.values[best];
        for (std::size_t u = 0; u < 2; ++u) {
          for (std::size_t v = 0; v < 2; ++v) {
            const std::size_t idx = base + (2 * i + u) * x.width + 2 * j + v;
            if (x.values[idx] > best_value) {
              best_value = x.values[idx];
              best = idx;
            }
          }
        }
        r.output.values[out_index] = best_value;
        r.argmax[out_index] = static_cast<std::uint32_t>(best);
        ++out_index;
      }
    }
  }
  return r;
}

template <typename T>
Tensor4<T> maxpool2x2_backward(std::span<const std::uint32_t> argmax, const Tensor4<T>& input_shape,
                               const Tensor4<T>& grad_out) {
  if (argmax.size() != grad_out.size() || grad_out.height != input_shape.height / 2 ||
      grad_out.width != input_shape.width / 2 || grad_out.batch != input_shape.batch ||
      grad_out.channels != input_shape.channels) {
    throw PreconditionError("maxpool2x2_backward: shape mismatch");
  }
  Tensor4<T> g(input_shape.batch, input_shape.channels, input_shape.height, input_shape.width);
  for (std::size_t i = 0; i < argmax.size(); ++i) g.values[argmax[i]] += grad_out.values[i];
  return g;
}

template <typename T>
Tensor4<T> global_avg_pool_forward(const Tensor4<T>& x) {
  Tensor4<T> y(x.batch, x.channels, 1, 1);
  const std::size_t hw = x.plane_size();
  for (std::size_t bc = 0; bc < x.batch * x.channels; ++bc) {
    T sum = T(0);
    for (std::size_t i = 0; i < hw; ++i) sum += x.values[bc * hw + i];
    y.values[bc] = sum / static_cast<T>(hw);
  }
  return y;
}

template <typename T>
Tensor4<T> global_avg_pool_backward(const Tensor4<T>& input_shape, const Tensor4<T>& grad_out) {
  if (grad_out.batch != input_shape.batch || grad_out.channels != input_shape.channels ||
      grad_out.height != 1 || grad_out.width != 1) {
    throw PreconditionError("global_avg_pool_backward: shape mismatch");
  }
  Tensor4<T> g(input_shape.batch, input_shape.channels, input_shape.height, input_shape.width);
  const std::size_t hw = input_shape.plane_size();
  for (std::size_t bc = 0; bc < grad_out.size(); ++bc) {
    const T share = grad_out.values[bc] / static_cast<T>(hw);
    std::fill_n(g.values.begin() + static_cast<std::ptrdiff_t>(bc * hw), hw, share);
  }
  return g;
}

template <typename T>
Tensor4<T> linear_forward(const Tensor4<T>& x, const LinearParams<T>& p) {
  if (x.channels * x.height * x.width != p.in_features) {
    throw PreconditionError("linear_forward: expected " + std::to_string(p.in_features) +
                            " input features");
  }
  Tensor4<T> y(x.batch, p.out_features, 1, 1);
  const ConstMatrixMap<T> w(p.weight.data(), p.out_features, p.in_features);
  const ConstMatrixMap<T> in(x.values.data(), x.batch, p.in_features);
  MatrixMap<T> out(y.values.data(), x.batch, p.out_features);
  out.noalias() = in * w.transpose();
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t o = 0; o < p.out_features; ++o) out(b, o) += p.bias[o];
  }
  return y;
}

template <typename T>
LinearGrads<T> linear_backward(const Tensor4<T>& x, const LinearParams<T>& p,
                               const Tensor4<T>& grad_out) {
  if (x.channels * x.height * x.width != p.in_features || grad_out.batch != x.batch ||
      grad_out.channels * grad_out.height * grad_out.width != p.out_features) {
    throw PreconditionError("linear_backward: shape mismatch");
  }
  LinearGrads<T> g;
  g.grad_input = Tensor4<T>(x.batch, x.channels, x.height, x.width);
  g.grad_weight.assign(p.weight.size(), T(0));
  g.grad_bias.assign(p.bias.size(), T(0));
  const ConstMatrixMap<T> w(p.weight.data(), p.out_features, p.in_features);
  const ConstMatrixMap<T> in(x.values.data(), x.batch, p.in_features);
  const ConstMatrixMap<T> dy(grad_out.values.data(), x.batch, p.out_features);
  MatrixMap<T> gw(g.grad_weight.data(), p.out_features, p.in_features);
  MatrixMap<T> dx(g.grad_input.values.data(), x.batch, p.in_features);
  gw.noalias() = dy.transpose() * in;
  dx.noalias() = dy * w;
  for (std::size_t b = 0; b < x.batch; ++b) {
    for (std::size_t o = 0; o < p.out_features; ++o) g.grad_bias[o] += dy(b, o);
  }
  return g;
}

template <typename T>
DropoutResult<T> dropout_forward(const Tensor4<T>& x, double rate, std::uint64_t seed, bool train) {
  require(rate >= 0.0 && rate < 1.0, "dropout rate must lie in [0, 1)");
  DropoutResult<T> r;
  r.output = x;
  if (!train) return r;
  Rng rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  r.mask.resize(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    r.mask[i] = rng.uniform() < rate ? T(0) : keep_scale;
    r.output.values[i] *= r.mask[i];
  }
  return r;
}

template <typename T>
Tensor4<T> dropout_backward(std::span<const T> mask, const Tensor4<T>& grad_out) {
  if (mask.size() != grad_out.size()) throw PreconditionError("dropout_backward: shape mismatch");
  Tensor4<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g.values[i] *= mask[i];
  return g;
}

// ---- Model ---------------------------------------------------------------

template <typename T>
ForwardResult<T> model_forward(const ModelParams<T>& params, const Tensor4<T>& x, Mode mode,
                               std::uint64_t dropout_seed) {
  if (x.channels != static_cast<std::size_t>(params.input_channels)) {
    throw PreconditionError("model_forward: input has " + std::to_string(x.channels) +
                            " channels, model expects " + std::to_string(params.input_channels));
  }
  if (x.batch == 0 || x.height < 8 || x.width < 8) {
    throw PreconditionError("model_forward: input must be non-empty with spatial dims >= 8x8");
  }
  const bool train = mode == Mode::kTrain;
  ForwardTrace<T> t;

  Tensor4<T> conv1 = conv2d_forward(x, params.conv1);
  check_finite(conv1, "conv1");
  PoolResult<T> pool1 = relu_pool_forward(conv1);
  Tensor4<T> conv2 = conv2d_forward(pool1.output, params.conv2);
  check_finite(conv2, "conv2");
  PoolResult<T> pool2 = relu_pool_forward(conv2);
  Tensor4<T> conv3 = conv2d_forward(pool2.output, params.conv3);
  check_finite(conv3, "conv3");
  PoolResult<T> pool3 = relu_pool_forward(conv3);
  Tensor4<T> gap = global_avg_pool_forward(pool3.output);
  Tensor4<T> fc1 = linear_forward(gap, params.fc1);
  Tensor4<T> fc1_act = relu_forward(fc1);
  DropoutResult<T> drop = dropout_forward(fc1_act, kDropoutRate, dropout_seed, train);
  Tensor4<T> out = linear_forward(drop.output, params.head);
  check_finite(out, "head");

  ForwardResult<T> result;
  result.predictions = out.values;
  if (train) {
    // Pool argmaxes index the ReLU output, which has the conv output's shape.
    t.input = x;
    t.conv1_out = std::move(conv1);
    t.pool1_argmax = std::move(pool1.argmax);
    t.pool1_out = std::move(pool1.output);
    t.conv2_out = std::move(conv2);
    t.pool2_argmax = std::move(pool2.argmax);
    t.pool2_out = std::move(pool2.output);
    t.conv3_out = std::move(conv3);
    t.pool3_argmax = std::move(pool3.argmax);
    t.pool3_out = std::move(pool3.output);
    t.gap_out = std::move(gap);
    t.fc1_out = std::move(fc1);
    t.fc1_act = std::move(fc1_act);
    t.dropout_mask = std::move(drop.mask);
    t.dropout_out = std::move(drop.output);
    result.trace = std::move(t);
  }
  return result;
}

template <typename T>
ModelParams<T> model_backward(const ModelParams<T>& params, const std::optional<ForwardTrace<T>>& trace,
                              std::span<const T> grad_pred) {
  if (!trace) throw ContractError("model_backward: no trace (forward was not run in train mode)");
  const ForwardTrace<T>& t = *trace;
  if (grad_pred.size() != t.input.batch) {
    throw PreconditionError("model_backward: gradient has wrong batch size");
  }
  ModelParams<T> g(params.input_channels);

  Tensor4<T> d_out(t.input.batch, 1, 1, 1);
  std::copy(grad_pred.begin(), grad_pred.end(), d_out.values.begin());

  LinearGrads<T> head = linear_backward(t.dropout_out, params.head, d_out);
  g.head.weight = std::move(head.grad_weight);
  g.head.bias = std::move(head.grad_bias);
  Tensor4<T> d = dropout_backward<T>(t.dropout_mask, head.grad_input);
  d = relu_backward(t.fc1_out, d);
  LinearGrads<T> fc1 = linear_backward(t.gap_out, params.fc1, d);
  g.fc1.weight = std::move(fc1.grad_weight);
  g.fc1.bias = std::move(fc1.grad_bias);
  d = global_avg_pool_backward(t.pool3_out, fc1.grad_input);

  const auto take = [](ConvGrads<T>&& c, ConvParams<T>& gp) {
    gp.weight = std::move(c.grad_weight);
    gp.bias = std::move(c.grad_bias);
    return std::move(c.grad_input);
  };
  d = relu_pool_backward<T>(t.pool3_argmax, t.conv3_out, d);
  d = take(conv2d_backward(t.pool2_out, params.conv3, d), g.conv3);
  d = relu_pool_backward<T>(t.pool2_argmax, t.conv2_out, d);
  d = take(conv2d_backward(t.pool1_out, params.conv2, d), g.conv2);
  d = relu_pool_backward<T>(t.pool1_argmax, t.conv1_out, d);
  take(conv2d_backward(t.input, params.conv1, d, /*want_grad_input=*/false), g.conv1);
  return g;
}

#define BINLOC_INSTANTIATE(T)                                                                    \
  template struct ModelParams<T>;                                                                \
  template ModelParams<T> init_params<T>(int, std::uint64_t);                                    \
  template Tensor4<T> conv2d_forward<T>(const Tensor4<T>&, const ConvParams<T>&);                \
  template ConvGrads<T> conv2d_backward<T>(const Tensor4<T>&, const ConvParams<T>&,             \
                                           const Tensor4<T>&, bool);                             \
  template Tensor4<T> relu_forward<T>(const Tensor4<T>&);                                        \
  template Tensor4<T> relu_backward<T>(const Tensor4<T>&, const Tensor4<T>&);                    \
  template PoolResult<T> maxpool2x2_forward<T>(const Tensor4<T>&);                               \
  template Tensor4<T> maxpool2x2_backward<T>(std::span<const std::uint32_t>, const Tensor4<T>&,  \
                                             const Tensor4<T>&);                                 \
  template Tensor4<T> global_avg_pool_forward<T>(const Tensor4<T>&);                             \
  template Tensor4<T> global_avg_pool_backward<T>(const Tensor4<T>&, const Tensor4<T>&);         \
  template Tensor4<T> linear_forward<T>(const Tensor4<T>&, const LinearParams<T>&);              \
  template LinearGrads<T> linear_backward<T>(const Tensor4<T>&, const LinearParams<T>&,          \
                                             const Tensor4<T>&);                                 \
  template DropoutResult<T> dropout_forward<T>(const Tensor4<T>&, double, std::uint64_t, bool);  \
  template Tensor4<T> dropout_backward<T>(std::span<const T>, const Tensor4<T>&);                \
  template ForwardResult<T> model_forward<T>(const ModelParams<T>&, const Tensor4<T>&, Mode,     \
                                             std::uint64_t);                                     \
  template ModelParams<T> model_backward<T>(const ModelParams<T>&,                               \
                                            const std::optional<ForwardTrace<T>>&,               \
                                            std::span<const T>);

BINLOC_INSTANTIATE(float)
BINLOC_INSTANTIATE(double)
#undef BINLOC_INSTANTIATE

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace binloc
