#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace binloc {

/// Dense batch x channels x height x width tensor, row-major (NCHW).
template <typename T>
struct Tensor4 {
  std::size_t batch = 0;
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> values;

  Tensor4() = default;
  Tensor4(std::size_t b, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : batch(b), channels(c), height(h), width(w), values(b * c * h * w, fill) {}

  std::size_t size() const { return values.size(); }
  std::size_t plane_size() const { return height * width; }
  bool same_shape(const Tensor4& o) const {
    return batch == o.batch && channels == o.channels && height == o.height && width == o.width;
  }

  T& at(std::size_t b, std::size_t c, std::size_t i, std::size_t j) {
    return values[((b * channels + c) * height + i) * width + j];
  }
  T at(std::size_t b, std::size_t c, std::size_t i, std::size_t j) const {
    return values[((b * channels + c) * height + i) * width + j];
  }
  std::span<T> item(std::size_t b) {
    return std::span<T>(values).subspan(b * channels * height * width, channels * height * width);
  }
  std::span<const T> item(std::size_t b) const {
    return std::span<const T>(values).subspan(b * channels * height * width,
                                              channels * height * width);
  }
};

/// 3x3 convolution weights [out][in][3][3] and per-output bias.
template <typename T>
struct ConvParams {
  std::size_t out_channels = 0;
  std::size_t in_channels = 0;
  std::vector<T> weight;
  std::vector<T> bias;

  ConvParams() = default;
  ConvParams(std::size_t out, std::size_t in)
      : out_channels(out), in_channels(in), weight(out * in * 9, T(0)), bias(out, T(0)) {}
};

/// Fully connected weights [out][in] and bias.
template <typename T>
struct LinearParams {
  std::size_t out_features = 0;
  std::size_t in_features = 0;
  std::vector<T> weight;
  std::vector<T> bias;

  LinearParams() = default;
  LinearParams(std::size_t out, std::size_t in)
      : out_features(out), in_features(in), weight(out * in, T(0)), bias(out, T(0)) {}
};

inline constexpr std::size_t kConv1Channels = 32;
inline constexpr std::size_t kConv2Channels = 64;
inline constexpr std::size_t kConv3Channels = 128;
inline constexpr std::size_t kHiddenUnits = 128;
inline constexpr double kDropoutRate = 0.3;
inline constexpr const char* kArchitecture = "conv3x3:32-64-128|relu|maxpool2|gap|fc128|relu|dropout0.3|head1";

/// All CNN weights. Blocks are enumerated in a fixed canonical order.
template <typename T>
struct ModelParams {
  int input_channels = 0;
  ConvParams<T> conv1;
  ConvParams<T> conv2;
  ConvParams<T> conv3;
  LinearParams<T> fc1;
  LinearParams<T> head;

  ModelParams() = default;
  explicit ModelParams(int c_in);

  /// conv1.w, conv1.b, conv2.w, conv2.b, conv3.w, conv3.b, fc1.w, fc1.b, head.w, head.b
  std::vector<std::span<T>> blocks();
  std::vector<std::span<const T>> blocks() const;
  static std::vector<std::string> block_names();
  std::size_t parameter_count() const;

  template <typename U>
  ModelParams<U> cast() const;
};

/// Closed form: 288 * c_in + 109025.
std::size_t parameter_count_for(int input_channels);

using ModelState = ModelParams<float>;

/// He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
template <typename T>
ModelParams<T> init_params(int input_channels, std::uint64_t seed);

// ---- Layers --------------------------------------------------------------

template <typename T>
struct ConvGrads {
  Tensor4<T> grad_input;  // empty when not requested
  std::vector<T> grad_weight;
  std::vector<T> grad_bias;
};

/// Stride 1, zero padding 1; spatial size preserved.
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const ConvParams<T>& p);

/// `x` is the input of the matching forward call.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p,
                             const Tensor4<T>& grad_out, bool want_grad_input = true);

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x);
/// Gradient is passed only where the forward input was strictly positive.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out);

template <typename T>
struct PoolResult {
  Tensor4<T> output;
  std::vector<std::uint32_t> argmax;  // flat input index per output element
};

/// 2x2 stride-2 max pooling; odd trailing rows/columns are dropped and ties
/// go to the first element in row-major order.
template <typename T>
PoolResult<T> maxpool2x2_forward(const Tensor4<T>& x);
template <typename T>
Tensor4<T> maxpool2x2_backward(std::span<const std::uint32_t> argmax, const Tensor4<T>& input_shape,
                               const Tensor4<T>& grad_out);

/// Mean over height x width; output is B x C x 1 x 1.
template <typename T>
Tensor4<T> global_avg_pool_forward(const Tensor4<T>& x);
template <typename T>
Tensor4<T> global_avg_pool_backward(const Tensor4<T>& input_shape, const Tensor4<T>& grad_out);

/// x is B x in x 1 x 1; output B x out x 1 x 1.
template <typename T>
Tensor4<T> linear_forward(const Tensor4<T>& x, const LinearParams<T>& p);

template <typename T>
struct LinearGrads {
  Tensor4<T> grad_input;
  std::vector<T> grad_weight;
  std::vector<T> grad_bias;
};

template <typename T>
LinearGrads<T> linear_backward(const Tensor4<T>& x, const LinearParams<T>& p,
                               const Tensor4<T>& grad_out);

template <typename T>
struct DropoutResult {
  Tensor4<T> output;
  std::vector<T> mask;  // 0 or 1/(1-rate); empty in inference
};

/// Inverted dropout. With `train == false` this is the identity.
template <typename T>
DropoutResult<T> dropout_forward(const Tensor4<T>& x, double rate, std::uint64_t seed, bool train);
template <typename T>
Tensor4<T> dropout_backward(std::span<const T> mask, const Tensor4<T>& grad_out);

// ---- Model ---------------------------------------------------------------

enum class Mode { kTrain, kInfer };

/// Everything the backward pass needs from a train-mode forward.
template <typename T>
struct ForwardTrace {
  Tensor4<T> input;
  Tensor4<T> conv1_out;
  std::vector<std::uint32_t> pool1_argmax;
  Tensor4<T> pool1_out;
  Tensor4<T> conv2_out;
  std::vector<std::uint32_t> pool2_argmax;
  Tensor4<T> pool2_out;
  Tensor4<T> conv3_out;
  std::vector<std::uint32_t> pool3_argmax;
  Tensor4<T> pool3_out;
  Tensor4<T> gap_out;
  Tensor4<T> fc1_out;
  Tensor4<T> fc1_act;
  std::vector<T> dropout_mask;
  Tensor4<T> dropout_out;
};

template <typename T>
struct ForwardResult {
  std::vector<T> predictions;  // radians, one per batch item
  std::optional<ForwardTrace<T>> trace;
};

/// conv-relu-pool x3, global average pool, fc-relu, dropout, scalar head.
/// Spatial dims must be at least 8 x 8.
template <typename T>
ForwardResult<T> model_forward(const ModelParams<T>& params, const Tensor4<T>& x, Mode mode,
                               std::uint64_t dropout_seed = 0);

template <typename T>
ModelParams<T> model_backward(const ModelParams<T>& params,
                              const std::optional<ForwardTrace<T>>& trace,
                              std::span<const T> grad_pred);

}  // namespace binloc
