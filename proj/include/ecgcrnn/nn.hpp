#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ecgcrnn/pipeline.hpp"
#include "ecgcrnn/record_io.hpp"
#include "ecgcrnn/rng.hpp"

namespace ecgcrnn::nn {

/// Layer widths of the convolutional-recurrent classifier. The default is
/// the full network: seven conv blocks 1 -> 8 -> ... -> 512, LSTM(128), 4-way
/// softmax.
struct Architecture {
  std::vector<std::size_t> channels{1, 8, 16, 32, 64, 128, 256, 512};
  std::size_t kernel = 5;
  std::size_t window_len = 512;
  std::size_t lstm_units = 128;
  std::size_t classes = kNumClasses;

  static Architecture full() { return {}; }

  /// Same depth with every width divided by `divisor` (minimum 1). Used for
  /// exhaustive gradient checks and fast experiments.
  static Architecture reduced(std::size_t divisor);

  std::size_t blocks() const { return channels.size() - 1; }
  std::size_t features() const { return channels.back(); }
  /// Samples per window left after all pooling stages.
  std::size_t feature_len() const { return window_len >> blocks(); }

  void validate() const;
  bool operator==(const Architecture&) const = default;
};

struct ParamCounts {
  std::vector<std::size_t> conv_blocks;
  std::size_t conv = 0;
  std::size_t lstm = 0;
  std::size_t head = 0;
  std::size_t total = 0;
};

ParamCounts count_params(const Architecture& arch);

/// All trainable scalars in one contiguous buffer, canonical order:
/// conv blocks 1..B (kernel [k][cin][cout], then bias), LSTM (input weights
/// [in][4H], recurrent weights [H][4H], bias [4H]; gate order input, forget,
/// cell, output), head (weights [H][classes], then bias).
class ModelParams {
 public:
  ModelParams() = default;
  explicit ModelParams(Architecture arch);

  const Architecture& arch() const noexcept { return arch_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<double> conv_kernel(std::size_t block);
  std::span<const double> conv_kernel(std::size_t block) const;
  std::span<double> conv_bias(std::size_t block);
  std::span<const double> conv_bias(std::size_t block) const;
  std::span<double> lstm_input();
  std::span<const double> lstm_input() const;
  std::span<double> lstm_recurrent();
  std::span<const double> lstm_recurrent() const;
  std::span<double> lstm_bias();
  std::span<const double> lstm_bias() const;
  std::span<double> head_weights();
  std::span<const double> head_weights() const;
  std::span<double> head_bias();
  std::span<const double> head_bias() const;

  /// Incremented whenever the values change through an optimizer step;
  /// traces remember the generation they were computed with.
  std::uint64_t generation() const noexcept { return generation_; }
  void bump_generation() noexcept { ++generation_; }

  void set_zero();

 private:
  struct Slice {
    std::size_t offset = 0;
    std::size_t size = 0;
  };
  std::span<double> view(Slice s) { return std::span<double>(values_).subspan(s.offset, s.size); }
  std::span<const double> view(Slice s) const {
    return std::span<const double>(values_).subspan(s.offset, s.size);
  }

  Architecture arch_;
  std::vector<double> values_;
  std::vector<Slice> kernel_, bias_;
  Slice lstm_in_, lstm_rec_, lstm_bias_, head_w_, head_b_;
  std::uint64_t generation_ = 0;
};

/// Gradients share the parameter layout.
using Gradients = ModelParams;

ParamCounts count_params(const ModelParams& params);

/// Glorot-uniform kernels and dense weights (conv fans 5*Cin / 5*Cout),
/// zero biases except the LSTM forget gate (1.0). Deterministic per seed.
ModelParams init_params(const Architecture& arch, std::uint64_t seed);

// --- tensors ---------------------------------------------------------------

/// Row-major [window][time][channel].
struct Tensor3 {
  std::size_t nw = 0, len = 0, ch = 0;
  std::vector<double> data;

  Tensor3() = default;
  Tensor3(std::size_t nw_, std::size_t len_, std::size_t ch_)
      : nw(nw_), len(len_), ch(ch_), data(nw_ * len_ * ch_, 0.0) {}

  double& at(std::size_t w, std::size_t t, std::size_t c) { return data[(w * len + t) * ch + c]; }
  double at(std::size_t w, std::size_t t, std::size_t c) const { return data[(w * len + t) * ch + c]; }
};

/// Row-major [rows][cols].
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(data).subspan(r * cols, cols);
  }
};

Tensor3 to_tensor(const pipeline::WindowTensor& windows);

/// Same-length convolution (zero padding kernel/2 per side), bias, ReLU,
/// max pool width 2 stride 2. kernel layout [k][cin][cout].
Tensor3 conv_block_forward(const Tensor3& x, std::span<const double> kernel,
                           std::span<const double> bias, std::size_t kernel_size = 5);

/// Mean over the time axis: nw x len x ch -> nw x ch.
Matrix global_avg_pool(const Tensor3& x);

/// Inverted-dropout masks (entries 0 or 1/(1-rate)), one per sequence.
struct DropoutMasks {
  std::vector<double> input;      // per LSTM input feature
  std::vector<double> recurrent;  // per hidden unit

  bool empty() const { return input.empty() && recurrent.empty(); }
};

DropoutMasks draw_dropout_masks(const Architecture& arch, double rate, Rng& rng);

/// Final hidden state of the LSTM over the rows of `seq`; zero initial
/// state. Masks, when given, multiply the inputs and the previous hidden
/// state at every step.
std::vector<double> lstm_forward(const Matrix& seq, const ModelParams& params,
                                 const DropoutMasks* masks = nullptr);

std::vector<double> softmax(std::span<const double> logits);

enum class Mode { Train, Eval };

struct Shape {
  std::string layer;
  std::vector<std::size_t> dims;
};

struct ConvCache {
  Tensor3 input;
  std::vector<double> activation;        // post-ReLU, pre-pool, nw*len*cout
  std::vector<std::uint8_t> pool_second;  // 1 when the second element won the pool
};

struct LstmCache {
  std::size_t steps = 0;
  Matrix inputs;       // masked inputs, steps x in
  Matrix prev_hidden;  // masked h_{t-1}, steps x H
  Matrix prev_cell;    // c_{t-1}
  Matrix gates;        // post-activation i, f, g, o: steps x 4H
  Matrix cell;         // c_t
  Matrix cell_tanh;    // tanh(c_t)
};

struct ForwardTrace {
  Mode mode = Mode::Eval;
  bool retained = false;
  std::uint64_t generation = 0;
  Architecture arch;
  std::vector<Shape> shapes;
  std::vector<ConvCache> conv;
  Matrix features;
  LstmCache lstm;
  std::vector<double> hidden;
  std::vector<double> logits;
  std::vector<double> probs;
  DropoutMasks masks;
};

struct ForwardResult {
  std::vector<double> probs;
  ForwardTrace trace;
};

/// Full network. Train mode draws dropout masks from `rng` (rate `dropout`)
/// and retains everything needed by model_backward; eval mode is
/// deterministic and keeps only the shape record.
ForwardResult model_forward(const pipeline::WindowTensor& x, const ModelParams& params, Mode mode,
                            Rng* rng = nullptr, double dropout = 0.5);

/// Train-mode forward with caller-provided masks (empty masks: no dropout).
ForwardResult model_forward_with_masks(const pipeline::WindowTensor& x, const ModelParams& params,
                                       const DropoutMasks& masks);

/// Index of the largest probability (first on ties).
std::size_t argmax(std::span<const double> probs);

/// Cross-entropy gradients for every parameter. Throws StaleTrace if the
/// trace was not retained or was computed with other parameter values.
Gradients model_backward(const ForwardTrace& trace, std::size_t label, const ModelParams& params);

/// Adds scale * gradients into `into` (same layout as params).
void model_backward_accumulate(const ForwardTrace& trace, std::size_t label,
                               const ModelParams& params, Gradients& into, double scale = 1.0);

}  // namespace ecgcrnn::nn
