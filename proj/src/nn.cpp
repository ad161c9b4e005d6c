#include "ecgcrnn/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "ecgcrnn/error.hpp"

namespace ecgcrnn::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVec = Eigen::Matrix<double, 1, Eigen::Dynamic>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;
using MapRow = Eigen::Map<RowVec>;
using ConstMapRow = Eigen::Map<const RowVec>;

inline ConstMapMat as_mat(std::span<const double> s, std::size_t rows, std::size_t cols) {
  return ConstMapMat(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MapMat as_mat(std::span<double> s, std::size_t rows, std::size_t cols) {
  return MapMat(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline ConstMapMat as_mat(const Matrix& m) {
  return ConstMapMat(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}
inline MapMat as_mat(Matrix& m) {
  return MapMat(m.data.data(), static_cast<Eigen::Index>(m.rows), static_cast<Eigen::Index>(m.cols));
}
inline ConstMapRow as_row(std::span<const double> s) {
  return ConstMapRow(s.data(), static_cast<Eigen::Index>(s.size()));
}
inline MapRow as_row(std::span<double> s) { return MapRow(s.data(), static_cast<Eigen::Index>(s.size())); }
inline ConstMapRow as_row(const std::vector<double>& v) { return as_row(std::span<const double>(v)); }
inline MapRow as_row(std::vector<double>& v) { return as_row(std::span<double>(v)); }

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

// Rows are (window, time); columns are (tap, input channel).
RowMat im2col(const Tensor3& x, std::size_t kernel) {
  const std::size_t pad = kernel / 2;
  RowMat col = RowMat::Zero(static_cast<Eigen::Index>(x.nw * x.len),
                            static_cast<Eigen::Index>(kernel * x.ch));
  for (std::size_t w = 0; w < x.nw; ++w) {
    for (std::size_t t = 0; t < x.len; ++t) {
      double* dst = col.data() + (w * x.len + t) * kernel * x.ch;
      for (std::size_t k = 0; k < kernel; ++k) {
        const long long src = static_cast<long long>(t + k) - static_cast<long long>(pad);
        if (src < 0 || src >= static_cast<long long>(x.len)) continue;
        const double* s = x.data.data() + (w * x.len + static_cast<std::size_t>(src)) * x.ch;
        std::copy(s, s + x.ch, dst + k * x.ch);
      }
    }
  }
  return col;
}

void col2im_add(const RowMat& dcol, std::size_t kernel, Tensor3& dx) {
  const std::size_t pad = kernel / 2;
  for (std::size_t w = 0; w < dx.nw; ++w) {
    for (std::size_t t = 0; t < dx.len; ++t) {
      const double* src = dcol.data() + (w * dx.len + t) * kernel * dx.ch;
      for (std::size_t k = 0; k < kernel; ++k) {
        const long long at = static_cast<long long>(t + k) - static_cast<long long>(pad);
        if (at < 0 || at >= static_cast<long long>(dx.len)) continue;
        double* d = dx.data.data() + (w * dx.len + static_cast<std::size_t>(at)) * dx.ch;
        for (std::size_t c = 0; c < dx.ch; ++c) d[c] += src[k * dx.ch + c];
      }
    }
  }
}

struct ConvOut {
  Tensor3 out;
  std::vector<double> activation;
  std::vector<std::uint8_t> pool_second;
};

ConvOut conv_forward_impl(const Tensor3& x, std::span<const double> kernel,
                          std::span<const double> bias, std::size_t ksize, bool keep) {
  const std::size_t cout = bias.size();
  if (x.len < 2 || x.len % 2 != 0)
    throw Error(Errc::ShapeMismatch, "conv block input length must be even and >= 2");
  if (kernel.size() != ksize * x.ch * cout)
    throw Error(Errc::ShapeMismatch, "kernel size does not match " + std::to_string(ksize) + "x" +
                                         std::to_string(x.ch) + "x" + std::to_string(cout));

  const RowMat col = im2col(x, ksize);
  RowMat act = col * as_mat(kernel, ksize * x.ch, cout);
  act.rowwise() += as_row(bias);
  act = act.cwiseMax(0.0);

  ConvOut res;
  res.out = Tensor3(x.nw, x.len / 2, cout);
  if (keep) res.pool_second.resize(x.nw * (x.len / 2) * cout);
  for (std::size_t w = 0; w < x.nw; ++w) {
    for (std::size_t t = 0; t < x.len / 2; ++t) {
      const double* a = act.data() + (w * x.len + 2 * t) * cout;
      const double* b = a + cout;
      double* o = res.out.data.data() + (w * (x.len / 2) + t) * cout;
      for (std::size_t c = 0; c < cout; ++c) {
        const bool second = b[c] > a[c];
        o[c] = second ? b[c] : a[c];
        if (keep) res.pool_second[(w * (x.len / 2) + t) * cout + c] = second ? 1 : 0;
      }
    }
  }
  if (keep) res.activation.assign(act.data(), act.data() + act.size());
  return res;
}

// Returns dx (empty tensor when !need_dx); accumulates scaled kernel/bias grads.
Tensor3 conv_backward_impl(const ConvCache& cache, const Tensor3& dout, std::span<const double> kernel,
                           std::size_t ksize, std::span<double> dkernel, std::span<double> dbias,
                           bool need_dx) {
  const Tensor3& x = cache.input;
  const std::size_t cout = dout.ch;
  RowMat dy = RowMat::Zero(static_cast<Eigen::Index>(x.nw * x.len), static_cast<Eigen::Index>(cout));
  for (std::size_t w = 0; w < x.nw; ++w) {
    for (std::size_t t = 0; t < dout.len; ++t) {
      const std::size_t base = (w * dout.len + t) * cout;
      for (std::size_t c = 0; c < cout; ++c) {
        const std::size_t row = w * x.len + 2 * t + cache.pool_second[base + c];
        // ReLU derivative taken as 0 at 0.
        if (cache.activation[row * cout + c] > 0.0) dy(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(c)) = dout.data[base + c];
      }
    }
  }
  const RowMat col = im2col(x, ksize);
  as_mat(dkernel, ksize * x.ch, cout).noalias() += col.transpose() * dy;
  as_row(dbias) += dy.colwise().sum();
  Tensor3 dx;
  if (need_dx) {
    dx = Tensor3(x.nw, x.len, x.ch);
    const RowMat dcol = dy * as_mat(kernel, ksize * x.ch, cout).transpose();
    col2im_add(dcol, ksize, dx);
  }
  return dx;
}

std::vector<double> lstm_forward_impl(const Matrix& seq, const ModelParams& p,
                                      const DropoutMasks* masks, LstmCache* cache) {
  const auto& arch = p.arch();
  const std::size_t steps = seq.rows;
  const std::size_t in = arch.features();
  const std::size_t h = arch.lstm_units;
  if (steps == 0 || seq.cols != in)
    throw Error(Errc::ShapeMismatch, "LSTM expects a non-empty sequence of " + std::to_string(in) + " features");
  const bool mask_in = masks != nullptr && !masks->input.empty();
  const bool mask_rec = masks != nullptr && !masks->recurrent.empty();
  if ((mask_in && masks->input.size() != in) || (mask_rec && masks->recurrent.size() != h))
    throw Error(Errc::ShapeMismatch, "dropout mask sizes do not match the LSTM");

  RowMat xin = as_mat(seq);
  if (mask_in) xin.array().rowwise() *= as_row(masks->input).array();
  RowMat zx = xin * as_mat(p.lstm_input(), in, 4 * h);
  zx.rowwise() += as_row(p.lstm_bias());
  const auto w_rec = as_mat(p.lstm_recurrent(), h, 4 * h);

  if (cache) {
    cache->steps = steps;
    cache->inputs = Matrix(steps, in);
    std::copy(xin.data(), xin.data() + xin.size(), cache->inputs.data.begin());
    cache->prev_hidden = Matrix(steps, h);
    cache->prev_cell = Matrix(steps, h);
    cache->gates = Matrix(steps, 4 * h);
    cache->cell = Matrix(steps, h);
    cache->cell_tanh = Matrix(steps, h);
  }

  RowVec hidden = RowVec::Zero(static_cast<Eigen::Index>(h));
  RowVec cell = RowVec::Zero(static_cast<Eigen::Index>(h));
  RowVec hp(static_cast<Eigen::Index>(h));
  RowVec z(static_cast<Eigen::Index>(4 * h));
  for (std::size_t t = 0; t < steps; ++t) {
    hp = hidden;
    if (mask_rec) hp.array() *= as_row(masks->recurrent).array();
    z.noalias() = zx.row(static_cast<Eigen::Index>(t)) + hp * w_rec;
    if (cache) {
      std::copy(hp.data(), hp.data() + h, cache->prev_hidden.data.begin() + static_cast<std::ptrdiff_t>(t * h));
      std::copy(cell.data(), cell.data() + h, cache->prev_cell.data.begin() + static_cast<std::ptrdiff_t>(t * h));
    }
    for (std::size_t u = 0; u < h; ++u) {
      const double ig = sigmoid(z[static_cast<Eigen::Index>(u)]);
      const double fg = sigmoid(z[static_cast<Eigen::Index>(h + u)]);
      const double gg = std::tanh(z[static_cast<Eigen::Index>(2 * h + u)]);
      const double og = sigmoid(z[static_cast<Eigen::Index>(3 * h + u)]);
      const double c = fg * cell[static_cast<Eigen::Index>(u)] + ig * gg;
      const double tc = std::tanh(c);
      cell[static_cast<Eigen::Index>(u)] = c;
      hidden[static_cast<Eigen::Index>(u)] = og * tc;
      if (cache) {
        double* g = cache->gates.data.data() + t * 4 * h;
        g[u] = ig;
        g[h + u] = fg;
        g[2 * h + u] = gg;
        g[3 * h + u] = og;
        cache->cell.at(t, u) = c;
        cache->cell_tanh.at(t, u) = tc;
      }
    }
  }
  return {hidden.data(), hidden.data() + h};
}

// dh is the gradient at the final hidden state; returns d(features).
Matrix lstm_backward_impl(const LstmCache& cache, const DropoutMasks& masks, std::span<const double> dh_final,
                          const ModelParams& p, Gradients& g) {
  const std::size_t steps = cache.steps;
  const std::size_t h = p.arch().lstm_units;
  const std::size_t in = p.arch().features();
  const auto w_rec = as_mat(p.lstm_recurrent(), h, 4 * h);

  RowMat dz(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(4 * h));
  RowVec dh = as_row(dh_final);
  RowVec dc = RowVec::Zero(static_cast<Eigen::Index>(h));
  for (std::size_t step = steps; step-- > 0;) {
    const double* gates = cache.gates.data.data() + step * 4 * h;
    double* d = dz.data() + step * 4 * h;
    for (std::size_t u = 0; u < h; ++u) {
      const auto ue = static_cast<Eigen::Index>(u);
      const double ig = gates[u], fg = gates[h + u], gg = gates[2 * h + u], og = gates[3 * h + u];
      const double tc = cache.cell_tanh.at(step, u);
      const double dcu = dc[ue] + dh[ue] * og * (1.0 - tc * tc);
      d[u] = dcu * gg * ig * (1.0 - ig);
      d[h + u] = dcu * cache.prev_cell.at(step, u) * fg * (1.0 - fg);
      d[2 * h + u] = dcu * ig * (1.0 - gg * gg);
      d[3 * h + u] = dh[ue] * tc * og * (1.0 - og);
      dc[ue] = dcu * fg;
    }
    dh.noalias() = dz.row(static_cast<Eigen::Index>(step)) * w_rec.transpose();
    if (!masks.recurrent.empty()) dh.array() *= as_row(masks.recurrent).array();
  }

  as_mat(g.lstm_input(), in, 4 * h).noalias() += as_mat(cache.inputs).transpose() * dz;
  as_mat(g.lstm_recurrent(), h, 4 * h).noalias() += as_mat(cache.prev_hidden).transpose() * dz;
  as_row(g.lstm_bias()) += dz.colwise().sum();

  Matrix dx(steps, in);
  as_mat(dx).noalias() = dz * as_mat(p.lstm_input(), in, 4 * h).transpose();
  if (!masks.input.empty()) as_mat(dx).array().rowwise() *= as_row(masks.input).array();
  return dx;
}

ForwardResult run_forward(const pipeline::WindowTensor& x, const ModelParams& params, Mode mode,
                          const DropoutMasks& masks, bool retain) {
  const auto& arch = params.arch();
  arch.validate();
  if (x.nw == 0 || x.window_len != arch.window_len || x.values.size() != x.nw * x.window_len ||
      arch.channels.front() != 1)
    throw Error(Errc::ShapeMismatch, "input must be nw x " + std::to_string(arch.window_len) + " x 1");

  ForwardResult res;
  ForwardTrace& tr = res.trace;
  tr.mode = mode;
  tr.retained = retain;
  tr.generation = params.generation();
  tr.arch = arch;
  tr.masks = masks;
  tr.shapes.push_back({"input", {x.nw, x.window_len, 1}});

  Tensor3 cur = to_tensor(x);
  for (std::size_t b = 0; b < arch.blocks(); ++b) {
    ConvOut co = conv_forward_impl(cur, params.conv_kernel(b), params.conv_bias(b), arch.kernel, retain);
    if (retain) tr.conv.push_back({std::move(cur), std::move(co.activation), std::move(co.pool_second)});
    cur = std::move(co.out);
    tr.shapes.push_back({"conv" + std::to_string(b + 1), {cur.nw, cur.len, cur.ch}});
  }
  tr.features = global_avg_pool(cur);
  tr.shapes.push_back({"global_avg_pool", {tr.features.rows, tr.features.cols}});

  tr.hidden = lstm_forward_impl(tr.features, params, &masks, retain ? &tr.lstm : nullptr);
  tr.shapes.push_back({"lstm", {tr.hidden.size()}});

  const std::size_t h = arch.lstm_units;
  RowVec logits = as_row(tr.hidden) * as_mat(params.head_weights(), h, arch.classes);
  logits += as_row(params.head_bias());
  tr.logits.assign(logits.data(), logits.data() + logits.size());
  tr.probs = softmax(tr.logits);
  tr.shapes.push_back({"softmax", {tr.probs.size()}});
  res.probs = tr.probs;
  if (!retain) tr.features = Matrix();
  return res;
}

}  // namespace

// --- architecture & parameters ---------------------------------------------

Architecture Architecture::reduced(std::size_t divisor) {
  if (divisor == 0) throw Error(Errc::BadConfig, "divisor must be positive");
  Architecture a;
  for (std::size_t i = 1; i < a.channels.size(); ++i) a.channels[i] = std::max<std::size_t>(1, a.channels[i] / divisor);
  a.lstm_units = std::max<std::size_t>(1, a.lstm_units / divisor);
  return a;
}

void Architecture::validate() const {
  if (channels.size() < 2 || std::any_of(channels.begin(), channels.end(), [](std::size_t c) { return c == 0; }))
    throw Error(Errc::ShapeMismatch, "architecture needs at least one conv block with positive widths");
  if (kernel == 0 || kernel % 2 == 0) throw Error(Errc::ShapeMismatch, "conv kernel must be odd");
  if (blocks() >= 63 || window_len == 0 || window_len % (std::size_t{1} << blocks()) != 0)
    throw Error(Errc::ShapeMismatch, "window length must halve cleanly through every pooling stage");
  if (lstm_units == 0 || classes < 2) throw Error(Errc::ShapeMismatch, "bad LSTM or head size");
}

ParamCounts count_params(const Architecture& arch) {
  ParamCounts pc;
  for (std::size_t b = 0; b < arch.blocks(); ++b) {
    const std::size_t n = arch.kernel * arch.channels[b] * arch.channels[b + 1] + arch.channels[b + 1];
    pc.conv_blocks.push_back(n);
    pc.conv += n;
  }
  const std::size_t h = arch.lstm_units;
  pc.lstm = (arch.features() + h) * 4 * h + 4 * h;
  pc.head = h * arch.classes + arch.classes;
  pc.total = pc.conv + pc.lstm + pc.head;
  return pc;
}

ParamCounts count_params(const ModelParams& params) {
  ParamCounts pc = count_params(params.arch());
  if (pc.total != params.size()) throw Error(Errc::ShapeMismatch, "parameter buffer size mismatch");
  return pc;
}

ModelParams::ModelParams(Architecture arch) : arch_(std::move(arch)) {
  arch_.validate();
  std::size_t at = 0;
  auto take = [&at](std::size_t n) {
    Slice s{at, n};
    at += n;
    return s;
  };
  for (std::size_t b = 0; b < arch_.blocks(); ++b) {
    kernel_.push_back(take(arch_.kernel * arch_.channels[b] * arch_.channels[b + 1]));
    bias_.push_back(take(arch_.channels[b + 1]));
  }
  const std::size_t h = arch_.lstm_units;
  lstm_in_ = take(arch_.features() * 4 * h);
  lstm_rec_ = take(h * 4 * h);
  lstm_bias_ = take(4 * h);
  head_w_ = take(h * arch_.classes);
  head_b_ = take(arch_.classes);
  values_.assign(at, 0.0);
}

std::span<double> ModelParams::conv_kernel(std::size_t b) { return view(kernel_.at(b)); }
std::span<const double> ModelParams::conv_kernel(std::size_t b) const { return view(kernel_.at(b)); }
std::span<double> ModelParams::conv_bias(std::size_t b) { return view(bias_.at(b)); }
std::span<const double> ModelParams::conv_bias(std::size_t b) const { return view(bias_.at(b)); }
std::span<double> ModelParams::lstm_input() { return view(lstm_in_); }
std::span<const double> ModelParams::lstm_input() const { return view(lstm_in_); }
std::span<double> ModelParams::lstm_recurrent() { return view(lstm_rec_); }
std::span<const double> ModelParams::lstm_recurrent() const { return view(lstm_rec_); }
std::span<double> ModelParams::lstm_bias() { return view(lstm_bias_); }
std::span<const double> ModelParams::lstm_bias() const { return view(lstm_bias_); }
std::span<double> ModelParams::head_weights() { return view(head_w_); }
std::span<const double> ModelParams::head_weights() const { return view(head_w_); }
std::span<double> ModelParams::head_bias() { return view(head_b_); }
std::span<const double> ModelParams::head_bias() const { return view(head_b_); }

void ModelParams::set_zero() { std::fill(values_.begin(), values_.end(), 0.0); }

ModelParams init_params(const Architecture& arch, std::uint64_t seed) {
  ModelParams p(arch);
  auto glorot = [seed](std::span<double> w, double fan_in, double fan_out, std::uint64_t stream) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    Rng rng = Rng::derive(seed, {0x494E4954u, stream});
    for (double& v : w) v = rng.uniform_closed(-limit, limit);
  };
  const double k = static_cast<double>(arch.kernel);
  for (std::size_t b = 0; b < arch.blocks(); ++b)
    glorot(p.conv_kernel(b), k * static_cast<double>(arch.channels[b]),
           k * static_cast<double>(arch.channels[b + 1]), b);
  const auto h = static_cast<double>(arch.lstm_units);
  glorot(p.lstm_input(), static_cast<double>(arch.features()), 4.0 * h, 100);
  glorot(p.lstm_recurrent(), h, 4.0 * h, 101);
  auto fb = p.lstm_bias().subspan(arch.lstm_units, arch.lstm_units);
  std::fill(fb.begin(), fb.end(), 1.0);
  glorot(p.head_weights(), h, static_cast<double>(arch.classes), 102);
  return p;
}

// --- layers ------------------------------------------------------------------

Tensor3 to_tensor(const pipeline::WindowTensor& windows) {
  Tensor3 t(windows.nw, windows.window_len, 1);
  if (windows.values.size() != t.data.size()) throw Error(Errc::ShapeMismatch, "window tensor size");
  t.data = windows.values;
  return t;
}

Tensor3 conv_block_forward(const Tensor3& x, std::span<const double> kernel, std::span<const double> bias,
                           std::size_t kernel_size) {
  return conv_forward_impl(x, kernel, bias, kernel_size, false).out;
}

Matrix global_avg_pool(const Tensor3& x) {
  if (x.len == 0) throw Error(Errc::ShapeMismatch, "global average pooling over an empty axis");
  Matrix out(x.nw, x.ch);
  for (std::size_t w = 0; w < x.nw; ++w)
    for (std::size_t t = 0; t < x.len; ++t)
      for (std::size_t c = 0; c < x.ch; ++c) out.at(w, c) += x.at(w, t, c);
  for (double& v : out.data) v /= static_cast<double>(x.len);
  return out;
}

DropoutMasks draw_dropout_masks(const Architecture& arch, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw Error(Errc::BadConfig, "dropout rate must be in [0, 1)");
  DropoutMasks m;
  if (rate == 0.0) return m;
  const double keep_scale = 1.0 / (1.0 - rate);
  m.input.resize(arch.features());
  m.recurrent.resize(arch.lstm_units);
  for (double& v : m.input) v = rng.bernoulli(rate) ? 0.0 : keep_scale;
  for (double& v : m.recurrent) v = rng.bernoulli(rate) ? 0.0 : keep_scale;
  return m;
}

std::vector<double> lstm_forward(const Matrix& seq, const ModelParams& params, const DropoutMasks* masks) {
  return lstm_forward_impl(seq, params, masks, nullptr);
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw Error(Errc::ShapeMismatch, "softmax of an empty vector");
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += (p[i] = std::exp(logits[i] - mx));
  for (double& v : p) v /= sum;
  return p;
}

std::size_t argmax(std::span<const double> probs) {
  return static_cast<std::size_t>(std::distance(probs.begin(), std::max_element(probs.begin(), probs.end())));
}

ForwardResult model_forward(const pipeline::WindowTensor& x, const ModelParams& params, Mode mode,
                            Rng* rng, double dropout) {
  if (mode == Mode::Eval) return run_forward(x, params, mode, DropoutMasks{}, false);
  DropoutMasks masks;
  if (dropout > 0.0) {
    if (rng == nullptr) throw Error(Errc::BadConfig, "train-mode dropout needs a generator");
    masks = draw_dropout_masks(params.arch(), dropout, *rng);
  }
  return run_forward(x, params, mode, masks, true);
}

ForwardResult model_forward_with_masks(const pipeline::WindowTensor& x, const ModelParams& params,
                                       const DropoutMasks& masks) {
  return run_forward(x, params, Mode::Train, masks, true);
}

void model_backward_accumulate(const ForwardTrace& trace, std::size_t label, const ModelParams& params,
                               Gradients& into, double scale) {
  if (!trace.retained) throw Error(Errc::StaleTrace, "trace was not retained (eval-mode forward)");
  if (trace.generation != params.generation() || !(trace.arch == params.arch()))
    throw Error(Errc::StaleTrace, "parameters changed since the forward pass");
  if (!(into.arch() == params.arch())) throw Error(Errc::ShapeMismatch, "gradient layout mismatch");
  const auto& arch = params.arch();
  if (label >= arch.classes) throw Error(Errc::OutOfRange, "label index " + std::to_string(label));

  const std::size_t h = arch.lstm_units;
  RowVec dlogits = as_row(trace.probs);
  dlogits[static_cast<Eigen::Index>(label)] -= 1.0;
  dlogits *= scale;

  as_mat(into.head_weights(), h, arch.classes).noalias() += as_row(trace.hidden).transpose() * dlogits;
  as_row(into.head_bias()) += dlogits;
  const RowVec dh = dlogits * as_mat(params.head_weights(), h, arch.classes).transpose();

  const Matrix dfeat = lstm_backward_impl(trace.lstm, trace.masks, std::span<const double>(dh.data(), h), params, into);

  const ConvCache& last = trace.conv.back();
  Tensor3 dcur(last.input.nw, last.input.len / 2, arch.features());
  const double inv_len = 1.0 / static_cast<double>(dcur.len);
  for (std::size_t w = 0; w < dcur.nw; ++w)
    for (std::size_t t = 0; t < dcur.len; ++t)
      for (std::size_t c = 0; c < dcur.ch; ++c) dcur.at(w, t, c) = dfeat.at(w, c) * inv_len;

  for (std::size_t b = arch.blocks(); b-- > 0;) {
    dcur = conv_backward_impl(trace.conv[b], dcur, params.conv_kernel(b), arch.kernel, into.conv_kernel(b),
                              into.conv_bias(b), b > 0);
  }
}

Gradients model_backward(const ForwardTrace& trace, std::size_t label, const ModelParams& params) {
  Gradients g(params.arch());
  model_backward_accumulate(trace, label, params, g, 1.0);
  return g;
}

}  // namespace ecgcrnn::nn
