#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ecgcrnn/checkpoint.hpp"
#include "ecgcrnn/nn.hpp"
#include "gradcheck.hpp"
#include "helpers.hpp"

using namespace ecgcrnn;
using namespace ecgcrnn::nn;
using testutil::error_code_of;

namespace {

double sigm(double v) { return 1.0 / (1.0 + std::exp(-v)); }

std::vector<double> random_vec(std::size_t n, std::mt19937_64& gen, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

// conv (zero padding K/2), bias, ReLU, max pool 2, by nested loops
Tensor3 naive_conv_block(const Tensor3& x, const std::vector<double>& k, const std::vector<double>& b,
                         std::size_t K, std::size_t cout) {
  const long pad = static_cast<long>(K / 2);
  Tensor3 pre(x.nw, x.len, cout);
  for (std::size_t w = 0; w < x.nw; ++w)
    for (std::size_t t = 0; t < x.len; ++t)
      for (std::size_t co = 0; co < cout; ++co) {
        double acc = b[co];
        for (std::size_t kk = 0; kk < K; ++kk) {
          const long src = static_cast<long>(t + kk) - pad;
          if (src < 0 || src >= static_cast<long>(x.len)) continue;
          for (std::size_t ci = 0; ci < x.ch; ++ci)
            acc += x.at(w, static_cast<std::size_t>(src), ci) * k[(kk * x.ch + ci) * cout + co];
        }
        pre.at(w, t, co) = std::max(0.0, acc);
      }
  Tensor3 out(x.nw, x.len / 2, cout);
  for (std::size_t w = 0; w < x.nw; ++w)
    for (std::size_t t = 0; t < out.len; ++t)
      for (std::size_t co = 0; co < cout; ++co) out.at(w, t, co) = std::max(pre.at(w, 2 * t, co), pre.at(w, 2 * t + 1, co));
  return out;
}

}  // namespace

TEST_SUITE("nn") {

TEST_CASE("parameter budget") {
  const auto c = count_params(Architecture::full());
  CHECK(c.total == 1203364);
  CHECK(c.conv == 874656);
  CHECK(c.lstm == 328192);
  CHECK(c.head == 516);
  CHECK(c.conv_blocks == std::vector<std::size_t>{48, 656, 2592, 10304, 41088, 164096, 655872});
  // per-block oracle 5*Cin*Cout + Cout
  const std::vector<std::size_t> ch{1, 8, 16, 32, 64, 128, 256, 512};
  for (std::size_t b = 0; b < 7; ++b) CHECK(c.conv_blocks[b] == 5 * ch[b] * ch[b + 1] + ch[b + 1]);
  CHECK(ModelParams(Architecture::full()).size() == 1203364);
  CHECK(count_params(ModelParams(Architecture::full())).total == 1203364);
}

TEST_CASE("parameter views follow the canonical order") {
  ModelParams p(Architecture::reduced(8));
  std::iota(p.values().begin(), p.values().end(), 0.0);
  std::size_t at = 0;
  for (std::size_t b = 0; b < p.arch().blocks(); ++b) {
    CHECK(p.conv_kernel(b)[0] == static_cast<double>(at));
    at += p.conv_kernel(b).size();
    CHECK(p.conv_bias(b)[0] == static_cast<double>(at));
    at += p.conv_bias(b).size();
  }
  CHECK(p.lstm_input()[0] == static_cast<double>(at));
  at += p.lstm_input().size();
  CHECK(p.lstm_recurrent()[0] == static_cast<double>(at));
  at += p.lstm_recurrent().size();
  CHECK(p.lstm_bias()[0] == static_cast<double>(at));
  at += p.lstm_bias().size();
  CHECK(p.head_weights()[0] == static_cast<double>(at));
  at += p.head_weights().size();
  CHECK(p.head_bias()[0] == static_cast<double>(at));
  at += p.head_bias().size();
  CHECK(at == p.size());
}

TEST_CASE("Glorot initialization") {
  const auto a = init_params(Architecture::full(), 5);
  const auto b = init_params(Architecture::full(), 5);
  const auto c = init_params(Architecture::full(), 6);
  CHECK(std::equal(a.values().begin(), a.values().end(), b.values().begin()));
  CHECK(!std::equal(a.values().begin(), a.values().end(), c.values().begin()));

  auto check_limit = [](std::span<const double> w, double limit) {
    double lo = 0, hi = 0;
    for (double v : w) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo >= -limit);
    CHECK(hi <= limit);
    // spread reaches most of the range
    CHECK(hi > 0.9 * limit);
    CHECK(lo < -0.9 * limit);
  };
  // fan_in 5*Cin, fan_out 5*Cout
  check_limit(a.conv_kernel(0), std::sqrt(6.0 / (5.0 * 1 + 5.0 * 8)));
  check_limit(a.conv_kernel(6), std::sqrt(6.0 / (5.0 * 256 + 5.0 * 512)));
  check_limit(a.lstm_input(), std::sqrt(6.0 / (512.0 + 512.0)));
  check_limit(a.lstm_recurrent(), std::sqrt(6.0 / (128.0 + 512.0)));
  check_limit(a.head_weights(), std::sqrt(6.0 / (128.0 + 4.0)));

  for (std::size_t blk = 0; blk < 7; ++blk)
    for (double v : a.conv_bias(blk)) CHECK(v == 0.0);
  const auto bias = a.lstm_bias();
  for (std::size_t i = 0; i < bias.size(); ++i) CHECK(bias[i] == (i >= 128 && i < 256 ? 1.0 : 0.0));
  for (double v : a.head_bias()) CHECK(v == 0.0);
}

TEST_CASE("conv block") {
  std::mt19937_64 gen(1);
  SUBCASE("identity tap returns the pooled input") {
    Tensor3 x(2, 16, 1);
    for (auto& v : x.data) v = std::abs(random_vec(1, gen)[0]);
    std::vector<double> k(5, 0.0), b(1, 0.0);
    k[2] = 1.0;
    const auto y = conv_block_forward(x, k, b);
    REQUIRE(y.len == 8);
    for (std::size_t w = 0; w < 2; ++w)
      for (std::size_t t = 0; t < 8; ++t) CHECK(y.at(w, t, 0) == std::max(x.at(w, 2 * t, 0), x.at(w, 2 * t + 1, 0)));
  }
  SUBCASE("zero input and zero bias give zero output") {
    Tensor3 x(3, 32, 4);
    const auto k = random_vec(5 * 4 * 6, gen);
    const std::vector<double> b(6, 0.0);
    for (double v : conv_block_forward(x, k, b).data) CHECK(v == 0.0);
  }
  SUBCASE("matches the nested-loop oracle") {
    for (auto [nw, len, cin, cout] : {std::array<std::size_t, 4>{1, 8, 1, 1}, {2, 32, 3, 5}, {3, 64, 8, 16}}) {
      Tensor3 x(nw, len, cin);
      x.data = random_vec(x.data.size(), gen);
      const auto k = random_vec(5 * cin * cout, gen);
      const auto b = random_vec(cout, gen, 0.3);
      const auto got = conv_block_forward(x, k, b);
      const auto want = naive_conv_block(x, k, b, 5, cout);
      REQUIRE(got.data.size() == want.data.size());
      for (std::size_t i = 0; i < got.data.size(); ++i) CHECK(std::abs(got.data[i] - want.data[i]) < 1e-12);
    }
  }
  SUBCASE("odd lengths are rejected") {
    Tensor3 x(1, 7, 1);
    CHECK(error_code_of([&] { conv_block_forward(x, std::vector<double>(5, 0.0), std::vector<double>(1, 0.0)); }) ==
          Errc::ShapeMismatch);
  }
}

TEST_CASE("global average pooling") {
  Tensor3 x(2, 4, 3);
  for (std::size_t w = 0; w < 2; ++w)
    for (std::size_t t = 0; t < 4; ++t) {
      x.at(w, t, 0) = 7.5;
      x.at(w, t, 1) = static_cast<double>(t + 1);
      x.at(w, t, 2) = 0.1 * static_cast<double>(w * 10 + t * t) - 0.3;
    }
  const auto g = global_avg_pool(x);
  CHECK(g.at(0, 0) == 7.5);
  CHECK(g.at(1, 1) == 2.5);
  for (std::size_t w = 0; w < 2; ++w) {
    const double oracle = (x.at(w, 0, 2) + x.at(w, 1, 2) + x.at(w, 2, 2) + x.at(w, 3, 2)) / 4.0;
    CHECK(std::abs(g.at(w, 2) - oracle) <= 1e-15);
  }
}

TEST_CASE("LSTM") {
  std::mt19937_64 gen(2);
  Architecture arch = Architecture::reduced(16);  // 32 features, 8 units
  const std::size_t in = arch.features(), h = arch.lstm_units;
  Matrix seq(3, in);
  seq.data = random_vec(seq.data.size(), gen);

  ModelParams zero(arch);
  for (double v : lstm_forward(seq, zero)) CHECK(v == 0.0);

  ModelParams p = init_params(arch, 3);
  for (auto& v : p.lstm_bias()) v = random_vec(1, gen, 0.5)[0];

  SUBCASE("single step equals the gate equations") {
    Matrix one(1, in);
    one.data = random_vec(in, gen);
    const auto got = lstm_forward(one, p);
    const auto W = p.lstm_input();
    const auto B = p.lstm_bias();
    for (std::size_t u = 0; u < h; ++u) {
      double z[4];
      for (std::size_t g = 0; g < 4; ++g) {
        z[g] = B[g * h + u];
        for (std::size_t i = 0; i < in; ++i) z[g] += one.at(0, i) * W[i * 4 * h + g * h + u];
      }
      const double c = sigm(z[0]) * std::tanh(z[2]);
      CHECK(std::abs(got[u] - sigm(z[3]) * std::tanh(c)) < 1e-14);
    }
  }
  SUBCASE("zero steps are consumed, not skipped") {
    Matrix padded(4, in);
    std::copy(seq.data.begin(), seq.data.end(), padded.data.begin() + static_cast<std::ptrdiff_t>(in));
    const auto a = lstm_forward(seq, p);
    const auto b = lstm_forward(padded, p);
    double diff = 0;
    for (std::size_t u = 0; u < h; ++u) diff += std::abs(a[u] - b[u]);
    CHECK(diff > 1e-6);
  }
  SUBCASE("masks scale inputs and recurrent state") {
    DropoutMasks m;
    m.input.assign(in, 1.0);
    m.recurrent.assign(h, 1.0);
    CHECK(lstm_forward(seq, p, &m) == lstm_forward(seq, p));
    Rng rng(9);
    const auto drawn = draw_dropout_masks(arch, 0.5, rng);
    for (double v : drawn.input) CHECK((v == 0.0 || v == 2.0));
    CHECK(drawn.recurrent.size() == h);
  }
}

TEST_CASE("softmax is stable for large logits") {
  std::mt19937_64 gen(4);
  for (int i = 0; i < 200; ++i) {
    const auto logits = random_vec(4, gen, 100.0);
    const auto p = softmax(logits);
    double s = 0;
    for (double v : p) {
      CHECK(std::isfinite(v));
      CHECK(v >= 0.0);
      s += v;
    }
    CHECK(std::abs(s - 1.0) < 1e-9);
  }
}

TEST_CASE("forward pass") {
  const Architecture full = Architecture::full();
  ModelParams zero(full);
  const auto x = testutil::random_windows(3, 1);
  const auto r = model_forward(x, zero, Mode::Eval);
  for (double v : r.probs) CHECK(v == 0.25);

  const auto p = init_params(full, 1);
  const auto x22 = testutil::random_windows(22, 2);
  const auto a = model_forward(x22, p, Mode::Eval);
  const auto b = model_forward(x22, p, Mode::Eval);
  CHECK(a.probs == b.probs);
  CHECK(std::abs(std::accumulate(a.probs.begin(), a.probs.end(), 0.0) - 1.0) < 1e-9);
  const std::vector<std::vector<std::size_t>> table2{
      {22, 512, 1}, {22, 256, 8}, {22, 128, 16}, {22, 64, 32}, {22, 32, 64}, {22, 16, 128},
      {22, 8, 256}, {22, 4, 512}, {22, 512},    {128},        {4}};
  REQUIRE(a.trace.shapes.size() == table2.size());
  for (std::size_t i = 0; i < table2.size(); ++i) CHECK(a.trace.shapes[i].dims == table2[i]);
  CHECK_FALSE(a.trace.retained);

  Rng r1(5), r2(5);
  const auto t1 = model_forward(x22, p, Mode::Train, &r1);
  const auto t2 = model_forward(x22, p, Mode::Train, &r2);
  CHECK(t1.probs == t2.probs);
  CHECK(t1.probs != a.probs);
  CHECK(t1.trace.retained);
}

TEST_CASE("padding windows leave real-window conv outputs unchanged") {
  const auto p = init_params(Architecture::reduced(4), 3);
  auto x = testutil::random_windows(2, 8);
  const auto a = model_forward_with_masks(x, p, {});
  const auto padded = pipeline::pad_front(x, 3);
  const auto b = model_forward_with_masks(padded, p, {});
  const auto& fa = a.trace.features;
  const auto& fb = b.trace.features;
  for (std::size_t c = 0; c < fa.cols; ++c) {
    CHECK(fb.at(1, c) == fa.at(0, c));
    CHECK(fb.at(2, c) == fa.at(1, c));
  }
  // a record alone equals the same record inside a batch with identical padding
  const auto alone = model_forward(padded, p, Mode::Eval);
  const auto again = model_forward(pipeline::pad_front(x, 3), p, Mode::Eval);
  CHECK(alone.probs == again.probs);
}

TEST_CASE("backward pass") {
  const Architecture arch = Architecture::reduced(16);
  SUBCASE("softmax-cross-entropy identity at the head bias") {
    ModelParams zero(arch);
    const auto x = testutil::random_windows(2, 3);
    for (std::size_t k = 0; k < 4; ++k) {
      const auto f = model_forward_with_masks(x, zero, {});
      const auto g = model_backward(f.trace, k, zero);
      for (std::size_t j = 0; j < 4; ++j) CHECK(g.head_bias()[j] == doctest::Approx(0.25 - (j == k ? 1.0 : 0.0)).epsilon(1e-12));
    }
  }
  SUBCASE("confident correct prediction has near-zero head gradient") {
    ModelParams p = init_params(arch, 1);
    p.head_bias()[2] = 60.0;
    const auto x = testutil::random_windows(2, 4);
    const auto f = model_forward_with_masks(x, p, {});
    const auto g = model_backward(f.trace, 2, p);
    for (double v : g.head_bias()) CHECK(std::abs(v) < 1e-20);
  }
  SUBCASE("every gradient component matches central differences") {
    ModelParams p = init_params(arch, 11);
    for (auto& v : p.lstm_bias()) v += 0.1;
    Rng rng(3);
    const auto masks = draw_dropout_masks(arch, 0.5, rng);
    const auto x = testutil::random_windows(2, 5);
    std::vector<std::size_t> all(p.size());
    std::iota(all.begin(), all.end(), 0);
    const auto res = testutil::finite_difference_check(x, p, masks, 1, all, 1e-4);
    MESSAGE("worst relative error " << res.worst << " over " << res.checked << " parameters");
    CHECK(res.checked == p.size());
    CHECK(res.failures == 0);
  }
  SUBCASE("stale and eval traces are refused") {
    ModelParams p = init_params(arch, 1);
    const auto x = testutil::random_windows(1, 1);
    const auto eval_trace = model_forward(x, p, Mode::Eval);
    CHECK(error_code_of([&] { model_backward(eval_trace.trace, 0, p); }) == Errc::StaleTrace);
    const auto tr = model_forward_with_masks(x, p, {});
    p.bump_generation();
    CHECK(error_code_of([&] { model_backward(tr.trace, 0, p); }) == Errc::StaleTrace);
  }
  SUBCASE("inactive units receive no gradient") {
    // all conv biases very negative: every ReLU off, so conv gradients vanish
    ModelParams p = init_params(arch, 2);
    for (std::size_t b = 0; b < arch.blocks(); ++b)
      for (auto& v : p.conv_bias(b)) v = -100.0;
    const auto x = testutil::random_windows(2, 6);
    const auto f = model_forward_with_masks(x, p, {});
    const auto g = model_backward(f.trace, 0, p);
    for (std::size_t b = 0; b < arch.blocks(); ++b) {
      for (double v : g.conv_kernel(b)) CHECK(v == 0.0);
      for (double v : g.conv_bias(b)) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  testutil::TempDir dir("ckpt");
  const auto p = init_params(Architecture::reduced(8), 21);
  nlohmann::json meta{{"seed", 21}, {"epoch", 3}, {"metrics", {{"test_acc", 0.5}}}};
  save_checkpoint(dir.path / "c.bin", p, meta);
  const auto c = load_checkpoint(dir.path / "c.bin");
  CHECK(c.params.arch() == p.arch());
  CHECK(std::memcmp(c.params.values().data(), p.values().data(), p.size() * sizeof(double)) == 0);
  CHECK(c.metadata["epoch"] == 3);
  CHECK(c.metadata["param_count"] == p.size());

  auto bytes = encode_checkpoint(p, meta);
  CHECK(std::memcmp(bytes.data(), "ECGCRNN1", 8) == 0);
  CHECK(encode_checkpoint(c.params, c.metadata) == bytes);
  auto bad = bytes;
  bad[0] = std::byte{'X'};
  CHECK(error_code_of([&] { decode_checkpoint(bad); }) == Errc::BadCheckpoint);
  bytes.pop_back();
  CHECK(error_code_of([&] { decode_checkpoint(bytes); }) != Errc::Io);
}

}
