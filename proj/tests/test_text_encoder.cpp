#include <gtest/gtest.h>

#include "ctl/error.hpp"
#include "ctl/grad_check.hpp"
#include "ctl/text_encoder.hpp"
#include "oracles.hpp"

using namespace ctl;

namespace {

// Direct transcription of the two branches: same-padded kernel-3 convolution,
// and kernel-5 depthwise followed by pointwise.
oracle::Mat naive_encoder(const TextEncoderParams& p, const std::vector<TokenId>& ids) {
  const std::size_t L = ids.size(), d = p.dim();
  oracle::Mat emb(L, std::vector<double>(d, 0.0));
  for (std::size_t l = 0; l < L; ++l)
    if (ids[l] != kPad)
      for (std::size_t i = 0; i < d; ++i) emb[l][i] = p.embedding.at(std::size_t(ids[l]), i);
  auto e = [&](long l, std::size_t i) { return (l < 0 || l >= long(L)) ? 0.0 : emb[std::size_t(l)][i]; };

  oracle::Mat cat(L, std::vector<double>(2 * d, 0.0));
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t o = 0; o < d; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < 3; ++k) s += p.local_conv.at(o, i, k) * e(long(l) + long(k) - 1, i);
      cat[l][o] = s;
    }
    std::vector<double> dw(d, 0.0);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < 5; ++k) dw[i] += p.depthwise.at(i, k) * e(long(l) + long(k) - 2, i);
    for (std::size_t o = 0; o < d; ++o)
      for (std::size_t i = 0; i < d; ++i) cat[l][d + o] += dw[i] * p.pointwise.at(i, o);
  }
  oracle::Mat fused = oracle::matmul(cat, oracle::to_mat(p.fuse));
  for (auto& row : fused)
    for (std::size_t j = 0; j < d; ++j) row[j] += p.fuse_bias[j];
  oracle::Mat out = oracle::layer_norm(fused, p.ln_gain.storage(), p.ln_bias.storage(), 1e-5);
  for (std::size_t l = 0; l < L; ++l)
    if (ids[l] == kPad) std::fill(out[l].begin(), out[l].end(), 0.0);
  return out;
}

TextEncoderParams random_params(std::size_t v, std::size_t d, std::uint64_t seed) {
  RngState rng(seed);
  TextEncoderParams p = TextEncoderParams::init(v, d, rng);
  p.ln_gain = random_normal({d}, 1.0, rng);
  p.ln_bias = random_normal({d}, 0.5, rng);
  p.fuse_bias = random_normal({d}, 0.5, rng);
  return p;
}

}  // namespace

TEST(TextEncoder, ShapeAndPadMask) {
  const TextEncoderParams p = random_params(10, 6, 1);
  const std::vector<TokenSequence> batch{{{kBos, 4, 5, kEos, kPad, kPad}}, {{kPad, kPad, kPad, kPad, kPad, kPad}}};
  const Tensor h = encode_text(batch, p);
  ASSERT_EQ(h.shape(), (Tensor::Shape{2, 6, 6}));
  for (std::size_t l = 4; l < 6; ++l)
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(h.at(0, l, i), 0.0);
  for (std::size_t l = 0; l < 6; ++l)
    for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(h.at(1, l, i), 0.0);
}

TEST(TextEncoder, MatchesNaiveConvolution) {
  for (std::uint64_t seed : {2u, 3u, 4u}) {
    const TextEncoderParams p = random_params(12, 8, seed);
    const std::vector<TokenId> ids{kBos, 5, 7, 11, 4, kEos, kPad};
    const Tensor h = encode_text({TokenSequence{ids}}, p);
    EXPECT_LT(oracle::max_abs_diff(naive_encoder(p, ids), h.data()), 1e-12);
  }
}

TEST(TextEncoder, OutOfRangeIdThrows) {
  const TextEncoderParams p = random_params(6, 4, 1);
  EXPECT_THROW(encode_text({TokenSequence{{kBos, 6, kEos}}}, p), ParameterError);
}

TEST(TextEncoder, GradientsMatchFiniteDifferences) {
  const std::size_t v = 12, d = 8;
  TextEncoderParams p = random_params(v, d, 9);
  const std::vector<TokenId> ids{kBos, 5, 7, 11, kEos, kPad};
  RngState rng(10);
  const Tensor readout = random_normal({ids.size(), d}, 1.0, rng);
  auto loss = [&]() {
    const Tensor h = encode_text({TokenSequence{ids}}, p);
    double s = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) s += readout[i] * h[i];
    return s;
  };
  TextEncoderParams g = TextEncoderParams::zeros(v, d);
  TextEncoderCache cache;
  std::vector<double> out(ids.size() * d);
  text_encoder_forward(p, ids.data(), ids.size(), out.data(), cache);
  text_encoder_backward(p, cache, readout.data(), g);
  ParamList pl, gl;
  p.collect(pl, "text");
  g.collect(gl, "text");
  const GradCheckReport rep = grad_check(loss, pl, gl);
  EXPECT_TRUE(rep.passed) << rep.summary();
  EXPECT_EQ(rep.tensors, pl.size());

  // PAD rows of the embedding receive no gradient.
  for (std::size_t i = 0; i < d; ++i) EXPECT_EQ(g.embedding.at(kPad, i), 0.0);
}
