#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "stsc/encoder.hpp"
#include "stsc/grad_check.hpp"
#include "test_util.hpp"

using namespace stsc;

namespace {

std::array<Shape, 4> feature_shapes(const EncoderWeights<double>& enc, const Tensor4<double>& x) {
  Tape<double> t;
  const FeatureSet fs = encode(t, t.constant(x), enc);
  std::array<Shape, 4> out;
  for (std::size_t s = 0; s < 4; ++s) out[s] = t.shape(fs.stages[s]);
  return out;
}

}  // namespace

TEST(Encoder, FeatureShapesFor64) {
  const auto enc = generate_encoder<double>(7);
  const auto shapes = feature_shapes(enc, oracle::random(Shape{2, 3, 64, 64}, 1, 0.0, 1.0));
  EXPECT_EQ(shapes[0], (Shape{2, 16, 32, 32}));
  EXPECT_EQ(shapes[1], (Shape{2, 32, 16, 16}));
  EXPECT_EQ(shapes[2], (Shape{2, 64, 8, 8}));
  EXPECT_EQ(shapes[3], (Shape{2, 128, 4, 4}));
}

TEST(Encoder, ZeroImageGivesZeroFeatures) {
  const auto enc = generate_encoder<double>(3);
  Tape<double> t;
  const FeatureSet fs = encode(t, t.constant(Tensor4<double>(Shape{1, 3, 32, 32})), enc);
  for (const Var v : fs.stages)
    for (double a : t.value(v).data()) ASSERT_EQ(a, 0.0);
}

TEST(Encoder, FirstStageWeightScale) {
  const auto enc = generate_encoder<double>(11);
  const auto& w = enc.stages[0].weight.data();
  double mean = 0.0, sq = 0.0;
  for (double v : w) mean += v;
  mean /= static_cast<double>(w.size());
  for (double v : w) sq += (v - mean) * (v - mean);
  const double stddev = std::sqrt(sq / static_cast<double>(w.size()));
  EXPECT_NEAR(stddev, std::sqrt(2.0 / 27.0), 0.05 * std::sqrt(2.0 / 27.0));
  for (const auto& st : enc.stages)
    for (double b : st.bias.data()) EXPECT_EQ(b, 0.0);
}

TEST(Encoder, GenerationIsDeterministic) {
  EXPECT_TRUE(generate_encoder<double>(7) == generate_encoder<double>(7));
  EXPECT_FALSE(generate_encoder<double>(7) == generate_encoder<double>(8));
}

TEST(Encoder, RejectsBadInputs) {
  const auto enc = generate_encoder<double>(0);
  Tape<double> t;
  EXPECT_THROW(encode(t, t.constant(Tensor4<double>(Shape{1, 1, 32, 32})), enc), ShapeError);
  EXPECT_THROW(encode(t, t.constant(Tensor4<double>(Shape{1, 3, 24, 32})), enc), ShapeError);
}

TEST(Encoder, WeightsNeverReceiveGradients) {
  const auto enc = generate_encoder<double>(5);
  const auto before = enc;
  Tape<double> t;
  const Var x = t.param(oracle::random(Shape{1, 3, 16, 16}, 2, 0.0, 1.0));
  const FeatureSet fs = encode(t, x, enc);
  t.backward(sum(t, fs.stages[3]));
  EXPECT_TRUE(enc == before);
  // The four weight and four bias leaves are the only nodes without a gradient.
  std::size_t constants = 0;
  for (std::size_t id = 0; id < t.size(); ++id)
    if (!t.requires_grad(Var{id})) ++constants;
  EXPECT_EQ(constants, 8u);
  EXPECT_TRUE(enc.frozen);
}

TEST(Encoder, ContentStageGradientMatchesFiniteDifferences) {
  const auto enc = generate_encoder<double>(9);
  const std::function<Var(Tape<double>&, const std::vector<Var>&)> f = [&enc](Tape<double>& t,
                                                                               const std::vector<Var>& v) {
    return sum(t, encode(t, v[0], enc).content());
  };
  GradCheckOptions opt;
  opt.samples = 30;
  opt.detect_kinks = true;
  const auto r = grad_check<double>(f, {oracle::random(Shape{1, 3, 16, 16}, 4, 0.0, 1.0)}, opt);
  EXPECT_LE(r.max_rel_error, 1e-4);
  EXPECT_GE(r.entries.size(), 25u);
}

TEST(Encoder, ImportRoundTripIsBitwise) {
  TempDir dir;
  const auto enc = generate_encoder<double>(7);
  save_encoder(enc, dir / "enc.stsc");
  EXPECT_TRUE(import_encoder<double>(dir / "enc.stsc") == enc);
  EXPECT_TRUE(import_encoder<float>(dir / "enc.stsc") == generate_encoder<float>(7));
}

TEST(Encoder, ImportErrors) {
  TempDir dir;
  const auto enc = generate_encoder<double>(7);
  const auto bytes = encode_checkpoint(encoder_to_map(enc));

  std::vector<std::uint8_t> truncated(bytes.begin(), bytes.begin() + static_cast<long>(bytes.size() / 2));
  write_file_bytes(dir / "short.stsc", truncated);
  EXPECT_EQ(checkpoint_error_kind([&] { import_encoder<double>(dir / "short.stsc"); }),
            CheckpointError::Kind::UnexpectedEof);

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  write_file_bytes(dir / "magic.stsc", bad_magic);
  EXPECT_EQ(checkpoint_error_kind([&] { import_encoder<double>(dir / "magic.stsc"); }),
            CheckpointError::Kind::NotACheckpoint);

  auto missing = encoder_to_map(enc);
  missing.erase(encoder_weight_name(3));
  save_tensor_map(missing, dir / "missing.stsc");
  EXPECT_EQ(checkpoint_error_kind([&] { import_encoder<double>(dir / "missing.stsc"); }),
            CheckpointError::Kind::MissingTensor);

  auto wrong = encoder_to_map(enc);
  wrong[encoder_bias_name(2)] = StoredTensor{{16}, std::vector<float>(16)};
  save_tensor_map(wrong, dir / "shape.stsc");
  EXPECT_EQ(checkpoint_error_kind([&] { import_encoder<double>(dir / "shape.stsc"); }),
            CheckpointError::Kind::ShapeMismatch);

  EXPECT_EQ(checkpoint_error_kind([&] { import_encoder<double>(dir / "absent.stsc"); }), CheckpointError::Kind::Io);
}
