#include <cmath>
#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "dram/checkpoint.hpp"
#include "dram/gradcheck_suite.hpp"
#include "dram/model.hpp"
#include "dram/random.hpp"

using namespace dram;

namespace {

constexpr double kTanh1 = 0.7615941559557649;

BackboneSpec small_tcn(std::size_t hidden = 4) {
  BackboneSpec s;
  s.kind = BackboneKind::Tcn;
  s.tcn.hidden_channels = hidden;
  s.tcn.dilations = {1, 2};
  return s;
}

BackboneSpec small_lstm() {
  BackboneSpec s;
  s.kind = BackboneKind::Lstm;
  s.lstm.hidden = 5;
  return s;
}

const ModelDims kDims{3, 8, 4};

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (double& v : t.storage()) v = rng.uniform(-1, 1);
  return t;
}

StepInputs random_inputs(const ModelDims& d, Rng& rng) {
  StepInputs in;
  in.avatar_audio = random_matrix(d.audio, d.history, rng);
  in.avatar_pose = random_matrix(d.pose, d.history, rng);
  in.human_audio = random_matrix(d.audio, d.history, rng);
  in.human_pose = random_matrix(d.pose, d.history, rng);
  in.monadic_buffer = random_matrix(d.pose, d.history, rng);
  return in;
}

/// Single-block residual-free TCN whose identity taps copy input rows
/// [offset, offset + p) of the last column to the output.
void wire_passthrough(Backbone& b, std::size_t offset, std::size_t p) {
  b.zero_parameters();
  Tensor& k = b.param("block0.kernel").value;
  const std::size_t in = k.shape()[1], taps = k.shape()[2];
  for (std::size_t i = 0; i < p; ++i) k.storage()[(i * in + offset + i) * taps] = 1.0;
  Tensor& W = b.param("head.weight").value;
  for (std::size_t i = 0; i < p; ++i) W(i, i) = 1.0;
}

BackboneSpec passthrough_spec(std::size_t p) {
  BackboneSpec s;
  s.tcn.hidden_channels = p;
  s.tcn.dilations = {1};
  s.tcn.residual = false;
  return s;
}

}  // namespace

TEST(ResidualAttention, EqualInputsGiveZero) {
  const std::vector<double> z{0.3, -1.2, 5.0};
  for (double d : residual_attention(z, z)) EXPECT_EQ(d, 0.0);
}

TEST(ResidualAttention, UnitResidual) {
  EXPECT_DOUBLE_EQ(residual_attention(std::vector<double>{0.0}, std::vector<double>{1.0})[0], kTanh1);
}

TEST(ResidualAttention, RangeOverTenThousandPairs) {
  Rng rng(1, "delta-range");
  for (int i = 0; i < 10000; ++i) {
    std::vector<double> zm(6), zd(6);
    for (double& v : zm) v = rng.uniform(-10, 10);
    for (double& v : zd) v = rng.uniform(-10, 10);
    for (double d : residual_attention(zm, zd)) {
      ASSERT_GE(d, 0.0);
      ASSERT_LT(d, 1.0);
    }
  }
}

TEST(Combine, ZeroAttentionReturnsMonadicBitEqual) {
  const std::vector<double> zm{0.1, -0.7, 3.3}, zd{9, 9, 9}, zero(3, 0.0);
  EXPECT_EQ(dram_combine(zm, zd, zero), zm);
}

TEST(Combine, ScalarSpotValue) {
  EXPECT_DOUBLE_EQ(dram_combine(std::vector<double>{0.0}, std::vector<double>{1.0}, std::vector<double>{kTanh1})[0], kTanh1);
}

TEST(Combine, EqualInputsReturnMonadic) {
  Rng rng(2, "degenerate");
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> z(5);
    for (double& v : z) v = rng.uniform(-10, 10);
    EXPECT_EQ(dram_combine(z, z, residual_attention(z, z)), z);
  }
}

TEST(Combine, BlendGrowsWithResidual) {
  const double zm = 0.4;
  double prev = -1.0;
  for (int i = 0; i <= 100; ++i) {
    const std::vector<double> a{zm}, b{zm + 0.05 * i};
    const double y = dram_combine(a, b, residual_attention(a, b))[0];
    EXPECT_GE(y - zm, prev) << i;
    prev = y - zm;
  }
}

TEST(Loss, Values) {
  Tensor t({4, 5});
  EXPECT_EQ(dram_loss(t, t), 0.0);
  Tensor p = t;
  p(2, 3) = 1.0;
  EXPECT_DOUBLE_EQ(dram_loss(p, t), 1.0 / 5.0);
  EXPECT_THROW(dram_loss(Tensor({4, 4}), t), DimensionError);
}

TEST(Loss, InvariantToJointPermutation) {
  Rng rng(3, "perm");
  const Tensor a = random_matrix(8, 6, rng), b = random_matrix(8, 6, rng);
  Tensor pa({8, 6}), pb({8, 6});
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t t = 0; t < 6; ++t) {
      pa((r + 4) % 8, t) = a(r, t);
      pb((r + 4) % 8, t) = b(r, t);
    }
  EXPECT_NEAR(dram_loss(pa, pb), dram_loss(a, b), 1e-12);
}

TEST(Variant, InputChannelMasks) {
  const ModelDims d{23, 48, 32};
  const auto ch = [&](Variant v) { return d.channels(variant_info(v).primary); };
  EXPECT_EQ(ch(Variant::AvatarAudioOnly), 23u);
  EXPECT_EQ(ch(Variant::HumanAudioOnly), 23u);
  EXPECT_EQ(ch(Variant::AvatarMonadicOnly), 71u);
  EXPECT_EQ(ch(Variant::HumanMonadicOnly), 71u);
  EXPECT_EQ(ch(Variant::EarlyFusion), 142u);
  EXPECT_EQ(ch(Variant::Dram), 71u);
  EXPECT_EQ(d.channels(dyadic_streams()), 23u + 96u);
  for (Variant v : kAllVariants) EXPECT_EQ(parse_variant(variant_key(v)), v);
  EXPECT_FALSE(parse_variant("late_fusion"));
}

TEST(Variant, ZeroParametersPredictZero) {
  Rng rng(4, "zero");
  for (Variant v : kAllVariants) {
    PoseModel m(v, small_tcn(), kDims, 1);
    for (Parameter* p : m.parameters()) p->value.fill(0.0);
    const StepOutput out = variant_step(m, random_inputs(kDims, rng));
    for (double x : out.pose) EXPECT_EQ(x, 0.0) << variant_key(v);
  }
}

TEST(Variant, MonadicPassThroughEchoesLastPose) {
  Rng rng(5, "echo");
  PoseModel m(Variant::AvatarMonadicOnly, passthrough_spec(kDims.pose), kDims, 1);
  wire_passthrough(m.primary(), kDims.audio, kDims.pose);
  const StepInputs in = random_inputs(kDims, rng);
  Tensor pos = in.avatar_pose;
  for (double& v : pos.storage()) v = std::fabs(v);
  StepInputs pin = in;
  pin.avatar_pose = pos;
  EXPECT_EQ(variant_step(m, pin).pose, pos.column(kDims.history - 1));
}

TEST(Variant, DyadicPassThroughEchoesMonadicBuffer) {
  Rng rng(6, "dyadic-echo");
  PoseModel m(Variant::DramNoAttention, passthrough_spec(kDims.pose), kDims, 1);
  m.options().zm_includes_current = false;
  wire_passthrough(m.dyadic(), kDims.audio + kDims.pose, kDims.pose);
  StepInputs in = random_inputs(kDims, rng);
  for (double& v : in.monadic_buffer.storage()) v = std::fabs(v);
  EXPECT_EQ(variant_step(m, in).pose, in.monadic_buffer.column(kDims.history - 1));
}

TEST(Variant, NoAttentionEqualsDyadicOutput) {
  Rng rng(7, "noatt");
  PoseModel m(Variant::DramNoAttention, small_tcn(), kDims, 2);
  const StepOutput out = variant_step(m, random_inputs(kDims, rng));
  EXPECT_EQ(out.pose, out.dyadic);
  EXPECT_TRUE(out.attention.empty());
}

TEST(Variant, DramWithEqualStagesEqualsMonadic) {
  Rng rng(8, "dram-eq");
  PoseModel m(Variant::Dram, passthrough_spec(kDims.pose), kDims, 1);
  wire_passthrough(m.primary(), kDims.audio, kDims.pose);
  wire_passthrough(m.dyadic(), kDims.audio + kDims.pose, kDims.pose);
  StepInputs in = random_inputs(kDims, rng);
  for (double& v : in.avatar_pose.storage()) v = std::fabs(v);
  // z^m = last avatar pose; the dyadic stage echoes the newest buffer column, which is z^m itself.
  const StepOutput out = variant_step(m, in);
  EXPECT_EQ(out.dyadic, out.monadic);
  EXPECT_EQ(out.pose, out.monadic);
  for (double d : out.attention) EXPECT_EQ(d, 0.0);
}

TEST(Variant, WrongHistoryIsConfigError) {
  Rng rng(9, "bad");
  PoseModel m(Variant::EarlyFusion, small_tcn(), kDims, 1);
  StepInputs in = random_inputs(kDims, rng);
  in.human_pose = Tensor({kDims.pose, kDims.history - 1});
  EXPECT_THROW(variant_step(m, in), ConfigError);
}

TEST(Model, DramHasNoAttentionParameters) {
  for (const BackboneSpec& s : {small_tcn(), small_lstm()}) {
    PoseModel dram(Variant::Dram, s, kDims, 3);
    EXPECT_EQ(dram.parameter_count(), dram.primary().parameter_count() + dram.dyadic().parameter_count());
    EXPECT_EQ(dram.primary().parameter_count(), PoseModel(Variant::AvatarMonadicOnly, s, kDims, 3).parameter_count());
    EXPECT_EQ(PoseModel(Variant::DramNoAttention, s, kDims, 3).parameter_count(), dram.parameter_count());
  }
}

TEST(Model, MonadicAndDyadicShareHyperparameters) {
  PoseModel m(Variant::Dram, small_tcn(6), kDims, 1);
  const auto& a = std::get<TcnConfig>(m.primary().config());
  const auto& b = std::get<TcnConfig>(m.dyadic().config());
  EXPECT_EQ(a.hidden_channels, b.hidden_channels);
  EXPECT_EQ(a.dilations, b.dilations);
  EXPECT_EQ(a.kernel_size, b.kernel_size);
}

TEST(GradCheck, EndToEndTwoStageModels) {
  for (const auto& c : gradcheck_registry()) {
    if (c.name != "dram_tcn" && c.name != "dram_lstm" && c.name != "residual_attention" && c.name != "dram_combine")
      continue;
    for (std::uint64_t s = 0; s < 20; ++s) EXPECT_LT(c.run(s + 500, false).max_rel_error, 1e-4) << c.name;
  }
}

TEST(Checkpoint, RoundTripIsExact) {
  for (Variant v : kAllVariants) {
    for (const BackboneSpec& s : {small_tcn(), small_lstm()}) {
      const PoseModel m(v, s, kDims, 42);
      const std::string bytes = encode_checkpoint(m);
      const PoseModel back = decode_checkpoint(bytes);
      EXPECT_EQ(encode_checkpoint(back), bytes);
      EXPECT_EQ(back.variant(), v);
      EXPECT_EQ(back.dims(), kDims);
    }
  }
}

TEST(Checkpoint, FileRoundTripAndErrors) {
  const auto path = std::filesystem::temp_directory_path() / "dram_test_model.ckpt";
  const PoseModel m(Variant::Dram, small_tcn(), kDims, 5);
  write_checkpoint(path.string(), m);
  EXPECT_EQ(encode_checkpoint(read_checkpoint(path.string())), encode_checkpoint(m));
  std::string bytes = encode_checkpoint(m);
  std::string bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  bad = bytes;
  bad[8] = 9;
  EXPECT_THROW(decode_checkpoint(bad), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  EXPECT_THROW(decode_checkpoint(bytes + "x"), FormatError);
  std::filesystem::remove(path);
}
