#include <cmath>

#include <gtest/gtest.h>

#include "dram/checkpoint.hpp"
#include "dram/random.hpp"
#include "dram/trainer.hpp"

using namespace dram;

namespace {

BackboneSpec tiny_tcn() {
  BackboneSpec s;
  s.tcn.hidden_channels = 4;
  s.tcn.dilations = {1, 2};
  return s;
}

/// a = 1, p = 2: the avatar pose follows a lagged copy of its own audio.
std::vector<DyadicSequence> linear_task(std::size_t n, std::size_t T, std::uint64_t seed) {
  std::vector<DyadicSequence> out;
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, "linear-" + std::to_string(i));
    DyadicSequence s;
    s.X = Tensor({1, T});
    s.XH = Tensor({1, T});
    s.Y = Tensor({2, T});
    s.YH = Tensor({2, T});
    const double phase = rng.uniform(0, 6.28);
    for (std::size_t t = 0; t < T; ++t) {
      s.X(0, t) = std::sin(0.1 * static_cast<double>(t) + phase);
      s.XH(0, t) = rng.uniform(-1, 1);
      s.YH(0, t) = rng.uniform(-1, 1);
      s.YH(1, t) = rng.uniform(-1, 1);
    }
    for (std::size_t t = 1; t < T; ++t) {
      s.Y(0, t) = 0.5 * s.X(0, t - 1);
      s.Y(1, t) = 0.8 * s.Y(1, t - 1) + 0.1 * s.X(0, t - 1);
    }
    out.push_back(std::move(s));
  }
  return out;
}

TrainerConfig quick_trainer(std::size_t epochs) {
  TrainerConfig c;
  c.epochs = epochs;
  c.batch_size = 2;
  c.chunk_length = 40;
  c.seed = 5;
  return c;
}

std::vector<Tensor> snapshot(PoseModel& m) {
  std::vector<Tensor> out;
  for (Parameter* p : m.parameters()) out.push_back(p->value);
  return out;
}

SkeletonTopology topology() { return SkeletonTopology::upper_body(); }

DyadicSequence skeleton_sequence(std::uint64_t seed, std::size_t T) {
  SynthConfig c;
  c.seed = seed;
  c.duration = T;
  return generate_sequence(c);
}

PositionSequence random_positions(Rng& rng, std::size_t frames, std::size_t joints) {
  PositionSequence s(frames, PositionFrame(joints));
  for (auto& f : s)
    for (auto& v : f) v = Vec3{rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
  return s;
}

}  // namespace

TEST(Schedule, TeacherForcingDecaysLinearly) {
  TrainerConfig c;
  c.epochs = 10;
  EXPECT_EQ(c.teacher_forcing(0), 1.0);
  EXPECT_DOUBLE_EQ(c.teacher_forcing(1), 0.8);
  EXPECT_DOUBLE_EQ(c.teacher_forcing(4), 0.2);
  EXPECT_EQ(c.teacher_forcing(5), 0.0);
  EXPECT_EQ(c.teacher_forcing(9), 0.0);
  c.tf_decay_epochs = 4;
  c.tf_start = 0.9;
  c.tf_end = 0.1;
  EXPECT_DOUBLE_EQ(c.teacher_forcing(2), 0.5);
  EXPECT_EQ(c.teacher_forcing(4), 0.1);
}

TEST(Schedule, Validation) {
  TrainerConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.tf_start = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainerConfig{};
  c.optimizer.learning_rate = -1;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Chunks, CoverEveryPredictedFrameOnce) {
  const auto data = linear_task(2, 101, 1);
  const auto chunks = make_chunks(data, {0, 1}, 30);
  ASSERT_EQ(chunks.size(), 8u);
  std::size_t frames = 0;
  for (const auto& c : chunks) frames += c.length;
  EXPECT_EQ(frames, 200u);
  EXPECT_EQ(chunks.back().start, 91u);
  EXPECT_EQ(chunks.back().length, 10u);
}

TEST(ChunkLoss, FullTeacherForcingIsOneStepLoss) {
  const auto data = linear_task(1, 80, 2);
  const DyadicSequence& seq = data[0];
  const ModelDims d{1, 2, 6};
  PoseModel m(Variant::AvatarMonadicOnly, tiny_tcn(), d, 3);
  for (const Chunk ch : {Chunk{0, 1, 20}, Chunk{0, 30, 25}}) {
    Tape tape;
    const auto truth = [&](long f) { return seq.Y.column(static_cast<std::size_t>(f)); };
    const double got = tape.value(chunk_loss(tape, m, seq, ch, truth))[0];

    double sum = 0.0;
    for (std::size_t t = ch.start; t < ch.start + ch.length; ++t) {
      StepInputs in;
      in.avatar_audio = Tensor({1, d.history});
      in.avatar_pose = Tensor({2, d.history});
      for (std::size_t j = 0; j < d.history; ++j) {
        const long f = static_cast<long>(t) - static_cast<long>(d.history) + static_cast<long>(j);
        if (f < 0) continue;
        in.avatar_audio(0, j) = seq.X(0, static_cast<std::size_t>(f));
        in.avatar_pose.set_column(j, seq.Y.column(static_cast<std::size_t>(f)));
      }
      const auto y = variant_step(m, in).pose;
      for (std::size_t r = 0; r < 2; ++r) sum += (y[r] - seq.Y(r, t)) * (y[r] - seq.Y(r, t));
    }
    EXPECT_NEAR(got, sum / static_cast<double>(ch.length), 1e-12);
  }
}

TEST(Training, ZeroLearningRateLeavesParametersBitIdentical) {
  const auto data = linear_task(4, 120, 3);
  const DatasetSplit split{{0, 1}, {2}, {3}};
  PoseModel m(Variant::AvatarMonadicOnly, tiny_tcn(), {1, 2, 6}, 4);
  const auto before = snapshot(m);
  TrainerConfig c = quick_trainer(2);
  c.optimizer.learning_rate = 0.0;
  train(m, data, split, c);
  EXPECT_EQ(snapshot(m), before);
}

TEST(Training, LossDecreasesOnLinearTask) {
  const auto data = linear_task(6, 200, 4);
  const DatasetSplit split{{0, 1, 2, 3}, {4}, {5}};
  PoseModel m(Variant::AvatarMonadicOnly, tiny_tcn(), {1, 2, 6}, 5);
  TrainerConfig c = quick_trainer(5);
  c.tf_start = c.tf_end = 1.0;
  c.optimizer.learning_rate = 3e-3;
  const auto res = train(m, data, split, c);
  ASSERT_EQ(res.curve.size(), 5u);
  for (std::size_t e = 1; e < 5; ++e) EXPECT_LT(res.curve[e].train_loss, res.curve[e - 1].train_loss) << e;
}

TEST(Training, SameSeedSameCheckpoint) {
  const auto data = linear_task(4, 120, 6);
  const DatasetSplit split{{0, 1}, {2}, {3}};
  std::string bytes[2];
  for (auto& b : bytes) {
    PoseModel m(Variant::Dram, tiny_tcn(), {1, 2, 6}, 7);
    train(m, data, split, quick_trainer(2));
    b = encode_checkpoint(m);
  }
  EXPECT_EQ(bytes[0], bytes[1]);
}

TEST(Training, NonFiniteDataDiverges) {
  auto data = linear_task(3, 100, 8);
  data[0].Y(0, 50) = std::nan("");
  const DatasetSplit split{{0}, {1}, {2}};
  PoseModel m(Variant::AvatarMonadicOnly, tiny_tcn(), {1, 2, 6}, 9);
  TrainerConfig c = quick_trainer(1);
  c.tf_start = c.tf_end = 1.0;
  EXPECT_THROW(train(m, data, split, c), DivergenceError);
}

TEST(Training, MismatchedDimsRejected) {
  const auto data = linear_task(3, 100, 8);
  PoseModel m(Variant::AvatarMonadicOnly, tiny_tcn(), {2, 2, 6}, 9);
  EXPECT_THROW(train(m, data, {{0}, {1}, {2}}, quick_trainer(1)), ConfigError);
}

TEST(Rollout, ZeroLengthIsEmpty) {
  const auto seq = skeleton_sequence(1, 100);
  const PoseModel m(Variant::Dram, tiny_tcn(), {}, 1);
  const auto r = rollout(m, {&seq.X, &seq.XH, &seq.YH}, Tensor({48, 32}), 0);
  EXPECT_EQ(r.poses.cols(), 0u);
  EXPECT_TRUE(r.attention.delta.empty());
}

TEST(Rollout, EchoModelHoldsLastSeedPose) {
  const auto seq = skeleton_sequence(2, 200);
  const ModelDims d{23, 48, 8};
  BackboneSpec s;
  s.tcn.hidden_channels = 48;
  s.tcn.dilations = {1};
  s.tcn.residual = false;
  PoseModel m(Variant::AvatarMonadicOnly, s, d, 1);
  m.primary().zero_parameters();
  Tensor& k = m.primary().param("block0.kernel").value;
  for (std::size_t i = 0; i < 48; ++i) k.storage()[(i * k.shape()[1] + 23 + i) * k.shape()[2]] = 1.0;
  Tensor& W = m.primary().param("head.weight").value;
  for (std::size_t i = 0; i < 48; ++i) W(i, i) = 1.0;

  Tensor seed({48, 8});
  Rng rng(3, "echo-seed");
  for (std::size_t j = 0; j < 8; ++j) {
    PoseVector p;
    for (std::size_t q = 0; q < kJointCount; ++q)
      p.set_joint(q, Quat{rng.uniform(0.1, 1), rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)}.normalized());
    seed.set_column(j, p.values());
  }
  const auto r = rollout(m, {&seq.X, &seq.XH, &seq.YH}, seed, 150);
  for (std::size_t t = 8; t < 150; ++t)
    for (std::size_t c = 0; c < 48; ++c) ASSERT_NEAR(r.poses(c, t), seed(c, 7), 1e-15) << t;
  for (std::size_t t = 0; t < 8; ++t) EXPECT_EQ(r.poses.column(t), seed.column(t));
}

TEST(Rollout, LongRolloutsStayFiniteAndUnit) {
  const auto seq = skeleton_sequence(3, 1000);
  Tensor seed({48, 32});
  for (std::size_t j = 0; j < 32; ++j) seed.set_column(j, seq.Y.column(j));
  for (Variant v : kAllVariants) {
    const PoseModel m(v, tiny_tcn(), {}, 11);
    const auto r = rollout(m, {&seq.X, &seq.XH, &seq.YH}, seed, 1000);
    ASSERT_TRUE(r.poses.all_finite()) << variant_key(v);
    for (std::size_t t = 0; t < 1000; ++t) ASSERT_LT(PoseVector(r.poses.column(t)).max_norm_error(), 1e-9);
    EXPECT_EQ(r.attention.delta.size(), v == Variant::Dram ? 968u : 0u);
  }
}

TEST(Rollout, MatchesStepwiseVariantStep) {
  const auto seq = skeleton_sequence(4, 60);
  const ModelDims d{23, 48, 8};
  PoseModel m(Variant::Dram, tiny_tcn(), d, 12);
  Tensor seed({48, 8});
  for (std::size_t j = 0; j < 8; ++j) seed.set_column(j, seq.Y.column(j));
  const auto r = rollout(m, {&seq.X, &seq.XH, &seq.YH}, seed, 40);

  std::vector<std::vector<double>> zm;  // monadic prediction per frame
  const auto window = [&](const Tensor& src, std::size_t rows, std::size_t t, bool pose) {
    Tensor w({rows, d.history});
    for (std::size_t j = 0; j < d.history; ++j) {
      const long f = static_cast<long>(t) - static_cast<long>(d.history) + static_cast<long>(j);
      w.set_column(j, f < 0 ? (pose ? warmup_pose(rows) : std::vector<double>(rows, 0.0))
                            : src.column(static_cast<std::size_t>(f)));
    }
    return w;
  };
  for (std::size_t t = 0; t < 40; ++t) {
    StepInputs in;
    in.avatar_audio = window(seq.X, 23, t, false);
    in.avatar_pose = window(r.poses, 48, t, true);
    in.human_audio = window(seq.XH, 23, t, false);
    in.human_pose = window(seq.YH, 48, t, true);
    in.monadic_buffer = Tensor({48, d.history});
    for (std::size_t j = 0; j < d.history; ++j) {
      const long f = static_cast<long>(t) - static_cast<long>(d.history) + static_cast<long>(j);
      in.monadic_buffer.set_column(j, f < 0 ? warmup_pose(48) : zm[static_cast<std::size_t>(f)]);
    }
    StepOutput out = variant_step(m, in);
    zm.push_back(out.monadic);
    if (t < 8) continue;
    renormalize_pose(out.pose);
    for (std::size_t c = 0; c < 48; ++c) ASSERT_NEAR(r.poses(c, t), out.pose[c], 1e-12) << t;
  }
}

TEST(Evaluation, IgnoresGroundTruthAfterSeed) {
  const ModelDims d{23, 48, 8};
  const PoseModel m(Variant::Dram, tiny_tcn(), d, 13);
  std::vector<DyadicSequence> data{skeleton_sequence(5, 120)};
  const auto a = evaluate(m, data, {0}, topology());
  for (std::size_t t = 8; t < 120; ++t) data[0].Y.set_column(t, PoseVector::identity().values());
  const auto b = evaluate(m, data, {0}, topology());
  EXPECT_EQ(a.predictions, b.predictions);
  EXPECT_NE(a.report.ape, b.report.ape);
  EXPECT_EQ(a.report.frames, 112u);
}

TEST(Evaluation, AttentionSplitByEventWindows) {
  const ModelDims d{23, 48, 8};
  const PoseModel m(Variant::Dram, tiny_tcn(), d, 14);
  std::vector<DyadicSequence> data{skeleton_sequence(6, 200)};
  data[0].labels = {EventLabel{EventKind::HeadNodMirror, 50, 100, 65, JointGroup::Head}};
  const auto res = evaluate(m, data, {0}, topology());
  const auto means = res.traces[0].means();
  double in = 0, out = 0;
  for (std::size_t i = 0; i < means.size(); ++i) (8 + i >= 50 && 8 + i < 100 ? in : out) += means[i];
  EXPECT_NEAR(*res.report.attention_in_events, in / 50.0, 1e-12);
  EXPECT_NEAR(*res.report.attention_out_events, out / 142.0, 1e-12);
  EXPECT_NEAR(*res.report.attention_mean, (in + out) / 192.0, 1e-12);
}

TEST(Metrics, ApeExamples) {
  PositionSequence truth{{Vec3{0, 0, 0}, Vec3{1, 1, 1}}};
  PositionSequence pred{{Vec3{3, 4, 0}, Vec3{1, 1, 1}}};
  EXPECT_DOUBLE_EQ(ape(pred, truth, {0, 1}), 2.5);
  EXPECT_DOUBLE_EQ(ape(pred, truth, {0}), 5.0);
  EXPECT_EQ(ape(truth, truth, {0, 1}), 0.0);
  EXPECT_THROW(ape(pred, truth, {}), InputError);
  EXPECT_THROW(ape(pred, PositionSequence{}, {0}), DimensionError);
}

TEST(Metrics, PckExamplesAndBoundary) {
  PositionSequence truth{{Vec3{0, 0, 0}, Vec3{0, 0, 0}}};
  PositionSequence pred{{Vec3{3, 4, 0}, Vec3{1, 0, 0}}};
  EXPECT_EQ(pck(pred, truth, 5.0, {0, 1}), 1.0);
  EXPECT_EQ(pck(pred, truth, 4.999, {0, 1}), 0.5);
  EXPECT_EQ(pck(pred, truth, 0.5, {0, 1}), 0.0);
  EXPECT_THROW(pck(pred, truth, 0.0, {0}), InputError);
}

TEST(Metrics, MatchBruteForce) {
  Rng rng(15, "metrics");
  const auto pred = random_positions(rng, 30, 12), truth = random_positions(rng, 30, 12);
  std::vector<std::size_t> keys{0, 3, 7, 11};
  double sum = 0;
  std::size_t within = 0;
  for (std::size_t t = 0; t < 30; ++t)
    for (std::size_t k : keys) {
      const Vec3 e = pred[t][k] - truth[t][k];
      const double dist = std::sqrt(e.x * e.x + e.y * e.y + e.z * e.z);
      sum += dist;
      within += dist <= 6.0;
    }
  EXPECT_NEAR(ape(pred, truth, keys), sum / 120.0, 1e-12);
  EXPECT_NEAR(pck(pred, truth, 6.0, keys), static_cast<double>(within) / 120.0, 1e-12);
}

TEST(Metrics, PckMonotoneInSigma) {
  Rng rng(16, "pck");
  const auto pred = random_positions(rng, 20, 12), truth = random_positions(rng, 20, 12);
  const auto keys = all_keypoints(12);
  double prev = 0.0;
  for (double s = 0.5; s < 30; s += 0.5) {
    const double v = pck(pred, truth, s, keys);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_EQ(prev, 1.0);
}

TEST(Metrics, GroupWeightedApeEqualsOverall) {
  Rng rng(17, "groups");
  const auto topo = topology();
  const auto pred = random_positions(rng, 25, 12), truth = random_positions(rng, 25, 12);
  const auto r = compute_metrics(pred, truth, topo, default_sigma_grid());
  EXPECT_NEAR(r.group_weighted_ape(topo), r.ape, 1e-12);
  EXPECT_EQ(r.group_ape.size(), kJointGroups.size());
  EXPECT_EQ(r.pck.size(), default_sigma_grid().size());
}
