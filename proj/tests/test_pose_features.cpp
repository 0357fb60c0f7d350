#include <cmath>
#include <numbers>
#include <sstream>

#include <gtest/gtest.h>

#include "dram/random.hpp"
#include "dram/skeleton.hpp"

using namespace dram;

namespace {

Quat random_unit(Rng& rng) {
  Quat q{rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1)};
  return q.normalized();
}

PoseVector random_pose(Rng& rng) {
  PoseVector p;
  for (std::size_t j = 0; j < kJointCount; ++j) p.set_joint(j, random_unit(rng));
  return p;
}

double max_distance(const PositionFrame& a, const PositionFrame& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, norm(a[i] - b[i]));
  return m;
}

/// Twelve joints with joint 1 a bone along +x; everything else hangs off it.
SkeletonTopology x_bone_skeleton() {
  using G = JointGroup;
  std::vector<Joint> j = {{"root", -1, {0, 0, 0}, G::Torso}, {"bone", 0, {10, 0, 0}, G::Torso}};
  const std::array<G, 10> groups{G::Neck, G::Head, G::RArm, G::RArm, G::RWrist, G::RWrist, G::LArm, G::LArm, G::LWrist, G::LWrist};
  for (std::size_t i = 0; i < 10; ++i) j.push_back({"j" + std::to_string(i), 1, {0, 5.0 + static_cast<double>(i), 1}, groups[i]});
  return SkeletonTopology(std::move(j));
}

}  // namespace

TEST(Skeleton, DefaultHasTwelveGroupedJointsRootedAtTorso) {
  const auto topo = SkeletonTopology::upper_body();
  ASSERT_EQ(topo.size(), 12u);
  EXPECT_EQ(topo[0].parent, -1);
  EXPECT_EQ(topo[0].group, JointGroup::Torso);
  std::size_t total = 0;
  for (JointGroup g : kJointGroups) {
    EXPECT_FALSE(topo.joints_in(g).empty()) << group_name(g);
    total += topo.joints_in(g).size();
  }
  EXPECT_EQ(total, 12u);
  for (std::size_t j = 1; j < topo.size(); ++j) EXPECT_LT(topo[j].parent, static_cast<int>(j));
}

TEST(Skeleton, DataFileMatchesBuiltIn) {
  EXPECT_EQ(SkeletonTopology::load(DRAM_SOURCE_DIR "/data/upper_body.skel"), SkeletonTopology::upper_body());
}

TEST(Skeleton, TextRoundTrip) {
  const auto topo = SkeletonTopology::upper_body();
  std::istringstream in(topo.to_text());
  EXPECT_EQ(SkeletonTopology::parse(in), topo);
}

TEST(Skeleton, RejectsUnknownGroup) {
  std::istringstream in("torso -1 0 0 0 Tail\n");
  EXPECT_THROW(SkeletonTopology::parse(in), InputError);
}

TEST(Kinematics, RestPoseGivesIdentityRotations) {
  const auto topo = SkeletonTopology::upper_body();
  const PositionFrame rest = rotations_to_positions(PoseVector::identity(), topo);
  const PoseVector q = positions_to_rotations(rest, topo);
  for (std::size_t j = 0; j < kJointCount; ++j) {
    const Quat r = q.joint(j);
    EXPECT_NEAR(r.w, 1.0, 1e-15);
    EXPECT_NEAR(std::fabs(r.x) + std::fabs(r.y) + std::fabs(r.z), 0.0, 1e-15);
  }
}

TEST(Kinematics, IdentityRotationsGiveRestPositions) {
  const auto topo = SkeletonTopology::upper_body();
  const PositionFrame p = rotations_to_positions(PoseVector::identity(), topo);
  EXPECT_EQ(p[1], (Vec3{0, 22, 0}));
  EXPECT_EQ(p[3], (Vec3{0, 60, 2}));
  EXPECT_EQ(p[7], (Vec3{-18, -19, 0}));
}

TEST(Kinematics, BoneAlongXTurnedToY) {
  const auto topo = x_bone_skeleton();
  PoseVector turned;
  turned.set_joint(0, Quat::axis_angle({0, 0, 1}, std::numbers::pi / 2));
  const PositionFrame frame = rotations_to_positions(turned, topo);
  EXPECT_NEAR(frame[1].y, 10.0, 1e-12);
  const Quat q = positions_to_rotations(frame, topo).joint(1);
  EXPECT_NEAR(q.w, std::sqrt(0.5), 1e-12);
  EXPECT_NEAR(q.x, 0.0, 1e-12);
  EXPECT_NEAR(q.y, 0.0, 1e-12);
  EXPECT_NEAR(q.z, std::sqrt(0.5), 1e-12);
}

TEST(Kinematics, HalfTurnAboutVerticalNegatesXZ) {
  const auto topo = SkeletonTopology::upper_body();
  PoseVector pose;
  pose.set_joint(0, Quat::axis_angle({0, 1, 0}, std::numbers::pi));
  const PositionFrame rest = rotations_to_positions(PoseVector::identity(), topo);
  const PositionFrame turned = rotations_to_positions(pose, topo);
  for (std::size_t j = 0; j < topo.size(); ++j) {
    EXPECT_NEAR(turned[j].x, -rest[j].x, 1e-12);
    EXPECT_NEAR(turned[j].y, rest[j].y, 1e-12);
    EXPECT_NEAR(turned[j].z, -rest[j].z, 1e-12);
  }
}

TEST(Kinematics, RoundTripOnRandomRigidPoses) {
  const auto topo = SkeletonTopology::upper_body();
  Rng rng(21, "roundtrip");
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const PositionFrame p = rotations_to_positions(random_pose(rng), topo);
    const PoseVector q = positions_to_rotations(p, topo);
    EXPECT_LT(q.max_norm_error(), 1e-9);
    worst = std::max(worst, max_distance(rotations_to_positions(q, topo), p));
  }
  EXPECT_LT(worst, 1e-6);
}

TEST(Kinematics, DegenerateBone) {
  const auto topo = SkeletonTopology::upper_body();
  PositionFrame p = rotations_to_positions(PoseVector::identity(), topo);
  p[1] = p[0];
  EXPECT_THROW(positions_to_rotations(p, topo), GeometryError);
}

TEST(Kinematics, NonRigidFrame) {
  const auto topo = SkeletonTopology::upper_body();
  PositionFrame p = rotations_to_positions(PoseVector::identity(), topo);
  p[6].y -= 1.0;
  EXPECT_THROW(positions_to_rotations(p, topo), ToleranceError);
}

TEST(Kinematics, NonUnitQuaternion) {
  PoseVector p;
  p.set_joint(4, Quat{1.01, 0, 0, 0});
  EXPECT_THROW(rotations_to_positions(p, SkeletonTopology::upper_body()), ToleranceError);
}

TEST(PoseVector, NormalizeMakesUnitAndZeroBecomesIdentity) {
  Rng rng(8, "normalize");
  PoseVector p(std::vector<double>(kPoseDim, 0.0));
  for (std::size_t j = 1; j < kJointCount; ++j) p.set_joint(j, Quat{rng.normal(0, 3), rng.normal(0, 3), 1, 2});
  p.normalize();
  EXPECT_LT(p.max_norm_error(), 1e-9);
  EXPECT_EQ(p.joint(0), Quat::identity());
}

TEST(Hemisphere, ContinuousSequenceUnchanged) {
  Rng rng(5, "hemi");
  std::vector<PoseVector> s(1, PoseVector::identity());
  for (int t = 0; t < 5; ++t) {
    PoseVector p = s.back();
    p.set_joint(3, (p.joint(3) * Quat::axis_angle({1, 0, 0}, 0.1)).normalized());
    s.push_back(p);
  }
  EXPECT_EQ(hemisphere_fix(s), s);
}

TEST(Hemisphere, FlipsAntipodalFrame) {
  PoseVector a, b;
  b.set_joint(0, Quat{-0.999, 0.01, 0, 0});
  const auto fixed = hemisphere_fix({a, b});
  EXPECT_EQ(fixed[1].joint(0), (Quat{0.999, -0.01, 0, 0}));
}

TEST(Hemisphere, FirstFrameNonNegativeW) {
  Rng rng(6, "hemi-first");
  std::vector<PoseVector> s{random_pose(rng), random_pose(rng)};
  const auto fixed = hemisphere_fix(s);
  for (std::size_t j = 0; j < kJointCount; ++j) EXPECT_GE(fixed[0].joint(j).w, 0.0);
}

TEST(Hemisphere, ForwardKinematicsUnchanged) {
  const auto topo = SkeletonTopology::upper_body();
  Rng rng(7, "hemi-fk");
  std::vector<PoseVector> s;
  for (int t = 0; t < 50; ++t) s.push_back(random_pose(rng));
  const auto fixed = hemisphere_fix(s);
  for (std::size_t t = 0; t < s.size(); ++t) {
    EXPECT_LT(max_distance(rotations_to_positions(s[t], topo), rotations_to_positions(fixed[t], topo)), 1e-12);
    EXPECT_LT(fixed[t].max_norm_error(), 1e-9);
  }
}

TEST(Align, NinetyHertzIsIdentity) {
  Tensor s({2, 5}, {1, 2, 3, 4, 5, 6, 7, 8, 9, 10});
  EXPECT_EQ(align_to_90hz(s, 90.0), s);
}

TEST(Align, HundredHertzRamp) {
  // 101 samples span one second: 91 output frames at n / 90 s.
  Tensor s({1, 101});
  for (std::size_t i = 0; i <= 100; ++i) s(0, i) = static_cast<double>(i);
  const Tensor out = align_to_90hz(s, 100.0);
  ASSERT_EQ(out.cols(), 91u);
  for (std::size_t n = 0; n < 91; ++n) EXPECT_NEAR(out(0, n), static_cast<double>(n) * 100.0 / 90.0, 1e-9);
}

TEST(Align, LengthIsFloorOfDurationPlusOne) {
  Tensor s({1, 100});
  EXPECT_EQ(align_to_90hz(s, 100.0).cols(), 90u);
  EXPECT_EQ(align_to_90hz(Tensor({1, 49}), 48.0).cols(), 91u);
}

TEST(Align, ConstantStaysConstant) {
  Tensor s({3, 40}, 2.5);
  const Tensor out = align_to_90hz(s, 33.0);
  for (double v : out.storage()) EXPECT_EQ(v, 2.5);
}

TEST(Align, Errors) {
  EXPECT_THROW(align_to_90hz(Tensor(), 90.0), InputError);
  EXPECT_THROW(align_to_90hz(Tensor({1, 1}, 0.0), 90.0), InputError);
  EXPECT_THROW(align_to_90hz(Tensor({1, 4}, 0.0), 0.0), InputError);
}
