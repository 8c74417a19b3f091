#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace lmim;

TEST(Encoder, SinCosEmbeddingLayout) {
  const auto pe = sincos_pos_embed<double>(8, 32, 16);
  EXPECT_EQ(pe.rows(), 256);
  // Position (0, 0): sin terms 0, cos terms 1.
  EXPECT_NEAR(pe(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(pe(0, 4), 1.0, 1e-15);
  // Same column, different row: the column half is identical.
  EXPECT_EQ(pe.row(3).tail(8), pe.row(3 + 32 * 5).tail(8));
  EXPECT_NE(pe.row(3).head(8), pe.row(3 + 32 * 5).head(8));
}

TEST(Encoder, MaskedForwardKeepsOnlyVisibleTokens) {
  EncoderConfig cfg;
  cfg.depth = 1;
  Encoder<float> enc(cfg, 1);
  const Image img = render_sample("apple", 1).image;
  const Mat<float> patches = stack_images<float>({&img, &img});
  const std::vector<MaskPlan> plans{plan_random_mask(256, 0.75, 1), plan_random_mask(256, 0.75, 2)};
  const auto out = enc.forward(patches, 2, &plans, nullptr);
  EXPECT_EQ(out.length, 1 + 64);
  EXPECT_EQ(out.tokens.rows(), 2 * 65);
  EXPECT_EQ(out.position_ids[0], -1);
  EXPECT_EQ(out.position_ids[1], plans[0].visible()[0]);
  const auto full = enc.forward(patches, 2, nullptr, nullptr);
  EXPECT_EQ(full.length, 257);
}

TEST(Encoder, RejectsWrongShapes) {
  EncoderConfig cfg;
  cfg.depth = 1;
  Encoder<float> enc(cfg, 1);
  EXPECT_THROW(enc.forward(Mat<float>::Zero(255, 48), 1, nullptr, nullptr), DimensionError);
  std::vector<MaskPlan> plans{plan_random_mask(128, 0.5, 1)};
  EXPECT_THROW(enc.forward(Mat<float>::Zero(256, 48), 1, &plans, nullptr), DimensionError);
  EncoderConfig bad = cfg;
  bad.heads = 3;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(Decoder, AssembledSequencePlacesTokensByPosition) {
  const auto cfg = oracle::micro_config();
  LmimModel<double> m(cfg, 3);
  auto batch = oracle::random_batch<double>(cfg, 2, 0.5, 4);
  const auto f = m.run(batch, false);
  for (int b = 0; b < 2; ++b) {
    const auto vis = batch.plans[b].visible();
    for (std::size_t i = 0; i < vis.size(); ++i)
      EXPECT_EQ(f.assembled.row(b, 1 + vis[i]), f.encoded.row(b, 1 + static_cast<int>(i)));
    for (int k : batch.plans[b].masked)
      EXPECT_EQ(f.assembled.row(b, 1 + k), m.mask_token().value.row(0) + m.encoder().pos_embed().row(k));
    EXPECT_EQ(f.assembled.row(b, 0), f.encoded.row(b, 0));
  }
  EXPECT_EQ(f.decoded.length, 5);
  EXPECT_EQ(f.decoded.dim(), cfg.target_dim);
}

TEST(Objectives, ReconLossIsMaskedMeanSquaredError) {
  TokenBatch<double> dec;
  dec.batch = 1;
  dec.length = 4;
  dec.tokens = Mat<double>::Zero(4, 2);
  dec.tokens.row(1) << 1, 1;
  dec.tokens.row(2) << 5, 5;  // visible slot: ignored
  dec.tokens.row(3) << 0, 2;
  MaskPlan plan{{0, 2}, MaskStrategy::random, 0.66, 0, 3};
  TargetSet<double> t{{0, 2}, Mat<double>::Zero(2, 2)};
  // ((1 + 1) + (0 + 4)) / (2 * 2)
  EXPECT_DOUBLE_EQ(recon_loss(dec, t, plan), 1.5);
  Mat<double> g = Mat<double>::Zero(4, 2);
  recon_loss(dec, t, plan, &g);
  EXPECT_EQ(g.row(2).norm(), 0.0);
  EXPECT_DOUBLE_EQ(g(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(g(3, 1), 1.0);
}

TEST(Objectives, AlignLossSymmetricAndZeroOnEqual) {
  RowVec<double> a(3), b(3);
  a << 1, 2, 3;
  b << 1, 0, 3;
  EXPECT_DOUBLE_EQ(align_loss(a, b), 4.0 / 3.0);
  EXPECT_DOUBLE_EQ(align_loss(a, b), align_loss(b, a));
  EXPECT_DOUBLE_EQ(align_loss(a, a), 0.0);
  EXPECT_THROW(align_loss(a, RowVec<double>(2)), DimensionError);
}

TEST(Objectives, CombinedLossRejectsNegativeTerms) {
  EXPECT_DOUBLE_EQ(combined_loss(0.5, 0.25).total, 0.75);
  EXPECT_THROW(combined_loss(-1e-3, 0.0), ValidationError);
  EXPECT_THROW(combined_loss(std::nan(""), 0.0), ValidationError);
}

TEST(Objectives, PixelTargetsAreNormalizedPerPatch) {
  const auto prov = TargetProvider<double>::pixel(48, true);
  const Image img = render_sample("light", 3).image;
  const auto all = prov.all_targets(stack_images<double>({&img}), 1);
  for (Eigen::Index r = 0; r < all.rows(); r += 17) {
    EXPECT_NEAR(all.row(r).mean(), 0.0, 1e-9);
    const double var = all.row(r).squaredNorm() / 48;
    if (var > 0.0) EXPECT_LE(var, 1.0 + 1e-9);
  }
}

TEST(Objectives, RandomFeatureProjectionIsFrozenBySeed) {
  const auto a = TargetProvider<double>::random_feature(48, 16, 5);
  const auto b = TargetProvider<double>::random_feature(48, 16, 5);
  const auto c = TargetProvider<double>::random_feature(48, 16, 6);
  EXPECT_EQ(a.projection, b.projection);
  EXPECT_NE(a.projection, c.projection);
  const Image img = render_sample("stone", 1).image;
  const auto plan = plan_random_mask(256, 0.8, 1);
  const auto t = make_targets(a, img, plan);
  EXPECT_EQ(t.values.rows(), 205);
  EXPECT_EQ(t.dim(), 16);
}

TEST(Objectives, TeacherTargetsComeFromUnmaskedTeacherPass) {
  EncoderConfig cfg;
  cfg.depth = 1;
  auto teacher = std::make_shared<const Encoder<double>>(cfg, 9);
  const auto prov = TargetProvider<double>::teacher_feature(teacher);
  const Image img = render_sample("paper", 2).image;
  const auto all = prov.all_targets(stack_images<double>({&img}), 1);
  const auto f = teacher->forward(stack_images<double>({&img}), 1, nullptr, nullptr);
  EXPECT_EQ(all.rows(), 256);
  EXPECT_EQ(all.row(10), f.row(0, 11));
  EXPECT_THROW(TargetProvider<double>::teacher_feature(nullptr).validate(), ValidationError);
}

TEST(Model, GradientCheckAllConfigurations) {
  for (auto order : {nn::BlockOrder::sa_ca_ffn, nn::BlockOrder::ca_sa_ffn}) {
    for (bool guidance : {true, false}) {
      auto cfg = oracle::micro_config();
      cfg.decoder.order = order;
      cfg.guidance = guidance;
      cfg.alignment = guidance;
      LmimModel<double> m(cfg, 7);
      const auto batch = oracle::random_batch<double>(cfg, 2, 0.5, 3);
      m.zero_grad();
      m.run(batch, true);
      const auto checks = oracle::finite_difference_check(m, [&] { return m.run(batch, false).loss.total; });
      for (const auto& c : checks) EXPECT_LT(c.rel_error, 1e-6) << c.name << " order " << to_string(order) << " guidance " << guidance;
    }
  }
}

TEST(Model, LossTermSelectionSplitsGradients) {
  const auto cfg = oracle::micro_config();
  LmimModel<double> m(cfg, 7);
  const auto batch = oracle::random_batch<double>(cfg, 2, 0.5, 3);
  std::vector<Mat<double>> full, recon, align;
  auto grab = [&](std::vector<Mat<double>>& into) {
    m.visit([&](const std::string&, nn::Param<double>& p) { into.push_back(p.grad); });
  };
  m.zero_grad();
  m.run(batch, true);
  grab(full);
  m.zero_grad();
  m.run(batch, true, kReconTerm);
  grab(recon);
  m.zero_grad();
  m.run(batch, true, kAlignTerm);
  grab(align);
  for (std::size_t i = 0; i < full.size(); ++i) EXPECT_LT((full[i] - recon[i] - align[i]).norm(), 1e-12);
}

TEST(Model, AlignmentRequiresGuidance) {
  auto cfg = oracle::micro_config();
  cfg.guidance = false;
  cfg.alignment = true;
  EXPECT_THROW(cfg.validate(), ValidationError);
}

TEST(Model, ParameterNamesAreStableAndUnique) {
  LmimModel<float> m(oracle::micro_config(), 1);
  std::set<std::string> names;
  m.visit([&](const std::string& n, nn::Param<float>&) { EXPECT_TRUE(names.insert(n).second) << n; });
  EXPECT_TRUE(names.count("mask_token"));
  EXPECT_TRUE(names.count("encoder.cls"));
  EXPECT_TRUE(names.count("decoder.blocks.0.ca.q.weight"));
}
