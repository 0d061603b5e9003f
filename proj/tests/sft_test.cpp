#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "lvr/data/io.hpp"
#include "lvr/numerics/gradcheck.hpp"
#include "lvr/sft/train.hpp"
#include "test_support.hpp"

namespace lvr {
namespace {

using testing::randomize;

TEST(LvrLoss, IdenticalIsZero) {
  Tape<double> tape(false);
  Tensor<double> h(Shape{3, 4}, std::vector<double>(12, 0.7));
  EXPECT_EQ(lvr_loss(tape, h, h.clone()).item(), 0.0);
}

TEST(LvrLoss, AveragesPerPositionNorms) {
  Tape<double> tape(false);
  Tensor<double> h(Shape{2, 3}, {1, 0, 0, 1, 1, 1});
  Tensor<double> v(Shape{2, 3});
  EXPECT_DOUBLE_EQ(lvr_loss(tape, h, v).item(), 2.0);
}

TEST(LvrLoss, MatchesScalarLoop) {
  std::mt19937_64 rng(1);
  auto a = testing::random_vector<double>(rng, 20), b = testing::random_vector<double>(rng, 20);
  Tape<double> tape(false);
  double expect = 0;
  for (int t = 0; t < 5; ++t) {
    double s = 0;
    for (int j = 0; j < 4; ++j) s += std::pow(a[t * 4 + j] - b[t * 4 + j], 2);
    expect += s;
  }
  expect /= 5;
  EXPECT_NEAR(lvr_loss(tape, Tensor<double>(Shape{5, 4}, a), Tensor<double>(Shape{5, 4}, b)).item(),
              expect, 1e-12);
}

TEST(LvrLoss, EmptyBlockIsZeroWithWarning) {
  set_warnings_enabled(false);
  const auto before = warning_count();
  Tape<double> tape(false);
  EXPECT_EQ(lvr_loss(tape, Tensor<double>(Shape{0, 4}), Tensor<double>(Shape{0, 4})).item(), 0.0);
  EXPECT_EQ(warning_count(), before + 1);
  set_warnings_enabled(true);
}

TEST(NtpLoss, UniformLogitsGiveLogVocab) {
  Tape<double> tape(false);
  Tensor<double> logits(Shape{3, 64});
  EXPECT_NEAR(ntp_loss(tape, logits, {0, 1, 2}, {5, 9, 63}).item(), std::log(64.0), 1e-12);
  EXPECT_NEAR(std::log(64.0), 4.1589, 1e-4);
}

TEST(NtpLoss, PeakedLogitsGiveNearZero) {
  Tape<double> tape(false);
  Tensor<double> logits(Shape{2, 64});
  logits.at(0, 7) = 50;
  logits.at(1, 3) = 50;
  EXPECT_LT(ntp_loss(tape, logits, {0, 1}, {7, 3}).item(), 1e-6);
}

TEST(NtpLoss, MatchesLongDoubleGatherOracle) {
  std::mt19937_64 rng(2);
  auto v = testing::random_vector<double>(rng, 4 * 10, 3.0);
  Tensor<double> logits(Shape{4, 10}, v);
  const std::vector<std::size_t> rows{0, 2, 3};
  const std::vector<int> targets{4, 0, 9};
  long double expect = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    long double z = 0;
    for (int j = 0; j < 10; ++j) z += std::exp(static_cast<long double>(logits.at(rows[i], j)));
    expect -= static_cast<long double>(logits.at(rows[i], targets[i])) - std::log(z);
  }
  expect /= 3;
  Tape<double> tape(false);
  EXPECT_NEAR(ntp_loss(tape, logits, rows, targets).item(), static_cast<double>(expect), 1e-12);
}

TEST(NtpLoss, NoTargetsIsContractError) {
  Tape<double> tape(false);
  try {
    ntp_loss(tape, Tensor<double>(Shape{2, 8}), {}, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContract);
  }
}

TEST(ModeSwitchLoss, SaturatedMatchIsZero) {
  Tape<double> tape(false);
  Tensor<double> logits(Shape{3, 8});
  logits.at(0, 1) = 60;  // p(end) ~ 0
  logits.at(1, 1) = 60;
  logits.at(2, Vocab::kLvrEnd) = 60;  // p(end) ~ 1
  EXPECT_LT(mode_switch_loss(tape, logits, {0, 1, 2}, {0, 0, 1}).item(), 1e-20);
}

TEST(ModeSwitchLoss, HalfProbabilityGivesLog2) {
  Tape<double> tape(false);
  Tensor<double> logits(Shape{4, 32});
  for (std::size_t r = 0; r < 4; ++r) logits.at(r, Vocab::kLvrEnd) = std::log(31.0);
  EXPECT_NEAR(mode_switch_loss(tape, logits, {0, 1, 2, 3}, {0, 0, 0, 1}).item(), std::log(2.0),
              1e-12);
}

TEST(ModeSwitchLoss, MatchesScalarBceOracle) {
  std::mt19937_64 rng(3);
  Tensor<double> logits(Shape{5, 12}, testing::random_vector<double>(rng, 60, 2.0));
  const std::vector<std::size_t> rows{0, 1, 2, 4};
  const std::vector<int> targets{0, 1, 0, 1};
  double expect = 0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double z = 0;
    for (int j = 0; j < 12; ++j) z += std::exp(logits.at(rows[i], j));
    const double p = std::exp(logits.at(rows[i], Vocab::kLvrEnd)) / z;
    expect -= targets[i] ? std::log(p) : std::log(1 - p);
  }
  expect /= 4;
  Tape<double> tape(false);
  EXPECT_NEAR(mode_switch_loss(tape, logits, rows, targets).item(), expect, 1e-12);
}

// A couple of assembled sequences over a tiny model.
struct Fixture {
  ModelConfig config = testing::tiny_config();
  DataConfig data;
  Vocab vocab;
  std::vector<MixedSequence<double>> seqs;
  std::vector<const MixedSequence<double>*> ptrs;
  ModelWeights<double> w;

  explicit Fixture(AssembleOptions opt = {}, LvrHeadKind head = LvrHeadKind::kIdentity,
                   int n = 3) {
    config.lvr_head_kind = head;
    config.d_model = 8;
    config.n_layers = 1;
    config.max_seq_len = 40;
    data.patch_size = config.patch_size;
    data.grid_rows = data.grid_cols = 3;
    data.color_task_fraction = 0.3;
    w = init_weights<double>(config, 1);
    randomize(w, 0.4, 2);
    opt.patch_size = config.patch_size;
    for (const auto& g : generate_dataset(data, vocab, 3, static_cast<std::size_t>(n))) {
      seqs.push_back(assemble_sft_sequence(g.instance, w.vision.encode(g.image), opt,
                                           static_cast<std::size_t>(config.max_seq_len)));
    }
    for (const auto& s : seqs) ptrs.push_back(&s);
  }
};

TEST(JointLoss, ZeroLambdaIsPlainNtp) {
  Fixture f;
  SFTConfig cfg;
  cfg.lambda_lvr = 0;
  Tape<double> tape;
  auto loss = sft_batch_loss(tape, f.w, f.ptrs, cfg);
  EXPECT_EQ(loss.breakdown.total, loss.breakdown.ntp);
  EXPECT_GT(loss.breakdown.lvr, 0.0);
}

TEST(JointLoss, ComponentsAddUp) {
  Fixture f;
  SFTConfig cfg;
  cfg.lambda_lvr = 1.0;
  cfg.lambda_switch = 0.5;
  Tape<double> tape;
  auto l = sft_batch_loss(tape, f.w, f.ptrs, cfg).breakdown;
  EXPECT_NEAR(l.total, l.ntp + 1.0 * l.lvr + 0.5 * l.switch_loss, 1e-6);
  EXPECT_GT(l.switch_loss, 0.0);
  EXPECT_GT(l.text_targets, 0u);
  EXPECT_GT(l.latent_targets, 0u);
}

TEST(JointLoss, PackedEqualsPooledSeparateTerms) {
  Fixture f;
  SFTConfig cfg;
  Tape<double> off(false);
  auto packed = sft_batch_loss(off, f.w, f.ptrs, cfg).breakdown;
  double ntp = 0, lvr = 0;
  std::size_t nt = 0, nl = 0;
  for (auto* s : f.ptrs) {
    auto b = sft_batch_loss(off, f.w, {s}, cfg).breakdown;
    ntp += b.ntp * b.text_targets;
    lvr += b.lvr * b.latent_targets;
    nt += b.text_targets;
    nl += b.latent_targets;
  }
  EXPECT_NEAR(packed.ntp, ntp / nt, 1e-12);
  EXPECT_NEAR(packed.lvr, lvr / nl, 1e-12);
}

class JointLossGradient : public ::testing::TestWithParam<std::tuple<LvrHeadKind, bool, bool>> {};

TEST_P(JointLossGradient, MatchesFiniteDifferences) {
  const auto [head, self_fed, latent_end] = GetParam();
  AssembleOptions opt;
  opt.latent_end = latent_end;
  Fixture f(opt, head, 2);
  f.w.set_anchor_trainable(latent_end);
  SFTConfig cfg;
  cfg.lambda_switch = 0.3;
  cfg.latent_feed = self_fed ? LatentFeed::kSelfFed : LatentFeed::kTeacherForced;
  auto params = f.w.parameters();
  auto report = finite_diff_check(
      [&](Tape<double>& tape) { return sft_batch_loss(tape, f.w, f.ptrs, cfg).total; },
      std::span(params), GradCheckOptions{1e-5, 40, 7});
  EXPECT_LT(report.max_relative_error, 1e-4)
      << report.worst_parameter << "[" << report.worst_index << "] " << report.worst_analytic
      << " vs " << report.worst_numeric;
}

INSTANTIATE_TEST_SUITE_P(
    Variants, JointLossGradient,
    ::testing::Values(std::make_tuple(LvrHeadKind::kIdentity, false, false),
                      std::make_tuple(LvrHeadKind::kMlp2, false, false),
                      std::make_tuple(LvrHeadKind::kGlu3x, false, true),
                      std::make_tuple(LvrHeadKind::kIdentity, true, false),
                      std::make_tuple(LvrHeadKind::kMlp2, true, true)));

TEST(SelfFed, ReachesExactFixedPoint) {
  Fixture f({}, LvrHeadKind::kMlp2, 3);
  Tape<double> off(false);
  auto batch = make_sft_batch(f.w, f.ptrs);
  const auto passes = longest_latent_run(batch.latent_input_rows);
  auto out = forward_self_fed(off, f.w, batch.inputs, batch.latent_input_rows, passes);
  // Re-running the substitution once more must not change anything.
  auto again = forward_self_fed(off, f.w, batch.inputs, batch.latent_input_rows, passes + 1);
  for (std::size_t i = 0; i < out.hidden.numel(); ++i) {
    EXPECT_NEAR(out.hidden[i], again.hidden[i], 1e-12);
  }
  // And it must differ from teacher forcing.
  auto tf = forward_rows(off, f.w, batch.inputs);
  double diff = 0;
  for (std::size_t i = 0; i < tf.hidden.numel(); ++i) diff += std::abs(tf.hidden[i] - out.hidden[i]);
  EXPECT_GT(diff, 0.0);
}

// Tiny end-to-end setup shared by the training tests.
struct TrainSetup {
  ModelConfig model;
  DataConfig data;
  Vocab vocab;
  ModelWeights<float> w;
  std::vector<EncodedExample<float>> train, heldout;

  explicit TrainSetup(std::size_t n_train, std::size_t n_heldout = 16) {
    model.d_model = 32;
    model.n_layers = 2;
    model.n_heads = 4;
    model.vocab_size = 32;
    model.max_seq_len = 40;
    model.patch_size = 4;
    data.patch_size = 4;
    data.grid_rows = data.grid_cols = 3;
    w = init_weights<float>(model, 5);
    std::vector<GeneratedInstance> tr, ho;
    generate_split(data, vocab, 1, Split::kTrain, n_train,
                   [&](GeneratedInstance&& g) { tr.push_back(std::move(g)); });
    generate_split(data, vocab, 1, Split::kHeldout, n_heldout,
                   [&](GeneratedInstance&& g) { ho.push_back(std::move(g)); });
    train = encode_examples(w, std::span<const GeneratedInstance>(tr));
    heldout = encode_examples(w, std::span<const GeneratedInstance>(ho));
  }
};

TEST(TrainSft, OverfitsThirtyTwoInstances) {
  TrainSetup s(32);
  SFTConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.steps = 500;
  cfg.max_pack_len = 40 * 8;
  SftRunOptions run;
  run.eval_decode.fixed_steps_from_roi = true;
  const auto checksum = s.w.vision.checksum();
  auto result = train_sft(s.w, s.vocab, cfg, std::span<const EncodedExample<float>>(s.train),
                          std::span<const EncodedExample<float>>(s.heldout), run);
  const double first = result.history.front().loss.total;
  const double last = result.history.back().loss.total;
  EXPECT_LT(last, 0.05 * first) << first << " -> " << last;
  EXPECT_EQ(s.w.vision.checksum(), checksum);
  ASSERT_TRUE(result.final_eval.has_value());
}

TEST(TrainSft, WritesMetricsAndCheckpoints) {
  TrainSetup s(8, 4);
  SFTConfig cfg;
  cfg.steps = 4;
  cfg.checkpoint_every = 2;
  cfg.eval_every = 2;
  SftRunOptions run;
  run.out_dir = std::filesystem::temp_directory_path() / "lvr_sft_test";
  std::filesystem::remove_all(*run.out_dir);
  train_sft(s.w, s.vocab, cfg, std::span<const EncodedExample<float>>(s.train),
            std::span<const EncodedExample<float>>(s.heldout), run);
  std::ifstream in(*run.out_dir / "metrics.jsonl");
  std::string line;
  int lines = 0, with_eval = 0;
  while (std::getline(in, line)) {
    auto j = Json::parse(line);
    for (const char* k : {"step", "L_NTP", "L_LVR", "L_switch", "L_total", "lr"}) {
      EXPECT_TRUE(j.contains(k)) << k;
    }
    with_eval += j.contains("heldout_accuracy");
    ++lines;
  }
  EXPECT_EQ(lines, 4);
  EXPECT_EQ(with_eval, 2);
  EXPECT_TRUE(std::filesystem::exists(*run.out_dir / "checkpoint_step2.lvr"));
  EXPECT_TRUE(std::filesystem::exists(*run.out_dir / "checkpoint_step4.lvr"));
  std::filesystem::remove_all(*run.out_dir);
}

TEST(TrainSft, NonFiniteLossAbortsWithDump) {
  TrainSetup s(4, 0);
  s.w.lm_head[0] = std::numeric_limits<float>::quiet_NaN();
  SFTConfig cfg;
  cfg.steps = 2;
  SftRunOptions run;
  run.out_dir = std::filesystem::temp_directory_path() / "lvr_sft_nan";
  std::filesystem::remove_all(*run.out_dir);
  try {
    train_sft(s.w, s.vocab, cfg, std::span<const EncodedExample<float>>(s.train),
              std::span<const EncodedExample<float>>(s.heldout), run);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric) << e.what();
  }
  EXPECT_TRUE(std::filesystem::exists(*run.out_dir / "nan_batch.json"));
  std::filesystem::remove_all(*run.out_dir);
}

TEST(TrainSft, AnchorOnlyTrainsUnderLatentEnd) {
  TrainSetup s(8, 0);
  SFTConfig cfg;
  cfg.steps = 3;
  cfg.learning_rate = 1e-2;
  const auto before = s.w.latent_end_anchor.clone();
  train_sft(s.w, s.vocab, cfg, std::span<const EncodedExample<float>>(s.train),
            std::span<const EncodedExample<float>>(s.heldout));
  for (std::size_t i = 0; i < before.numel(); ++i) EXPECT_EQ(s.w.latent_end_anchor[i], before[i]);
  cfg.latent_end = true;
  train_sft(s.w, s.vocab, cfg, std::span<const EncodedExample<float>>(s.train),
            std::span<const EncodedExample<float>>(s.heldout));
  double moved = 0;
  for (std::size_t i = 0; i < before.numel(); ++i) {
    moved += std::abs(s.w.latent_end_anchor[i] - before[i]);
  }
  EXPECT_GT(moved, 0.0);
}

}  // namespace
}  // namespace lvr
