#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "lvr/grpo/train.hpp"
#include "lvr/numerics/gradcheck.hpp"
#include "test_support.hpp"

namespace lvr {
namespace {

using testing::set_logit_bias;

std::vector<double> rollout_bias(int vocab) {
  std::vector<double> b(static_cast<std::size_t>(vocab), 0.0);
  b[Vocab::kLvrStart] = 2.5;
  b[Vocab::kEos] = 2.0;
  return b;
}

template <std::floating_point T>
ModelWeights<T> rollout_model(LvrHeadKind head, std::uint64_t seed) {
  auto cfg = testing::tiny_config(head);
  cfg.max_seq_len = 64;
  auto w = init_weights<T>(cfg, seed);
  testing::randomize(w, 0.3, seed + 1);
  set_logit_bias(w, rollout_bias(cfg.vocab_size));
  return w;
}

template <std::floating_point T>
MixedSequence<T> prompt_for(const ModelConfig& c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  MixedSequence<T> p;
  p.push(MixedElement<T>::text(Vocab::kBos));
  for (int i = 0; i < 4; ++i) p.push(MixedElement<T>::visual(testing::random_vector<T>(rng, c.d())));
  p.push(MixedElement<T>::text(21));
  p.push(MixedElement<T>::text(7));
  return p;
}

RLConfig small_rl(int G = 4) {
  RLConfig c;
  c.group_size = G;
  c.decode.fixed_steps = 3;
  c.decode.max_new_tokens = 8;
  return c;
}

TEST(RLConfig, DefaultsFollowReportedSetup) {
  RLConfig c;
  EXPECT_EQ(c.group_size, 8);
  EXPECT_DOUBLE_EQ(c.temperature, 0.9);
  EXPECT_DOUBLE_EQ(c.beta, 0.04);
  EXPECT_DOUBLE_EQ(c.learning_rate, 1e-5);
  EXPECT_DOUBLE_EQ(c.clip_eps, 0.2);
  EXPECT_DOUBLE_EQ(c.format_weight, 1.0);
  EXPECT_DOUBLE_EQ(c.accuracy_weight, 1.0);
  EXPECT_EQ(c.decode.strategy, StopStrategy::kFixedToken);
  EXPECT_FALSE(c.decode.greedy);
  EXPECT_DOUBLE_EQ(c.rollout_decode().temperature, 0.9);
}

TEST(RLConfig, JsonRoundTripAndStrictKeys) {
  RLConfig c;
  c.group_size = 4;
  c.decode.fixed_steps = 8;
  const auto back = rl_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  Json bad = to_json(c);
  bad["kl_coef"] = 0.1;
  try {
    rl_config_from_json(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
  Json nested = to_json(c);
  nested["decode"]["top_k"] = 3;
  EXPECT_THROW(rl_config_from_json(nested), Error);
}

TEST(RLConfig, RejectsInvalidValues) {
  for (auto mutate : std::vector<std::function<void(RLConfig&)>>{
           [](RLConfig& c) { c.group_size = 1; }, [](RLConfig& c) { c.temperature = 0; },
           [](RLConfig& c) { c.clip_eps = 1.0; }, [](RLConfig& c) { c.beta = -0.1; }}) {
    RLConfig c;
    mutate(c);
    EXPECT_THROW(c.validate(), Error);
  }
}

TEST(Rewards, Examples) {
  Vocab v;
  const std::vector<int> gold{v.id("red")};
  auto r = compute_reward({Vocab::kLvrStart, Vocab::kLvrEnd, v.id("red"), Vocab::kEos}, gold, 1, 1);
  EXPECT_EQ(r.format, 1.0);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.total, 2.0);
  r = compute_reward({v.id("red"), Vocab::kEos}, gold, 1, 1);
  EXPECT_EQ(r.format, 0.0);
  EXPECT_EQ(r.accuracy, 1.0);
  r = compute_reward({Vocab::kLvrEnd, Vocab::kLvrStart, v.id("red")}, gold, 1, 1);
  EXPECT_EQ(r.format, 0.0);
  r = compute_reward({Vocab::kLvrStart, Vocab::kLvrEnd, v.id("blue"), Vocab::kEos}, gold, 0.5, 2);
  EXPECT_EQ(r.total, 0.5);
}

TEST(Advantages, SymmetricHalfHalf) {
  const std::vector<double> r{1, 0, 0, 1, 1, 0, 1, 0};
  const std::vector<double> expect{1, -1, -1, 1, 1, -1, 1, -1};
  const auto a = normalize_advantages(r);
  for (std::size_t i = 0; i < r.size(); ++i) EXPECT_DOUBLE_EQ(a[i], expect[i]);
}

TEST(Advantages, DegenerateGroupIsZero) {
  for (double v : {0.0, 1.0, 2.0}) {
    for (double a : normalize_advantages(std::vector<double>(8, v))) EXPECT_EQ(a, 0.0);
  }
}

TEST(Advantages, RandomGroupsAreStandardized) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> g_dist(2, 16);
  std::normal_distribution<double> r_dist(0.0, 3.0);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> r(static_cast<std::size_t>(g_dist(rng)));
    for (auto& x : r) x = r_dist(rng);
    const auto a = normalize_advantages(r);
    double mean = 0, var = 0;
    for (double x : a) mean += x;
    mean /= static_cast<double>(a.size());
    for (double x : a) var += (x - mean) * (x - mean);
    EXPECT_NEAR(mean, 0.0, 1e-6);
    EXPECT_NEAR(std::sqrt(var / static_cast<double>(a.size())), 1.0, 1e-6);
  }
}

TEST(Rollout, GreedyGroupIsIdentical) {
  auto w = rollout_model<double>(LvrHeadKind::kMlp2, 1);
  auto cfg = small_rl();
  cfg.decode.greedy = true;
  const auto g = rollout_group(w, prompt_for<double>(w.config, 2), {5}, cfg, 3, 2);
  for (const auto& r : g.records) {
    EXPECT_EQ(r.trace.tokens(), g.records[0].trace.tokens());
    EXPECT_EQ(r.old_logprobs, g.records[0].old_logprobs);
  }
}

TEST(Rollout, ThreadCountDoesNotChangeSamples) {
  auto w = rollout_model<double>(LvrHeadKind::kIdentity, 4);
  const auto cfg = small_rl(6);
  const auto p = prompt_for<double>(w.config, 5);
  const auto a = rollout_group(w, p, {5}, cfg, 9, 1);
  const auto b = rollout_group(w, p, {5}, cfg, 9, 3);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    EXPECT_EQ(a.records[i].trace.tokens(), b.records[i].trace.tokens());
    EXPECT_EQ(a.records[i].old_logprobs, b.records[i].old_logprobs);
  }
}

TEST(Rollout, NoTriggerGivesEmptySegments) {
  auto cfg = testing::tiny_config();
  auto w = init_weights<double>(cfg, 1);
  std::vector<double> b(32, 0.0);
  b[Vocab::kEos] = 40;
  set_logit_bias(w, b);
  const auto g = rollout_group(w, prompt_for<double>(cfg, 1), {5}, small_rl(), 1);
  for (const auto& r : g.records) {
    EXPECT_TRUE(r.trace.segments.empty());
    EXPECT_EQ(r.length(), 1u);
    EXPECT_TRUE(r.finished());
  }
}

TEST(Rollout, LatentAndTextPositionsPartitionResponse) {
  auto w = rollout_model<double>(LvrHeadKind::kGlu3x, 6);
  std::size_t triggered = 0;
  for (std::uint64_t p = 0; p < 4; ++p) {
    const auto g = rollout_group(w, prompt_for<double>(w.config, 7 + p), {5}, small_rl(8), p);
    for (const auto& r : g.records) {
      std::size_t latents = 0, texts = 0;
      for (const auto& e : r.trace.response) {
        if (e.kind == ElementKind::kLatent) {
          ++latents;
          EXPECT_EQ(e.vector.size(), w.config.d());
        } else {
          ++texts;
        }
      }
      EXPECT_EQ(latents + texts, r.trace.response.size());
      EXPECT_EQ(latents, r.trace.latent_steps());
      // Forced <|lvr_end|> tokens are excluded from the loss positions.
      EXPECT_EQ(r.length() + r.trace.segments.size(), texts);
      triggered += r.triggered();
    }
  }
  EXPECT_GT(triggered, 0u);
}

// The rollout itself is the oracle: replay under the sampling weights must
// give back the recorded values.
TEST(Replay, ReproducesRolloutLogprobsInFloat) {
  auto w = rollout_model<float>(LvrHeadKind::kMlp2, 10);
  auto cfg = small_rl(8);
  double worst = 0;
  std::size_t latents = 0;
  for (std::uint64_t p = 0; p < 4; ++p) {
    const auto prompt = prompt_for<float>(w.config, 20 + p);
    const auto g = rollout_group(w, prompt, {5}, cfg, p);
    for (const auto& r : g.records) {
      const auto lp = replay_logprobs(w, prompt, r, cfg.temperature);
      ASSERT_EQ(lp.size(), r.old_logprobs.size());
      for (std::size_t t = 0; t < lp.size(); ++t) {
        worst = std::max(worst, std::abs(lp[t] - r.old_logprobs[t]));
        EXPECT_NEAR(std::exp(lp[t] - r.old_logprobs[t]), 1.0, 1e-4);
      }
      latents += r.trace.latent_steps();
    }
  }
  EXPECT_LE(worst, 1e-5);
  EXPECT_GT(latents, 0u);
}

TEST(Replay, PackedEqualsPerRecord) {
  auto w = rollout_model<double>(LvrHeadKind::kIdentity, 11);
  auto cfg = small_rl(4);
  std::vector<Group<double>> groups;
  for (std::uint64_t p = 0; p < 2; ++p) {
    groups.push_back(rollout_group(w, prompt_for<double>(w.config, 30 + p), {5}, cfg, p));
  }
  Tape<double> off(false);
  const auto packed = replay_logprobs(off, w, replay_items(std::span<const Group<double>>(groups)),
                                      cfg.temperature);
  std::size_t k = 0;
  for (const auto& g : groups) {
    for (const auto& r : g.records) {
      for (double v : replay_logprobs(w, g.prompt, r, cfg.temperature)) {
        EXPECT_NEAR(packed[k++], v, 1e-12);
      }
    }
  }
  EXPECT_EQ(k, packed.numel());
}

TEST(Replay, RecordedLatentsMatter) {
  auto w = rollout_model<double>(LvrHeadKind::kMlp2, 12);
  auto cfg = small_rl(8);
  const auto prompt = prompt_for<double>(w.config, 13);
  const auto g = rollout_group(w, prompt, {5}, cfg, 14);
  bool checked = false;
  for (const auto& r : g.records) {
    if (!r.triggered() || r.trace.segments[0].start_index + 1 >= r.trace.response.size()) continue;
    auto changed = r;
    auto& v = changed.trace.response[r.trace.segments[0].start_index + 1].vector;
    std::fill(v.begin(), v.end(), 0.0);
    const auto a = replay_logprobs(w, prompt, r, cfg.temperature);
    const auto b = replay_logprobs(w, prompt, changed, cfg.temperature);
    double delta = 0;
    for (std::size_t t = 0; t < a.size(); ++t) delta = std::max(delta, std::abs(a[t] - b[t]));
    EXPECT_GT(delta, 0.0);
    checked = true;
    break;
  }
  EXPECT_TRUE(checked);
}

TEST(Replay, BookkeepingMismatchIsContractError) {
  auto w = rollout_model<double>(LvrHeadKind::kIdentity, 15);
  const auto prompt = prompt_for<double>(w.config, 16);
  auto g = rollout_group(w, prompt, {5}, small_rl(2), 1);
  auto r = g.records[0];
  r.token_indices.back() = 10'000;
  try {
    replay_logprobs(w, prompt, r, 0.9);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContract);
  }
  auto short_prompt = prompt;
  short_prompt.elements.pop_back();
  EXPECT_THROW(replay_logprobs(w, short_prompt, g.records[0], 0.9), Error);
}

// Logits at rows that precede latent inputs never enter the loss.
TEST(Replay, LossIgnoresLogitsAtLatentPositions) {
  auto w = rollout_model<double>(LvrHeadKind::kIdentity, 17);
  auto cfg = small_rl(6);
  std::vector<Group<double>> groups{rollout_group(w, prompt_for<double>(w.config, 18), {5}, cfg, 3)};
  std::vector<double> rewards;
  for (auto& r : groups[0].records) rewards.push_back(static_cast<double>(r.length() % 3));
  groups[0].advantages = normalize_advantages(rewards);
  fill_reference_logprobs(w, std::span<Group<double>>(groups), cfg.temperature);
  const auto items = replay_items(std::span<const Group<double>>(groups));
  const auto [in, plan] = plan_replay(w, items);
  Tape<double> off(false);
  const auto out = forward_rows(off, w, in);
  auto perturbed = out.logits.clone();
  std::mt19937_64 rng(1);
  std::normal_distribution<double> noise(0, 5);
  std::size_t touched = 0;
  for (std::size_t k = 0; k < items.size(); ++k) {
    const auto& tr = items[k].record->trace;
    for (std::size_t i = 0; i < tr.response.size(); ++i) {
      if (tr.response[i].kind != ElementKind::kLatent) continue;
      const std::size_t row = in.sequence_offset[k] + tr.position(i) - 1;
      for (auto& v : perturbed.row(row)) v += noise(rng);
      ++touched;
    }
  }
  ASSERT_GT(touched, 0u);
  const auto tt = token_table(std::span<const Group<double>>(groups));
  const auto a = grpo_loss(off, planned_logprobs(off, out.logits, plan, cfg.temperature), tt, 0.2, 0.04);
  const auto b = grpo_loss(off, planned_logprobs(off, perturbed, plan, cfg.temperature), tt, 0.2, 0.04);
  EXPECT_EQ(a.stats.loss, b.stats.loss);
}

TokenTable table_of(std::vector<double> old_lp, std::vector<double> ref_lp, std::vector<double> adv) {
  TokenTable tt;
  const auto n = old_lp.size();
  tt.old_logprobs = std::move(old_lp);
  tt.ref_logprobs = std::move(ref_lp);
  tt.advantages = std::move(adv);
  tt.weights.assign(n, 1.0 / static_cast<double>(n));
  return tt;
}

TEST(GrpoLoss, IdentityCases) {
  Tape<double> tape;
  Tensor<double> lp(Shape{3}, {-1.0, -2.0, -0.5}, true);
  auto l = grpo_loss(tape, lp, table_of({-1.0, -2.0, -0.5}, {-1.0, -2.0, -0.5}, {0, 0, 0}), 0.2, 0.04);
  EXPECT_EQ(l.stats.surrogate, 0.0);
  EXPECT_EQ(l.stats.kl, 0.0);
  EXPECT_EQ(l.stats.mean_ratio, 1.0);
  EXPECT_EQ(l.stats.clip_fraction, 0.0);
}

TEST(GrpoLoss, ClipArithmetic) {
  Tape<double> tape(false);
  Tensor<double> lp(Shape{1}, std::vector<double>{std::log(1.5)});
  auto l = grpo_loss(tape, lp, table_of({0.0}, {std::log(1.5)}, {1.0}), 0.2, 0.0);
  EXPECT_NEAR(l.stats.surrogate, 1.2, 1e-15);
  EXPECT_EQ(l.stats.clip_fraction, 1.0);
  // Negative advantage: min picks the unclipped 1.5 * -1.
  l = grpo_loss(tape, lp, table_of({0.0}, {std::log(1.5)}, {-1.0}), 0.2, 0.0);
  EXPECT_NEAR(l.stats.surrogate, -1.5, 1e-15);
}

TEST(GrpoLoss, KlIsK3Estimator) {
  Tape<double> tape(false);
  Tensor<double> lp(Shape{2}, {-1.0, -3.0});
  auto l = grpo_loss(tape, lp, table_of({-1.0, -3.0}, {-1.5, -2.0}, {0, 0}), 0.2, 1.0);
  const double x0 = -0.5, x1 = 1.0;
  const double expect = 0.5 * ((std::exp(x0) - x0 - 1) + (std::exp(x1) - x1 - 1));
  EXPECT_NEAR(l.stats.kl, expect, 1e-15);
  EXPECT_NEAR(l.stats.loss, expect, 1e-15);
}

TEST(GrpoLoss, GradientAtRatioOneIsPolicyGradient) {
  Tape<double> tape;
  Tensor<double> lp(Shape{3}, {-1.0, -2.0, -0.5}, true);
  const std::vector<double> adv{1.5, -0.5, 0.25};
  auto tt = table_of({-1.0, -2.0, -0.5}, {-1.0, -2.0, -0.5}, adv);
  auto l = grpo_loss(tape, lp, tt, 0.2, 0.04);
  tape.backward(l.loss);
  for (std::size_t t = 0; t < 3; ++t) EXPECT_DOUBLE_EQ(lp.grad()[t], -tt.weights[t] * adv[t]);
}

TEST(GrpoLoss, ScalarGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n01(0, 0.3);
  const std::size_t n = 12;
  std::vector<double> base(n), old_lp(n), ref_lp(n), adv(n);
  for (std::size_t t = 0; t < n; ++t) {
    base[t] = -1.0 + n01(rng);
    old_lp[t] = base[t] + n01(rng);
    ref_lp[t] = base[t] + n01(rng);
    adv[t] = n01(rng) * 3;
  }
  const auto tt = table_of(old_lp, ref_lp, adv);
  Tape<double> tape;
  Tensor<double> lp(Shape{n}, base, true);
  auto l = grpo_loss(tape, lp, tt, 0.2, 0.1);
  tape.backward(l.loss);
  for (std::size_t t = 0; t < n; ++t) {
    auto at = [&](double v) {
      auto b = base;
      b[t] = v;
      Tape<double> off(false);
      return grpo_loss(off, Tensor<double>(Shape{n}, b), tt, 0.2, 0.1).stats.loss;
    };
    const double h = 1e-6;
    EXPECT_NEAR(lp.grad()[t], (at(base[t] + h) - at(base[t] - h)) / (2 * h), 1e-7) << t;
  }
}

TEST(GrpoLoss, NonFiniteRatioIsNumericError) {
  Tape<double> tape(false);
  Tensor<double> lp(Shape{1}, std::vector<double>{0.0});
  try {
    grpo_loss(tape, lp, table_of({-1e6}, {0.0}, {1.0}), 0.2, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNumeric);
  }
}

// Two rollouts with latents, 64-bit, against the model parameters.
TEST(GrpoLoss, ModelGradientMatchesFiniteDifferences) {
  auto w = rollout_model<double>(LvrHeadKind::kMlp2, 40);
  auto cfg = small_rl(2);
  cfg.beta = 0.5;
  std::vector<Group<double>> groups;
  for (std::uint64_t seed = 0; groups.empty() && seed < 50; ++seed) {
    auto g = rollout_group(w, prompt_for<double>(w.config, 41), {5}, cfg, seed);
    if (g.records[0].triggered() || g.records[1].triggered()) groups.push_back(std::move(g));
  }
  ASSERT_FALSE(groups.empty());
  groups[0].advantages = {1.0, -1.0};
  auto ref = w.clone();
  testing::randomize(ref, 0.3, 99);
  fill_reference_logprobs(ref, std::span<Group<double>>(groups), cfg.temperature);
  // Move the policy off the sampling point so ratios differ from 1.
  testing::randomize(w, 0.3, 42);
  set_logit_bias(w, rollout_bias(w.config.vocab_size));
  auto params = w.parameters();
  auto report = finite_diff_check(
      [&](Tape<double>& tape) {
        return grpo_batch_loss(tape, w, std::span<const Group<double>>(groups), cfg).loss;
      },
      std::span(params), GradCheckOptions{1e-5, 40, 3});
  EXPECT_LT(report.max_relative_error, 1e-4) << report.worst_parameter;
}

TEST(GrpoLoss, DegenerateGroupsGiveExactlyZeroGradient) {
  auto w = rollout_model<double>(LvrHeadKind::kGlu3x, 50);
  auto cfg = small_rl(4);
  cfg.beta = 0.0;
  std::vector<Group<double>> groups{rollout_group(w, prompt_for<double>(w.config, 51), {5}, cfg, 1)};
  groups[0].advantages = normalize_advantages(std::vector<double>(4, 1.0));
  fill_reference_logprobs(w, std::span<Group<double>>(groups), cfg.temperature);
  w.zero_grad();
  Tape<double> tape;
  auto l = grpo_batch_loss(tape, w, std::span<const Group<double>>(groups), cfg);
  tape.backward(l.loss);
  for (const auto& p : w.parameters()) {
    if (!p.trainable || !p.tensor.has_grad()) continue;
    for (double g : p.tensor.grad()) ASSERT_EQ(g, 0.0) << p.name;
  }
}

struct RlSetup {
  ModelConfig model;
  DataConfig data;
  Vocab vocab;
  ModelWeights<float> w;
  std::vector<EncodedExample<float>> train, heldout;

  RlSetup() {
    model.d_model = 16;
    model.n_layers = 1;
    model.n_heads = 2;
    model.vocab_size = 32;
    model.max_seq_len = 40;
    model.patch_size = 4;
    data.patch_size = 4;
    data.grid_rows = data.grid_cols = 3;
    w = init_weights<float>(model, 3);
    testing::randomize(w, 0.2, 4);
    set_logit_bias(w, rollout_bias(model.vocab_size));
    std::vector<GeneratedInstance> tr, ho;
    generate_split(data, vocab, 1, Split::kTrain, 8, [&](GeneratedInstance&& g) { tr.push_back(std::move(g)); });
    generate_split(data, vocab, 1, Split::kHeldout, 8, [&](GeneratedInstance&& g) { ho.push_back(std::move(g)); });
    train = encode_examples(w, std::span<const GeneratedInstance>(tr));
    heldout = encode_examples(w, std::span<const GeneratedInstance>(ho));
  }
};

TEST(TrainRl, DegenerateIterationLeavesWeightsUnchanged) {
  RlSetup s;
  RLConfig cfg = small_rl(4);
  cfg.beta = 0.0;
  cfg.format_weight = 0.0;
  cfg.accuracy_weight = 0.0;
  cfg.steps = 2;
  cfg.learning_rate = 1e-2;
  const auto before = s.w.clone();
  train_rl(s.w, cfg, std::span<const EncodedExample<float>>(s.train), {});
  const auto a = before.parameters();
  const auto b = s.w.parameters();
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].tensor.numel(); ++j) {
      ASSERT_EQ(a[i].tensor[j], b[i].tensor[j]) << a[i].name;
    }
  }
}

TEST(TrainRl, WritesMetricsDumpsAndCheckpoints) {
  RlSetup s;
  RLConfig cfg = small_rl(4);
  cfg.steps = 3;
  cfg.prompts_per_step = 2;
  cfg.learning_rate = 1e-3;
  cfg.checkpoint_every = 3;
  cfg.dump_rollouts_every = 1;
  cfg.eval_instances = 4;
  RlRunOptions run;
  run.vocab = &s.vocab;
  run.out_dir = std::filesystem::temp_directory_path() / "lvr_rl_test";
  std::filesystem::remove_all(*run.out_dir);
  const auto result = train_rl(s.w, cfg, std::span<const EncodedExample<float>>(s.train),
                               std::span<const EncodedExample<float>>(s.heldout), run);
  ASSERT_EQ(result.history.size(), 3u);
  EXPECT_TRUE(result.initial_eval.has_value());
  EXPECT_TRUE(result.final_eval.has_value());
  // No update precedes the first replay, so every ratio starts at 1.
  EXPECT_NEAR(result.history[0].mean_ratio, 1.0, 1e-4);
  EXPECT_EQ(result.history[0].clip_fraction, 0.0);
  std::ifstream in(*run.out_dir / "metrics.jsonl");
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) {
    const auto j = Json::parse(line);
    for (const char* k : {"iter", "mean_reward", "mean_format", "mean_accuracy", "mean_ratio",
                          "clip_fraction", "kl", "trigger_fraction"}) {
      EXPECT_TRUE(j.contains(k)) << k;
    }
    ++lines;
  }
  EXPECT_EQ(lines, 3);
  EXPECT_TRUE(std::filesystem::exists(*run.out_dir / "checkpoint_iter3.lvr"));
  std::ifstream dump(*run.out_dir / "rollouts_iter1.jsonl");
  ASSERT_TRUE(std::getline(dump, line));
  const auto g = Json::parse(line);
  EXPECT_EQ(g["rollouts"].size(), 4u);
  EXPECT_TRUE(g["rollouts"][0].contains("latent_positions"));
  EXPECT_TRUE(g["rollouts"][0]["reward"].contains("format"));
  std::filesystem::remove_all(*run.out_dir);
}

TEST(TrainRl, SameSeedIsReproducible) {
  RlSetup a, b;
  RLConfig cfg = small_rl(4);
  cfg.steps = 2;
  cfg.learning_rate = 1e-3;
  const auto ra = train_rl(a.w, cfg, std::span<const EncodedExample<float>>(a.train), {});
  const auto rb = train_rl(b.w, cfg, std::span<const EncodedExample<float>>(b.train), {});
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    EXPECT_EQ(ra.history[i].to_json(), rb.history[i].to_json());
  }
}

}  // namespace
}  // namespace lvr
