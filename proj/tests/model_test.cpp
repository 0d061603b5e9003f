#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "lvr/model/checkpoint.hpp"
#include "lvr/model/transformer.hpp"
#include "lvr/numerics/adamw.hpp"
#include "lvr/numerics/gradcheck.hpp"
#include "test_support.hpp"

namespace lvr {
namespace {

using testing::random_sequence;
using testing::randomize;
using testing::tiny_config;

TEST(ModelConfig, WidthMustDivideByHeads) {
  auto c = tiny_config();
  c.n_heads = 3;
  try {
    c.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kConfig);
  }
}

TEST(ModelConfig, JsonRoundTripAndUnknownKey) {
  auto c = tiny_config(LvrHeadKind::kGlu3x);
  c.seed = 77;
  auto j = to_json(c);
  auto back = model_config_from_json(j);
  EXPECT_EQ(to_json(back), j);
  j["dropout"] = 0.1;
  EXPECT_THROW(model_config_from_json(j), Error);
}

TEST(Vocab, SpecialsAreFixed) {
  Vocab v;
  EXPECT_EQ(v.id("<|pad|>"), Vocab::kPad);
  EXPECT_EQ(v.id("<|bos|>"), Vocab::kBos);
  EXPECT_EQ(v.id("<|eos|>"), Vocab::kEos);
  EXPECT_EQ(v.id("<|lvr_start|>"), Vocab::kLvrStart);
  EXPECT_EQ(v.id("<|lvr_end|>"), Vocab::kLvrEnd);
  EXPECT_NE(Vocab::kLvrStart, Vocab::kLvrEnd);
  EXPECT_EQ(v.decode(v.encode("color 1 2 ?")), "color 1 2 ?");
}

TEST(Vocab, UnexpressibleNumberIsGenerationError) {
  Vocab v;
  try {
    v.digit(10);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kGeneration);
  }
}

TEST(Vocab, RejectsMisplacedSpecials) {
  auto t = Vocab::standard_tokens();
  std::swap(t[3], t[4]);
  EXPECT_THROW(Vocab{t}, Error);
}

Image random_image(int c, int h, int w, std::uint64_t seed) {
  Image img(c, h, w);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& p : img.pixels) p = u(rng);
  return img;
}

TEST(EncodeImage, GridOf112By112WithPatch28HasSixteenRows) {
  FrozenVisionEncoder<float> enc(28, 3, 64, 1);
  auto tokens = enc.encode(Image(3, 112, 112));
  EXPECT_EQ(tokens.shape(), (Shape{16, 64}));
}

TEST(EncodeImage, ZeroImageGivesBias) {
  FrozenVisionEncoder<float> enc(28, 3, 64, 2);
  auto tokens = enc.encode(Image(3, 112, 112));
  for (std::size_t r = 0; r < 16; ++r) {
    for (std::size_t j = 0; j < 64; ++j) EXPECT_EQ(tokens.at(r, j), enc.bias()[j]);
  }
}

TEST(EncodeImage, MatchesDotProductOracle) {
  const int P = 4, C = 3, H = 12, W = 8;
  FrozenVisionEncoder<double> enc(P, C, 16, 3);
  auto img = random_image(C, H, W, 9);
  auto tokens = enc.encode(img);
  const int gc = W / P;
  for (int r = 0; r < H / P; ++r) {
    for (int c = 0; c < gc; ++c) {
      for (std::size_t j = 0; j < 16; ++j) {
        double acc = enc.bias()[j];
        std::size_t k = 0;
        for (int dy = 0; dy < P; ++dy) {
          for (int dx = 0; dx < P; ++dx) {
            for (int ch = 0; ch < C; ++ch, ++k) {
              acc += double(img.at(ch, r * P + dy, c * P + dx)) * enc.weight().at(k, j);
            }
          }
        }
        EXPECT_NEAR(tokens.at(static_cast<std::size_t>(r * gc + c), j), acc, 1e-6);
      }
    }
  }
}

TEST(EncodeImage, IndivisibleSizeIsDimensionError) {
  FrozenVisionEncoder<float> enc(28, 3, 8, 1);
  try {
    enc.encode(Image(3, 100, 112));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDimension);
  }
}

TEST(EncodeImage, EncoderIsDeterministicFromSeed) {
  FrozenVisionEncoder<float> a(4, 3, 8, 5), b(4, 3, 8, 5), c(4, 3, 8, 6);
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), c.checksum());
}

TEST(Forward, SingleBosShapes) {
  auto w = init_weights<float>(tiny_config(), 1);
  MixedSequence<float> s;
  s.push(MixedElement<float>::text(Vocab::kBos));
  Tape<float> tape(false);
  auto out = forward_mixed(tape, w, s);
  EXPECT_EQ(out.hidden.shape(), (Shape{1, 16}));
  EXPECT_EQ(out.logits.shape(), (Shape{1, 32}));
}

TEST(Forward, OverflowIsCapacityError) {
  auto c = tiny_config();
  auto w = init_weights<float>(c, 1);
  std::mt19937_64 rng(1);
  auto s = random_sequence<float>(rng, c, c.max_seq_len + 1);
  Tape<float> tape(false);
  try {
    forward_mixed(tape, w, s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kCapacity);
  }
}

TEST(Forward, CachedIncrementalMatchesFullPass) {
  auto c = tiny_config();
  auto w = init_weights<float>(c, 3);
  randomize(w, 0.3, 4);
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<std::size_t> len(1, c.max_seq_len);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto s = random_sequence<float>(rng, c, len(rng));
    Tape<float> tape(false);
    auto full = forward_mixed(tape, w, s);
    KVCache<float> cache(c);
    for (std::size_t i = 0; i < s.size(); ++i) {
      auto step = forward_incremental(w, cache, s[i]);
      for (std::size_t j = 0; j < c.d(); ++j) {
        worst = std::max(worst, double(std::abs(step.hidden[j] - full.hidden.at(i, j))));
      }
      for (std::size_t j = 0; j < 32; ++j) {
        worst = std::max(worst, double(std::abs(step.logits[j] - full.logits.at(i, j))));
      }
    }
  }
  EXPECT_LE(worst, 1e-5);
}

TEST(Forward, CausalityFutureChangesDoNotLeakBack) {
  auto c = tiny_config();
  auto w = init_weights<double>(c, 7);
  randomize(w, 0.3, 8);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto s = random_sequence<double>(rng, c, 12);
    auto t = s;
    std::swap(t[9], t[11]);
    t[10] = MixedElement<double>::latent(testing::random_vector<double>(rng, c.d()));
    Tape<double> tape(false);
    auto a = forward_mixed(tape, w, s);
    auto b = forward_mixed(tape, w, t);
    for (std::size_t i = 0; i < 9; ++i) {
      for (std::size_t j = 0; j < c.d(); ++j) EXPECT_EQ(a.hidden.at(i, j), b.hidden.at(i, j));
    }
  }
}

TEST(Forward, PackedSequencesMatchSeparatePasses) {
  auto c = tiny_config();
  auto w = init_weights<double>(c, 11);
  randomize(w, 0.3, 12);
  std::mt19937_64 rng(13);
  auto s1 = random_sequence<double>(rng, c, 7);
  auto s2 = random_sequence<double>(rng, c, 10);
  Tape<double> tape(false);
  auto packed = forward_rows(tape, w, build_inputs(w, {&s1, &s2}));
  auto a = forward_mixed(tape, w, s1);
  auto b = forward_mixed(tape, w, s2);
  for (std::size_t i = 0; i < 7; ++i) {
    for (std::size_t j = 0; j < c.d(); ++j) {
      EXPECT_NEAR(packed.hidden.at(i, j), a.hidden.at(i, j), 1e-12);
    }
  }
  for (std::size_t i = 0; i < 10; ++i) {
    for (std::size_t j = 0; j < 32; ++j) {
      EXPECT_NEAR(packed.logits.at(7 + i, j), b.logits.at(i, j), 1e-12);
    }
  }
}

TEST(LvrHead, IdentityReturnsInputUnchanged) {
  auto w = init_weights<float>(tiny_config(), 1);
  Tape<float> tape(false);
  Tensor<float> h(Shape{2, 16}, std::vector<float>(32, 0.25f));
  auto out = apply_lvr_head(tape, w, h);
  EXPECT_TRUE(out.same_storage(h));
}

TEST(LvrHead, Mlp2WithZeroFinalLayerGivesZero) {
  auto w = init_weights<float>(tiny_config(LvrHeadKind::kMlp2), 1);
  std::mt19937_64 rng(2);
  auto h = testing::random_vector<float>(rng, 16, 3.0);
  for (float v : apply_lvr_head<float>(w, h)) EXPECT_EQ(v, 0.0f);
}

TEST(LvrHead, Glu3xKeepsModelWidth) {
  auto c = tiny_config(LvrHeadKind::kGlu3x);
  c.d_model = 64;
  auto w = init_weights<float>(c, 1);
  EXPECT_EQ(w.head.w_up.shape(), (Shape{64, 192}));
  Tape<float> tape(false);
  auto out = apply_lvr_head(tape, w, Tensor<float>(Shape{1, 64}));
  EXPECT_EQ(out.cols(), 64u);
}

TEST(InitWeights, DeterministicAndStructured) {
  auto c = tiny_config(LvrHeadKind::kMlp2);
  auto a = init_weights<float>(c, 42);
  auto b = init_weights<float>(c, 42);
  auto pa = a.parameters(), pb = b.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t j = 0; j < pa[i].tensor.numel(); ++j) {
      ASSERT_EQ(pa[i].tensor[j], pb[i].tensor[j]) << pa[i].name;
    }
  }
  for (float v : a.layers[0].ln1_gamma.data()) EXPECT_EQ(v, 1.0f);
  for (float v : a.head.w2.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_FALSE(a.anchor_trainable());
}

TEST(InitWeights, ResidualProjectionsUseSmallerScale) {
  ModelConfig c = tiny_config();
  c.d_model = 128;
  c.n_heads = 4;
  c.n_layers = 8;
  auto w = init_weights<double>(c, 3);
  auto rms = [](const Tensor<double>& t) {
    double s = 0;
    for (double v : t.data()) s += v * v;
    return std::sqrt(s / static_cast<double>(t.numel()));
  };
  EXPECT_NEAR(rms(w.layers[0].wq), 0.02, 0.002);
  EXPECT_NEAR(rms(w.layers[0].wo), 0.02 / 4.0, 0.0005);
  EXPECT_NEAR(rms(w.layers[0].w_proj), 0.02 / 4.0, 0.0005);
}

TEST(FrozenEncoder, ChecksumSurvivesOptimizerSteps) {
  auto c = tiny_config();
  auto w = init_weights<float>(c, 1);
  const auto before = w.vision.checksum();
  std::mt19937_64 rng(3);
  auto params = w.parameters();
  AdamW<float> opt(AdamWConfig{1e-2});
  for (int step = 0; step < 5; ++step) {
    w.zero_grad();
    auto s = random_sequence<float>(rng, c, 10);
    Tape<float> tape;
    auto out = forward_mixed(tape, w, s);
    auto loss = ops::sum(tape, ops::mul(tape, out.logits, out.logits));
    tape.backward(loss);
    for (auto& p : params) {
      if (p.trainable && !p.tensor.has_grad()) p.tensor.ensure_grad();
    }
    opt.step(params);
  }
  EXPECT_EQ(w.vision.checksum(), before);
}

TEST(Forward, GradientMatchesFiniteDifferences) {
  auto c = tiny_config(LvrHeadKind::kGlu3x);
  c.d_model = 8;
  c.n_layers = 1;
  auto w = init_weights<double>(c, 5);
  randomize(w, 0.4, 6);
  w.set_anchor_trainable(false);
  std::mt19937_64 rng(7);
  auto s = random_sequence<double>(rng, c, 6);
  auto probe = testing::random_vector<double>(rng, 6 * 32);
  Tensor<double> weights(Shape{6, 32}, probe);
  auto params = w.parameters();
  auto report = finite_diff_check(
      [&](Tape<double>& tape) {
        auto out = forward_mixed(tape, w, s);
        auto head = apply_lvr_head(tape, w, out.hidden);
        return ops::add(tape, ops::sum(tape, ops::mul(tape, ops::log_softmax(tape, out.logits),
                                                      weights)),
                        ops::sum(tape, ops::mul(tape, head, head)));
      },
      std::span(params));
  EXPECT_LT(report.max_relative_error, 1e-4)
      << report.worst_parameter << " " << report.worst_analytic << " " << report.worst_numeric;
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  auto c = tiny_config(LvrHeadKind::kMlp2);
  auto w = init_weights<float>(c, 9);
  w.set_anchor_trainable(true);
  Vocab vocab;
  const auto first = serialize_checkpoint(w, vocab);
  auto loaded = deserialize_checkpoint<float>(first);
  EXPECT_EQ(serialize_checkpoint(loaded.weights, loaded.vocab), first);
  EXPECT_TRUE(loaded.weights.anchor_trainable());
  EXPECT_EQ(loaded.weights.vision.checksum(), w.vision.checksum());
  EXPECT_EQ(loaded.vocab.id("<|lvr_end|>"), Vocab::kLvrEnd);
}

TEST(Checkpoint, FileRoundTrip) {
  auto w = init_weights<float>(tiny_config(), 10);
  const auto path = std::filesystem::temp_directory_path() / "lvr_model_test.ckpt";
  save_checkpoint(path, w, Vocab{});
  auto loaded = load_checkpoint<float>(path);
  EXPECT_EQ(serialize_checkpoint(loaded.weights, loaded.vocab), serialize_checkpoint(w, Vocab{}));
  std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptionReportsByteOffset) {
  auto bytes = serialize_checkpoint(init_weights<float>(tiny_config(), 1), Vocab{});
  try {
    deserialize_checkpoint<float>(bytes.substr(0, bytes.size() - 3));
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_GT(e.offset(), 0u);
  }
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  try {
    deserialize_checkpoint<float>(bad_magic);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
}

}  // namespace
}  // namespace lvr
