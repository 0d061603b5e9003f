#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lvr/cli/grad_check.hpp"
#include "lvr/cli/run_config.hpp"
#include "lvr/data/io.hpp"
#include "lvr/grpo/train.hpp"
#include "lvr/model/checkpoint.hpp"

namespace lvr::cli {

namespace fs = std::filesystem;

inline constexpr double kGradCheckTolerance = 1e-4;

/// Exit codes: 0 ok, 2 config, 3 data format, 4 numeric, 5 capacity, 1 anything else.
inline int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig: return 2;
    case ErrorKind::kFormat: return 3;
    case ErrorKind::kNumeric: return 4;
    case ErrorKind::kCapacity: return 5;
    default: return 1;
  }
}

/// Worker threads from LVR_THREADS (default 1).
inline std::size_t threads_from_env() {
  const char* v = std::getenv("LVR_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  require(*end == '\0' && n >= 1, ErrorKind::kConfig,
          std::string("LVR_THREADS must be a positive integer, got '") + v + "'");
  return static_cast<std::size_t>(n);
}

struct LoadedDataset {
  Manifest manifest;
  std::vector<Image> images;  // parallel to manifest.instances
};

inline LoadedDataset load_dataset(const fs::path& dir) {
  LoadedDataset d;
  d.manifest = read_manifest(dir / "manifest.jsonl");
  d.images.reserve(d.manifest.instances.size());
  for (const auto& inst : d.manifest.instances) {
    auto img = read_image(dir / inst.image_path);
    if (img.channels != inst.channels || img.height != inst.height || img.width != inst.width) {
      fail(ErrorKind::kFormat, "image " + inst.image_path + " does not match its manifest entry");
    }
    d.images.push_back(std::move(img));
  }
  return d;
}

inline Split parse_split_name(const std::string& s) {
  if (s == "train") return Split::kTrain;
  if (s == "heldout") return Split::kHeldout;
  fail(ErrorKind::kConfig, "unknown split '" + s + "' (expected train or heldout)");
}

/// Encodes up to `limit` instances of one split (0: all).
template <std::floating_point T>
std::vector<EncodedExample<T>> encode_split(const ModelWeights<T>& w, const LoadedDataset& d,
                                            Split split, std::size_t limit = 0) {
  std::vector<EncodedExample<T>> out;
  for (std::size_t i = 0; i < d.manifest.instances.size(); ++i) {
    const auto& inst = d.manifest.instances[i];
    if (inst.split != split) continue;
    if (limit && out.size() >= limit) break;
    out.push_back({inst, w.vision.encode(d.images[i])});
  }
  return out;
}

inline void check_data_matches_model(const DataConfig& data, const ModelConfig& model) {
  require(data.patch_size == model.patch_size, ErrorKind::kConfig,
          "dataset patch_size " + std::to_string(data.patch_size) + " != model.patch_size " +
              std::to_string(model.patch_size));
  require(data.image_channels == model.image_channels, ErrorKind::kConfig,
          "dataset image_channels differ from model.image_channels");
}

inline void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  require(static_cast<bool>(out), ErrorKind::kFormat, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------- commands

inline void cmd_gen_data(RunConfig cfg, const fs::path& out, std::ostream& log) {
  cfg.validate();
  Vocab vocab;
  DatasetWriter writer(out, cfg.data);
  const auto all = generate_dataset(cfg.data, vocab, cfg.io.seed, cfg.io.n);
  for (const auto& g : all) writer.add(g.instance, g.image);
  writer.finish();
  write_resolved_config(out, cfg);
  log << "wrote " << all.size() << " instances to " << out.string() << '\n';
}

inline void cmd_train_sft(RunConfig cfg, const fs::path& data_dir, const fs::path& out,
                          std::size_t threads, std::ostream& log) {
  const auto data = load_dataset(data_dir);
  cfg.data = data.manifest.config;
  cfg.validate();
  check_data_matches_model(cfg.data, cfg.model);
  write_resolved_config(out, cfg);
  Vocab vocab;
  auto w = init_weights<float>(cfg.model, cfg.model.seed);
  const auto train = encode_split(w, data, Split::kTrain);
  const auto heldout = encode_split(w, data, Split::kHeldout);
  SftRunOptions run;
  run.out_dir = out;
  run.eval_decode = cfg.decode;
  run.threads = threads;
  const int every = std::max(1, cfg.sft.steps / 20);
  run.on_step = [&](const SftStepRecord& r) {
    if ((r.step + 1) % every == 0 || r.heldout_accuracy) log << r.to_json().dump() << '\n';
  };
  const auto result = train_sft(w, vocab, cfg.sft, std::span<const EncodedExample<float>>(train),
                                std::span<const EncodedExample<float>>(heldout), run);
  save_checkpoint(out / "checkpoint.lvr", w, vocab);
  if (result.final_eval) write_json(out / "final_eval.json", result.final_eval->to_json());
}

inline void cmd_train_rl(RunConfig cfg, const fs::path& init, const fs::path& data_dir,
                         const fs::path& out, std::size_t threads, std::ostream& log) {
  auto ckpt = load_checkpoint<float>(init);
  cfg.model = ckpt.weights.config;
  const auto data = load_dataset(data_dir);
  cfg.data = data.manifest.config;
  cfg.validate();
  check_data_matches_model(cfg.data, cfg.model);
  write_resolved_config(out, cfg);
  auto& w = ckpt.weights;
  const auto train = encode_split(w, data, Split::kTrain);
  const auto heldout = encode_split(w, data, Split::kHeldout);
  RlRunOptions run;
  run.out_dir = out;
  run.threads = threads;
  run.vocab = &ckpt.vocab;
  run.on_iter = [&](const RlIterRecord& r) { log << r.to_json().dump() << '\n'; };
  const auto result = train_rl(w, cfg.rl, std::span<const EncodedExample<float>>(train),
                               std::span<const EncodedExample<float>>(heldout), run);
  save_checkpoint(out / "checkpoint.lvr", w, ckpt.vocab);
  Json report;
  if (result.initial_eval) report["initial"] = result.initial_eval->to_json();
  if (result.final_eval) report["final"] = result.final_eval->to_json();
  write_json(out / "rl_eval.json", report);
}

/// One accuracy row per fixed latent budget.
inline std::vector<Json> cmd_eval(RunConfig cfg, const fs::path& checkpoint,
                                  const fs::path& data_dir, const std::vector<int>& steps,
                                  const std::optional<fs::path>& out, std::size_t threads,
                                  std::ostream& rows_out) {
  auto ckpt = load_checkpoint<float>(checkpoint);
  cfg.model = ckpt.weights.config;
  const auto data = load_dataset(data_dir);
  cfg.data = data.manifest.config;
  cfg.validate();
  check_data_matches_model(cfg.data, cfg.model);
  if (out) write_resolved_config(*out, cfg);
  const auto examples = encode_split(ckpt.weights, data, parse_split_name(cfg.io.split),
                                     cfg.io.eval_instances);
  require(!examples.empty(), ErrorKind::kConfig, "split '" + cfg.io.split + "' is empty");
  std::vector<Json> rows;
  for (int k : steps) {
    DecodeConfig dc = cfg.decode;
    dc.strategy = StopStrategy::kFixedToken;
    dc.fixed_steps = k;
    dc.fixed_steps_from_roi = false;
    dc.max_latent_steps = std::max(dc.max_latent_steps, k);
    const auto report = batch_eval(ckpt.weights, std::span<const EncodedExample<float>>(examples),
                                   dc, threads);
    Json row = report.to_json();
    row["steps"] = k;
    row["split"] = cfg.io.split;
    rows_out << row.dump() << '\n';
    rows.push_back(row);
  }
  if (out) {
    std::ofstream f(*out / "eval.jsonl", std::ios::trunc);
    for (const auto& r : rows) f << r.dump() << '\n';
  }
  return rows;
}

inline Json cmd_decode(RunConfig cfg, const fs::path& checkpoint, const fs::path& data_dir,
                       const std::string& instance_id, bool dump_latents) {
  auto ckpt = load_checkpoint<float>(checkpoint);
  cfg.model = ckpt.weights.config;
  const auto data = load_dataset(data_dir);
  cfg.data = data.manifest.config;
  cfg.validate();
  check_data_matches_model(cfg.data, cfg.model);
  const auto& insts = data.manifest.instances;
  std::size_t idx = insts.size();
  for (std::size_t i = 0; i < insts.size(); ++i) {
    if (insts[i].id == instance_id) idx = i;
  }
  require(idx < insts.size(), ErrorKind::kConfig, "no instance with id '" + instance_id + "'");
  const auto& inst = insts[idx];
  const auto visual = ckpt.weights.vision.encode(data.images[idx]);
  const auto prompt = assemble_prompt(inst, visual);
  const int k = roi_fixed_steps(cfg.decode, inst, cfg.model.patch_size);
  const auto trace = generate(ckpt.weights, prompt, cfg.decode, cfg.decode.seed,
                              DecodeBackend::kCached, k);
  Json j;
  j["instance_id"] = inst.id;
  j["task"] = to_string(inst.task);
  j["question"] = ckpt.vocab.decode(inst.question);
  j["gold"] = ckpt.vocab.decode(inst.answer);
  const auto answer = extract_answer(trace.tokens());
  j["answer"] = ckpt.vocab.decode(answer);
  j["correct"] = answer == inst.answer;
  j["trace"] = trace_to_json(trace, ckpt.vocab, dump_latents);
  return j;
}

/// Returns the report; the caller maps errors above tolerance to a numeric
/// failure.
inline Json cmd_grad_check(RunConfig cfg, const std::string& target, std::size_t max_elements,
                           double epsilon, int stencil_points) {
  cfg.validate();
  GradCheckSetup s;
  s.model = cfg.model;
  s.data = cfg.data;
  s.seed = cfg.model.seed;
  s.max_elements_per_tensor = max_elements;
  s.epsilon = epsilon;
  s.stencil_points = stencil_points;
  GradCheckReport r;
  if (target == "sft") {
    r = sft_grad_check(s, cfg.sft);
  } else if (target == "rl") {
    r = rl_grad_check(s, cfg.rl);
  } else {
    fail(ErrorKind::kConfig, "unknown grad-check target '" + target + "' (expected sft or rl)");
  }
  Json j = to_json(r);
  j["target"] = target;
  j["tolerance"] = kGradCheckTolerance;
  j["passed"] = r.max_relative_error < kGradCheckTolerance;
  return j;
}

}  // namespace lvr::cli
