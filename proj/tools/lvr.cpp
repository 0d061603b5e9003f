// Command-line entry point: lvr <command> [options]. Run `lvr --help`.
#include <CLI11.hpp>

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "lvr/cli/commands.hpp"

namespace {

using namespace lvr;
namespace fs = std::filesystem;

int report(ErrorKind kind, const std::string& detail) {
  std::cerr << "error: " << to_string(kind) << ": " << detail << '\n';
  return cli::exit_code(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Latent visual reasoning toolkit: data, SFT, GRPO, evaluation, decoding."};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override the seed used by the command");

  std::string out, data, checkpoint, instance_id, target = "sft", split;
  std::optional<std::size_t> n;
  std::vector<int> steps{4, 8, 16};
  bool dump_latents = false;
  std::size_t max_elements = 0;
  double epsilon = GradCheckSetup{}.epsilon;
  int stencil = GradCheckSetup{}.stencil_points;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset (manifest + images)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--n", n, "Number of instances (train + held-out)");

  auto* sft = app.add_subcommand("train-sft", "Supervised training with the latent block");
  sft->add_option("--data", data, "Dataset directory")->required();
  sft->add_option("--out", out, "Output directory")->required();

  auto* rl = app.add_subcommand("train-rl", "GRPO training from an SFT checkpoint");
  rl->add_option("--init-checkpoint", checkpoint, "Starting checkpoint")->required();
  rl->add_option("--data", data, "Dataset directory")->required();
  rl->add_option("--out", out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Exact-match accuracy at fixed latent budgets");
  ev->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate")->required();
  ev->add_option("--data", data, "Dataset directory")->required();
  ev->add_option("--split", split, "train or heldout (default: io.split)");
  ev->add_option("--steps", steps, "Latent budgets, e.g. --steps 4 8 16")
      ->check(CLI::IsMember({4, 8, 16}));
  ev->add_option("--out", out, "Optional directory for eval.jsonl and the resolved config");

  auto* dec = app.add_subcommand("decode", "Decode one instance and print its trace");
  dec->add_option("--checkpoint", checkpoint, "Checkpoint")->required();
  dec->add_option("--data", data, "Dataset directory")->required();
  dec->add_option("--instance-id", instance_id, "Instance id, e.g. heldout-000003")->required();
  dec->add_flag("--dump-latents", dump_latents, "Include latent vectors in the trace");

  auto* gc = app.add_subcommand("grad-check", "Finite-difference check of a training loss");
  gc->add_option("--target", target, "sft or rl")->check(CLI::IsMember({"sft", "rl"}));
  gc->add_option("--max-elements", max_elements, "Sample at most this many entries per tensor");
  gc->add_option("--epsilon", epsilon, "Finite-difference step");
  gc->add_option("--stencil", stencil, "2 (central) or 4 (five-point)")->check(CLI::IsMember({2, 4}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report(ErrorKind::kConfig, e.what());
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    const std::size_t threads = cli::threads_from_env();

    if (gen->parsed()) {
      if (seed) cfg.io.seed = *seed;
      if (n) cfg.io.n = *n;
      cli::cmd_gen_data(cfg, out, std::cerr);
    } else if (sft->parsed()) {
      if (seed) cfg.model.seed = cfg.sft.seed = *seed;
      cli::cmd_train_sft(cfg, data, out, threads, std::cerr);
    } else if (rl->parsed()) {
      if (seed) cfg.rl.seed = *seed;
      cli::cmd_train_rl(cfg, checkpoint, data, out, threads, std::cerr);
    } else if (ev->parsed()) {
      if (seed) cfg.decode.seed = *seed;
      if (!split.empty()) cfg.io.split = split;
      std::optional<fs::path> out_dir;
      if (!out.empty()) out_dir = out;
      cli::cmd_eval(cfg, checkpoint, data, steps, out_dir, threads, std::cout);
    } else if (dec->parsed()) {
      if (seed) cfg.decode.seed = *seed;
      std::cout << cli::cmd_decode(cfg, checkpoint, data, instance_id, dump_latents).dump(2)
                << '\n';
    } else if (gc->parsed()) {
      if (seed) cfg.model.seed = *seed;
      const auto j = cli::cmd_grad_check(cfg, target, max_elements, epsilon, stencil);
      std::cout << j.dump() << '\n';
      if (!j["passed"].get<bool>()) {
        return report(ErrorKind::kNumeric, "gradient check above tolerance");
      }
    }
  } catch (const Error& e) {
    return report(e.kind(), e.what());
  } catch (const std::exception& e) {
    return report(ErrorKind::kContract, e.what());
  }
  return 0;
}
