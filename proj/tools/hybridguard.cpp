// hybridguard: command-line front end for the balancing + two-phase
// detection pipeline. Each subcommand is one stage; see --help.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hybridguard/pipeline.hpp"

namespace {

using hybridguard::pipeline::PipelineConfig;

int fail(const std::string& kind, int code, const std::string& message) {
  const nlohmann::json err = {{"schema_version", hybridguard::kSchemaVersion},
                              {"error", {{"kind", kind}, {"exit_code", code}, {"message", message}}}};
  std::cerr << err.dump() << '\n';
  return code;
}

const char* kind_name(hybridguard::ErrorKind k) {
  switch (k) {
    case hybridguard::ErrorKind::config: return "config";
    case hybridguard::ErrorKind::data: return "data";
    case hybridguard::ErrorKind::numeric: return "numeric";
  }
  return "unknown";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HybridGuard: GAN-balanced two-phase intrusion detection"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<unsigned> threads;
  app.add_option("--config", config_path, "Pipeline configuration (JSON)")->required();
  app.add_option("--seed", seed, "Master seed; overrides the config");
  app.add_option("--out-dir", out_dir, "Artifact directory; overrides the config");
  app.add_option("--threads", threads, "Worker threads; overrides the config")->check(CLI::PositiveNumber);

  auto* preprocess = app.add_subcommand("preprocess", "Clean, encode, scale and split the input");
  auto* gan_train = app.add_subcommand("gan-train", "Train the conditional WGAN-GP on the training split");
  bool no_resume = false;
  std::optional<std::size_t> stop_after;
  gan_train->add_flag("--no-resume", no_resume, "Ignore an existing checkpoint");
  gan_train->add_option("--stop-after", stop_after, "Run at most this many epochs, then checkpoint and exit");
  auto* gan_sample = app.add_subcommand("gan-sample", "Generate synthetic rows (augmentation plan or one class)");
  std::optional<std::string> sample_class;
  std::size_t sample_count = 0;
  auto* class_opt = gan_sample->add_option("--class", sample_class, "Class name to sample");
  gan_sample->add_option("--count", sample_count, "Rows to sample for --class")->needs(class_opt);
  auto* augment = app.add_subcommand("augment", "Append synthetic minority rows to the training split");
  auto* detect_train = app.add_subcommand("detect-train", "Train one two-phase detector per combination");
  auto* evaluate = app.add_subcommand("evaluate", "Score every detector on the original test split");
  auto* report = app.add_subcommand("report", "Summaries and per-class tables");
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return fail("usage", 2, e.what());
  }

  try {
    PipelineConfig cfg = hybridguard::pipeline::load_config(config_path);
    if (seed) cfg.seed = *seed;
    if (out_dir) cfg.out_dir = *out_dir;
    if (threads) cfg.threads = *threads;
    cfg.resolve();

    nlohmann::json result;
    namespace p = hybridguard::pipeline;
    if (preprocess->parsed()) {
      result = p::run_preprocess(cfg);
    } else if (gan_train->parsed()) {
      result = p::run_gan_train(cfg, {!no_resume, stop_after});
    } else if (gan_sample->parsed()) {
      std::optional<std::pair<std::string, std::size_t>> one;
      if (sample_class) one = std::make_pair(*sample_class, sample_count);
      result = p::run_gan_sample(cfg, one);
    } else if (augment->parsed()) {
      result = p::run_augment(cfg);
    } else if (detect_train->parsed()) {
      result = p::run_detect_train(cfg);
    } else if (evaluate->parsed()) {
      result = p::run_evaluate(cfg);
    } else if (report->parsed()) {
      result = p::run_report(cfg);
    }
    std::cout << result.dump(2) << '\n';
    return 0;
  } catch (const hybridguard::Error& e) {
    return fail(kind_name(e.kind()), e.exit_code(), e.what());
  } catch (const nlohmann::json::exception& e) {
    return fail("data", 3, e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail("data", 3, e.what());
  }
}
