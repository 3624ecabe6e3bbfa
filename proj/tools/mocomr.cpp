#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "mocomr/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kConfig = 2, kArtifact = 3, kNumerical = 4 };

struct Options {
  std::string config_path;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string profile;
  std::string variant;
  int threads = 0;
};

void add_common(CLI::App* sub, Options& o) {
  sub->add_option("--config", o.config_path, "pipeline configuration (JSON)");
  sub->add_option("--out", o.out, "output directory (overrides output_dir)");
  sub->add_option("--seed", o.seed, "root seed (overrides seed)");
  sub->add_option("--profile", o.profile, "default profile")->check(CLI::IsMember({"desk", "paper"}));
  sub->add_option("--variant", o.variant, "reconstruct only this variant")
      ->check(CLI::IsMember({"static", "nonrigid", "shift", "accelerated"}));
  sub->add_option("--threads", o.threads, "OpenMP threads (0 = runtime default)")->check(CLI::NonNegativeNumber);
}

mocomr::PipelineConfig load(const Options& o) {
  using namespace mocomr;
  std::optional<std::string> profile;
  if (!o.profile.empty()) profile = o.profile;
  nlohmann::json doc = nlohmann::json::object();
  PipelineConfig c;
  if (!o.config_path.empty()) {
    c = read_config(o.config_path, profile);
  } else {
    if (!profile) profile = "desk";
    c = config_from_json(doc, profile);
  }
  if (o.seed || !o.out.empty()) {
    nlohmann::json j = config_to_json(c);
    if (o.seed) j["seed"] = *o.seed;
    if (!o.out.empty()) j["output_dir"] = o.out;
    c = config_from_json(j, c.profile);
  }
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Motion-compensated accelerated MR reconstruction pipeline"};
  app.require_subcommand(1);
  Options o;
  auto* simulate = app.add_subcommand("simulate", "simulate the patch-wise acquisition of the phantom");
  auto* train = app.add_subcommand("train", "register training frames and fit the motion model");
  auto* reconstruct = app.add_subcommand("reconstruct", "reconstruct the configured variants");
  auto* evaluate = app.add_subcommand("evaluate", "compute the run report from persisted artifacts");
  auto* run = app.add_subcommand("run", "simulate, train, reconstruct and evaluate");
  for (auto* s : {simulate, train, reconstruct, evaluate, run}) add_common(s, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
#ifdef _OPENMP
    if (o.threads > 0) omp_set_num_threads(o.threads);
#endif
    const mocomr::PipelineConfig cfg = load(o);
    mocomr::Pipeline p(cfg, cfg.output_dir);
    if (*simulate) p.simulate();
    if (*train) p.train();
    if (*reconstruct) {
      if (!o.variant.empty())
        p.reconstruct(mocomr::variant_from_string(o.variant));
      else
        for (auto v : cfg.variants) p.reconstruct(v);
    }
    if (*evaluate) p.evaluate();
    if (*run) p.run();
    std::cout << "ok: " << (p.out() / "").string() << "\n";
    return kOk;
  } catch (const mocomr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const mocomr::ArgumentError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const mocomr::ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return kArtifact;
  } catch (const mocomr::Error& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return kArtifact;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "artifact error: " << e.what() << "\n";
    return kArtifact;
  }
}
