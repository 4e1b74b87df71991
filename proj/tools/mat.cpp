// Command-line front end. Each pipeline subcommand runs the stages up to and
// including its own, reusing completed ones recorded in <out>/manifest.jsonl.

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "mat/config.hpp"
#include "mat/multiview.hpp"
#include "mat/pipeline.hpp"
#include "mat/report.hpp"

namespace {

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--config", o.config, "experiment config file (key = value)");
  cmd->add_option("--seed", o.seed, "override the config's top-level seed");
  cmd->add_option("--out", o.out, "output directory (overrides output_dir)");
}

mat::ExperimentConfig load(const CommonOptions& o) {
  auto cfg = o.config.empty() ? mat::parse_config("") : mat::load_config(o.config);
  if (o.seed) mat::reseed(cfg, *o.seed);
  if (!o.out.empty()) cfg.output_dir = o.out;
  return cfg;
}

void print_report(const mat::VerificationReport& r, const std::string& label) {
  std::cout << label << ": suspect trigger acc " << r.suspect_trigger_acc << ", benign " << r.benign_trigger_acc
            << ", p = " << r.p_value << ", owned = " << (r.owned ? "yes" : "no") << '\n';
}

int fail(const std::string& stage, const std::string& message) {
  std::cerr << "error: stage " << stage << " failed: " << message << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-view trigger-set watermarking: embed, attack and verify."};
  app.require_subcommand(1);
  CommonOptions o;

  struct PhaseCommand {
    const char* name;
    const char* help;
  };
  const PhaseCommand phases[] = {
      {"select-trigger", "train the clean selector and choose the trigger set"},
      {"train-source", "train the watermarked source model"},
      {"train-benign", "train the benign reference model"},
      {"attack", "run every configured attack against the source model"},
      {"verify", "verify ownership of each surrogate (or of the source if no attacks)"},
      {"run", "full pipeline including sweeps and the report"},
  };
  std::string chosen_phase;
  std::string suspect;
  for (const auto& p : phases) {
    auto* cmd = app.add_subcommand(p.name, p.help);
    add_common(cmd, o);
    if (std::string(p.name) == "verify")
      cmd->add_option("--suspect", suspect, "also verify this external checkpoint against the run's trigger set");
    cmd->callback([&chosen_phase, name = p.name] { chosen_phase = name; });
  }
  auto* report = app.add_subcommand("report", "write results table, summary and sweep plots from a finished run");
  add_common(report, o);
  auto* sim = app.add_subcommand("simulate-multiview", "linear multi-view transfer experiment");
  add_common(sim, o);

  CLI11_PARSE(app, argc, argv);

  std::string stage = "config";
  try {
    if (report->parsed()) {
      stage = "report";
      const auto root = o.out.empty() ? load(o).output_dir : std::filesystem::path(o.out);
      mat::ArtifactStore store(root);
      mat::emit_report(store);
      std::cout << store.read("reports/summary.txt");
      std::cout << "wrote " << (store.root() / "reports").string() << '\n';
      return 0;
    }

    auto cfg = load(o);
    if (sim->parsed()) {
      stage = "simulate-multiview";
      mat::ArtifactStore store(cfg.output_dir);
      for (auto mode : {mat::sim::SurrogateSampling::spanning, mat::sim::SurrogateSampling::v1_only}) {
        auto tc = cfg.multiview;
        tc.sampling = mode;
        const auto rep = mat::sim::run_transfer_experiment(tc);
        store.write("multiview/transfer_" + mat::sim::to_string(mode) + ".csv", mat::sim::format_transfer_report(rep));
        std::cout << "surrogate sampling " << mat::sim::to_string(mode) << ":";
        for (double w0 : tc.w0_grid) std::cout << "  w0=" << w0 << " rate=" << rep.rate(w0);
        std::cout << '\n';
      }
      std::cout << "wrote " << (store.root() / "multiview").string() << '\n';
      return 0;
    }

    const auto until = mat::parse_phase(chosen_phase);
    const auto m = mat::run_pipeline(cfg, {.until = until});
    for (const auto& s : mat::planned_stages(cfg))
      if (m.latest_ok(s, m.config_hash())) std::cout << "ok  " << s << '\n';
    if (until == mat::Phase::verify || until == mat::Phase::report) {
      mat::ArtifactStore store(cfg.output_dir);
      for (const auto& s : mat::planned_stages(cfg))
        if (s.starts_with("verify/")) print_report(store.get_report(m.output(s, "report").path), s);
      if (!suspect.empty()) {
        stage = "verify/external";
        const auto bytes = mat::read_file_bytes(suspect);
        const auto ref = store.write("suspects/" + std::filesystem::path(suspect).filename().string(), bytes);
        const auto sus = mat::deserialize_checkpoint(bytes);
        const auto ben = store.get_model("models/benign.ckpt");
        const auto ts = store.get_trigger("trigger/trigger_set.csv");
        auto data = store.get_dataset("data/source.csv");
        data.input_shape = ben.spec.input_shape;
        const mat::BlackBoxModel s(sus), b(ben);
        const auto r = mat::verify_ownership(s, b, ts, data, cfg.significance);
        store.write("reports/verify_external_" + std::filesystem::path(suspect).stem().string() + ".txt",
                    mat::format_report(r));
        print_report(r, "external " + ref.path);
      }
    }
    if (until == mat::Phase::report) std::cout << "report: " << (cfg.output_dir / "reports").string() << '\n';
    return 0;
  } catch (const mat::StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    return fail(stage, e.what());
  }
}
