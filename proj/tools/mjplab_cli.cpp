// Command-line front end: train, eval, sweep, attack, export-pe, report.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mjplab/checkpoint.hpp"
#include "mjplab/config.hpp"
#include "mjplab/harness.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mjplab;

namespace {

constexpr int kOk = 0, kConfig = 2, kDivergence = 3, kIo = 4;

struct Options {
  std::string config_path;
  std::string checkpoint;
  std::string out;
  std::string dir;
  std::size_t workers = 1;
  double gamma = 0.0;
  bool fresh = false;
  std::map<std::string, std::string> overrides;
};

fs::path output_root() {
  const char* env = std::getenv("MJPLAB_OUTPUT_ROOT");
  return env && *env ? fs::path(env) : fs::path();
}

fs::path resolve_out(const ExperimentConfig& cfg, const Options& o) {
  const fs::path dir = o.out.empty() ? fs::path(cfg.output_dir) : fs::path(o.out);
  return dir.is_absolute() ? dir : output_root() / dir;
}

ExperimentConfig base_config(const Options& o) {
  ExperimentConfig cfg = o.config_path.empty() ? ExperimentConfig{} : load_config(o.config_path);
  apply_overrides(cfg, {o.overrides.begin(), o.overrides.end()});
  cfg.validate();
  return cfg;
}

fs::path checkpoint_dir(const ExperimentConfig& cfg, const Options& o) {
  if (!o.checkpoint.empty()) return o.checkpoint;
  return resolve_out(cfg, o) / "checkpoints" / ("epoch_" + std::to_string(cfg.train.epochs));
}

// Model (and its training config) from a checkpoint; data, evaluation and
// attack settings still come from the file and flags.
struct Loaded {
  ExperimentConfig cfg;
  Trainable model;
};

Loaded load_model(const Options& o, bool allow_fresh) {
  ExperimentConfig cfg = base_config(o);
  if (allow_fresh && o.fresh) return {cfg, init_trainable(cfg)};
  Checkpoint ck = load_checkpoint(checkpoint_dir(cfg, o));
  if (!(ck.config.model == cfg.model)) {
    if (!o.config_path.empty()) throw ConfigError("model section differs from the checkpoint's");
    cfg.model = ck.config.model;
  }
  return {cfg, std::move(ck.model)};
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

int cmd_train(const Options& o) {
  const ExperimentConfig cfg = base_config(o);
  const fs::path out = resolve_out(cfg, o);
  const DataSplits data = load_data(cfg);
  for (const auto& w : data.train.warnings) std::cerr << "warning: " << w << '\n';
  for (const auto& w : data.val.warnings) std::cerr << "warning: " << w << '\n';
  const TrainOutput result = train(cfg, data, out, [](const EpochRecord& e) {
    std::cout << "epoch " << e.epoch << "  train_loss " << fmt(e.train_loss) << "  train_acc " << fmt(e.train_accuracy)
              << "  val_loss " << fmt(e.val_loss) << "  val_acc " << fmt(e.val_accuracy) << '\n';
  });
  write_text_file(out / "config.json", canonical_config(cfg));
  write_text_file(out / "run.json", result.record.to_json().dump(2) + "\n");
  std::vector<fs::path> artifacts{out / "config.json", out / "run.json"};
  for (const auto& ck : result.record.checkpoints) {
    for (const auto& entry : fs::directory_iterator(out / ck)) artifacts.push_back(entry.path());
  }
  std::sort(artifacts.begin(), artifacts.end());
  write_manifest(out, "train", cfg, artifacts);
  std::cout << "wrote " << out.string() << '\n';
  return kOk;
}

int cmd_eval(const Options& o) {
  const Loaded l = load_model(o, false);
  const DataSplits data = load_data(l.cfg);
  const EvalResult r = evaluate(l.model, l.cfg, data.val, o.gamma, l.cfg.seed);
  const fs::path out = resolve_out(l.cfg, o) / "eval";
  const json j = {{"gamma", o.gamma}, {"accuracy", r.accuracy}, {"loss", r.loss}, {"count", r.count}};
  const fs::path file = out / "eval.json";
  write_text_file(file, j.dump(2) + "\n");
  write_manifest(out, "eval", l.cfg, {file});
  std::cout << "gamma " << fmt(o.gamma) << "  accuracy " << fmt(r.accuracy) << "  loss " << fmt(r.loss) << '\n';
  return kOk;
}

int cmd_sweep(const Options& o) {
  const Loaded l = load_model(o, false);
  const DataSplits data = load_data(l.cfg);
  const std::vector<SweepPoint> points = ratio_sweep(l.model, l.cfg, data.val, l.cfg.sweep_gammas, l.cfg.seed, o.workers);
  const fs::path out = resolve_out(l.cfg, o) / "sweep";
  json arr = json::array();
  std::string csv = "gamma,accuracy,loss\n";
  for (const SweepPoint& p : points) {
    arr.push_back({{"gamma", p.gamma}, {"accuracy", p.result.accuracy}, {"loss", p.result.loss}});
    csv += fmt(p.gamma) + "," + fmt(p.result.accuracy) + "," + fmt(p.result.loss) + "\n";
    std::cout << "gamma " << fmt(p.gamma) << "  accuracy " << fmt(p.result.accuracy) << '\n';
  }
  write_text_file(out / "sweep.json", json{{"points", arr}}.dump(2) + "\n");
  write_text_file(out / "sweep.csv", csv);
  write_manifest(out, "sweep", l.cfg, {out / "sweep.json", out / "sweep.csv"});
  return kOk;
}

int cmd_attack(const Options& o) {
  Loaded l = load_model(o, true);
  if (!l.cfg.attack) l.cfg.attack = CampaignConfig{};
  const DataSplits data = load_data(l.cfg);
  const std::size_t n = std::min(l.cfg.attack->samples, data.val.size());
  std::vector<std::size_t> samples(n);
  for (std::size_t i = 0; i < n; ++i) samples[i] = i;
  const CampaignResult result = attack_campaign(l.model, l.cfg, data.val, samples, o.workers);
  const fs::path out = resolve_out(l.cfg, o) / "attack";
  std::vector<fs::path> artifacts;
  for (const CampaignCell& c : result.cells) {
    if (!c.result) {
      std::cerr << "cell sample=" << c.sample << " setting=" << to_string(c.setting) << " failed: " << c.error << '\n';
      continue;
    }
    const fs::path cell = out / ("sample_" + std::to_string(c.sample) + "_" + to_string(c.setting));
    for (const fs::path& f : save_attack_result(cell, *c.result, l.cfg.attack->attack)) artifacts.push_back(f);
  }
  write_text_file(out / "campaign.json", result.to_json().dump(2) + "\n");
  artifacts.push_back(out / "campaign.json");
  write_manifest(out, "attack", l.cfg, artifacts);
  for (const auto& [label, report] : result.rows) {
    std::cout << label;
    const json metrics = report.to_json();
    for (const auto& [key, value] : metrics.items()) {
      if (value.is_number()) std::cout << "  " << key << ' ' << fmt(value.get<double>());
    }
    std::cout << '\n';
  }
  return kOk;
}

int cmd_export_pe(const Options& o) {
  const Loaded l = load_model(o, true);
  const fs::path out = resolve_out(l.cfg, o) / "pe";
  const PeExport e = export_pe(l.model, l.cfg.pca_dims, out, o.fresh ? "untrained" : "trained");
  write_manifest(out, "export-pe", l.cfg, e.files);
  for (const ExplainedVarianceRow& r : e.variance) std::cout << "dim " << r.dim << "  ev% " << fmt(r.percent) << '\n';
  return kOk;
}

int cmd_report(const Options& o) {
  const ExperimentConfig cfg = base_config(o);
  const fs::path dir = o.dir.empty() ? resolve_out(cfg, o) : fs::path(o.dir);
  if (!fs::is_directory(dir)) throw IoError("no such run directory: " + dir.string());
  const fs::path out = dir / "report";
  write_text_file(out / "report.md", build_report(dir));
  write_manifest(out, "report", cfg, {out / "report.md"});
  std::cout << "wrote " << (out / "report.md").string() << '\n';
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Masked jigsaw puzzle lab: MJP training, shuffle sweeps, gradient inversion and PE analysis"};
  app.require_subcommand(1);
  Options o;

  const std::vector<std::string> keys = config_keys();
  const auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON experiment config");
    sub->add_option("--out", o.out, "output directory (overrides output_dir)");
    sub->add_option("--workers", o.workers, "worker threads for sweeps and campaigns (0 = all cores)");
    for (const std::string& key : keys) {
      sub->add_option_function<std::string>(
          "--" + key, [&o, key](const std::string& v) { o.overrides[key] = v; }, "override " + key);
    }
  };
  const auto add_checkpoint = [&](CLI::App* sub) {
    sub->add_option("--checkpoint", o.checkpoint, "checkpoint directory (default: last epoch of the run)");
  };

  CLI::App* train_cmd = app.add_subcommand("train", "train a model");
  add_common(train_cmd);
  CLI::App* eval_cmd = app.add_subcommand("eval", "validation accuracy at one inference shuffle ratio");
  add_common(eval_cmd);
  add_checkpoint(eval_cmd);
  eval_cmd->add_option("--gamma", o.gamma, "inference shuffle ratio")->required()->check(CLI::Range(0.0, 1.0));
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "accuracy across sweep_gammas");
  add_common(sweep_cmd);
  add_checkpoint(sweep_cmd);
  CLI::App* attack_cmd = app.add_subcommand("attack", "gradient-inversion campaign");
  add_common(attack_cmd);
  add_checkpoint(attack_cmd);
  attack_cmd->add_flag("--fresh", o.fresh, "attack a freshly initialized model instead of a checkpoint");
  CLI::App* pe_cmd = app.add_subcommand("export-pe", "PCA of the position embeddings");
  add_common(pe_cmd);
  add_checkpoint(pe_cmd);
  pe_cmd->add_flag("--fresh", o.fresh, "use a freshly initialized model instead of a checkpoint");
  CLI::App* report_cmd = app.add_subcommand("report", "markdown summary of a run directory");
  add_common(report_cmd);
  report_cmd->add_option("--dir", o.dir, "run directory (default: the config's output directory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) return cmd_train(o);
    if (*eval_cmd) return cmd_eval(o);
    if (*sweep_cmd) return cmd_sweep(o);
    if (*attack_cmd) return cmd_attack(o);
    if (*pe_cmd) return cmd_export_pe(o);
    if (*report_cmd) return cmd_report(o);
  } catch (const DivergenceError& e) {
    std::cerr << "error: diverged: " << e.what() << '\n';
    return kDivergence;
  } catch (const NumericError& e) {
    std::cerr << "error: numerical failure: " << e.what() << '\n';
    return kDivergence;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kIo;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return kOk;
}
