#include "mjplab/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "mjplab/optim.hpp"
#include "mjplab/svg.hpp"

namespace mjplab {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Data and initialization

DataSplits load_data(const ExperimentConfig& cfg) {
  DataSplits out;
  if (cfg.data.source == "synthetic") {
    SyntheticOptions opts;
    opts.noise = cfg.data.noise;
    opts.cues = cfg.data.cues;
    opts.cue_span = cfg.data.cue_span;
    opts.size = cfg.data.train_size;
    opts.seed = mix64(cfg.seed ^ 0x7a1f);
    out.train = synthetic_dataset(cfg.model, opts);
    opts.size = cfg.data.val_size;
    opts.seed = mix64(cfg.seed ^ 0x5a1);
    out.val = synthetic_dataset(cfg.model, opts);
  } else {
    out.train = load_dataset(cfg.data.train_path, cfg.model.mode);
    out.val = load_dataset(cfg.data.val_path, cfg.model.mode);
  }
  validate_dataset(out.train, cfg.model);
  validate_dataset(out.val, cfg.model);
  return out;
}

Trainable init_trainable(const ExperimentConfig& cfg) {
  const Rng root(cfg.seed, 0x1417);
  Rng model_rng = root.split(0);
  Trainable t{TransformerModel::initialize(cfg.model, model_rng), {}};
  if (cfg.aux.kind != AuxKind::none) {
    Rng reg_rng = root.split(1);
    t.regressor = LocalizationRegressor::initialize(cfg.model.mode, cfg.model.embed_dim, reg_rng);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Training and evaluation

json RunRecord::to_json() const {
  json epochs_json = json::array();
  for (const EpochRecord& e : epochs) {
    epochs_json.push_back({{"epoch", e.epoch},
                           {"train_loss", e.train_loss},
                           {"train_accuracy", e.train_accuracy},
                           {"val_loss", e.val_loss},
                           {"val_accuracy", e.val_accuracy}});
  }
  return {{"config_hash", config_hash}, {"epochs", epochs_json}, {"checkpoints", checkpoints}};
}

namespace {

std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t c = logits.shape()[1];
  std::size_t best = 0;
  for (std::size_t k = 1; k < c; ++k) {
    if (logits[row * c + k] > logits[row * c + best]) best = k;
  }
  return best;
}

std::size_t count_correct(const Tensor& logits, std::span<const std::size_t> labels) {
  std::size_t correct = 0;
  for (std::size_t b = 0; b < labels.size(); ++b) correct += argmax_row(logits, b) == labels[b];
  return correct;
}

ShuffleSpec spec_with_gamma(const ExperimentConfig& cfg, double gamma) {
  ShuffleSpec spec = cfg.shuffle;
  spec.gamma = gamma;
  return spec;
}

}  // namespace

TrainOutput train(const ExperimentConfig& cfg, const DataSplits& data, const fs::path& out_dir,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (data.train.empty()) throw DataError("training set is empty");
  TrainOutput out{RunRecord{config_hash(cfg), {}, {}}, init_trainable(cfg)};
  Trainable& model = out.model;
  AdamW model_opt, reg_opt;

  const std::size_t n = data.train.size(), bs = cfg.train.batch_size;
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const std::size_t total_steps = steps_per_epoch * cfg.train.epochs;
  const Rng order_root(cfg.seed, 0x0de5);
  const Rng shuffle_root(cfg.shuffle.seed, 0x5f1e);
  const Rng aux_root(cfg.seed, 0xa0c5);
  std::size_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.train.epochs; ++epoch) {
    Rng order_rng = order_root.split(epoch);
    const std::vector<std::size_t> order = order_rng.permutation(n);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < n; start += bs, ++step) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(bs, n - start));
      const TokenBatch batch = data.train.batch(idx, cfg.model);
      const std::vector<std::size_t> labels = data.train.labels(idx);

      Tape tape;
      const std::vector<const ParamStore*> stores = model.stores();
      const BoundParams p(tape, stores, true);
      Rng aux_rng = aux_root.split(step);
      const LossTerms terms =
          compute_loss(p, cfg.model, batch, labels, &cfg.shuffle, shuffle_root.split(step), cfg.aux, aux_rng);
      const double loss = terms.loss.value().item();
      if (!std::isfinite(loss)) {
        throw DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
      }
      std::vector<std::string> names;
      std::vector<Var> wrt;
      for (const auto& [name, var] : p.vars()) {
        names.push_back(name);
        wrt.push_back(var);
      }
      const std::vector<Var> grads = tape.grad(terms.loss, wrt);
      GradientMap model_grads, reg_grads;
      for (std::size_t i = 0; i < names.size(); ++i) {
        if (!grads[i].value().all_finite()) {
          throw DivergenceError("non-finite gradient for " + names[i] + " at step " + std::to_string(step));
        }
        (model.regressor.count(names[i]) ? reg_grads : model_grads).emplace(names[i], grads[i].value());
      }
      // One global norm over both parameter groups.
      GradientMap all = model_grads;
      all.insert(reg_grads.begin(), reg_grads.end());
      const double norm = clip_grad_norm(all, cfg.train.grad_clip);
      (void)norm;
      for (auto& [name, g] : model_grads) g = all.at(name);
      for (auto& [name, g] : reg_grads) g = all.at(name);

      const double lr = scheduled_lr(step, total_steps, cfg.train.learning_rate, cfg.train.warmup_fraction);
      model_opt.step(model.model.params(), model_grads, lr, cfg.train.weight_decay);
      if (!model.regressor.empty()) reg_opt.step(model.regressor, reg_grads, lr, cfg.train.weight_decay);

      loss_sum += loss * static_cast<double>(idx.size());
      correct += count_correct(terms.logits.value(), labels);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (!data.val.empty()) {
      const EvalResult val = evaluate(model, cfg, data.val, 0.0, cfg.seed);
      rec.val_loss = val.loss;
      rec.val_accuracy = val.accuracy;
    }
    out.record.epochs.push_back(rec);
    if (!out_dir.empty()) {
      const fs::path dir = out_dir / "checkpoints" / ("epoch_" + std::to_string(epoch));
      save_checkpoint(dir, model, cfg, epoch);
      out.record.checkpoints.push_back(fs::relative(dir, out_dir).generic_string());
    }
    if (on_epoch) on_epoch(rec);
  }
  return out;
}

EvalResult evaluate(const Trainable& model, const ExperimentConfig& cfg, const Dataset& data, double gamma,
                    std::uint64_t eval_seed) {
  EvalResult out;
  out.count = data.size();
  if (data.empty()) return out;
  const ShuffleSpec spec = spec_with_gamma(cfg, gamma);
  const Rng root(eval_seed, 0xe7a1);
  const AuxConfig no_aux;
  const std::size_t bs = cfg.train.batch_size;
  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0, b = 0; start < all.size(); start += bs, ++b) {
    const std::span<const std::size_t> idx(all.data() + start, std::min(bs, all.size() - start));
    const TokenBatch batch = data.batch(idx, cfg.model);
    const std::vector<std::size_t> labels = data.labels(idx);
    Tape tape;
    const std::vector<const ParamStore*> stores = model.stores();
    const BoundParams p(tape, stores, false);
    Rng aux_rng(0);
    const LossTerms terms = compute_loss(p, cfg.model, batch, labels, &spec, root.split(b), no_aux, aux_rng);
    loss_sum += terms.ce.value().item() * static_cast<double>(idx.size());
    correct += count_correct(terms.logits.value(), labels);
  }
  out.loss = loss_sum / static_cast<double>(data.size());
  out.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  return out;
}

std::vector<SweepPoint> ratio_sweep(const Trainable& model, const ExperimentConfig& cfg, const Dataset& data,
                                    const std::vector<double>& gammas, std::uint64_t eval_seed, std::size_t workers) {
  std::vector<SweepPoint> out(gammas.size());
  parallel_for(gammas.size(), workers, [&](std::size_t i) {
    out[i] = {gammas[i], evaluate(model, cfg, data, gammas[i], eval_seed)};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Attack campaigns

json CampaignResult::to_json() const {
  json cells_json = json::array();
  for (const CampaignCell& c : cells) {
    json cell = {{"sample", c.sample}, {"setting", to_string(c.setting)}, {"gamma", c.gamma}};
    if (c.result) {
      cell["status"] = c.result->status == AttackStatus::completed ? "completed" : "diverged";
      cell["metrics"] = c.result->metrics.to_json();
      cell["final_objective"] = c.result->trace.empty() ? json(nullptr) : json(c.result->trace.back());
    } else {
      cell["status"] = "failed";
      cell["error"] = c.error;
    }
    cells_json.push_back(cell);
  }
  json rows_json = json::array();
  for (const auto& [label, report] : rows) rows_json.push_back({{"row", label}, {"metrics", report.to_json()}});
  return {{"cells", cells_json}, {"rows", rows_json}};
}

CampaignResult attack_campaign(const Trainable& model, const ExperimentConfig& cfg, const Dataset& data,
                               const std::vector<std::size_t>& samples, std::size_t workers) {
  if (!cfg.attack) throw ConfigError("no attack table in the configuration");
  const CampaignConfig& camp = *cfg.attack;
  const ShuffleSpec spec = spec_with_gamma(cfg, camp.gamma);
  const bool want_a = std::count(camp.settings.begin(), camp.settings.end(), AttackSetting::a) > 0;
  const bool want_shuffled = std::any_of(camp.settings.begin(), camp.settings.end(),
                                         [](AttackSetting s) { return s != AttackSetting::a; });

  // One job per (sample, raw|shuffled) inversion.
  struct Job {
    std::size_t sample;
    bool shuffled;
    std::optional<AttackResult> result;
    TokenBatch x, x_tilde;
    std::string error;
  };
  std::vector<Job> jobs;
  for (std::size_t s : samples) {
    if (want_a) jobs.push_back({s, false, std::nullopt, {}, {}, {}});
    if (want_shuffled) jobs.push_back({s, true, std::nullopt, {}, {}, {}});
  }
  const Rng client_root(cfg.seed, 0xc11e);
  parallel_for(jobs.size(), workers, [&](std::size_t j) {
    Job& job = jobs[j];
    try {
      const std::size_t idx[] = {job.sample};
      job.x = data.batch(idx, cfg.model);
      const std::size_t labels[] = {data.items.at(job.sample).label};
      const std::optional<ShuffleSpec> used = job.shuffled ? std::optional<ShuffleSpec>(spec) : std::nullopt;
      const ClientStep step = client_gradients(model, job.x, labels, used, cfg.aux, client_root.split(job.sample));
      AttackConfig acfg = camp.attack;
      acfg.seed = camp.attack.seed + job.sample;
      job.result = invert_gradients(step.snapshot, model.model, labels, acfg);
      job.x_tilde = step.shuffled ? step.shuffled->tokens : job.x;
    } catch (const std::exception& e) {
      job.error = e.what();
    }
  });

  CampaignResult out;
  for (const Job& job : jobs) {
    for (AttackSetting setting : camp.settings) {
      if ((setting != AttackSetting::a) != job.shuffled) continue;
      CampaignCell cell{job.sample, setting, setting == AttackSetting::a ? 0.0 : camp.gamma, std::nullopt, job.error};
      if (job.result) {
        try {
          cell.result = rescore(*job.result, setting, job.x, job.x_tilde, cfg.model);
        } catch (const std::exception& e) {
          cell.error = e.what();
        }
      }
      out.cells.push_back(std::move(cell));
    }
  }
  for (AttackSetting setting : camp.settings) {
    std::vector<MetricReport> reports;
    for (const CampaignCell& c : out.cells) {
      if (c.setting == setting && c.result) reports.push_back(c.result->metrics);
    }
    if (reports.empty()) continue;
    const double gamma = setting == AttackSetting::a ? 0.0 : camp.gamma;
    char label[64];
    std::snprintf(label, sizeof label, "(%s) gamma=%.2f", to_string(setting).c_str(), gamma);
    out.rows.emplace_back(label, average_reports(reports));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Position-embedding export

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::vector<double> project_row(const PcaProjection& p, std::span<const double> row) {
  const std::size_t k = p.components.shape()[0], d = p.components.shape()[1];
  std::vector<double> out(k, 0.0);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t j = 0; j < d; ++j) out[c] += (row[j] - p.mean[j]) * p.components[c * d + j];
  }
  return out;
}

}  // namespace

void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  if (!out) throw IoError("write failed for " + path.string());
}

PeExport export_pe(const Trainable& model, const std::vector<std::size_t>& dims, const fs::path& out_dir,
                   const std::string& label) {
  const ModelConfig& mc = model.config();
  const Tensor& pos = model.model.params().at("pe.pos");
  const Tensor& unk = model.model.params().at("pe.unk");
  const std::size_t d = mc.embed_dim;
  const std::size_t offset = mc.has_cls() ? 1 : 0;
  const Tensor rows = pos.rows(offset, mc.seq_len);
  const std::size_t rank_cap = std::min(mc.seq_len, d);
  std::vector<std::size_t> used_dims;
  for (std::size_t k : dims) {
    if (k >= 1 && k <= rank_cap) used_dims.push_back(k);
  }
  if (used_dims.empty()) throw ConfigError("no PCA dimension fits the position table");
  const std::size_t max_dim = *std::max_element(used_dims.begin(), used_dims.end());
  const std::size_t k = std::min<std::size_t>(std::max<std::size_t>(2, std::min<std::size_t>(max_dim, 3)), rank_cap);

  PeExport out;
  out.projection = pca_fit_project(rows, k);
  out.variance = explained_variance_table({{label, rows}}, used_dims);

  std::ostringstream csv;
  csv << "index";
  for (std::size_t c = 0; c < k; ++c) csv << ",pc" << c + 1;
  csv << '\n';
  std::vector<ScatterPoint> points;
  const bool label_all = mc.seq_len <= 100;
  for (std::size_t i = 0; i < mc.seq_len; ++i) {
    csv << i;
    for (std::size_t c = 0; c < k; ++c) csv << ',' << fmt(out.projection.projected[i * k + c]);
    csv << '\n';
    ScatterPoint pt{out.projection.projected[i * k], k > 1 ? out.projection.projected[i * k + 1] : 0.0,
                    (label_all || i % 3 == 0) ? std::to_string(i) : "", "#1f77b4", 3.0};
    points.push_back(pt);
  }
  const auto extra = [&](const std::string& name, std::span<const double> row, const std::string& color) {
    const std::vector<double> coords = project_row(out.projection, row);
    csv << name;
    for (double v : coords) csv << ',' << fmt(v);
    csv << '\n';
    points.push_back({coords[0], k > 1 ? coords[1] : 0.0, name, color, 5.0});
  };
  if (mc.has_cls()) extra("cls", pos.data().subspan(0, d), "#2ca02c");
  extra("unk", unk.data(), "#d62728");

  std::ostringstream var;
  var << "model,dim,explained_variance_percent\n";
  for (const ExplainedVarianceRow& r : out.variance) var << r.model << ',' << r.dim << ',' << fmt(r.percent) << '\n';

  write_text_file(out_dir / "projection.csv", csv.str());
  write_text_file(out_dir / "variance.csv", var.str());
  write_text_file(out_dir / "scatter.svg", scatter_svg(points, "Position embeddings (" + label + ")", "PC1", "PC2"));
  out.files = {out_dir / "projection.csv", out_dir / "variance.csv", out_dir / "scatter.svg"};
  return out;
}

// ---------------------------------------------------------------------------
// Manifests, reports, threading

void write_manifest(const fs::path& dir, const std::string& command, const ExperimentConfig& cfg,
                    const std::vector<fs::path>& artifacts) {
  json files = json::object();
  for (const fs::path& a : artifacts) files[fs::relative(a, dir).generic_string()] = file_sha256(a);
  const json manifest = {{"command", command},
                         {"config_hash", config_hash(cfg)},
                         {"seed", cfg.seed},
                         {"artifacts", files}};
  write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          const std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (std::thread& t : threads) t.join();
  if (failure) std::rethrow_exception(failure);
}

namespace {

std::optional<json> read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  try {
    return json::parse(in);
  } catch (const json::parse_error&) {
    return std::nullopt;
  }
}

}  // namespace

std::string build_report(const fs::path& dir) {
  std::ostringstream md;
  md << "# Run report\n\n";
  bool any = false;
  if (const auto run = read_json(dir / "run.json")) {
    any = true;
    md << "## Training\n\nconfig hash: `" << run->value("config_hash", "") << "`\n\n";
    md << "| epoch | train loss | train acc | val loss | val acc |\n|---|---|---|---|---|\n";
    for (const json& e : run->at("epochs")) {
      md << "| " << e.at("epoch").get<std::size_t>() << " | " << fmt(e.at("train_loss").get<double>()) << " | "
         << fmt(e.at("train_accuracy").get<double>()) << " | " << fmt(e.at("val_loss").get<double>()) << " | "
         << fmt(e.at("val_accuracy").get<double>()) << " |\n";
    }
    md << '\n';
  }
  if (const auto sweep = read_json(dir / "sweep" / "sweep.json")) {
    any = true;
    md << "## Inference-time shuffle ratio\n\n| gamma | accuracy | loss |\n|---|---|---|\n";
    for (const json& p : sweep->at("points")) {
      md << "| " << fmt(p.at("gamma").get<double>()) << " | " << fmt(p.at("accuracy").get<double>()) << " | "
         << fmt(p.at("loss").get<double>()) << " |\n";
    }
    md << '\n';
  }
  if (const auto attack = read_json(dir / "attack" / "campaign.json")) {
    any = true;
    md << "## Gradient inversion\n\n";
    for (const json& row : attack->at("rows")) {
      md << "- " << row.at("row").get<std::string>() << ":";
      for (const auto& [key, value] : row.at("metrics").items()) {
        if (value.is_number()) md << ' ' << key << '=' << fmt(value.get<double>());
      }
      md << '\n';
    }
    md << '\n';
  }
  if (std::ifstream var(dir / "pe" / "variance.csv"); var) {
    any = true;
    md << "## Explained variance of position embeddings\n\n```\n" << var.rdbuf() << "```\n";
  }
  if (!any) md << "No run artifacts found in " << dir.string() << ".\n";
  return md.str();
}

}  // namespace mjplab
