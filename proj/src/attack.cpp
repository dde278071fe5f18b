#include "mjplab/attack.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <limits>
#include <numeric>

#include "mjplab/tensor_io.hpp"

namespace mjplab {

std::string to_string(AttackSetting s) {
  switch (s) {
    case AttackSetting::b: return "b";
    case AttackSetting::c: return "c";
    default: return "a";
  }
}

std::string to_string(DistanceKind d) { return d == DistanceKind::l2 ? "l2" : "l2_plus_alpha_l1"; }
std::string to_string(InitKind i) { return i == InitKind::gaussian ? "gaussian" : "uniform"; }

std::string to_string(OptimizerKind o) { return o == OptimizerKind::adam ? "adam" : "lbfgs"; }

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "adam") return OptimizerKind::adam;
  if (s == "lbfgs") return OptimizerKind::lbfgs;
  throw ConfigError("unknown optimizer '" + s + "' (expected adam|lbfgs)");
}

AttackSetting parse_attack_setting(const std::string& s) {
  if (s == "a") return AttackSetting::a;
  if (s == "b") return AttackSetting::b;
  if (s == "c") return AttackSetting::c;
  throw ConfigError("unknown attack setting '" + s + "' (expected a|b|c)");
}

DistanceKind parse_distance(const std::string& s) {
  if (s == "l2") return DistanceKind::l2;
  if (s == "l2_plus_alpha_l1") return DistanceKind::l2_plus_alpha_l1;
  throw ConfigError("unknown distance '" + s + "' (expected l2|l2_plus_alpha_l1)");
}

InitKind parse_init(const std::string& s) {
  if (s == "gaussian") return InitKind::gaussian;
  if (s == "uniform") return InitKind::uniform;
  throw ConfigError("unknown init '" + s + "' (expected gaussian|uniform)");
}

void AttackConfig::validate() const {
  if (iterations < 1) throw ConfigError("attack iterations must be >= 1");
  if (alpha < 0) throw ConfigError("attack alpha must be >= 0");
  if (learning_rate < 0) throw ConfigError("attack learning rate must be >= 0");
  if (restarts < 1 || restarts > iterations) throw ConfigError("attack restarts must be in [1, iterations]");
}

double AttackConfig::effective_lr(Modality m) const {
  if (learning_rate > 0) return learning_rate;
  if (optimizer == OptimizerKind::lbfgs) return 1e-3;
  return m == Modality::vision ? 0.1 : 0.01;
}

ClientStep client_gradients(const Trainable& model, const TokenBatch& input, std::span<const std::size_t> labels,
                            const std::optional<ShuffleSpec>& spec, const AuxConfig& aux, const Rng& rng) {
  Tape tape;
  const std::vector<const ParamStore*> stores = model.stores();
  const BoundParams p(tape, stores, true);
  Rng aux_rng = rng.split(1);
  const LossTerms terms =
      compute_loss(p, model.config(), input, labels, spec ? &*spec : nullptr, rng.split(0), aux, aux_rng);

  std::vector<std::string> names;
  std::vector<Var> wrt;
  for (const auto& [name, var] : p.vars()) {
    names.push_back(name);
    wrt.push_back(var);
  }
  const std::vector<Var> grads = tape.grad(terms.loss, wrt);

  ClientStep step;
  step.input = input;
  step.labels.assign(labels.begin(), labels.end());
  step.spec = spec;
  step.shuffled = terms.shuffled;
  for (std::size_t i = 0; i < names.size(); ++i) step.snapshot.emplace(names[i], grads[i].value());
  return step;
}

Var gradient_distance(std::span<const Var> dummy, std::span<const Tensor> target, DistanceKind kind, double alpha) {
  if (dummy.size() != target.size() || dummy.empty()) throw ShapeError("gradient lists differ in length");
  Tape& tape = dummy[0].tape();
  Var total;
  for (std::size_t i = 0; i < dummy.size(); ++i) {
    const Var diff = sub(dummy[i], tape.constant(target[i]));
    Var term = sum(mul(diff, diff));
    if (kind == DistanceKind::l2_plus_alpha_l1 && alpha > 0) term = add(term, scale(sum(abs(diff)), alpha));
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

namespace {

InversionRun adam_invert(const DummyGradientFn& dummy_gradients, const std::vector<Tensor>& target, Tensor init,
                         const AttackConfig& cfg, double learning_rate) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  InversionRun run;
  Tensor x = std::move(init);
  Tensor m(x.shape()), v(x.shape());
  double best = std::numeric_limits<double>::infinity();
  run.best = x;
  double b1t = 1.0, b2t = 1.0;

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    Tape tape;
    const Var dummy = tape.leaf(x, true);
    const std::vector<Var> grads = dummy_gradients(tape, dummy);
    const Var objective = gradient_distance(grads, target, cfg.distance, cfg.alpha);
    const double value = objective.value().item();
    run.raw_trace.push_back(value);
    if (!std::isfinite(value)) {
      run.status = AttackStatus::diverged;
      break;
    }
    if (value < best) {
      best = value;
      run.best = x;
    }
    run.trace.push_back(best);

    const Var dummy_list[] = {dummy};
    const Tensor g = tape.grad(objective, dummy_list)[0].value();
    if (!g.all_finite()) {
      run.status = AttackStatus::diverged;
      break;
    }
    double lr = learning_rate;
    if (cfg.lr_decay) {
      const double frac = static_cast<double>(it) / static_cast<double>(cfg.iterations);
      if (frac >= 3.0 / 8.0) lr *= 0.1;
      if (frac >= 5.0 / 8.0) lr *= 0.1;
      if (frac >= 7.0 / 8.0) lr *= 0.1;
    }
    b1t *= beta1;
    b2t *= beta2;
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = beta1 * m[i] + (1 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
      const double mhat = m[i] / (1 - b1t);
      const double vhat = v[i] / (1 - b2t);
      x[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  return run;
}

struct Evaluation {
  double value = 0.0;
  Tensor grad;
};

InversionRun lbfgs_invert(const DummyGradientFn& dummy_gradients, const std::vector<Tensor>& target, Tensor init,
                          const AttackConfig& cfg, double first_step) {
  constexpr std::size_t history = 20;
  constexpr double armijo = 1e-4, min_step = 1e-10;
  InversionRun run;
  double best = std::numeric_limits<double>::infinity();
  run.best = init;

  const auto evaluate = [&](const Tensor& x) {
    Tape tape;
    const Var dummy = tape.leaf(x, true);
    const std::vector<Var> grads = dummy_gradients(tape, dummy);
    const Var objective = gradient_distance(grads, target, cfg.distance, cfg.alpha);
    Evaluation e{objective.value().item(), {}};
    run.raw_trace.push_back(e.value);
    if (std::isfinite(e.value)) {
      const Var dummy_list[] = {dummy};
      e.grad = tape.grad(objective, dummy_list)[0].value();
      if (!e.grad.all_finite()) e.value = std::numeric_limits<double>::quiet_NaN();
    }
    if (e.value < best) {
      best = e.value;
      run.best = x;
    }
    run.trace.push_back(best);
    return e;
  };
  const auto dot = [](const Tensor& a, const Tensor& b) {
    return std::inner_product(a.data().begin(), a.data().end(), b.data().begin(), 0.0);
  };

  Tensor x = std::move(init);
  Evaluation cur = evaluate(x);
  if (!std::isfinite(cur.value)) {
    run.status = AttackStatus::diverged;
    return run;
  }
  std::deque<Tensor> s_hist, y_hist;
  while (run.raw_trace.size() < cfg.iterations) {
    // Two-loop recursion; with no curvature pairs yet, a steepest-descent
    // step of length first_step.
    Tensor dir(x.shape());
    if (s_hist.empty()) {
      const double gnorm = std::sqrt(dot(cur.grad, cur.grad));
      if (gnorm == 0.0) break;
      for (std::size_t i = 0; i < x.size(); ++i) dir[i] = -cur.grad[i] * first_step / gnorm;
    } else {
      Tensor q = cur.grad;
      std::vector<double> alpha(s_hist.size());
      for (std::size_t k = s_hist.size(); k-- > 0;) {
        alpha[k] = dot(s_hist[k], q) / dot(y_hist[k], s_hist[k]);
        for (std::size_t i = 0; i < q.size(); ++i) q[i] -= alpha[k] * y_hist[k][i];
      }
      const double gamma = dot(s_hist.back(), y_hist.back()) / dot(y_hist.back(), y_hist.back());
      for (double& v : q.data()) v *= gamma;
      for (std::size_t k = 0; k < s_hist.size(); ++k) {
        const double beta = dot(y_hist[k], q) / dot(y_hist[k], s_hist[k]);
        for (std::size_t i = 0; i < q.size(); ++i) q[i] += s_hist[k][i] * (alpha[k] - beta);
      }
      for (std::size_t i = 0; i < x.size(); ++i) dir[i] = -q[i];
    }
    const double slope = dot(cur.grad, dir);
    if (!(slope < 0)) {
      s_hist.clear();
      y_hist.clear();
      continue;
    }

    double step = 1.0;
    bool accepted = false;
    Tensor trial(x.shape());
    Evaluation next;
    while (run.raw_trace.size() < cfg.iterations && step >= min_step) {
      for (std::size_t i = 0; i < x.size(); ++i) trial[i] = x[i] + step * dir[i];
      next = evaluate(trial);
      if (std::isfinite(next.value) && next.value <= cur.value + armijo * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      if (s_hist.empty()) break;  // not even the gradient direction helps
      s_hist.clear();
      y_hist.clear();
      continue;
    }
    Tensor s_vec(x.shape()), y_vec(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      s_vec[i] = trial[i] - x[i];
      y_vec[i] = next.grad[i] - cur.grad[i];
    }
    if (dot(s_vec, y_vec) > 1e-12 * std::sqrt(dot(s_vec, s_vec) * dot(y_vec, y_vec))) {
      s_hist.push_back(std::move(s_vec));
      y_hist.push_back(std::move(y_vec));
      if (s_hist.size() > history) {
        s_hist.pop_front();
        y_hist.pop_front();
      }
    }
    x = trial;
    cur = std::move(next);
  }
  return run;
}

}  // namespace

InversionRun invert(const DummyGradientFn& dummy_gradients, const std::vector<Tensor>& target, Tensor init,
                    const AttackConfig& cfg, double learning_rate) {
  cfg.validate();
  if (cfg.optimizer == OptimizerKind::adam) return adam_invert(dummy_gradients, target, std::move(init), cfg, learning_rate);
  return lbfgs_invert(dummy_gradients, target, std::move(init), cfg, learning_rate);
}

std::vector<std::string> matched_parameters(const TransformerModel& model) {
  std::vector<std::string> names;
  for (const auto& [name, value] : model.params()) {
    if (name == "embed.token") continue;
    names.push_back(name);
  }
  return names;
}

std::size_t infer_label(const GradientMap& snapshot) {
  const auto it = snapshot.find("head.bias");
  if (it == snapshot.end()) throw ConfigError("snapshot has no head.bias gradient");
  const Tensor& g = it->second;
  std::size_t best = 0;
  for (std::size_t i = 1; i < g.size(); ++i) {
    if (g[i] < g[best]) best = i;
  }
  return best;
}

std::vector<std::size_t> decode_tokens(const Tensor& recovered, const Tensor& table, bool centered) {
  if (table.rank() != 2 || table.shape()[0] == 0) throw ShapeError("embedding table must be a non-empty [V, D]");
  const std::size_t d = table.shape()[1];
  if (recovered.size() % d != 0) {
    throw ShapeError("recovered rows " + shape_str(recovered.shape()) + " do not match table " + shape_str(table.shape()));
  }
  const std::size_t rows = recovered.size() / d, vocab = table.shape()[0];
  const auto prepare = [&](std::span<const double> row) {
    std::vector<double> out(row.begin(), row.end());
    if (centered) {
      const double mean = std::accumulate(out.begin(), out.end(), 0.0) / static_cast<double>(d);
      for (double& v : out) v -= mean;
    }
    return out;
  };
  std::vector<std::vector<double>> cands(vocab);
  std::vector<double> norms(vocab);
  for (std::size_t t = 0; t < vocab; ++t) {
    cands[t] = prepare(table.data().subspan(t * d, d));
    norms[t] = std::sqrt(std::inner_product(cands[t].begin(), cands[t].end(), cands[t].begin(), 0.0));
  }
  std::vector<std::size_t> ids(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::vector<double> row = prepare(recovered.data().subspan(r * d, d));
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < vocab; ++t) {
      const double dot = std::inner_product(row.begin(), row.end(), cands[t].begin(), 0.0);
      const double score = norms[t] > 0 ? dot / norms[t] : 0.0;  // the row norm is common to all candidates
      if (score > best) {
        best = score;
        ids[r] = t;
      }
    }
  }
  return ids;
}

AttackResult invert_gradients(const GradientMap& target, const TransformerModel& model,
                              std::span<const std::size_t> labels, const AttackConfig& cfg) {
  cfg.validate();
  const ModelConfig& mc = model.config();
  std::vector<std::size_t> used_labels(labels.begin(), labels.end());
  if (!cfg.label_known) used_labels = {infer_label(target)};
  if (used_labels.size() != 1) throw ConfigError("attacks run on a single sample");

  const std::vector<std::string> names = matched_parameters(model);
  std::vector<Tensor> target_list;
  for (const std::string& name : names) {
    const auto it = target.find(name);
    if (it == target.end()) throw ConfigError("snapshot lacks gradient for " + name);
    target_list.push_back(it->second);
  }

  Rng rng(cfg.seed, 0xa77ac);
  const auto draw_init = [&] {
    Tensor init;
    if (mc.mode == Modality::text) {
      const Tensor& table = model.params().at("embed.token");
      double sq = 0;
      for (double v : table.data()) sq += v * v;
      const double sd = std::sqrt(sq / static_cast<double>(table.size()));
      init = Tensor({1, mc.seq_len, mc.embed_dim});
      for (double& v : init.data()) {
        v = cfg.init == InitKind::gaussian ? sd * rng.normal() : rng.uniform(-1, 1) * sd * std::sqrt(3.0);
      }
    } else {
      init = Tensor({mc.image_side(), mc.image_side(), mc.channels});
      for (double& v : init.data()) v = cfg.init == InitKind::gaussian ? 0.5 + 0.25 * rng.normal() : rng.uniform();
    }
    return init;
  };

  const DummyGradientFn fn = [&](Tape& tape, const Var& dummy) {
    const BoundParams p(tape, model.params(), true);
    Var projected = dummy;
    if (mc.mode == Modality::vision) {
      projected = reshape(project_patches(p, patchify(dummy, mc.patch_size)), {1, mc.seq_len, mc.embed_dim});
    }
    const Var logits = forward_classify(p, mc, embed_input(p, mc, projected, p["pe.pos"]));
    const Var ce = cross_entropy(logits, used_labels);
    std::vector<Var> wrt;
    for (const std::string& name : names) wrt.push_back(p[name]);
    return tape.grad(ce, wrt, true);
  };

  // With restarts, half the budget goes to short runs from independent
  // initializations and the best of them continues with the rest.
  InversionRun run;
  const auto append = [&run](const InversionRun& part) {
    for (double v : part.raw_trace) {
      run.raw_trace.push_back(v);
      run.trace.push_back(run.trace.empty() ? v : std::min(run.trace.back(), v));
    }
    if (part.status == AttackStatus::diverged) run.status = AttackStatus::diverged;
  };
  const double lr = cfg.effective_lr(mc.mode);
  if (cfg.restarts == 1) {
    run = invert(fn, target_list, draw_init(), cfg, lr);
  } else {
    const std::size_t probe = std::max<std::size_t>(1, cfg.iterations / (2 * cfg.restarts));
    double best = std::numeric_limits<double>::infinity();
    Tensor winner;
    for (std::size_t r = 0; r < cfg.restarts; ++r) {
      AttackConfig part = cfg;
      part.restarts = 1;
      part.iterations = probe;
      InversionRun one = invert(fn, target_list, draw_init(), part, lr);
      const double one_best = one.trace.empty() ? std::numeric_limits<double>::infinity() : one.trace.back();
      if (r == 0 || one_best < best) {
        best = one_best;
        winner = one.best;
      }
      append(one);
    }
    run.best = winner;
    const std::size_t used = run.raw_trace.size();
    if (used < cfg.iterations) {
      AttackConfig rest = cfg;
      rest.restarts = 1;
      rest.iterations = cfg.iterations - used;
      InversionRun tail = invert(fn, target_list, winner, rest, lr);
      if (!tail.trace.empty() && tail.trace.back() < best) run.best = std::move(tail.best);
      append(tail);
    }
  }
  AttackResult result;
  result.setting = cfg.setting;
  result.modality = mc.mode;
  result.trace = std::move(run.trace);
  result.raw_trace = std::move(run.raw_trace);
  result.status = run.status;
  if (mc.mode == Modality::text) {
    result.recovered = run.best.reshaped({mc.seq_len, mc.embed_dim});
    result.decoded = decode_tokens(result.recovered, model.params().at("embed.token"), true);
  } else {
    result.recovered = std::move(run.best);
  }
  return result;
}

AttackResult rescore(const AttackResult& recovered, AttackSetting setting, const TokenBatch& x,
                     const TokenBatch& shuffled, const ModelConfig& cfg) {
  AttackResult out = recovered;
  out.setting = setting;
  const TokenBatch& ref = setting == AttackSetting::b ? shuffled : x;
  if (cfg.mode == Modality::text) {
    out.reference_tokens = ref.ids.at(0);
    out.metrics = text_metrics(out.decoded, out.reference_tokens);
  } else {
    const Tensor tokens = ref.patches.reshaped({cfg.seq_len, cfg.patch_dim()});
    out.reference_image = unpatchify(tokens, cfg.patch_size, cfg.image_side(), cfg.image_side());
    out.metrics = image_metrics(out.recovered, out.reference_image);
  }
  return out;
}

AttackResult run_attack_setting(const Trainable& model, const TokenBatch& x, std::size_t label,
                                const std::optional<ShuffleSpec>& spec, const AuxConfig& aux, const AttackConfig& cfg,
                                const Rng& rng) {
  if (x.batch_size() != 1) throw ConfigError("attacks run on a single sample");
  const bool shuffled = cfg.setting != AttackSetting::a;
  if (shuffled && !spec) throw ConfigError("attack settings b and c need a shuffle spec");
  const std::size_t labels[] = {label};
  const ClientStep step = client_gradients(model, x, labels, shuffled ? spec : std::nullopt, aux, rng);
  const AttackResult raw = invert_gradients(step.snapshot, model.model, labels, cfg);
  return rescore(raw, cfg.setting, x, step.shuffled ? step.shuffled->tokens : x, model.config());
}

nlohmann::json attack_config_to_json(const AttackConfig& cfg) {
  return {{"iterations", cfg.iterations},   {"learning_rate", cfg.learning_rate},
          {"distance", to_string(cfg.distance)}, {"alpha", cfg.alpha},
          {"setting", to_string(cfg.setting)},   {"init", to_string(cfg.init)},
          {"label_known", cfg.label_known},      {"seed", cfg.seed},
          {"lr_decay", cfg.lr_decay},            {"optimizer", to_string(cfg.optimizer)},
          {"restarts", cfg.restarts}};
}

AttackConfig attack_config_from_json(const nlohmann::json& j) {
  AttackConfig cfg;
  cfg.iterations = j.value("iterations", cfg.iterations);
  cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
  cfg.distance = parse_distance(j.value("distance", to_string(cfg.distance)));
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.setting = parse_attack_setting(j.value("setting", to_string(cfg.setting)));
  cfg.init = parse_init(j.value("init", to_string(cfg.init)));
  cfg.label_known = j.value("label_known", cfg.label_known);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.lr_decay = j.value("lr_decay", cfg.lr_decay);
  cfg.optimizer = parse_optimizer(j.value("optimizer", to_string(cfg.optimizer)));
  cfg.restarts = j.value("restarts", cfg.restarts);
  cfg.validate();
  return cfg;
}

std::vector<std::filesystem::path> save_attack_result(const std::filesystem::path& dir, const AttackResult& result,
                                                      const AttackConfig& cfg) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json j;
  j["config"] = attack_config_to_json(cfg);
  j["setting"] = to_string(result.setting);
  j["modality"] = to_string(result.modality);
  j["status"] = result.status == AttackStatus::completed ? "completed" : "diverged";
  j["metrics"] = result.metrics.to_json();
  j["trace"] = result.trace;
  j["raw_trace"] = result.raw_trace;
  if (result.modality == Modality::text) {
    j["decoded"] = result.decoded;
    j["reference"] = result.reference_tokens;
  }

  std::vector<std::filesystem::path> written;
  const auto json_path = dir / "result.json";
  {
    std::ofstream out(json_path, std::ios::binary);
    if (!out) throw IoError("cannot write " + json_path.string());
    out << j.dump(2) << '\n';
  }
  written.push_back(json_path);
  save_tensor(dir / "recovered.tensor", result.recovered);
  written.push_back(dir / "recovered.tensor");
  if (result.modality == Modality::text) {
    const auto txt = dir / "recovered.txt";
    std::ofstream out(txt, std::ios::binary);
    if (!out) throw IoError("cannot write " + txt.string());
    for (std::size_t i = 0; i < result.decoded.size(); ++i) out << (i ? " " : "") << result.decoded[i];
    out << '\n';
    written.push_back(txt);
  }
  return written;
}

}  // namespace mjplab
