#include "mjplab/optim.hpp"

#include <cmath>
#include <numbers>

namespace mjplab {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("train.learning_rate must be > 0");
  if (weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
  if (warmup_fraction < 0 || warmup_fraction > 1) throw ConfigError("train.warmup_fraction must be in [0, 1]");
  if (grad_clip < 0) throw ConfigError("train.grad_clip must be >= 0");
}

double scheduled_lr(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction) {
  if (total_steps == 0) return base_lr;
  const auto warmup = static_cast<std::size_t>(std::ceil(warmup_fraction * static_cast<double>(total_steps)));
  if (step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const std::size_t span = total_steps - warmup;
  if (span == 0) return base_lr;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(span);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

double clip_grad_norm(GradientMap& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, g] : grads) {
    for (double v : g.data()) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const double factor = max_norm / (norm + 1e-12);
    for (auto& [name, g] : grads) {
      for (double& v : g.data()) v *= factor;
    }
  }
  return norm;
}

bool uses_weight_decay(const std::string& name) {
  if (name.ends_with(".bias")) return false;
  if (name.find(".ln1.") != std::string::npos || name.find(".ln2.") != std::string::npos) return false;
  if (name.starts_with("norm.")) return false;
  return true;
}

void AdamW::step(ParamStore& params, const GradientMap& grads, double lr, double weight_decay) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, w] : params) {
    const auto git = grads.find(name);
    if (git == grads.end()) throw ConfigError("missing gradient for " + name);
    const Tensor& g = git->second;
    auto [mit, fresh] = m_.try_emplace(name, Tensor(w.shape()));
    Tensor& m = mit->second;
    Tensor& v = v_.try_emplace(name, Tensor(w.shape())).first->second;
    const double decay = uses_weight_decay(name) ? weight_decay : 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = beta1_ * m[i] + (1 - beta1_) * g[i];
      v[i] = beta2_ * v[i] + (1 - beta2_) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1 / (std::sqrt(v[i] / c2) + eps_) + decay * w[i]);
    }
  }
}

}  // namespace mjplab
