#pragma once

#include <cstddef>
#include <map>
#include <string>

#include "mjplab/transformer.hpp"

namespace mjplab {

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  double weight_decay = 0.05;
  double warmup_fraction = 0.1;
  double grad_clip = 1.0;  // 0 disables clipping

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Linear warmup from 0 over the first warmup_fraction of the steps, then
/// cosine decay to 0. `step` counts from 0.
double scheduled_lr(std::size_t step, std::size_t total_steps, double base_lr, double warmup_fraction);

/// Scales every gradient so the global l2 norm is at most max_norm. Returns
/// the norm before clipping.
double clip_grad_norm(GradientMap& grads, double max_norm);

/// Biases and layernorm parameters are excluded from weight decay.
bool uses_weight_decay(const std::string& name);

/// Decoupled-weight-decay Adam.
class AdamW {
 public:
  AdamW(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  void step(ParamStore& params, const GradientMap& grads, double lr, double weight_decay);
  std::size_t steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::map<std::string, Tensor> m_, v_;
};

}  // namespace mjplab
