#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <vector>

namespace caldm {

enum class ScheduleKind {
  kLinear,        // beta linear in t
  kScaledLinear,  // sqrt(beta) linear in t
};

// Diffusion coefficients for t = 1..T (1-based), kept in double precision.
class NoiseSchedule {
 public:
  NoiseSchedule(int64_t steps, double beta_start, double beta_end, ScheduleKind kind = ScheduleKind::kLinear);

  int64_t steps() const { return static_cast<int64_t>(beta_.size()); }
  double beta(int64_t t) const { return beta_.at(index(t)); }
  double alpha(int64_t t) const { return alpha_.at(index(t)); }
  double alpha_bar(int64_t t) const { return alpha_bar_.at(index(t)); }
  // Per-step posterior variance of q(x_{t-1} | x_t, x_0).
  double posterior_variance(int64_t t) const;

  // sqrt(alpha_bar[t]) and sqrt(1 - alpha_bar[t]) gathered for a (B,) int64
  // timestep tensor, shaped (B,1,...,1) to broadcast against `like`.
  std::pair<torch::Tensor, torch::Tensor> coefficients(const torch::Tensor& t, const torch::Tensor& like) const;

 private:
  size_t index(int64_t t) const;
  std::vector<double> beta_, alpha_, alpha_bar_;
};

inline NoiseSchedule make_schedule(int64_t steps, double beta_start = 1e-4, double beta_end = 0.02,
                                   ScheduleKind kind = ScheduleKind::kLinear) {
  return NoiseSchedule(steps, beta_start, beta_end, kind);
}

// x_t = sqrt(alpha_bar[t]) x0 + sqrt(1 - alpha_bar[t]) eps, with t per batch element.
torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& schedule);
torch::Tensor q_sample(const torch::Tensor& x0, int64_t t, const torch::Tensor& eps, const NoiseSchedule& schedule);

// Noise predictor: (x_t, t as float (B,)) -> eps estimate, same shape as x_t.
using EpsModel = std::function<torch::Tensor(const torch::Tensor&, const torch::Tensor&)>;

// Evenly strided timestep subset tau_1 < ... < tau_S = T with tau_i = floor(i T / S).
std::vector<int64_t> ddim_timesteps(int64_t steps, int64_t num_steps);

// Epsilon-prediction MSE at uniformly drawn t in [1,T]. The returned loss
// keeps the autograd graph of `model`. Throws ComputeError on a NaN loss.
torch::Tensor diffusion_loss(const EpsModel& model, const torch::Tensor& x0, const NoiseSchedule& schedule,
                             torch::Generator& gen);

// Ancestral sampling over all T steps, starting from N(0, I) drawn with `seed`.
torch::Tensor ddpm_sample(const EpsModel& model, const std::vector<int64_t>& shape, const NoiseSchedule& schedule,
                          uint64_t seed);

// Deterministic (eta = 0) DDIM trajectory over ddim_timesteps(T, num_steps).
torch::Tensor ddim_sample(const EpsModel& model, const std::vector<int64_t>& shape, const NoiseSchedule& schedule,
                          int64_t num_steps, uint64_t seed);
// Same trajectory from caller-supplied initial noise x_T.
torch::Tensor ddim_sample_from(const EpsModel& model, torch::Tensor x_T, const NoiseSchedule& schedule,
                               int64_t num_steps);

}  // namespace caldm
