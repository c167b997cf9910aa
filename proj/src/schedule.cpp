#include "caldm/schedule.hpp"

#include "caldm/errors.hpp"
#include "caldm/rng.hpp"

#include <cmath>

namespace caldm {

NoiseSchedule::NoiseSchedule(int64_t steps, double beta_start, double beta_end, ScheduleKind kind) {
  CALDM_CHECK(steps >= 1, ValidationError, "schedule needs T >= 1");
  CALDM_CHECK(beta_start > 0 && beta_start <= beta_end && beta_end < 1, ValidationError,
              "schedule betas must satisfy 0 < beta_start <= beta_end < 1");
  beta_.resize(static_cast<size_t>(steps));
  for (int64_t i = 0; i < steps; ++i) {
    const double frac = steps > 1 ? static_cast<double>(i) / static_cast<double>(steps - 1) : 0.0;
    if (kind == ScheduleKind::kLinear) {
      beta_[i] = beta_start + (beta_end - beta_start) * frac;
    } else {
      const double s = std::sqrt(beta_start) + (std::sqrt(beta_end) - std::sqrt(beta_start)) * frac;
      beta_[i] = s * s;
    }
  }
  alpha_.resize(beta_.size());
  alpha_bar_.resize(beta_.size());
  double running = 1.0;
  for (size_t i = 0; i < beta_.size(); ++i) {
    alpha_[i] = 1.0 - beta_[i];
    running *= alpha_[i];
    alpha_bar_[i] = running;
  }
}

size_t NoiseSchedule::index(int64_t t) const {
  CALDM_CHECK(t >= 1 && t <= steps(), ValidationError,
              "timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  return static_cast<size_t>(t - 1);
}

double NoiseSchedule::posterior_variance(int64_t t) const {
  const double prev = t > 1 ? alpha_bar(t - 1) : 1.0;
  return beta(t) * (1.0 - prev) / (1.0 - alpha_bar(t));
}

std::pair<torch::Tensor, torch::Tensor> NoiseSchedule::coefficients(const torch::Tensor& t,
                                                                    const torch::Tensor& like) const {
  auto ts = t.to(torch::kInt64).contiguous();
  CALDM_CHECK(ts.dim() == 1 && ts.size(0) == like.size(0), ValidationError,
              "timestep tensor must hold one entry per batch element");
  std::vector<double> a(static_cast<size_t>(ts.size(0))), b(a.size());
  const auto* ptr = ts.data_ptr<int64_t>();
  for (size_t i = 0; i < a.size(); ++i) {
    const double ab = alpha_bar(ptr[i]);
    a[i] = std::sqrt(ab);
    b[i] = std::sqrt(1.0 - ab);
  }
  std::vector<int64_t> view(static_cast<size_t>(like.dim()), 1);
  view[0] = ts.size(0);
  const auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto ta = torch::tensor(a, opts).to(like.scalar_type()).view(view);
  auto tb = torch::tensor(b, opts).to(like.scalar_type()).view(view);
  return {ta, tb};
}

torch::Tensor q_sample(const torch::Tensor& x0, const torch::Tensor& t, const torch::Tensor& eps,
                       const NoiseSchedule& schedule) {
  CALDM_CHECK(x0.sizes() == eps.sizes(), ValidationError, "q_sample: eps must match x0 in shape");
  auto [a, b] = schedule.coefficients(t, x0);
  return a * x0 + b * eps;
}

torch::Tensor q_sample(const torch::Tensor& x0, int64_t t, const torch::Tensor& eps, const NoiseSchedule& schedule) {
  return q_sample(x0, torch::full({x0.size(0)}, t, torch::kInt64), eps, schedule);
}

std::vector<int64_t> ddim_timesteps(int64_t steps, int64_t num_steps) {
  CALDM_CHECK(num_steps >= 1 && num_steps <= steps, ValidationError,
              "DDIM step count " + std::to_string(num_steps) + " must lie in [1, T=" + std::to_string(steps) + "]");
  std::vector<int64_t> tau;
  tau.reserve(static_cast<size_t>(num_steps));
  for (int64_t i = 1; i <= num_steps; ++i) tau.push_back(i * steps / num_steps);
  return tau;
}

torch::Tensor diffusion_loss(const EpsModel& model, const torch::Tensor& x0, const NoiseSchedule& schedule,
                             torch::Generator& gen) {
  const auto batch = x0.size(0);
  auto t = torch::randint(1, schedule.steps() + 1, {batch}, gen, torch::kInt64);
  auto eps = torch::randn(x0.sizes(), gen, x0.options());
  auto x_t = q_sample(x0, t, eps, schedule);
  auto loss = torch::mse_loss(model(x_t, t.to(torch::kFloat32)), eps);
  if (!std::isfinite(loss.item<double>())) throw ComputeError("diffusion loss is not finite");
  return loss;
}

torch::Tensor ddpm_sample(const EpsModel& model, const std::vector<int64_t>& shape, const NoiseSchedule& schedule,
                          uint64_t seed) {
  torch::NoGradGuard no_grad;
  auto gen = make_generator(seed);
  auto x = torch::randn(shape, gen);
  const auto batch = x.size(0);
  for (int64_t t = schedule.steps(); t >= 1; --t) {
    auto eps = model(x, torch::full({batch}, static_cast<float>(t)));
    const double coef = schedule.beta(t) / std::sqrt(1.0 - schedule.alpha_bar(t));
    x = (x - coef * eps) / std::sqrt(schedule.alpha(t));
    if (t > 1) x = x + std::sqrt(schedule.posterior_variance(t)) * torch::randn(shape, gen);
  }
  return x;
}

torch::Tensor ddim_sample_from(const EpsModel& model, torch::Tensor x, const NoiseSchedule& schedule,
                               int64_t num_steps) {
  torch::NoGradGuard no_grad;
  const auto tau = ddim_timesteps(schedule.steps(), num_steps);
  const auto batch = x.size(0);
  for (size_t i = tau.size(); i-- > 0;) {
    const int64_t t = tau[i];
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = i > 0 ? schedule.alpha_bar(tau[i - 1]) : 1.0;
    auto eps = model(x, torch::full({batch}, static_cast<float>(t)));
    auto x0 = (x - std::sqrt(1.0 - ab) * eps) / std::sqrt(ab);
    x = std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps;
  }
  return x;
}

torch::Tensor ddim_sample(const EpsModel& model, const std::vector<int64_t>& shape, const NoiseSchedule& schedule,
                          int64_t num_steps, uint64_t seed) {
  auto gen = make_generator(seed);
  return ddim_sample_from(model, torch::randn(shape, gen), schedule, num_steps);
}

}  // namespace caldm
