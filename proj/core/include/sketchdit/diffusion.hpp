#pragma once

#include "sketchdit/autograd.hpp"
#include "sketchdit/types.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <random>
#include <vector>

namespace sketchdit {

/// Cosine schedule rescaled to zero terminal SNR. alpha_bar[0] = 1, alpha_bar[T] = 0.
struct NoiseSchedule {
  int train_steps = 1000;
  std::vector<double> alpha_bar;  // size train_steps + 1

  [[nodiscard]] double signal(int t) const;  // sqrt(alpha_bar_t)
  [[nodiscard]] double noise(int t) const;   // sqrt(1 - alpha_bar_t)
  void check_timestep(int t) const;

  /// Trailing spacing: T, T - T/n, ..., T/n, then 0. Always n + 1 entries.
  [[nodiscard]] std::vector<int> inference_timesteps(int steps) const;
};

[[nodiscard]] NoiseSchedule make_schedule(int train_steps = 1000);

/// Output skip of the denoiser around a data centre m. The network output F is read as
///   x0 = m + c_skip (z - a m) - c_out F,
///   c_skip = a s^2 / (a^2 s^2 + sigma^2),  c_out = sigma s / sqrt(a^2 s^2 + sigma^2)
/// so that v = z_coeff * z + out_coeff * F - mean_coeff * m. With s = 1 and m = 0 this is v = F.
struct VelocityPreconditioning {
  double z_coeff = 0;
  double out_coeff = 1;
  double mean_coeff = 0;
};

[[nodiscard]] VelocityPreconditioning velocity_preconditioning(const NoiseSchedule& s, int t, double sigma_data);

void to_json(nlohmann::json& j, const NoiseSchedule& s);
void from_json(const nlohmann::json& j, NoiseSchedule& s);

/// Latent codes live in [0,1]; the diffusion process runs on 2x - 1.
[[nodiscard]] Mat to_model_space(const Mat& latent);
[[nodiscard]] Mat from_model_space(const Mat& z);

[[nodiscard]] Mat noise_latent(const NoiseSchedule& s, const Mat& x0, const Mat& eps, int t);
[[nodiscard]] Mat v_target(const NoiseSchedule& s, const Mat& x0, const Mat& eps, int t);
[[nodiscard]] Mat predict_x0(const NoiseSchedule& s, const Mat& z, const Mat& v, int t);
[[nodiscard]] Mat predict_eps(const NoiseSchedule& s, const Mat& z, const Mat& v, int t);

/// Deterministic DDIM update from t to t_prev under a v prediction.
[[nodiscard]] Mat ddim_step(const NoiseSchedule& s, const Mat& z, const Mat& v, int t, int t_prev);
/// Exact inverse of ddim_step for the same v: recovers z_t from z_{t_prev}.
[[nodiscard]] Mat ddim_step_inverse(const NoiseSchedule& s, const Mat& z_prev, const Mat& v, int t, int t_prev);

[[nodiscard]] Mat cfg_combine(const Mat& v_uncond, const Mat& v_cond, double scale);

[[nodiscard]] Mat gaussian(int rows, int cols, std::mt19937_64& rng);

/// Velocity source for the samplers. `conditional` = false asks for the
/// guidance branch (empty prompt, no sketches).
using VelocityFn = std::function<Mat(const Mat& z, int t, bool conditional)>;

struct SamplerConfig {
  int steps = 50;
  double cfg_scale = 10.0;
};

/// Guided velocity; the unconditional branch is skipped at scale 1.
[[nodiscard]] Mat guided_velocity(const VelocityFn& model, const Mat& z, int t, double cfg_scale);

/// DDIM sampling from z_T; returns the final model-space latent.
[[nodiscard]] Mat ddim_sample(const NoiseSchedule& s, const VelocityFn& model, Mat z_T, const SamplerConfig& cfg);

struct InversionTrajectory {
  std::vector<int> timesteps;  // inference list, timesteps[0] = T
  std::vector<Mat> latents;    // latents[j] after j inversion steps; latents[0] = clean source

  [[nodiscard]] int steps() const { return static_cast<int>(latents.size()) - 1; }
  /// Latent matching inference-list entry k (timestep timesteps[k]).
  [[nodiscard]] const Mat& at_inference_index(int k) const;
};

struct InversionConfig {
  int steps = 50;
  // Fixed-point refinement of each implicit inversion step, Anderson-accelerated.
  int refine_iterations = 40;
  double refine_tolerance = 1e-12;
  int anderson_depth = 5;  // 0 gives plain fixed-point iteration
};

/// Deterministic DDIM inversion at guidance scale 1.
[[nodiscard]] InversionTrajectory ddim_invert(const NoiseSchedule& s, const VelocityFn& model, const Mat& x0,
                                             const InversionConfig& cfg = {});

struct FusionPolicy {
  std::vector<int> steps{25, 49};
  bool one_based = false;      // interpret `steps` as 1..n
  bool before_update = false;  // replace before the step's update instead of after

  void validate(int total_steps) const;
};

void to_json(nlohmann::json& j, const FusionPolicy& p);
void from_json(const nlohmann::json& j, FusionPolicy& p);

/// z <- M * z + (1 - M) * z_inv, one mask weight per token row.
void fuse_latents(Mat& z, const Mat& z_inv, const ColVec& mask);

struct FusionObserver {
  // Called right after every replacement with the sampling step index and the fused latent.
  std::function<void(int step, const Mat& z)> on_fused;
};

/// Guided sampling that pulls unedited cells back onto the inversion trajectory
/// at the policy's steps. Sampling starts from the inverted noise.
[[nodiscard]] Mat latent_fusion_sample(const NoiseSchedule& s, const VelocityFn& model, const InversionTrajectory& inv,
                                       const ColVec& mask, const SamplerConfig& cfg, const FusionPolicy& policy,
                                       const FusionObserver& observer = {});

}  // namespace sketchdit
