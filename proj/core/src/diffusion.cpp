#include "sketchdit/diffusion.hpp"

#include "sketchdit/errors.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <numbers>

namespace sketchdit {

double NoiseSchedule::signal(int t) const {
  check_timestep(t);
  return std::sqrt(alpha_bar[t]);
}

double NoiseSchedule::noise(int t) const {
  check_timestep(t);
  return std::sqrt(1.0 - alpha_bar[t]);
}

void NoiseSchedule::check_timestep(int t) const {
  if (t < 0 || t > train_steps || static_cast<std::size_t>(t) >= alpha_bar.size()) {
    throw RangeError("timestep " + std::to_string(t) + " outside [0, " + std::to_string(train_steps) + "]");
  }
}

std::vector<int> NoiseSchedule::inference_timesteps(int steps) const {
  if (steps < 1 || steps > train_steps) throw RangeError("inference steps must lie in [1, train_steps]");
  std::vector<int> ts;
  ts.reserve(steps + 1);
  for (int k = 0; k < steps; ++k) {
    ts.push_back(static_cast<int>(std::lround(train_steps - static_cast<double>(k) * train_steps / steps)));
  }
  ts.push_back(0);
  return ts;
}

NoiseSchedule make_schedule(int train_steps) {
  if (train_steps < 2) throw RangeError("schedule needs at least two training steps");
  constexpr double s = 0.008;
  auto f = [&](double t) {
    const double c = std::cos((t / train_steps + s) / (1.0 + s) * std::numbers::pi / 2.0);
    return c * c;
  };
  NoiseSchedule sched;
  sched.train_steps = train_steps;
  std::vector<double> root(train_steps + 1);
  double prod = 1.0;
  for (int t = 1; t <= train_steps; ++t) {
    const double beta = std::min(1.0 - f(t) / f(t - 1), 0.999);
    prod *= 1.0 - beta;
    root[t] = std::sqrt(prod);
  }
  // Shift and scale sqrt(alpha_bar) so the last step carries no signal and step 1 is untouched.
  const double first = root[1];
  const double last = root[train_steps];
  sched.alpha_bar.assign(train_steps + 1, 0.0);
  sched.alpha_bar[0] = 1.0;
  for (int t = 1; t <= train_steps; ++t) {
    const double r = (root[t] - last) * first / (first - last);
    sched.alpha_bar[t] = r * r;
  }
  sched.alpha_bar[train_steps] = 0.0;
  return sched;
}

void to_json(nlohmann::json& j, const NoiseSchedule& s) {
  j = nlohmann::json{{"kind", "cosine_zero_snr"}, {"train_steps", s.train_steps}};
}

void from_json(const nlohmann::json& j, NoiseSchedule& s) {
  if (j.value("kind", std::string("cosine_zero_snr")) != "cosine_zero_snr") throw DataError("unknown schedule kind");
  s = make_schedule(j.at("train_steps").get<int>());
}

VelocityPreconditioning velocity_preconditioning(const NoiseSchedule& s, int t, double sigma_data) {
  s.check_timestep(t);
  const double a = s.signal(t), sigma = s.noise(t), sd2 = sigma_data * sigma_data;
  const double denom = a * a * sd2 + sigma * sigma;
  const double c_skip = a * sd2 / denom;
  const double c_out = sigma * sigma_data / std::sqrt(denom);
  return {(a - c_skip) / sigma, c_out / sigma, (1.0 - a * c_skip) / sigma};
}

Mat to_model_space(const Mat& latent) { return (2.0 * latent.array() - 1.0).matrix(); }

Mat from_model_space(const Mat& z) { return ((z.array() + 1.0) * 0.5).matrix(); }

namespace {

void check_same(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw ShapeError("diffusion operands differ in shape");
}

}  // namespace

Mat noise_latent(const NoiseSchedule& s, const Mat& x0, const Mat& eps, int t) {
  check_same(x0, eps);
  return s.signal(t) * x0 + s.noise(t) * eps;
}

Mat v_target(const NoiseSchedule& s, const Mat& x0, const Mat& eps, int t) {
  check_same(x0, eps);
  return s.signal(t) * eps - s.noise(t) * x0;
}

Mat predict_x0(const NoiseSchedule& s, const Mat& z, const Mat& v, int t) {
  check_same(z, v);
  return s.signal(t) * z - s.noise(t) * v;
}

Mat predict_eps(const NoiseSchedule& s, const Mat& z, const Mat& v, int t) {
  check_same(z, v);
  return s.noise(t) * z + s.signal(t) * v;
}

Mat ddim_step(const NoiseSchedule& s, const Mat& z, const Mat& v, int t, int t_prev) {
  const Mat x0 = predict_x0(s, z, v, t);
  const Mat eps = predict_eps(s, z, v, t);
  return s.signal(t_prev) * x0 + s.noise(t_prev) * eps;
}

Mat ddim_step_inverse(const NoiseSchedule& s, const Mat& z_prev, const Mat& v, int t, int t_prev) {
  check_same(z_prev, v);
  // ddim_step is a rotation by the angle between (a, b) and (a', b').
  const double a = s.signal(t);
  const double b = s.noise(t);
  const double ap = s.signal(t_prev);
  const double bp = s.noise(t_prev);
  const double cos_d = a * ap + b * bp;
  const double sin_d = a * bp - b * ap;
  if (std::abs(cos_d) < 1e-12) throw RangeError("DDIM step too large to invert");
  return (z_prev - sin_d * v) / cos_d;
}

Mat cfg_combine(const Mat& v_uncond, const Mat& v_cond, double scale) {
  check_same(v_uncond, v_cond);
  return v_uncond + scale * (v_cond - v_uncond);
}

Mat gaussian(int rows, int cols, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

Mat guided_velocity(const VelocityFn& model, const Mat& z, int t, double cfg_scale) {
  if (cfg_scale < 1.0) throw RangeError("guidance scale must be at least 1");
  Mat v_cond = model(z, t, true);
  if (cfg_scale == 1.0) return v_cond;
  return cfg_combine(model(z, t, false), v_cond, cfg_scale);
}

Mat ddim_sample(const NoiseSchedule& s, const VelocityFn& model, Mat z_T, const SamplerConfig& cfg) {
  const auto ts = s.inference_timesteps(cfg.steps);
  Mat z = std::move(z_T);
  for (int k = 0; k < cfg.steps; ++k) {
    z = ddim_step(s, z, guided_velocity(model, z, ts[k], cfg.cfg_scale), ts[k], ts[k + 1]);
  }
  return z;
}

const Mat& InversionTrajectory::at_inference_index(int k) const {
  if (k < 0 || k > steps()) throw RangeError("inversion trajectory index out of range");
  return latents[steps() - k];
}

namespace {

// Anderson mixing over the last `depth` iterates; falls back to the plain
// update when the least-squares system is degenerate.
Mat anderson_fixed_point(const std::function<Mat(const Mat&)>& g, Mat x, const InversionConfig& cfg) {
  const Eigen::Index n = x.size();
  const int depth = std::max(cfg.anderson_depth, 0);
  std::deque<Eigen::VectorXd> xs, fs;
  for (int it = 0; it < cfg.refine_iterations; ++it) {
    const Mat gx = g(x);
    Eigen::VectorXd f = Eigen::Map<const Eigen::VectorXd>(gx.data(), n) - Eigen::Map<const Eigen::VectorXd>(x.data(), n);
    if (f.cwiseAbs().maxCoeff() < cfg.refine_tolerance) return gx;
    Eigen::VectorXd next = Eigen::Map<const Eigen::VectorXd>(gx.data(), n);
    xs.push_back(Eigen::Map<const Eigen::VectorXd>(x.data(), n));
    fs.push_back(f);
    if (static_cast<int>(xs.size()) > depth + 1) {
      xs.pop_front();
      fs.pop_front();
    }
    const int m = static_cast<int>(xs.size()) - 1;
    if (m > 0) {
      Eigen::MatrixXd dF(n, m), dG(n, m);
      for (int j = 0; j < m; ++j) {
        dF.col(j) = fs[j + 1] - fs[j];
        dG.col(j) = (xs[j + 1] + fs[j + 1]) - (xs[j] + fs[j]);
      }
      const Eigen::VectorXd gamma = dF.colPivHouseholderQr().solve(f);
      if (gamma.allFinite()) next -= dG * gamma;
    }
    x = Eigen::Map<const Mat>(next.data(), x.rows(), x.cols());
  }
  return g(x);
}

}  // namespace

InversionTrajectory ddim_invert(const NoiseSchedule& s, const VelocityFn& model, const Mat& x0,
                                const InversionConfig& cfg) {
  InversionTrajectory inv;
  inv.timesteps = s.inference_timesteps(cfg.steps);
  inv.latents.reserve(cfg.steps + 1);
  inv.latents.push_back(x0);
  Mat z = x0;
  for (int k = cfg.steps - 1; k >= 0; --k) {
    const int t = inv.timesteps[k];
    const int t_prev = inv.timesteps[k + 1];
    // Solve ddim_step(z_t, v(z_t, t)) = z for z_t by fixed-point iteration,
    // seeded with the usual explicit approximation v(z, t).
    const auto g = [&](const Mat& x) { return ddim_step_inverse(s, z, model(x, t, true), t, t_prev); };
    Mat guess = g(z);
    if (cfg.refine_iterations > 0) guess = anderson_fixed_point(g, std::move(guess), cfg);
    z = std::move(guess);
    inv.latents.push_back(z);
  }
  return inv;
}

void FusionPolicy::validate(int total_steps) const {
  for (int k : steps) {
    const int idx = one_based ? k - 1 : k;
    if (idx < 0 || idx >= total_steps) {
      throw RangeError("fusion step " + std::to_string(k) + " outside a " + std::to_string(total_steps) +
                       "-step schedule");
    }
  }
}

void to_json(nlohmann::json& j, const FusionPolicy& p) {
  j = nlohmann::json{{"steps", p.steps}, {"one_based", p.one_based}, {"before_update", p.before_update}};
}

void from_json(const nlohmann::json& j, FusionPolicy& p) {
  p.steps = j.at("steps").get<std::vector<int>>();
  p.one_based = j.value("one_based", false);
  p.before_update = j.value("before_update", false);
}

void fuse_latents(Mat& z, const Mat& z_inv, const ColVec& mask) {
  check_same(z, z_inv);
  if (mask.size() != z.rows()) throw ShapeError("latent mask does not match the latent tokens");
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    if (mask(r) == 1.0) continue;
    if (mask(r) == 0.0) {
      z.row(r) = z_inv.row(r);
    } else {
      z.row(r) = mask(r) * z.row(r) + (1.0 - mask(r)) * z_inv.row(r);
    }
  }
}

Mat latent_fusion_sample(const NoiseSchedule& s, const VelocityFn& model, const InversionTrajectory& inv,
                         const ColVec& mask, const SamplerConfig& cfg, const FusionPolicy& policy,
                         const FusionObserver& observer) {
  if (inv.latents.empty()) throw DataError("latent fusion needs an inversion trajectory");
  if (inv.steps() != cfg.steps) throw RangeError("inversion trajectory length does not match the sampler steps");
  policy.validate(cfg.steps);
  const auto ts = s.inference_timesteps(cfg.steps);
  std::vector<bool> fuse_at(cfg.steps, false);
  for (int k : policy.steps) fuse_at[policy.one_based ? k - 1 : k] = true;

  Mat z = inv.at_inference_index(0);
  for (int k = 0; k < cfg.steps; ++k) {
    if (fuse_at[k] && policy.before_update) {
      fuse_latents(z, inv.at_inference_index(k), mask);
      if (observer.on_fused) observer.on_fused(k, z);
    }
    z = ddim_step(s, z, guided_velocity(model, z, ts[k], cfg.cfg_scale), ts[k], ts[k + 1]);
    if (fuse_at[k] && !policy.before_update) {
      fuse_latents(z, inv.at_inference_index(k + 1), mask);
      if (observer.on_fused) observer.on_fused(k, z);
    }
  }
  return z;
}

}  // namespace sketchdit
