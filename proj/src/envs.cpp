#include "mirrorlab/envs.hpp"

#include <cmath>
#include <stdexcept>

namespace mirrorlab {

namespace {

// cart-pole constants (classic control formulation, Euler integration)
constexpr double kGravity = 9.8;
constexpr double kMassCart = 1.0;
constexpr double kMassPole = 0.1;
constexpr double kTotalMass = kMassCart + kMassPole;
constexpr double kPoleHalfLength = 0.5;
constexpr double kPoleMassLength = kMassPole * kPoleHalfLength;
constexpr double kForceMag = 10.0;
constexpr double kCartTau = 0.02;
constexpr double kXThreshold = 2.4;
constexpr double kThetaThreshold = 12.0 * 2.0 * M_PI / 360.0;

// pendulum constants (swing-up task, torque-limited)
constexpr double kPendGravity = 10.0;
constexpr double kPendMass = 1.0;
constexpr double kPendLength = 1.0;
constexpr double kPendDt = 0.05;
constexpr double kMaxTorque = 2.0;
constexpr double kMaxSpeed = 8.0;

// map angle to [-pi, pi)
double angle_normalize(double x) {
  double m = std::fmod(x + M_PI, 2.0 * M_PI);
  if (m < 0.0) m += 2.0 * M_PI;
  return m - M_PI;
}

}  // namespace

void EnvSpec::validate() const {
  if (horizon < 1) throw std::invalid_argument("EnvSpec: horizon must be >= 1");
  if (!(gamma > 0.0 && gamma < 1.0))
    throw std::invalid_argument("EnvSpec: gamma must be in (0,1)");
}

EnvSpec default_env_spec(EnvId id) {
  EnvSpec s;
  s.id = id;
  s.horizon = (id == EnvId::kCartpole) ? 500 : 200;
  s.gamma = 0.99;
  return s;
}

EnvId env_id_from_string(const std::string& name) {
  if (name == "cartpole") return EnvId::kCartpole;
  if (name == "pendulum") return EnvId::kPendulum;
  throw std::invalid_argument("unknown environment: " + name);
}

std::string env_id_to_string(EnvId id) {
  return id == EnvId::kCartpole ? "cartpole" : "pendulum";
}

int env_obs_dim(EnvId id) { return id == EnvId::kCartpole ? 4 : 3; }

int env_action_dim(EnvId id) { return id == EnvId::kCartpole ? 2 : 1; }

bool env_is_discrete(EnvId id) { return id == EnvId::kCartpole; }

double env_obs_bound(EnvId id) { return id == EnvId::kCartpole ? 15.0 : 8.0; }

VecEnv::VecEnv(const EnvSpec& spec, int n_envs, std::uint64_t seed)
    : spec_(spec), n_(n_envs) {
  spec_.validate();
  if (n_envs < 1) throw std::invalid_argument("VecEnv: n_envs must be >= 1");
  state_dim_ = spec_.id == EnvId::kCartpole ? 4 : 2;
  state_.assign(static_cast<std::size_t>(n_) * state_dim_, 0.0);
  t_.assign(n_, 0);
  rng_.reserve(n_);
  for (int i = 0; i < n_; ++i)
    rng_.emplace_back(derive_seed(seed, kStreamEnv, static_cast<std::uint64_t>(i)));
}

void VecEnv::reset_instance(int i) {
  double* s = state_.data() + static_cast<std::size_t>(i) * state_dim_;
  if (spec_.id == EnvId::kCartpole) {
    for (int k = 0; k < 4; ++k) s[k] = rng_[i].uniform(-0.05, 0.05);
  } else {
    s[0] = rng_[i].uniform(-M_PI, M_PI);  // theta
    s[1] = rng_[i].uniform(-1.0, 1.0);    // theta_dot
  }
  t_[i] = 0;
}

void VecEnv::observe(int i, double* row) const {
  const double* s = state_.data() + static_cast<std::size_t>(i) * state_dim_;
  if (spec_.id == EnvId::kCartpole) {
    for (int k = 0; k < 4; ++k) row[k] = s[k];
  } else {
    row[0] = std::cos(s[0]);
    row[1] = std::sin(s[0]);
    row[2] = s[1];
  }
}

void VecEnv::reset(double* obs) {
  for (int i = 0; i < n_; ++i) {
    reset_instance(i);
    observe(i, obs + static_cast<std::size_t>(i) * obs_dim());
  }
  initialized_ = true;
}

void VecEnv::current_obs(double* obs) const {
  if (!initialized_)
    throw std::logic_error("VecEnv::current_obs: reset has not been called");
  for (int i = 0; i < n_; ++i)
    observe(i, obs + static_cast<std::size_t>(i) * obs_dim());
}

void VecEnv::step(const double* actions, double* obs, double* rewards,
                  std::uint8_t* dones) {
  const bool discrete = env_is_discrete(spec_.id);
  const int adim = discrete ? 1 : env_action_dim(spec_.id);
  for (int i = 0; i < n_; ++i) {
    const double* ai = actions + static_cast<std::size_t>(i) * adim;
    for (int k = 0; k < adim; ++k)
      if (!std::isfinite(ai[k]))
        throw std::runtime_error("VecEnv::step: non-finite action");

    double* s = state_.data() + static_cast<std::size_t>(i) * state_dim_;
    double reward;
    bool done;
    if (spec_.id == EnvId::kCartpole) {
      const double force = (ai[0] > 0.5) ? kForceMag : -kForceMag;
      const double x = s[0], x_dot = s[1], theta = s[2], theta_dot = s[3];
      const double cos_t = std::cos(theta), sin_t = std::sin(theta);
      const double temp =
          (force + kPoleMassLength * theta_dot * theta_dot * sin_t) / kTotalMass;
      const double theta_acc =
          (kGravity * sin_t - cos_t * temp) /
          (kPoleHalfLength *
           (4.0 / 3.0 - kMassPole * cos_t * cos_t / kTotalMass));
      const double x_acc = temp - kPoleMassLength * theta_acc * cos_t / kTotalMass;
      s[0] = x + kCartTau * x_dot;
      s[1] = x_dot + kCartTau * x_acc;
      s[2] = theta + kCartTau * theta_dot;
      s[3] = theta_dot + kCartTau * theta_acc;
      t_[i] += 1;
      const bool fell = std::abs(s[0]) > kXThreshold ||
                        std::abs(s[2]) > kThetaThreshold;
      done = fell || t_[i] >= spec_.horizon;
      reward = 1.0;
    } else {
      double u = ai[0];
      u = std::min(std::max(u, -kMaxTorque), kMaxTorque);
      const double theta = s[0], theta_dot = s[1];
      const double th_n = angle_normalize(theta);
      reward = -(th_n * th_n + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
      double new_dot =
          theta_dot +
          (3.0 * kPendGravity / (2.0 * kPendLength) * std::sin(theta) +
           3.0 / (kPendMass * kPendLength * kPendLength) * u) *
              kPendDt;
      new_dot = std::min(std::max(new_dot, -kMaxSpeed), kMaxSpeed);
      s[0] = theta + new_dot * kPendDt;
      s[1] = new_dot;
      t_[i] += 1;
      done = t_[i] >= spec_.horizon;
    }
    rewards[i] = reward;
    dones[i] = done ? 1 : 0;
    if (done) reset_instance(i);
    observe(i, obs + static_cast<std::size_t>(i) * obs_dim());
  }
}

}  // namespace mirrorlab
