#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mirrorlab/rng.hpp"

namespace mirrorlab {

enum class EnvId { kCartpole, kPendulum };

struct EnvSpec {
  EnvId id = EnvId::kCartpole;
  int horizon = 500;
  double gamma = 0.99;

  void validate() const;  // throws std::invalid_argument
};

EnvSpec default_env_spec(EnvId id);
EnvId env_id_from_string(const std::string& name);
std::string env_id_to_string(EnvId id);

int env_obs_dim(EnvId id);
// discrete: number of actions; continuous: action dimension
int env_action_dim(EnvId id);
bool env_is_discrete(EnvId id);
// absolute bound on any observation component under normal operation;
// cartpole: 15 (positions terminate at 2.4/0.21, velocities stay modest),
// pendulum: 8 (cos/sin in [-1,1], angular velocity clipped to 8)
double env_obs_bound(EnvId id);

// Fixed batch of independent environment instances. Each instance owns its
// RNG; instances auto-reset when their episode terminates so collection
// never stalls. Owned by a single rollout worker.
class VecEnv {
 public:
  VecEnv(const EnvSpec& spec, int n_envs, std::uint64_t seed);

  const EnvSpec& spec() const { return spec_; }
  int n_envs() const { return n_; }
  int obs_dim() const { return env_obs_dim(spec_.id); }

  // obs: row-major [n_envs x obs_dim]
  void reset(double* obs);

  // Observations of the current state without advancing; requires a prior
  // reset. Episodes persist across collection calls.
  void current_obs(double* obs) const;
  bool initialized() const { return initialized_; }

  // actions: discrete -> [n_envs] of indices stored as doubles;
  // continuous -> [n_envs x action_dim], clipped to the legal box.
  // Throws std::runtime_error on non-finite actions.
  void step(const double* actions, double* obs, double* rewards,
            std::uint8_t* dones);

 private:
  void reset_instance(int i);
  void observe(int i, double* row) const;

  EnvSpec spec_;
  int n_;
  int state_dim_;
  bool initialized_ = false;
  std::vector<double> state_;  // [n x state_dim]
  std::vector<int> t_;
  std::vector<Rng> rng_;
};

}  // namespace mirrorlab
