"""PPO actor-critic, vectorised navigation env, rollouts and curriculum training."""
from memnav.policy.actor_critic import ActorCritic, act, observation
from memnav.policy.env import EnvConfig, VecNavEnv, WorldPool, make_pool
from memnav.policy.ppo import PpoConfig, RolloutBuffer, collect_rollout, compute_gae, ppo_update

__all__ = [
    "ActorCritic", "EnvConfig", "PpoConfig", "RolloutBuffer", "VecNavEnv", "WorldPool", "act",
    "collect_rollout", "compute_gae", "make_pool", "observation", "ppo_update",
]
