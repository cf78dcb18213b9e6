"""Walk through one ROPE run on a random MDP, step by step.

    python demos/01_single_stream.py
"""

import numpy as np

from ropeval.contamination import RewardChannel
from ropeval.estimator import RopeEstimator
from ropeval.huber import ThresholdSchedule, tau_at
from ropeval.longrun import LongRunCovariance, confidence_interval
from ropeval.mdp import random_mdp, sample_stream, true_theta

# %% an environment with 50 states, 5 actions and 10 features
spec = random_mdp(1)
theta_star = true_theta(spec)
print("theta* =", np.round(theta_star, 4))

# %% a stream of (x_i, z_i, b_i) with Cauchy reward noise
channel = RewardChannel("cauchy", seed=7)
X, Z, B, _ = sample_stream(spec, 0, channel=channel).take(20_000)

# %% burn-in batch, then the online pass
n0 = 100
schedule = ThresholdSchedule.experiment(0.5, 1 / 3)
est = RopeEstimator.from_batch((X[:n0], Z[:n0], B[:n0]), schedule)
cov = LongRunCovariance(spec.d, 2.0)

for lo in range(n0, X.shape[0], 4000):
    hi = lo + 4000
    g = est.update(X[lo:hi], Z[lo:hi], B[lo:hi])
    cov.update_many(X[lo:hi], g)
    err = np.linalg.norm(est.theta_hat - theta_star)
    print(f"n={est.n:6d}  tau_n={tau_at(schedule, est.n):.3f}  |theta_hat - theta*| = {err:.4f}")

# %% a 95% interval for the first coordinate
v = np.eye(spec.d)[0]
ci = confidence_interval(v, est.theta_hat, est.h_inv, cov, est.n)
print(f"theta*_1 = {theta_star[0]:.4f}, interval [{ci.lower:.4f}, {ci.upper:.4f}], covers: {ci.contains(theta_star[0])}")
