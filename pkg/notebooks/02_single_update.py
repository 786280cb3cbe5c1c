# # One measurement update, two ways
#
# NANO-L and the invariant EKF share the same increment coordinates. The
# covariance update is identical; the means differ because NANO-L averages
# the measurement map over the belief instead of evaluating it at the mean.

# %%
import numpy as np

from nanol.filters import (
    FilterState, IncrementBelief, NanoConfig, cost_J, expectation_of_h, inekf_update,
    nano_increment_posterior, nano_update_invariant,
)
from nanol.lie import psd_sqrt, sem_exp
from nanol.models import landmark_layout, make_landmark_measurement, measurement_map

rng = np.random.default_rng(3)
layout = landmark_layout()

# ## A prior and a landmark observation
#
# The true state sits one standard deviation away from the estimate.

# %%
X = sem_exp(np.r_[0.2, -0.1, 0.4, 0.5, 0.0, 0.0, 1.0, 2.0, 0.0])
P = np.diag(np.r_[np.full(3, 1e-2), np.full(6, 0.1)])
X_true = X @ sem_exp(psd_sqrt(P) @ rng.standard_normal(9))
landmark = np.array([0.0, 2.0, 2.0])
b = np.r_[landmark, 0.0, 1.0]
meas = make_landmark_measurement(measurement_map(X_true, b), landmark, 0.05)
meas.y_reduced, measurement_map(X, b)

# The cubature expectation of the map differs from the map at the mean by a
# term that grows with the covariance.

# %%
prior = IncrementBelief(np.zeros(9), P)
expectation_of_h(prior, X, meas) - measurement_map(X, b)

# ## Updates

# %%
fs = FilterState(X, P, layout)
nano = nano_update_invariant(fs, meas)
ekf = inekf_update(fs, meas)
for name, out in (("NANO-L", nano), ("InEKF", ekf)):
    r = np.linalg.norm(meas.y_reduced - measurement_map(out.mean, b))
    e = np.linalg.norm(out.mean[:3, 4] - X_true[:3, 4])
    print(f"{name:7s} residual {r:.4f}  position error {e:.4f}")

# ### Iterating the mean
#
# More iterations refine the mean under the fixed closed-form covariance;
# the KL divergence between iterates decides when to stop.

# %%
for k in (1, 2, 3, 5, 10):
    post, info = nano_increment_posterior(prior, X, meas, NanoConfig(max_iters=k))
    print(k, info.iterations, f"{cost_J(post, prior, X, meas):.6f}", np.round(info.kl, 8))
