# # Contact-aided odometry on a simulated quadruped
#
# Each stance foot adds a contact point to the state. The leg kinematics
# give the foot position in the body frame, an invariant observation of the
# contact column. Feet are re-initialized on touchdown.

# %%
from dataclasses import replace

import numpy as np

from nanol.models import NoiseConfig, forward_kinematics, legged_layout, quadruped_legs
from nanol.sim import (
    LEGGED_PROFILE, contact_schedule, generate_ground_truth, make_filter, run_trial,
    synthesize_legged, truth_state,
)

legs = quadruped_legs()
forward_kinematics([0.0, 0.8, -1.5], legs["FL"])

# ## Trot gait
#
# Diagonal pairs alternate every half period.

# %%
t = np.arange(0, 1.0, 0.1)
contact_schedule(t, 0.5).astype(int)

# ## Simulated run

# %%
gt = generate_ground_truth(replace(LEGGED_PROFILE, duration=5.0))
log = synthesize_legged(gt, legs, gait_period=0.5, seed=0)
print("samples", len(log), "IK failures", log.ik_failures)

layout = legged_layout(log.leg_names)
X0 = truth_state(gt.R[0], gt.v[0], gt.p[0], layout)
filters = {n: make_filter(n, X0, layout, NoiseConfig())
           for n in ("nano", "inekf")}
res = run_trial(log, filters, legs=legs)

# %%
for name, est in res.estimates.items():
    err = np.linalg.norm(est.p - gt.p, axis=1)
    print(f"{name:6s} final position error {err[-1]:.3f} m, "
          f"{res.update_counts[name]} updates, {1e3 * res.step_times[name].mean():.3f} ms each")

# Without an absolute reference the position drifts; the contact updates
# bound the velocity error rather than the position.
