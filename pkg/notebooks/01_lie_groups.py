# # Lie groups for inertial navigation
#
# The filter state lives on SE_m(3): a rotation plus `m` vectors (velocity,
# position, contact points) packed into one matrix. This walk-through shows
# the exponential map, the adjoint and the Jacobians the filters rely on.

# %%
import numpy as np

from nanol.lie import (
    sem_adjoint, sem_exp, sem_inverse, sem_log, sem_right_jacobian, so3_exp, so3_log,
)

rng = np.random.default_rng(0)

# ## Rotations
#
# A rotation vector maps to SO(3) by Rodrigues' formula and back by the log.

# %%
phi = np.array([0.3, -1.2, 0.5])
R = so3_exp(phi)
print(R.round(4))
print("det", np.linalg.det(R), "roundtrip", so3_log(R) - phi)

# Near pi the log becomes ill-conditioned. It refuses rotations whose trace
# is within 1e-6 of -1, about 1.4e-3 rad short of pi.

# %%
from nanol.exceptions import AngleNearPi

axis = np.array([0.0, 0.6, 0.8])
for angle in (1.0, 3.0, np.pi - 1e-3, np.pi - 1e-4):
    try:
        err = np.abs(so3_log(so3_exp(angle * axis)) - angle * axis).max()
        print(f"{angle:.6f} roundtrip error {err:.1e}")
    except AngleNearPi as exc:
        print(f"{angle:.6f} {exc}")

# ## SE_2(3): rotation, velocity and position
#
# Tangent vectors are ordered `[phi, rho_v, rho_p]`.

# %%
xi = np.r_[phi, 1.0, 0.0, -0.5, 2.0, 2.0, 0.1]
X = sem_exp(xi)
print(X.round(4))
print("roundtrip", np.abs(sem_log(X) - xi).max())

# ### Adjoint
#
# Conjugating a group increment moves it between body and world frames:
# `X Exp(xi) X^-1 = Exp(Ad_X xi)`.

# %%
Y = sem_exp(0.1 * rng.standard_normal(9))
eta = 0.2 * rng.standard_normal(9)
lhs = Y @ sem_exp(eta) @ sem_inverse(Y)
rhs = sem_exp(sem_adjoint(Y) @ eta)
np.abs(lhs - rhs).max()

# ### Right Jacobian
#
# `Exp(xi + d) ~ Exp(xi) Exp(J_r(xi) d)`; the residual shrinks quadratically.

# %%
Jr = sem_right_jacobian(xi)
direction = rng.standard_normal(9)
for h in (1e-2, 1e-3, 1e-4):
    d = h * direction
    print(h, np.linalg.norm(sem_exp(xi + d) - X @ sem_exp(Jr @ d)))
