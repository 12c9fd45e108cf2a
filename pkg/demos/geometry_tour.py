"""A short tour of the chart geometry.

Closed-form exp/log/transport on the sphere and the Poincaré disc agree with
the geodesic ODE solved by RK4 and shooting. Then we look at how much
parallel transport can stretch coordinate vectors on each model.

Run with ``python demos/geometry_tour.py``.
"""

import numpy as np

from riembsde.convexdomain import SquaredDistance, hessian_lower_bound_check, psi
from riembsde.geometry import Euclidean, HyperbolicDisc, Sphere, oracle_suite, transport_estimate_constant
from riembsde.sampling import Sampler

S2, H2 = Sphere(2, 1.0), HyperbolicDisc(2)

# %% exp and log are inverse to each other inside the chart
x = np.array([0.1, -0.2])
v = np.array([0.3, 0.25])
y = S2.exp(x, v)
print("sphere: exp then log recovers v:", np.allclose(S2.log(x, y), v))
print("sphere: distance equals the Riemannian length of v:", S2.distance(x, y), np.sqrt(v @ S2.metric(x) @ v))

# %% transport keeps Riemannian lengths
w = np.array([1.0, 0.0])
Pw = H2.transport(x, y, w)
print("disc: |w|_x =", np.sqrt(w @ H2.metric(x) @ w), " |Pw|_y =", np.sqrt(Pw @ H2.metric(y) @ Pw))

# %% the closed forms against the ODE on a few hundred random pairs
for M in (S2, H2):
    res = oracle_suite(M, count=200, seed=1)
    print(repr(M), {k: f"{v:.1e}" for k, v in res.items()})

# %% the transport-estimate constant: Euclidean gives exactly 1, curved models a bit more
sm = Sampler(seed=0, radius=0.5)
for M in (Euclidean(2), S2, H2):
    print(f"{M!r:>28}  C = {transport_estimate_constant(M, sm, 4000):.4f}")

# %% Ψ = δ²/2 and the two constants in its Hessian lower bound on the cap
Psi = SquaredDistance()
print("Ψ(x, y) =", float(psi(Psi, S2, x, y)), " vs |v|²/2 =", 0.5 * float(v @ S2.metric(x) @ v))
hb = hessian_lower_bound_check(Psi, S2, sm, 2000)
print(f"Hess Ψ >= {hb['alpha']:.3f} |Pz - z'|² - {hb['beta']:.3f} Ψ (|z|² + |z'|²)")
