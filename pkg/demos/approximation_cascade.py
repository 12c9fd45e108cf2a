"""Truncation, mollification and the outward correction.

A drift that is only tangent to the boundary fails the outward check once it
is mollified. Adding ε + A/l times the radial field fixes that. As l grows,
the mollified drift converges to the truncated one.

Run with ``python demos/approximation_cascade.py``.
"""

import numpy as np

from riembsde.approximation import as_drift, correct, mollify, phi_k, sup_deviation, truncate
from riembsde.cascade import CascadeConfig, calibrate
from riembsde.drift import DriftSpec, check_outward
from riembsde.geometry import Sphere
from riembsde.sampling import Sampler


def tangential(b, x, z):
    s = (1 + 0.5 * np.sin(b[..., 0]) + 0.3 * z[..., 0, 0])[..., None]
    return s * np.stack([x[..., 1], -x[..., 0]], -1)


f = DriftSpec(tangential, True, "tangential")
M = Sphere(2, 1.0)
sm = Sampler(seed=0, radius=0.5, z_max=3.0)

# %% the cutoff in |z|: 1 up to k, 0 beyond k + 1
u = np.linspace(0, 6, 7)
print("phi_3 on 0..6:", np.round(phi_k(u, 3), 3))

# %% mollified drifts approach the truncated one
fk = truncate(f, 2)
for l in (4, 8, 16, 32):
    print(f"l={l:>2}  sup |f_kl - f_k| = {sup_deviation(fk, mollify(fk, l, 1, 2, 1, 256), 1, 2, 1):.2e}")

# %% the outward check before and after the correction
cfg = CascadeConfig(mollifier_samples=256, calibration_count=512)
cal = calibrate(f, 2, sm, 2, cfg)
print("calibrated A:", cal.A, " eps per l:", [f"{e:.3f}" for e in cal.eps_per_l])
for i, l in enumerate(cal.l_values):
    fkl = mollify(fk, l, 1, 2, 1, cfg.mollifier_samples, cfg.mollifier_seed)
    g = correct(fkl, cal.eps_per_l[i], cal.A)
    raw = check_outward(as_drift(fkl), None, sm, 1024, M=M)
    fixed = check_outward(as_drift(g), None, sm, 1024, M=M)
    print(f"l={l:>2}  min radial component raw {raw:+.2e}, corrected {fixed:+.2e}")
