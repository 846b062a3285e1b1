"""
Why squeezing at twice the frequency hurts
==========================================

A 2 W0 square wave squeezes the forward filter, but the retrodiction is
squeezed along the other quadrature at ``t_p``.  The sum along the
momentum axis ends up above the steady state.  The optimized protocol
instead lines the two legs up.
"""

import numpy as np

from impulse_shaping import BACKWARD, FORWARD, NEMS_REFERENCE, nems_model, ocp

model = nems_model(NEMS_REFERENCE)
problem, grid = ocp.horizon(model)
cfg = ocp.OcpConfig(max_iters=100)
shaper = ocp.CovarianceShaper(model, problem, grid, cfg)
base = shaper.baseline
kp = shaper.kp * shaper.stride  # t_p on the integrator grid

rect = ocp.rectangular_protocol(grid, 2 * model.omega0, 0.4)
opt = ocp.optimize(model, problem, cfg, ocp.ControlProtocol.zeros(grid), shaper=shaper).protocol

for label, p in (("rectangular", rect.p), ("optimized", opt.p)):
    S, P = shaper.traces(p)
    vs, vp = S.projected(problem.n), P.projected(problem.n)
    print(f"{label:12s} forward {vs[kp] / base:.3f}  backward {vp[kp] / base:.3f}  "
          f"sum {(vs[kp] + vp[kp]) / base:.3f}  (steady state 1)")
    # the forward leg alone oscillates once per half period
    last = vs[kp - 200: kp + 1] / base
    print(f"{'':12s} forward leg over the last period: {last.min():.3f} .. {last.max():.3f}")

# Steady-state legs each carry part of the baseline.
S0, P0 = shaper.steady(FORWARD, 0.0), shaper.steady(BACKWARD, 0.0)
n = np.asarray(problem.n)
print(f"steady state split: forward {n @ S0 @ n / base:.3f}, backward {n @ P0 @ n / base:.3f}")
