"""
Steady-state estimation uncertainty
===================================

Without modulation both reference systems settle into a stationary filter
covariance ``S`` and retrodiction covariance ``P``.  Their projected sum
along the momentum axis is the baseline that every protocol is judged
against.
"""

import numpy as np

from impulse_shaping import (
    BACKWARD,
    FORWARD,
    NEMS_REFERENCE,
    PARTICLE_REFERENCE,
    build_symplectic,
    nems_model,
    particle_model,
    steady_state,
    uncertainty_margin,
)

n = np.array([0.0, 1.0])  # momentum kick direction
J = build_symplectic(1)

for label, model in (("resonator", nems_model(NEMS_REFERENCE)),
                     ("particle", particle_model(PARTICLE_REFERENCE))):
    M = model(0.0)
    # integrate on the natural oscillator time scale
    S = steady_state(FORWARD, M, time_scale=1.0 / model.omega0)
    P = steady_state(BACKWARD, M, time_scale=1.0 / model.omega0)
    base = n @ (S + P) @ n
    print(f"{label}: n^T (S + P) n = {base:.4e}, sqrt = {np.sqrt(base):.4e}")
    # a positive margin means S + iJ/2 is positive semidefinite
    print(f"    uncertainty margins: S {uncertainty_margin(S, J):.3e}, "
          f"P {uncertainty_margin(P, J):.3e}")

# The two legs of the particle are nearly mirror images: reversing the
# drift turns the forward filter into the retrodiction.
