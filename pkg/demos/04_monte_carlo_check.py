"""
Checking the predicted variance by simulation
=============================================

Measurement records are simulated with a momentum kick at ``t_p``.  The
kick is estimated as the jump between the filtered and the retrodicted
means.  Across trials the error variance should match
``n^T (S(t_p) + P(t_p)) n`` from the Riccati equations.
"""

from impulse_shaping import NEMS_REFERENCE, montecarlo, nems_model, ocp

model = nems_model(NEMS_REFERENCE)
problem, grid = ocp.horizon(model, alpha=5.0)  # kick of five zero-point units

zero = ocp.ControlProtocol.zeros(grid)
stats = montecarlo.run_ensemble(model, zero, problem, trials=400, base_seed=2024)
print(f"zero protocol: mean error {stats.mean_error:+.3f}, "
      f"variance {stats.var_error:.4e} vs predicted {stats.theoretical_var:.4e} "
      f"(z = {stats.z_score:+.2f})")

# A short optimization is enough to see the variance drop in simulation too.
cfg = ocp.OcpConfig(max_iters=60)
opt = ocp.optimize(model, problem, cfg, zero).protocol
stats_opt = montecarlo.run_ensemble(model, opt, problem, trials=400, base_seed=4048)
print(f"optimized:     variance {stats_opt.var_error:.4e} vs predicted "
      f"{stats_opt.theoretical_var:.4e} (z = {stats_opt.z_score:+.2f})")
print(f"empirical ratio {stats_opt.var_error / stats.var_error:.3f}, "
      f"predicted {stats_opt.theoretical_var / stats.theoretical_var:.3f}")
