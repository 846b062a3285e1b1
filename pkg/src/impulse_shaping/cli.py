"""Command-line front end.

``impulse-shaping {steady-state|optimize|compare|simulate} --config FILE
[--out DIR] [--seed N] [--protocol FILE]``

The output directory is ``--out`` if given, else ``$IMPULSE_SHAPING_OUT``,
else ``[output] directory`` from the config.  Every CSV starts with a
comment line carrying the config hash and package version.

Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 optimizer
stalled (outputs are still written).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, montecarlo, ocp, plotting
from .config import load_config
from .errors import (
    AdmissibilityError,
    AlignmentError,
    ConfigError,
    FactorizationError,
    GradientUnavailableError,
    ImpulseShapingError,
    InfeasibleProtocolError,
    IntegrationDivergedError,
    NoSteadyStateError,
    NormalizationError,
    RangeError,
    ShapeError,
    TrialError,
    ValidityError,
)
from .gaussian import build_symplectic, uncertainty_margin
from .impulse import projected_variance
from .riccati import BACKWARD, FORWARD

logger = logging.getLogger("impulse_shaping")

OUT_ENV = "IMPULSE_SHAPING_OUT"
EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL, EXIT_STALLED = 0, 2, 3, 4

_INVALID = (ConfigError, AlignmentError, AdmissibilityError, ValidityError, ShapeError,
            NormalizationError, RangeError, FactorizationError)
_NUMERICAL = (IntegrationDivergedError, NoSteadyStateError, InfeasibleProtocolError,
              GradientUnavailableError, TrialError)


class Writer:
    """CSV sink for one run; stamps every file with the config hash."""

    def __init__(self, directory, cfg):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.stamp = f"# config_sha256={cfg.digest} version={__version__} system={cfg.system}"
        self.written = []

    def table(self, name, header, rows):
        path = self.dir / name
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(self.stamp + "\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self.written.append(path)
        return path

    def columns(self, name, cols):
        keys = list(cols)
        return self.table(name, keys, zip(*(cols[k] for k in keys)))


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17e}"
    return str(v)


def _setup(cfg, seed=None):
    model = cfg.model()
    g = cfg.grid
    problem, grid = ocp.horizon(model, g.periods_before_tp, g.periods_after_tp, g.steps_per_period,
                                g.control_stride, alpha=cfg.simulation.alpha)
    return model, problem, grid


def _trace_columns(shaper, p, n, prefix=""):
    S, P = shaper.traces(p)
    vs, vp = S.projected(n), P.projected(n)
    return S.times, {
        f"{prefix}sigma_fwd": np.sqrt(np.maximum(vs, 0.0)),
        f"{prefix}sigma_back": np.sqrt(np.maximum(vp, 0.0)),
        f"{prefix}sigma_total": np.sqrt(np.maximum(vs + vp, 0.0)),
    }, vs, vp


def cmd_steady_state(cfg, out, args):
    model, problem, grid = _setup(cfg)
    sh = ocp.CovarianceShaper(model, problem, grid, cfg.ocp)
    S, P = sh.steady(FORWARD, 0.0), sh.steady(BACKWARD, 0.0)
    J = build_symplectic(model.n_modes).J
    var = projected_variance(S + P, problem.n)
    rows = []
    for name, M in (("sigma_ss", S), ("pi_ss", P)):
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                rows.append((f"{name}_{i}{j}", M[i, j]))
    rows += [("projected_variance", var), ("sqrt_projected_variance", np.sqrt(var)),
             ("uncertainty_margin_sigma", uncertainty_margin(S, J)),
             ("uncertainty_margin_pi", uncertainty_margin(P, J))]
    out.table("steady_state.csv", ["quantity", "value"], rows)
    for k, v in rows:
        print(f"{k:28s} {v: .10e}")
    return EXIT_OK


def _optimized(cfg, model, problem, grid):
    sh = ocp.CovarianceShaper(model, problem, grid, cfg.ocp)
    res = ocp.optimize(model, problem, cfg.ocp, ocp.ControlProtocol.zeros(grid, model.bounds),
                       shaper=sh)
    return sh, res


def _write_optimized(out, sh, res, n):
    out.columns("protocol.csv", {"t": res.protocol.times, "p": res.protocol.p})
    t, cols, _, _ = _trace_columns(sh, res.protocol.p, n)
    out.columns("uncertainty_trace.csv", {"t": t, **cols})
    out.table("summary.csv",
              ["baseline_variance", "optimized_variance", "ratio", "sqrt_ratio", "final_cost",
               "gamma_reg", "iterations", "converged", "stalled"],
              [(res.steady_state_projected_variance, res.final_projected_variance, res.ratio,
                res.sqrt_ratio, res.final_cost, res.gamma_reg, res.iterations, res.converged,
                res.stalled)])
    print(f"baseline {res.steady_state_projected_variance:.6e}  optimized "
          f"{res.final_projected_variance:.6e}  ratio {res.ratio:.4f}  sqrt ratio {res.sqrt_ratio:.4f}")


def cmd_optimize(cfg, out, args):
    model, problem, grid = _setup(cfg)
    sh, res = _optimized(cfg, model, problem, grid)
    _write_optimized(out, sh, res, problem.n)
    _plots(cfg, out, [("uncertainty_trace.csv", ["sigma_fwd", "sigma_back", "sigma_total"]),
                      ("protocol.csv", ["p"])])
    return EXIT_STALLED if res.stalled else EXIT_OK


def rectangular_for(model, grid, system, depth=0.4):
    """2 W0 square wave; the particle's switching follows its instantaneous phase."""
    return ocp.rectangular_protocol(grid, 2.0 * model.omega0, depth, bounds=model.bounds,
                                    model=model if system == "particle" else None)


def cmd_compare(cfg, out, args):
    model, problem, grid = _setup(cfg)
    sh, res = _optimized(cfg, model, problem, grid)
    _write_optimized(out, sh, res, problem.n)
    rect = rectangular_for(model, grid, cfg.system)
    out.columns("rect_protocol.csv", {"t": rect.times, "p": rect.p})
    t, rcols, rvs, rvp = _trace_columns(sh, rect.p, problem.n, "rect_")
    _, ocols, ovs, ovp = _trace_columns(sh, res.protocol.p, problem.n, "opt_")
    base = sh.baseline
    out.columns("compare_trace.csv", {
        "t": t,
        "rect_ratio": rcols["rect_sigma_total"] / np.sqrt(base),
        "opt_ratio": ocols["opt_sigma_total"] / np.sqrt(base),
        **rcols, **ocols,
    })
    out.columns("decomposition.csv", {
        "t": t, "rect_var_fwd": rvs, "rect_var_back": rvp, "opt_var_fwd": ovs, "opt_var_back": ovp,
    })
    kp = sh.kp * sh.stride
    print(f"rectangular sqrt ratio at t_p {np.sqrt((rvs[kp] + rvp[kp]) / base):.4f}")
    _plots(cfg, out, [("compare_trace.csv", ["rect_ratio", "opt_ratio"]),
                      ("decomposition.csv", ["rect_var_fwd", "rect_var_back", "opt_var_fwd",
                                             "opt_var_back"])])
    return EXIT_STALLED if res.stalled else EXIT_OK


def read_protocol(path, grid, bounds):
    data = plotting.read_csv(path)
    if "p" not in data or "t" not in data:
        raise AlignmentError(f"{path} needs columns t and p")
    p, t = np.asarray(data["p"]), np.asarray(data["t"])
    if p.size != grid.steps or not np.allclose(t, grid.nodes[:-1], rtol=1e-9, atol=1e-15):
        raise AlignmentError(f"protocol in {path} does not match the configured control grid")
    return ocp.ControlProtocol(grid, p, bounds)


def cmd_simulate(cfg, out, args):
    model, problem, grid = _setup(cfg)
    sim = cfg.simulation
    seed = sim.base_seed if args.seed is None else args.seed
    if args.protocol:
        protocol = read_protocol(args.protocol, grid, model.bounds)
    else:
        protocol = ocp.ControlProtocol.zeros(grid, model.bounds)
    stats = montecarlo.run_ensemble(model, protocol, problem, sim.trials, seed,
                                    control_stride=cfg.grid.control_stride, workers=sim.workers,
                                    terminal=sim.terminal)
    out.columns("trials.csv", {"trial": np.arange(stats.trials), "seed": stats.seeds,
                               "alpha_hat": stats.alpha_hats})
    out.table("ensemble.csv",
              ["trials", "alpha", "mean_error", "var_error", "theoretical_var", "z_score"],
              [(stats.trials, stats.alpha, stats.mean_error, stats.var_error,
                stats.theoretical_var, stats.z_score)])
    print(f"var_error {stats.var_error:.6e}  theory {stats.theoretical_var:.6e}  "
          f"z {stats.z_score:+.3f}")
    return EXIT_OK


def _plots(cfg, out, specs):
    if not cfg.output.emit_plots:
        return
    charts = [(out.dir / name, out.dir / name.replace(".csv", ".svg"), "t", ys, {})
              for name, ys in specs]
    plotting.emit(charts)


COMMANDS = {
    "steady-state": cmd_steady_state,
    "optimize": cmd_optimize,
    "compare": cmd_compare,
    "simulate": cmd_simulate,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="impulse-shaping", description=__doc__.split("\n")[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI run configuration")
    ap.add_argument("--out", help=f"output directory (overrides ${OUT_ENV} and the config)")
    ap.add_argument("--seed", type=int, help="base seed for simulate")
    ap.add_argument("--protocol", help="protocol CSV (t, p) for simulate")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        cfg = load_config(args.config)
        directory = args.out or os.environ.get(OUT_ENV) or cfg.output.directory
        out = Writer(directory, cfg)
        return COMMANDS[args.command](cfg, out, args)
    except _INVALID as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except _NUMERICAL as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ImpulseShapingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
