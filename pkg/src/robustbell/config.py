"""Run configuration: a sectioned key-value file mapped onto typed settings.

A run file has four sections — problem, solver, evaluation, output — with
per-key validation and unknown keys rejected.  The resolved values round-trip
through the manifest (`sections`), so an evaluation can be reproduced from an
artifact directory alone.
"""

from __future__ import annotations

import configparser
import copy
from dataclasses import dataclass, replace
from typing import Optional, Tuple

from .dynamics import AugmentedState, Beliefs, LossFunction, ModelParams, ProblemSpec
from .evaluator import TestMeasure
from .solver import SolverConfig

STRATEGY_NAMES = (
    "adaptive_robust",
    "static_robust",
    "myopic_adaptive",
    "adaptive_delta",
    "merton_static",
    "constant",
)

_PROBLEM_KEYS = {
    "kind", "r", "dt", "n_steps", "alpha", "mu0", "sigma0",
    "gamma", "y0",
    "lambda", "k0", "strike", "s0", "w0",
}
_SOLVER_KEYS = {
    "n_pilot", "n_qmc", "n_adaptive", "n_edge", "quad_points", "integration",
    "inner_phi", "inner_rho", "inner_tol", "outer_tol", "flat_threshold",
    "gp_family", "gp_mode", "gp_nugget", "seed", "mc_seed", "threads",
    "mode", "singleton_shortcut",
}
_EVAL_KEYS = {
    "measure", "mu_star", "sigma_star", "mu_mean", "mu_sd",
    "n_paths", "seed", "strategies", "myopic_grid", "constant_u",
}
_OUTPUT_KEYS = {"directory", "diagnostics"}
_SECTIONS = {
    "problem": _PROBLEM_KEYS,
    "solver": _SOLVER_KEYS,
    "evaluation": _EVAL_KEYS,
    "output": _OUTPUT_KEYS,
}


class ConfigError(ValueError):
    """Configuration problem, message prefixed with the offending field path."""


def _as_float(section: str, key: str, raw) -> float:
    if isinstance(raw, bool):
        raise ConfigError(f"{section}.{key}: expected a number, got {raw!r}")
    try:
        return float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{section}.{key}: expected a number, got {raw!r}") from None


def _as_int(section: str, key: str, raw) -> int:
    val = _as_float(section, key, raw)
    if val != int(val):
        raise ConfigError(f"{section}.{key}: expected an integer, got {raw!r}")
    return int(val)


def _as_bool(section: str, key: str, raw) -> bool:
    if isinstance(raw, bool):
        return raw
    text = str(raw).strip().lower()
    if text in ("true", "yes", "on", "1"):
        return True
    if text in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"{section}.{key}: expected a boolean, got {raw!r}")


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, plus the resolved `sections` for the manifest."""

    spec: ProblemSpec
    solver: SolverConfig
    mode: str  # adaptive | static_robust
    x0: AugmentedState
    measure: TestMeasure
    n_paths: int
    eval_seed: int
    strategies: Tuple[str, ...]
    myopic_grid: Tuple[int, int]
    constant_u: float
    out_dir: str
    diagnostics: bool
    sections: dict


def load_config(path: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    sections = {}
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"{name}: unknown section")
        sections[name] = dict(parser.items(name))
    return build_config(sections)


def build_config(sections: dict) -> RunConfig:
    """Assemble a RunConfig from (possibly manifest-echoed) section dicts."""
    sections = copy.deepcopy(sections)
    for name, keys in sections.items():
        allowed = _SECTIONS.get(name)
        if allowed is None:
            raise ConfigError(f"{name}: unknown section")
        for key in keys:
            if key not in allowed:
                raise ConfigError(f"{name}.{key}: unknown key")
    prob = sections.get("problem", {})
    solv = sections.get("solver", {})
    evl = sections.get("evaluation", {})
    outp = sections.get("output", {})

    kind = str(prob.get("kind", "")).strip()
    if kind not in ("portfolio", "hedging"):
        raise ConfigError(f"problem.kind: must be portfolio or hedging, got {kind!r}")
    spec, x0 = _build_problem(kind, prob)
    solver_cfg, mode = _build_solver(kind, prob, solv)
    measure, n_paths, eval_seed, strategies, grid, const_u = _build_evaluation(kind, evl, solver_cfg)
    out_dir = str(outp.get("directory", "artifact"))
    diagnostics = _as_bool("output", "diagnostics", outp.get("diagnostics", False))

    resolved = {
        "problem": _echo_problem(kind, spec, x0),
        "solver": _echo_solver(solver_cfg, mode),
        "evaluation": _echo_evaluation(measure, n_paths, eval_seed, strategies, grid, const_u),
        "output": {"directory": out_dir, "diagnostics": diagnostics},
    }
    return RunConfig(
        spec=spec, solver=solver_cfg, mode=mode, x0=x0, measure=measure,
        n_paths=n_paths, eval_seed=eval_seed, strategies=strategies,
        myopic_grid=grid, constant_u=const_u, out_dir=out_dir,
        diagnostics=diagnostics, sections=resolved,
    )


def _require(section: str, table: dict, key: str):
    if key not in table:
        raise ConfigError(f"{section}.{key}: required")
    return table[key]


def _build_problem(kind: str, prob: dict):
    r = _as_float("problem", "r", _require("problem", prob, "r"))
    dt = _as_float("problem", "dt", _require("problem", prob, "dt"))
    n_steps = _as_int("problem", "n_steps", _require("problem", prob, "n_steps"))
    alpha = _as_float("problem", "alpha", _require("problem", prob, "alpha"))
    mu0 = _as_float("problem", "mu0", _require("problem", prob, "mu0"))
    sigma0 = _as_float("problem", "sigma0", _require("problem", prob, "sigma0"))
    if dt <= 0:
        raise ConfigError(f"problem.dt: must be > 0, got {dt}")
    if n_steps < 1:
        raise ConfigError(f"problem.n_steps: must be >= 1, got {n_steps}")
    if not 0 < alpha <= 1:
        raise ConfigError(f"problem.alpha: must lie in (0, 1], got {alpha}")
    if sigma0 <= 0:
        raise ConfigError(f"problem.sigma0: must be > 0, got {sigma0}")
    if kind == "portfolio":
        for key in ("lambda", "k0", "strike", "s0", "w0"):
            if key in prob:
                raise ConfigError(f"problem.{key}: not a portfolio field")
        gamma = _as_float("problem", "gamma", _require("problem", prob, "gamma"))
        if gamma <= 0 or gamma == 1:
            raise ConfigError(f"problem.gamma: must be positive and != 1, got {gamma}")
        y0 = _as_float("problem", "y0", prob.get("y0", 1.0))
        if y0 <= 0:
            raise ConfigError(f"problem.y0: must be > 0, got {y0}")
        try:
            spec = ProblemSpec(kind="portfolio", r=r, dt=dt, n_steps=n_steps, alpha=alpha, gamma=gamma)
        except ValueError as exc:
            raise ConfigError(f"problem: {exc}") from exc
        market = (y0,)
    else:
        for key in ("gamma", "y0"):
            if key in prob:
                raise ConfigError(f"problem.{key}: not a hedging field")
        lam = _as_float("problem", "lambda", prob.get("lambda", 1.0))
        if lam < 0:
            raise ConfigError(f"problem.lambda: must be >= 0, got {lam}")
        k0 = _as_int("problem", "k0", prob.get("k0", 150))
        if k0 < 1:
            raise ConfigError(f"problem.k0: must be >= 1, got {k0}")
        strike = _as_float("problem", "strike", _require("problem", prob, "strike"))
        if strike <= 0:
            raise ConfigError(f"problem.strike: must be > 0, got {strike}")
        s0 = _as_float("problem", "s0", prob.get("s0", 100.0))
        w0 = _as_float("problem", "w0", prob.get("w0", 20.0))
        if s0 <= 0:
            raise ConfigError(f"problem.s0: must be > 0, got {s0}")
        try:
            spec = ProblemSpec(kind="hedging", r=r, dt=dt, n_steps=n_steps, alpha=alpha,
                               strike=strike, loss=LossFunction(lam), k0=k0)
        except ValueError as exc:
            raise ConfigError(f"problem: {exc}") from exc
        market = (s0, w0)
    x0 = AugmentedState(market=market, beliefs=Beliefs(mu0, sigma0, spec.n_eff0), k=0)
    return spec, x0


def _build_solver(kind: str, prob: dict, solv: dict):
    mode = str(solv.get("mode", "adaptive")).strip()
    if mode not in ("adaptive", "static_robust"):
        raise ConfigError(f"solver.mode: must be adaptive or static_robust, got {mode!r}")
    kwargs = {
        "mu0": _as_float("problem", "mu0", prob["mu0"]),
        "sigma0": _as_float("problem", "sigma0", prob["sigma0"]),
        "frozen_set": mode == "static_robust",
    }
    int_keys = ("n_pilot", "n_qmc", "n_adaptive", "n_edge", "quad_points", "seed", "threads")
    for key in int_keys:
        if key in solv:
            kwargs[key] = _as_int("solver", key, solv[key])
    if "mc_seed" in solv and str(solv["mc_seed"]).strip().lower() != "none":
        kwargs["mc_seed"] = _as_int("solver", "mc_seed", solv["mc_seed"])
    for key in ("inner_tol", "outer_tol", "flat_threshold", "gp_nugget"):
        if key in solv:
            kwargs[key] = _as_float("solver", key, solv[key])
    for key in ("integration", "gp_family", "gp_mode"):
        if key in solv:
            kwargs[key] = str(solv[key]).strip()
    phi = _as_int("solver", "inner_phi", solv.get("inner_phi", 16))
    rho = _as_int("solver", "inner_rho", solv.get("inner_rho", 8))
    kwargs["inner_grid"] = (phi, rho)
    if "singleton_shortcut" in solv:
        kwargs["inner_singleton_shortcut"] = _as_bool("solver", "singleton_shortcut", solv["singleton_shortcut"])
    try:
        cfg = SolverConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"solver: {exc}") from exc
    return cfg, mode


def _build_evaluation(kind: str, evl: dict, solver_cfg: SolverConfig):
    default_measure = "sampled_normal" if kind == "portfolio" else "sampled_uniform_set"
    mkind = str(evl.get("measure", default_measure)).strip()
    try:
        if mkind == "fixed":
            measure = TestMeasure(
                kind="fixed",
                theta=ModelParams(
                    _as_float("evaluation", "mu_star", _require("evaluation", evl, "mu_star")),
                    _as_float("evaluation", "sigma_star", _require("evaluation", evl, "sigma_star")),
                ),
            )
        elif mkind == "sampled_normal":
            measure = TestMeasure(
                kind="sampled_normal",
                mu_mean=_as_float("evaluation", "mu_mean", evl.get("mu_mean", 0.15)),
                mu_sd=_as_float("evaluation", "mu_sd", evl.get("mu_sd", 0.02)),
                sigma_star=_as_float("evaluation", "sigma_star", evl.get("sigma_star", 0.1)),
            )
        elif mkind == "sampled_uniform_set":
            measure = TestMeasure(kind="sampled_uniform_set")
        else:
            raise ConfigError(f"evaluation.measure: unknown kind {mkind!r}")
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"evaluation: {exc}") from exc
    default_paths = 10000 if kind == "portfolio" else 50000
    n_paths = _as_int("evaluation", "n_paths", evl.get("n_paths", default_paths))
    if n_paths < 1:
        raise ConfigError(f"evaluation.n_paths: must be >= 1, got {n_paths}")
    eval_seed = _as_int("evaluation", "seed", evl.get("seed", solver_cfg.seed))
    raw_strategies = evl.get("strategies", "adaptive_robust")
    if isinstance(raw_strategies, str):
        names = tuple(s.strip() for s in raw_strategies.split(",") if s.strip())
    else:
        names = tuple(str(s) for s in raw_strategies)
    if not names:
        raise ConfigError("evaluation.strategies: empty strategy list")
    for name in names:
        if name not in STRATEGY_NAMES:
            raise ConfigError(f"evaluation.strategies: unknown strategy {name!r}")
        if name == "adaptive_delta" and kind != "hedging":
            raise ConfigError("evaluation.strategies: adaptive_delta applies to the hedging problem only")
        if name == "merton_static" and kind != "portfolio":
            raise ConfigError("evaluation.strategies: merton_static applies to the portfolio problem only")
    grid_raw = evl.get("myopic_grid", "8x8")
    if isinstance(grid_raw, (list, tuple)):
        parts = [str(v) for v in grid_raw]
    else:
        parts = str(grid_raw).lower().split("x")
    if len(parts) != 2:
        raise ConfigError(f"evaluation.myopic_grid: expected MxN, got {grid_raw!r}")
    grid = (_as_int("evaluation", "myopic_grid", parts[0]), _as_int("evaluation", "myopic_grid", parts[1]))
    if grid[0] < 1 or grid[1] < 1:
        raise ConfigError(f"evaluation.myopic_grid: sides must be >= 1, got {grid_raw!r}")
    const_u = _as_float("evaluation", "constant_u", evl.get("constant_u", 0.0))
    if not 0 <= const_u <= 1:
        raise ConfigError(f"evaluation.constant_u: must lie in [0, 1], got {const_u}")
    return measure, n_paths, eval_seed, names, grid, const_u


def _echo_problem(kind: str, spec: ProblemSpec, x0: AugmentedState) -> dict:
    echo = {
        "kind": kind, "r": spec.r, "dt": spec.dt, "n_steps": spec.n_steps,
        "alpha": spec.alpha, "mu0": x0.beliefs.mu_bar, "sigma0": x0.beliefs.sigma_bar,
    }
    if kind == "portfolio":
        echo["gamma"] = spec.gamma
        echo["y0"] = x0.market[0]
    else:
        echo["lambda"] = spec.loss.lam
        echo["k0"] = spec.k0
        echo["strike"] = spec.strike
        echo["s0"] = x0.market[0]
        echo["w0"] = x0.market[1]
    return echo


def _echo_solver(cfg: SolverConfig, mode: str) -> dict:
    return {
        "mode": mode,
        "n_pilot": cfg.n_pilot, "n_qmc": cfg.n_qmc, "n_adaptive": cfg.n_adaptive,
        "n_edge": cfg.n_edge, "quad_points": cfg.quad_points,
        "integration": cfg.integration, "inner_phi": cfg.inner_grid[0],
        "inner_rho": cfg.inner_grid[1], "inner_tol": cfg.inner_tol,
        "outer_tol": cfg.outer_tol, "flat_threshold": cfg.flat_threshold,
        "gp_family": cfg.gp_family, "gp_mode": cfg.gp_mode,
        "gp_nugget": cfg.gp_nugget, "seed": cfg.seed, "mc_seed": cfg.mc_seed,
        "threads": cfg.threads, "singleton_shortcut": cfg.inner_singleton_shortcut,
    }


def _echo_evaluation(measure, n_paths, eval_seed, strategies, grid, const_u) -> dict:
    echo = {
        "measure": measure.kind, "n_paths": n_paths, "seed": eval_seed,
        "strategies": list(strategies), "myopic_grid": list(grid), "constant_u": const_u,
    }
    if measure.kind == "fixed":
        echo["mu_star"] = measure.theta.mu
        echo["sigma_star"] = measure.theta.sigma
    elif measure.kind == "sampled_normal":
        echo["mu_mean"] = measure.mu_mean
        echo["mu_sd"] = measure.mu_sd
        echo["sigma_star"] = measure.sigma_star
    return echo


def with_overrides(
    rc: RunConfig,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    out_dir: Optional[str] = None,
    diagnostics: Optional[bool] = None,
) -> RunConfig:
    """Apply command-line overrides and rebuild so the echo stays accurate."""
    sections = copy.deepcopy(rc.sections)
    if seed is not None:
        sections["solver"]["seed"] = int(seed)
        sections["evaluation"]["seed"] = int(seed)
    if threads is not None:
        sections["solver"]["threads"] = int(threads)
    if out_dir is not None:
        sections["output"]["directory"] = str(out_dir)
    if diagnostics is not None:
        sections["output"]["diagnostics"] = bool(diagnostics)
    return build_config(sections)
