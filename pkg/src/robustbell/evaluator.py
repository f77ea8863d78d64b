"""Forward Monte Carlo evaluation of policies and the baseline strategies.

Policies are evaluated out of sample: true parameters theta* are drawn per
path from a test measure (or fixed), held constant, and the controlled state
is rolled forward under i.i.d. Gaussian shocks while beliefs update exactly
as in the backward pass.  The per-path terminal quantity is the wealth W_T
(portfolio) or the hedging error H = payoff - W_T (hedging); the average
objective over paths is a lower-bound estimate of the time-0 value.

Baselines: the closed-form Merton fraction, a policy bundle solved with the
uncertainty set frozen at its initial value (static robust), a myopic table
of fixed-parameter solutions interpolated at the current belief (myopic
adaptive), the Black-Scholes delta at the current volatility belief, and a
constant control.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from . import gp, solver
from .dynamics import (
    AugmentedState,
    Beliefs,
    ModelParams,
    ProblemSpec,
    call_payoff,
    crra_utility,
    uncertainty_set,
    update_beliefs_batch,
)
from .numerics import minimize_scalar
from .rng import substream
from .solver import PolicyBundle, SolverConfig, SurrogateValue, TerminalValue, _bs_call

_MEASURE_KINDS = ("fixed", "sampled_normal", "sampled_uniform_set")


def merton_control(theta: ModelParams, r: float, gamma: float) -> float:
    """Closed-form optimal risky fraction (mu - r) / (gamma sigma^2)."""
    if theta.sigma <= 0:
        raise ValueError(f"merton control needs sigma > 0, got {theta.sigma}")
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    return (theta.mu - r) / (gamma * theta.sigma**2)


def bs_price(t: float, s, strike: float, r: float, sigma, horizon: float):
    """Black-Scholes call price; the payoff itself at t = horizon."""
    _check_bs_args(t, s, strike, sigma, horizon)
    price, _ = _bs_call(t, s, strike, r, sigma, horizon)
    return float(price) if np.ndim(price) == 0 else price


def bs_delta(t: float, s, strike: float, r: float, sigma, horizon: float):
    """Black-Scholes call delta; the in-the-money indicator at t = horizon."""
    _check_bs_args(t, s, strike, sigma, horizon)
    _, delta = _bs_call(t, s, strike, r, sigma, horizon)
    return float(delta) if np.ndim(delta) == 0 else delta


def _check_bs_args(t, s, strike, sigma, horizon):
    if strike <= 0:
        raise ValueError(f"strike must be > 0, got {strike}")
    if np.any(np.asarray(s, dtype=float) <= 0):
        raise ValueError("stock price must be > 0")
    if t > horizon:
        raise ValueError(f"t={t} lies beyond the horizon {horizon}")
    if t < horizon and np.any(np.asarray(sigma, dtype=float) <= 0):
        raise ValueError("sigma must be > 0 before expiry")


# ---------------------------------------------------------------------------
# test measures


@dataclass(frozen=True)
class TestMeasure:
    """How the data-generating parameters theta* are chosen, once per path.

    fixed: theta* = theta on every path.
    sampled_normal: mu* ~ N(mu_mean, mu_sd^2), sigma* = sigma_star.
    sampled_uniform_set: theta* uniform on the initial uncertainty set of the
    evaluation's starting beliefs (area-uniform in the (mu, sigma^2) plane,
    redrawing the rare sigma^2 <= 0 corner).
    """

    __test__ = False  # not a pytest class, despite the name

    kind: str
    theta: Optional[ModelParams] = None
    mu_mean: Optional[float] = None
    mu_sd: Optional[float] = None
    sigma_star: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _MEASURE_KINDS:
            raise ValueError(f"measure kind must be one of {_MEASURE_KINDS}, got {self.kind!r}")
        if self.kind == "fixed" and self.theta is None:
            raise ValueError("fixed measure needs theta")
        if self.kind == "sampled_normal":
            if self.mu_mean is None or self.mu_sd is None or self.sigma_star is None:
                raise ValueError("sampled_normal needs mu_mean, mu_sd, sigma_star")
            if self.mu_sd < 0 or self.sigma_star <= 0:
                raise ValueError("sampled_normal needs mu_sd >= 0 and sigma_star > 0")

    def draw(self, n_paths: int, spec: ProblemSpec, x0: AugmentedState, rng) -> Tuple[np.ndarray, np.ndarray]:
        if self.kind == "fixed":
            return np.full(n_paths, self.theta.mu), np.full(n_paths, self.theta.sigma)
        if self.kind == "sampled_normal":
            mu = rng.normal(self.mu_mean, self.mu_sd, n_paths)
            return mu, np.full(n_paths, self.sigma_star)
        ell = uncertainty_set(x0.beliefs, spec.kappa, spec.dt)
        c = ell.center
        mu = np.empty(n_paths)
        var = np.empty(n_paths)
        got = 0
        while got < n_paths:
            m = n_paths - got
            r = np.sqrt(rng.uniform(0.0, 1.0, m))
            a = rng.uniform(0.0, 2.0 * math.pi, m)
            mu_c = c.mu_bar + r * np.cos(a) * c.sigma_bar * math.sqrt(ell.kappa / (c.n_eff * ell.dt))
            var_c = c.sigma_bar**2 * (1.0 + r * np.sin(a) * math.sqrt(2.0 * ell.kappa / c.n_eff))
            ok = var_c > 0
            take = int(np.sum(ok))
            mu[got : got + take] = mu_c[ok]
            var[got : got + take] = var_c[ok]
            got += take
        return mu, np.sqrt(var)


# ---------------------------------------------------------------------------
# strategies


class BundleStrategy:
    """Controls read from a solved policy bundle's control surrogates.

    The initial step has no surrogate: all paths share the starting state, so
    one direct outer optimization there gives the common control.
    """

    def __init__(self, bundle: PolicyBundle, kind: str):
        self.bundle = bundle
        self.spec = bundle.spec
        self.kind = kind

    def controls(self, k: int, market, mu_bar, sg_bar) -> np.ndarray:
        spec = self.spec
        n = len(mu_bar)
        if k == 0:
            state = AugmentedState(
                market=tuple(float(m[0]) for m in market),
                beliefs=Beliefs(float(mu_bar[0]), float(sg_bar[0]), spec.n_eff0),
                k=0,
            )
            if spec.n_steps > 1:
                next_value = SurrogateValue(self.bundle.step(1).value_surrogate)
            else:
                next_value = TerminalValue(spec)
            mode = "portfolio_min_inner" if spec.kind == "portfolio" else "hedging_max_inner"
            u0, _, _ = solver.outer_optimize(state, next_value, self.bundle.quadrature, spec, mode)
            return np.full(n, spec.project_control(u0))
        if spec.kind == "portfolio":
            rows = np.column_stack([mu_bar, sg_bar])
        else:
            rows = np.column_stack([market[0], market[1], mu_bar, sg_bar])
        return np.asarray(self.bundle.control_at(rows, k))


def adaptive_robust(bundle: PolicyBundle) -> BundleStrategy:
    if bundle.mode != "adaptive":
        raise ValueError(f"adaptive_robust needs an adaptive-mode bundle, got {bundle.mode!r}")
    return BundleStrategy(bundle, "adaptive_robust")


def static_robust(bundle: PolicyBundle) -> BundleStrategy:
    if bundle.mode != "static_robust":
        raise ValueError(f"static_robust needs a frozen-set bundle, got {bundle.mode!r}")
    return BundleStrategy(bundle, "static_robust")


def static_robust_solve(spec: ProblemSpec, cfg: SolverConfig) -> PolicyBundle:
    """Backward solve with the uncertainty set frozen at the initial beliefs."""
    return solver.solve(spec, replace(cfg, frozen_set=True))


@dataclass(frozen=True, eq=False)
class MyopicTable:
    """Fixed-parameter solutions on a theta grid, interpolated at query time.

    Portfolio nodes hold the closed-form Merton fraction (projected); hedging
    nodes hold per-step control/value surrogates in (S, W) from a
    fixed-parameter backward solve.  Queries smooth the node controls across
    theta with a GP whose factorization is cached at build time; a single-node
    grid skips interpolation and acts as that node's strategy.
    """

    spec: ProblemSpec
    theta_grid: np.ndarray  # (G, 2)
    node_controls: Optional[np.ndarray]  # portfolio: (G,)
    node_steps: Optional[tuple]  # hedging: per node, tuple over k=1..K-1 of (value, control) surrogates
    interp_kernel: gp.KernelSpec
    interp_chol: np.ndarray
    grid_lo: np.ndarray
    grid_span: np.ndarray

    def _weights(self, mu_bar, sg_bar) -> np.ndarray:
        """Interpolation weights of each grid node for each queried belief."""
        q = (np.column_stack([mu_bar, sg_bar]) - self.grid_lo) / self.grid_span
        zg = (self.theta_grid - self.grid_lo) / self.grid_span
        kx = gp._cross(self.interp_kernel, q, zg)
        return linalg.cho_solve((self.interp_chol, True), kx.T).T

    def query(self, k: int, market, mu_bar, sg_bar) -> np.ndarray:
        n = len(mu_bar)
        if self.spec.kind == "portfolio":
            node_vals = np.broadcast_to(self.node_controls, (n, len(self.node_controls)))
        else:
            node_vals = np.empty((n, self.theta_grid.shape[0]))
            rows = np.column_stack([market[0], market[1]])
            for g, steps in enumerate(self.node_steps):
                if k == 0:
                    node_vals[:, g] = self._node_control_at_start(g, rows)
                else:
                    node_vals[:, g] = gp.predict_mean(steps[k - 1][1], rows)
        if self.theta_grid.shape[0] == 1:
            return node_vals[:, 0]
        w = self._weights(mu_bar, sg_bar)
        return np.sum(w * node_vals, axis=1)

    def _node_control_at_start(self, g: int, rows: np.ndarray) -> np.ndarray:
        # no step-0 surrogate: optimize directly against the node's step-1 value
        spec = self.spec
        theta = ModelParams(*self.theta_grid[g])
        steps = self.node_steps[g]
        next_value = (
            (lambda r: gp.predict_mean(steps[0][0], r)) if steps else _FixedThetaTerminal(spec)
        )
        rule = solver.gaussian_rule(_table_quad_points(spec))
        out = np.empty(rows.shape[0])
        seen = {}
        for i, (s, w) in enumerate(rows):
            key = (float(s), float(w))
            if key not in seen:
                seen[key] = _fixed_theta_optimize(spec, theta, float(s), float(w), 0, next_value, rule)[0]
            out[i] = seen[key]
        return out


class _FixedThetaTerminal:
    def __init__(self, spec: ProblemSpec):
        self.spec = spec

    def __call__(self, rows):
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        payoff = np.maximum(rows[:, 0] - self.spec.strike, 0.0)
        return self.spec.loss(payoff - rows[:, 1])


def _table_quad_points(spec: ProblemSpec) -> int:
    return 20 if spec.kind == "hedging" else 40


def _fixed_theta_optimize(spec, theta, s, w, k, next_value, rule, tol: float = 1e-6):
    """One-site control minimization when the model parameters are known."""
    z = np.asarray(rule.knots)
    ratio = np.exp(theta.mu * spec.dt + theta.sigma * math.sqrt(spec.dt) * z)

    def objective(u):
        rows = np.column_stack([s * ratio, w + u * s * (ratio - 1.0)])
        vals = np.asarray(next_value(rows), dtype=float)
        if not np.all(np.isfinite(vals)):
            raise FloatingPointError(f"non-finite continuation at u={u}")
        return float(vals @ np.asarray(rule.weights))

    lo, hi = spec.control_domain
    price, _ = _bs_call(k * spec.dt, s, spec.strike, spec.r, theta.sigma, spec.horizon)
    scale = max(float(price), 1.0)
    probes = (lo, 0.5 * (lo + hi), hi)
    probe_vals = [objective(u) for u in probes]
    if all(v < 1e-8 * scale for v in probe_vals):
        return float(lo), float(probe_vals[0])
    j = int(np.argmin(probe_vals))
    x0 = probes[j] if lo < probes[j] < hi else None
    u_best, f_best = minimize_scalar(objective, lo, hi, tol=tol, x0=x0)
    if probe_vals[j] < f_best:
        u_best, f_best = probes[j], probe_vals[j]
    return float(u_best), float(f_best)


def _fixed_theta_hedging_solve(spec, theta, cfg: SolverConfig, node_index: int):
    """Backward fixed-parameter hedging solve on (S, W) designs.

    Returns a tuple over k = 1..n_steps-1 of (value_surrogate,
    control_surrogate).  Designs are simulated under theta with the same
    price-tube wealth sampling as the main solver.
    """
    rule = solver.gaussian_rule(cfg.quad_points)
    rng = substream(cfg.seed, "ma-design", node_index)
    s = rng.uniform(0.5 * spec.strike, 2.0 * spec.strike, cfg.n_pilot)
    s_paths = [s.copy()]
    for k in range(1, spec.n_steps):
        z = rng.standard_normal(cfg.n_pilot)
        s = s * np.exp(theta.mu * spec.dt + theta.sigma * math.sqrt(spec.dt) * z)
        s_paths.append(s.copy())
    next_value = _FixedThetaTerminal(spec)
    value_kernel = control_kernel = None
    steps = []
    for k in range(spec.n_steps - 1, 0, -1):
        sk = s_paths[k]
        price, _ = _bs_call(k * spec.dt, sk, spec.strike, spec.r, theta.sigma, spec.horizon)
        wk = substream(cfg.seed, f"ma-wealth-{node_index}", k).uniform(0.5 * price, 1.5 * price)
        v = np.empty(cfg.n_pilot)
        u = np.empty(cfg.n_pilot)
        for i in range(cfg.n_pilot):
            u[i], v[i] = _fixed_theta_optimize(
                spec, theta, float(sk[i]), float(wk[i]), k, next_value, rule, tol=cfg.outer_tol
            )
        v = np.maximum(v, 0.0)
        inputs = np.column_stack([sk, wk])
        try:
            value_surrogate = gp.fit(
                inputs, v, family=cfg.gp_family, nugget=cfg.gp_nugget,
                **solver._fit_kwargs(cfg, value_kernel),
            )
            control_surrogate = gp.fit(
                inputs, u, family=cfg.gp_family, nugget=cfg.gp_nugget, prior_mean=0.0,
                **solver._fit_kwargs(cfg, control_kernel),
            )
        except Exception as exc:
            raise solver.SolveError(
                f"fixed-parameter node {node_index}, step {k}: surrogate fit failed: {exc}"
            ) from exc
        value_kernel, control_kernel = value_surrogate.kernel, control_surrogate.kernel
        steps.append((value_surrogate, control_surrogate))
        next_value = SurrogateValue(value_surrogate)
    return tuple(reversed(steps))


def theta_grid_over_initial_set(spec: ProblemSpec, beliefs0: Beliefs, shape: Tuple[int, int] = (8, 8)) -> np.ndarray:
    """Rectangular grid over the bounding box of the initial uncertainty set.

    The sigma leg is floored at a tenth of the initial estimate so every node
    is a usable model parameter even when the set's corner dips through zero.
    """
    m, n = shape
    if m < 1 or n < 1:
        raise ValueError(f"grid shape must be >= 1 per side, got {shape}")
    half_mu = beliefs0.sigma_bar * math.sqrt(spec.kappa / (beliefs0.n_eff * spec.dt))
    var_half = beliefs0.sigma_bar**2 * math.sqrt(2.0 * spec.kappa / beliefs0.n_eff)
    mus = np.linspace(beliefs0.mu_bar - half_mu, beliefs0.mu_bar + half_mu, m)
    var_lo = max(beliefs0.sigma_bar**2 - var_half, (0.1 * beliefs0.sigma_bar) ** 2)
    var_hi = beliefs0.sigma_bar**2 + var_half
    sgs = np.sqrt(np.linspace(var_lo, var_hi, n))
    mm, ss = np.meshgrid(mus, sgs, indexing="ij")
    return np.column_stack([mm.ravel(), ss.ravel()])


def myopic_adaptive_table(spec: ProblemSpec, theta_grid, cfg: SolverConfig) -> MyopicTable:
    """Solve the fixed-parameter problem on every grid node and cache the
    belief-interpolation factorization."""
    theta_grid = np.atleast_2d(np.asarray(theta_grid, dtype=float))
    if theta_grid.ndim != 2 or theta_grid.shape[1] != 2 or theta_grid.shape[0] < 1:
        raise ValueError(f"theta grid must be (G, 2) with G >= 1, got {theta_grid.shape}")
    if np.any(theta_grid[:, 1] <= 0):
        raise ValueError("grid sigma values must be > 0")
    node_controls = None
    node_steps = None
    if spec.kind == "portfolio":
        node_controls = np.array(
            [spec.project_control(merton_control(ModelParams(*t), spec.r, spec.gamma)) for t in theta_grid]
        )
    else:
        node_steps = tuple(
            _fixed_theta_hedging_solve(spec, ModelParams(*t), cfg, g) for g, t in enumerate(theta_grid)
        )
    lo = theta_grid.min(axis=0)
    span = theta_grid.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    kern = gp.KernelSpec(family="matern52", tau2=1.0, lengthscales=np.array([0.5, 0.5]), nugget=1e-5)
    zg = (theta_grid - lo) / span
    k_mat = gp._cross(kern, zg, zg) + kern.nugget**2 * np.eye(zg.shape[0])
    chol = linalg.cholesky(k_mat, lower=True)
    return MyopicTable(
        spec=spec,
        theta_grid=theta_grid,
        node_controls=node_controls,
        node_steps=node_steps,
        interp_kernel=kern,
        interp_chol=chol,
        grid_lo=lo,
        grid_span=span,
    )


class MyopicAdaptiveStrategy:
    """Plug the latest point estimate into the fixed-parameter solution."""

    def __init__(self, table: MyopicTable):
        self.table = table
        self.spec = table.spec
        self.kind = "myopic_adaptive"

    def controls(self, k, market, mu_bar, sg_bar) -> np.ndarray:
        return self.spec.project_control(self.table.query(k, market, mu_bar, sg_bar))


def myopic_adaptive(table: MyopicTable) -> MyopicAdaptiveStrategy:
    return MyopicAdaptiveStrategy(table)


class AdaptiveDeltaStrategy:
    """Hold the Black-Scholes delta evaluated at the current volatility belief."""

    def __init__(self, spec: ProblemSpec):
        if spec.kind != "hedging":
            raise ValueError("adaptive_delta applies to the hedging problem only")
        self.spec = spec
        self.kind = "adaptive_delta"

    def controls(self, k, market, mu_bar, sg_bar) -> np.ndarray:
        return np.asarray(
            bs_delta(k * self.spec.dt, market[0], self.spec.strike, self.spec.r, sg_bar, self.spec.horizon)
        )


def adaptive_delta(spec: ProblemSpec) -> AdaptiveDeltaStrategy:
    return AdaptiveDeltaStrategy(spec)


class MertonStaticStrategy:
    """Constant Merton fraction for one fixed parameter guess."""

    def __init__(self, spec: ProblemSpec, theta: ModelParams):
        if spec.kind != "portfolio":
            raise ValueError("merton_static applies to the portfolio problem only")
        self.spec = spec
        self.theta = theta
        self.kind = "merton_static"
        self._u = spec.project_control(merton_control(theta, spec.r, spec.gamma))

    def controls(self, k, market, mu_bar, sg_bar) -> np.ndarray:
        return np.full(len(mu_bar), self._u)


def merton_static(spec: ProblemSpec, theta: ModelParams) -> MertonStaticStrategy:
    return MertonStaticStrategy(spec, theta)


class ConstantStrategy:
    def __init__(self, spec: ProblemSpec, u: float):
        lo, hi = spec.control_domain
        if not lo <= u <= hi:
            raise ValueError(f"constant control {u} outside [{lo}, {hi}]")
        self.spec = spec
        self.u = float(u)
        self.kind = "constant"

    def controls(self, k, market, mu_bar, sg_bar) -> np.ndarray:
        return np.full(len(mu_bar), self.u)


def constant(spec: ProblemSpec, u: float) -> ConstantStrategy:
    return ConstantStrategy(spec, u)


# ---------------------------------------------------------------------------
# forward simulation


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Per-path terminal results plus everything needed to recompute them."""

    kind: str
    strategy: str
    seed: int
    terminal: np.ndarray  # W_T (portfolio) or H = payoff - W_T (hedging)
    objective: np.ndarray  # utility or loss per path
    theta_star: np.ndarray  # (n, 2) per-path true parameters
    lower_bound: float  # mean objective, the value estimate at the start state

    def histogram(self, bins: int = 40):
        counts, edges = np.histogram(self.terminal, bins=bins)
        return edges, counts


def evaluate(strategy, measure: TestMeasure, x0: AugmentedState, n_paths: int, seed: int) -> EvalReport:
    """Roll the strategy forward on n_paths shock paths drawn under the measure.

    Controls are queried per step from the strategy (projected into the
    admissible set), the market advances under the path's theta*, and beliefs
    update from the realized shock exactly as the backward pass assumes.
    """
    spec: ProblemSpec = strategy.spec
    if n_paths < 1:
        raise ValueError(f"need at least one path, got {n_paths}")
    if x0.k != 0:
        raise ValueError(f"evaluation starts at step 0, got {x0.k}")
    want = 1 if spec.kind == "portfolio" else 2
    if len(x0.market) != want:
        raise ValueError(f"{spec.kind} start state needs {want} market coordinates")
    if x0.beliefs.n_eff != spec.n_eff0:
        raise ValueError(f"start beliefs must carry n_eff={spec.n_eff0}, got {x0.beliefs.n_eff}")
    mu_star, sg_star = measure.draw(n_paths, spec, x0, substream(seed, "theta-star"))
    shocks = np.stack([substream(seed, "path", i).standard_normal(spec.n_steps) for i in range(n_paths)])
    mu_b = np.full(n_paths, x0.beliefs.mu_bar)
    sg_b = np.full(n_paths, x0.beliefs.sigma_bar)
    if spec.kind == "portfolio":
        y = np.full(n_paths, x0.market[0])
        market = (y,)
    else:
        s = np.full(n_paths, x0.market[0])
        w = np.full(n_paths, x0.market[1])
        market = (s, w)
    lo, hi = spec.control_domain
    for k in range(spec.n_steps):
        u = np.clip(np.asarray(strategy.controls(k, market, mu_b, sg_b), dtype=float), lo, hi)
        z = shocks[:, k]
        drift = np.exp(mu_star * spec.dt + sg_star * math.sqrt(spec.dt) * z)
        if spec.kind == "portfolio":
            y = y * (1.0 + spec.r * spec.dt + u * (drift - spec.r * spec.dt - 1.0))
            market = (y,)
        else:
            w = w + u * s * (drift - 1.0)
            s = s * drift
            market = (s, w)
        mu_b, sg_b = update_beliefs_batch(mu_b, sg_b, spec.n_eff_at(k), mu_star, sg_star, z, spec.dt)
    if spec.kind == "portfolio":
        terminal = y
        objective = crra_utility(y, spec.gamma)
    else:
        terminal = call_payoff(s, spec.strike) - w
        objective = spec.loss(terminal)
    return EvalReport(
        kind=spec.kind,
        strategy=strategy.kind,
        seed=int(seed),
        terminal=np.asarray(terminal, dtype=float),
        objective=np.asarray(objective, dtype=float),
        theta_star=np.column_stack([mu_star, sg_star]),
        lower_bound=float(np.mean(objective)),
    )


def report_stats(report: EvalReport) -> dict:
    """Mean, sample std, 95%-quantile, and mean loss of the terminal values."""
    x = report.terminal
    if x.size == 0:
        raise ValueError("no paths to summarize")
    stats = {
        "mean": float(np.mean(x)),
        "std": float(np.std(x, ddof=1)) if x.size > 1 else None,
        "q95": float(np.quantile(x, 0.95)),
        "V0": float(np.mean(report.objective)),
    }
    return stats


# ---------------------------------------------------------------------------
# report exports


def write_paths_csv(report: EvalReport, path: str) -> None:
    header = "w_terminal" if report.kind == "portfolio" else "hedging_error"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["path", header, "objective", "mu_star", "sigma_star"])
        for i in range(report.terminal.size):
            writer.writerow(
                [i, repr(float(report.terminal[i])), repr(float(report.objective[i])),
                 repr(float(report.theta_star[i, 0])), repr(float(report.theta_star[i, 1]))]
            )


def write_summary_json(report: EvalReport, path: str, config_echo: Optional[dict] = None) -> None:
    doc = {
        "kind": report.kind,
        "strategy": report.strategy,
        "seed": report.seed,
        "n_paths": int(report.terminal.size),
        "stats": report_stats(report),
        "lower_bound": report.lower_bound,
    }
    if config_echo is not None:
        doc["config"] = config_echo
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_histogram_csv(report: EvalReport, path: str, bins: int = 40) -> None:
    edges, counts = report.histogram(bins)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_left", "bin_right", "count"])
        for i in range(counts.size):
            writer.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(counts[i])])
