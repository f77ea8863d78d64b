"""Backward induction over experimental designs with GP surrogates.

The solver walks the time grid backwards.  At each interior step it lays
out a design over the augmented state (market coordinates plus belief
coordinates), solves the nested control-versus-adversary optimization at
every design site, and compresses the per-site results into two GP
surrogates: one for the step value, one for the optimizing control.
The collected steps form a PolicyBundle, the artifact the forward
evaluator consumes.

Portfolio sites live in (mu_bar, sigma_bar) only: the wealth power
factors out of the recursion, so a step value is the expected growth
factor to the power 1-gamma times the next value at the updated
beliefs.  Hedging sites live in (S, W, mu_bar, sigma_bar).

The two inner searches are deliberately different.  The portfolio
adversary minimizes and its optimum sits on the ellipsoid boundary, so
the search is one-dimensional in the boundary angle: a coarse uniform
scan guards against the wrong local valley, then a bounded polish
sharpens the winner.  The hedging adversary maximizes and its optimum
can be interior, so the search is a discrete maximum over a polar
(phi, rho) grid that always includes the set's center.
"""

from __future__ import annotations

import csv
import math
import os
from collections import namedtuple
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from . import gp
from .dynamics import (
    AugmentedState,
    Beliefs,
    ProblemSpec,
    UncertaintyEllipsoid,
    ellipsoid_point,
    uncertainty_set,
    update_beliefs_batch,
)
from .numerics import QuadratureRule, convex_hull, gaussian_rule, minimize_scalar
from .rng import substream

_PROVENANCE = ("pilot", "qmc_fill", "adaptive", "adversarial_edge")
_GROWTH_FLOOR = 1e-12  # relaxed controls can drive wealth through zero on tail knots


class SolveError(RuntimeError):
    """A backward-solve sub-step failed; the message carries step/site context."""


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs for one backward solve.

    mu0/sigma0 are the initial belief center: they set the pilot measure for
    design construction and the frozen set center when frozen_set is on.
    integration "monte_carlo" replaces the quadrature knots with fresh
    standard-normal draws per (step, site); mc_seed defaults to seed and can
    be varied alone so replications share one design but not the draws.
    """

    mu0: float
    sigma0: float
    n_pilot: int = 250
    n_qmc: int = 100
    n_adaptive: int = 50
    n_edge: int = 25
    quad_points: int = 100
    integration: str = "quadrature"
    inner_grid: Tuple[int, int] = (16, 8)
    inner_tol: float = 1e-6
    outer_tol: float = 1e-6
    flat_threshold: float = 1e-8
    gp_family: str = "matern52"
    gp_mode: str = "refit"  # refit | warm | freeze hyperparameters across steps
    gp_nugget: float = 1e-5
    seed: int = 0
    mc_seed: Optional[int] = None
    threads: int = 1
    inner_singleton_shortcut: bool = True
    frozen_set: bool = False  # ellipsoid pinned at the initial beliefs (static robust)
    diagnostics_dir: Optional[str] = None

    def __post_init__(self):
        if not (math.isfinite(self.mu0) and math.isfinite(self.sigma0)) or self.sigma0 <= 0:
            raise ValueError(f"initial beliefs must be finite with sigma0 > 0, got ({self.mu0}, {self.sigma0})")
        if self.n_pilot < 3:
            raise ValueError(f"n_pilot must be >= 3, got {self.n_pilot}")
        if self.n_qmc < 0 or self.n_adaptive < 0 or self.n_edge < 0:
            raise ValueError("design size counts must be >= 0")
        if self.quad_points < 1:
            raise ValueError(f"quad_points must be >= 1, got {self.quad_points}")
        if self.integration not in ("quadrature", "monte_carlo"):
            raise ValueError(f"integration must be quadrature or monte_carlo, got {self.integration!r}")
        n_phi, n_rho = self.inner_grid
        if n_phi < 1 or n_rho < 1:
            raise ValueError(f"inner_grid sides must be >= 1, got {self.inner_grid}")
        if self.inner_tol <= 0 or self.outer_tol <= 0 or self.flat_threshold <= 0:
            raise ValueError("tolerances must be > 0")
        if self.gp_family not in ("matern52", "sqexp"):
            raise ValueError(f"unknown gp_family {self.gp_family!r}")
        if self.gp_mode not in ("refit", "warm", "freeze"):
            raise ValueError(f"gp_mode must be refit, warm, or freeze, got {self.gp_mode!r}")
        if self.threads < 1:
            raise ValueError(f"threads must be >= 1, got {self.threads}")


@dataclass(frozen=True, eq=False)
class Design:
    """One time step's training sites plus how each one arose."""

    sites: Tuple[AugmentedState, ...]
    provenance: Tuple[str, ...]
    # (slot, parent beliefs) for every adversarial_edge site: the slot's
    # beliefs sit on the boundary of the parent's uncertainty set.
    edge_parents: Tuple[Tuple[int, Beliefs], ...] = ()

    def __post_init__(self):
        n = len(self.sites)
        if n < 2:
            raise ValueError(f"a design needs at least 2 sites, got {n}")
        if len(self.provenance) != n:
            raise ValueError("provenance must label every site")
        bad = set(self.provenance) - set(_PROVENANCE)
        if bad:
            raise ValueError(f"unknown provenance labels {sorted(bad)}")
        ks = {s.k for s in self.sites}
        if len(ks) != 1:
            raise ValueError(f"sites span several time steps {sorted(ks)}")
        rows = self.inputs()
        if np.unique(rows, axis=0).shape[0] != n:
            raise ValueError("design sites must be distinct")
        if len(self.sites[0].market) == 2:  # hedging
            for s in self.sites:
                if s.market[0] <= 0 or s.beliefs.sigma_bar <= 0:
                    raise ValueError("hedging sites need S > 0 and sigma_bar > 0")

    @property
    def k(self) -> int:
        return self.sites[0].k

    def inputs(self) -> np.ndarray:
        """Regression coordinates: (mu_bar, sigma_bar) or (S, W, mu_bar, sigma_bar)."""
        if len(self.sites[0].market) == 1:
            return np.array([(s.beliefs.mu_bar, s.beliefs.sigma_bar) for s in self.sites])
        return np.array(
            [(s.market[0], s.market[1], s.beliefs.mu_bar, s.beliefs.sigma_bar) for s in self.sites]
        )


@dataclass(frozen=True, eq=False)
class StepSolution:
    """Everything recorded at one interior time step."""

    k: int
    design: Design
    value_surrogate: gp.GpSurrogate
    control_surrogate: gp.GpSurrogate
    worst_case_records: np.ndarray  # (N, 4): phi, rho, mu, sigma; phi is nan at the center
    raw_values: np.ndarray
    raw_controls: np.ndarray


@dataclass(frozen=True, eq=False)
class PolicyBundle:
    """Fitted surrogates for every interior step plus the analytic terminal rule."""

    spec: ProblemSpec
    quadrature: QuadratureRule
    steps: Tuple[StepSolution, ...]  # ascending k = 1 .. n_steps-1
    terminal: str
    mode: str  # "adaptive" or "static_robust"

    def __post_init__(self):
        expect = tuple(range(1, self.spec.n_steps))
        got = tuple(s.k for s in self.steps)
        if got != expect:
            raise ValueError(f"bundle must cover interior steps {expect}, got {got}")

    def step(self, k: int) -> StepSolution:
        if not 1 <= k <= self.spec.n_steps - 1:
            raise ValueError(f"no surrogate at step {k}; interior steps are 1..{self.spec.n_steps - 1}")
        return self.steps[k - 1]

    def control_at(self, rows, k: int):
        """Projected control prediction at input rows for step k."""
        raw = gp.predict_mean(self.step(k).control_surrogate, np.asarray(rows, dtype=float))
        return self.spec.project_control(raw)

    def value_at(self, rows, k: int):
        return gp.predict_mean(self.step(k).value_surrogate, np.asarray(rows, dtype=float))


class TerminalValue:
    """Analytic end-of-horizon value on next-step input rows."""

    def __init__(self, spec: ProblemSpec):
        self.spec = spec

    def __call__(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if self.spec.kind == "portfolio":
            return np.full(rows.shape[0], 1.0 / (1.0 - self.spec.gamma))
        payoff = np.maximum(rows[:, 0] - self.spec.strike, 0.0)
        return self.spec.loss(payoff - rows[:, 1])


class SurrogateValue:
    """Next-step value read off a fitted surrogate."""

    def __init__(self, surrogate: gp.GpSurrogate):
        self.surrogate = surrogate

    def __call__(self, rows: np.ndarray) -> np.ndarray:
        return gp.predict_mean(self.surrogate, np.asarray(rows, dtype=float))


_PlainRule = namedtuple("_PlainRule", "knots weights")


def _bs_call(t, s, strike: float, r: float, sigma, horizon: float):
    """Black-Scholes call price and delta; at expiry the payoff and its indicator."""
    s = np.asarray(s, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    tau = horizon - t
    if tau <= 0:
        return np.maximum(s - strike, 0.0), (s > strike).astype(float)
    root = sigma * math.sqrt(tau)
    d1 = (np.log(s / strike) + (r + 0.5 * sigma**2) * tau) / root
    d2 = d1 - root
    price = s * norm.cdf(d1) - strike * math.exp(-r * tau) * norm.cdf(d2)
    return price, norm.cdf(d1)


# ---------------------------------------------------------------------------
# pilot simulation and experimental designs


def simulate_portfolio_pilots(spec: ProblemSpec, mu0: float, sigma0: float, n_pilot: int, seed: int) -> np.ndarray:
    """Belief paths under the pilot measure (truth = initial belief center).

    Returns (n_steps, n_pilot, 2): the (mu_bar, sigma_bar) cloud at every step
    k = 0..n_steps-1.  All paths start at (mu0, sigma0); the step-0 cloud is
    degenerate and only later steps feed hull construction.
    """
    rng = substream(seed, "pilot-shocks")
    mu = np.full(n_pilot, float(mu0))
    sg = np.full(n_pilot, float(sigma0))
    out = np.empty((spec.n_steps, n_pilot, 2))
    out[0, :, 0], out[0, :, 1] = mu, sg
    for k in range(1, spec.n_steps):
        z = rng.standard_normal(n_pilot)
        mu, sg = update_beliefs_batch(mu, sg, spec.n_eff_at(k - 1), mu0, sigma0, z, spec.dt)
        out[k, :, 0], out[k, :, 1] = mu, sg
    return out


def build_design_portfolio(
    k: int,
    pilots: np.ndarray,
    prev: Optional[StepSolution],
    sizes: Tuple[int, int, int],
    spec: ProblemSpec,
    *,
    seed: int = 0,
) -> Design:
    """Mixture design at step k: Sobol fill of the pilot-belief hull plus
    sites copied from the step-(k+1) design where the control was interior.

    The pilots only shape the hull; they are not design members.  At the last
    interior step there is no previous solution, so the fill stands alone.
    """
    n_pilot_hull, n_qmc, n_adaptive = sizes
    if pilots.shape[1] < n_pilot_hull:
        raise ValueError(f"need {n_pilot_hull} pilot paths, have {pilots.shape[1]}")
    cloud = pilots[k, :n_pilot_hull]
    hull = convex_hull(cloud)
    rows = [hull.fill(n_qmc)]
    prov = ["qmc_fill"] * n_qmc
    if n_adaptive > 0 and k < spec.n_steps - 1:
        if prev is None:
            raise ValueError(f"step {k}: adaptive sites need the step-{k + 1} solution")
        lo, hi = spec.control_domain
        interior = (prev.raw_controls > lo) & (prev.raw_controls < hi)
        cand = prev.design.inputs()[interior]
        if cand.shape[0] > n_adaptive:
            pick = substream(seed, "design-adaptive", k).choice(cand.shape[0], size=n_adaptive, replace=False)
            cand = cand[np.sort(pick)]
        rows.append(cand)
        prov += ["adaptive"] * cand.shape[0]
    coords = np.vstack(rows)
    _, keep = np.unique(coords, axis=0, return_index=True)
    keep = np.sort(keep)  # first occurrence of each distinct row, in input order
    coords = coords[keep]
    prov = [prov[i] for i in keep]
    n_eff = spec.n_eff_at(k)
    sites = tuple(
        AugmentedState(market=(1.0,), beliefs=Beliefs(float(m), float(s), n_eff), k=k)
        for m, s in coords
    )
    return Design(sites=sites, provenance=tuple(prov))


def simulate_hedging_pilots(
    spec: ProblemSpec, mu0: float, sigma0: float, sizes: Tuple[int, int, int], seed: int
):
    """Forward-evolved design clouds for the hedging problem.

    The 3-D (S, mu_bar, sigma_bar) cloud starts from randomized initials
    (mu_bar ~ U[0.5 mu0, 1.5 mu0], sigma_bar ~ U[0.6 sigma0, 1.3 sigma0],
    S ~ U[0.5 K, 2 K]) and is pulled forward one step at a time under each
    site's own beliefs.  At every interior step a few sites are moved onto
    the boundary of their own uncertainty set (adversarial edges), then
    n_qmc sites are replaced by a Sobol fill of the augmented cloud's hull;
    replacements propagate into later steps.  The wealth coordinate is drawn
    fresh per step around each site's Black-Scholes price.

    Returns a list over k = 0..n_steps-1 of dicts with keys s, w, mu, sg,
    prov, parents (w/parents absent at k = 0).
    """
    n_pilot, n_qmc, n_edge = sizes
    init = substream(seed, "pilot-init")
    mu = init.uniform(0.5 * mu0, 1.5 * mu0, n_pilot)
    sg = init.uniform(0.6 * sigma0, 1.3 * sigma0, n_pilot)
    s = init.uniform(0.5 * spec.strike, 2.0 * spec.strike, n_pilot)
    clouds = [{"s": s.copy(), "mu": mu.copy(), "sg": sg.copy(), "prov": ["pilot"] * n_pilot}]
    for k in range(1, spec.n_steps):
        z = substream(seed, "pilot-pull", k).standard_normal(n_pilot)
        n_prev = spec.n_eff_at(k - 1)
        ratio = np.exp(mu * spec.dt + sg * math.sqrt(spec.dt) * z)
        s = s * ratio
        mu, sg = update_beliefs_batch(mu, sg, n_prev, mu, sg, z, spec.dt)
        prov = ["pilot"] * n_pilot
        n_eff = spec.n_eff_at(k)
        parents = []
        if n_edge > 0:
            edge_rng = substream(seed, "design-edge", k)
            slots = edge_rng.choice(n_pilot, size=min(n_edge, n_pilot), replace=False)
            for i in np.sort(slots):
                parent = Beliefs(float(mu[i]), float(sg[i]), n_eff)
                ell = uncertainty_set(parent, spec.kappa, spec.dt)
                for _ in range(100):  # resample until the variance leg stays positive
                    phi = edge_rng.uniform(0.0, 2.0 * math.pi)
                    var_scale = 1.0 + math.sqrt(2.0 * spec.kappa / n_eff) * math.sin(phi)
                    if var_scale > 1e-12:
                        break
                else:
                    raise RuntimeError(f"step {k}: no boundary angle keeps sigma^2 positive")
                theta = ellipsoid_point(ell, phi, spec.kappa)
                mu[i], sg[i] = theta.mu, theta.sigma
                prov[i] = "adversarial_edge"
                parents.append((int(i), parent))
        if n_qmc > 0:
            cloud3 = np.column_stack([s, mu, sg])
            hull = convex_hull(cloud3)
            fill = hull.fill(n_qmc)
            pilot_slots = [i for i, p in enumerate(prov) if p == "pilot"]
            take = min(n_qmc, len(pilot_slots))
            pick = substream(seed, "design-qmc", k).choice(len(pilot_slots), size=take, replace=False)
            for j, slot_idx in enumerate(np.sort(pick)):
                i = pilot_slots[slot_idx]
                s[i], mu[i], sg[i] = fill[j]
                prov[i] = "qmc_fill"
        price, _ = _bs_call(k * spec.dt, s, spec.strike, spec.r, sg, spec.horizon)
        w = substream(seed, "design-wealth", k).uniform(0.5 * price, 1.5 * price)
        clouds.append(
            {"s": s.copy(), "w": w, "mu": mu.copy(), "sg": sg.copy(), "prov": prov, "parents": parents}
        )
    return clouds


def build_design_hedging(k: int, pilots, sizes: Tuple[int, int, int], spec: ProblemSpec) -> Design:
    """Materialize the step-k hedging design from the evolved pilot clouds."""
    if not 1 <= k <= spec.n_steps - 1:
        raise ValueError(f"hedging designs exist for interior steps only, got k={k}")
    cloud = pilots[k]
    n_eff = spec.n_eff_at(k)
    sites = tuple(
        AugmentedState(
            market=(float(cs), float(cw)),
            beliefs=Beliefs(float(cm), float(cg), n_eff),
            k=k,
        )
        for cs, cw, cm, cg in zip(cloud["s"], cloud["w"], cloud["mu"], cloud["sg"])
    )
    return Design(
        sites=sites,
        provenance=tuple(cloud["prov"]),
        edge_parents=tuple(cloud["parents"]),
    )


# ---------------------------------------------------------------------------
# inner (adversary) and outer (control) optimization


def _site_ellipsoid(x: AugmentedState, spec: ProblemSpec, frozen: Optional[UncertaintyEllipsoid]):
    if frozen is not None:
        return frozen
    return uncertainty_set(x.beliefs, spec.kappa, spec.dt)


def _polar_thetas(ell: UncertaintyEllipsoid, phi: np.ndarray, rho: np.ndarray):
    """Vectorized boundary/interior map; the variance leg clamps at zero."""
    c = ell.center
    mu = c.mu_bar + np.sqrt(rho / (c.n_eff * ell.dt)) * c.sigma_bar * np.cos(phi)
    s2 = c.sigma_bar**2 * (1.0 + np.sqrt(2.0 * rho / c.n_eff) * np.sin(phi))
    return mu, np.sqrt(np.maximum(s2, 0.0))


def _portfolio_theta_values(x, u, mu, sg, rule, next_value, spec) -> np.ndarray:
    """Quadrature value of one control against a batch of parameter points."""
    z = np.asarray(rule.knots)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))[:, None]
    sg = np.atleast_1d(np.asarray(sg, dtype=float))[:, None]
    b = x.beliefs
    growth = 1.0 + spec.r * spec.dt + u * (
        np.exp(mu * spec.dt + sg * math.sqrt(spec.dt) * z[None, :]) - spec.r * spec.dt - 1.0
    )
    growth = np.maximum(growth, _GROWTH_FLOOR)
    mu_next, sg_next = update_beliefs_batch(b.mu_bar, b.sigma_bar, b.n_eff, mu, sg, z[None, :], spec.dt)
    rows = np.column_stack([mu_next.ravel(), sg_next.ravel()])
    cont = np.asarray(next_value(rows), dtype=float).reshape(growth.shape)
    integrand = growth ** (1.0 - spec.gamma) * cont
    if not np.all(np.isfinite(integrand)):
        raise FloatingPointError(f"non-finite propagated value at u={u}")
    return integrand @ np.asarray(rule.weights)


def _hedging_theta_values(x, u, mu, sg, rule, next_value, spec) -> np.ndarray:
    z = np.asarray(rule.knots)
    mu = np.atleast_1d(np.asarray(mu, dtype=float))[:, None]
    sg = np.atleast_1d(np.asarray(sg, dtype=float))[:, None]
    s, w = x.market
    b = x.beliefs
    ratio = np.exp(mu * spec.dt + sg * math.sqrt(spec.dt) * z[None, :])
    s_next = s * ratio
    w_next = w + u * s * (ratio - 1.0)
    mu_next, sg_next = update_beliefs_batch(b.mu_bar, b.sigma_bar, b.n_eff, mu, sg, z[None, :], spec.dt)
    rows = np.column_stack([s_next.ravel(), w_next.ravel(), mu_next.ravel(), sg_next.ravel()])
    cont = np.asarray(next_value(rows), dtype=float).reshape(ratio.shape)
    if not np.all(np.isfinite(cont)):
        raise FloatingPointError(f"non-finite propagated value at u={u}")
    return cont @ np.asarray(rule.weights)


def inner_worst_case_portfolio(
    x: AugmentedState,
    u: float,
    next_value,
    rule,
    spec: ProblemSpec,
    *,
    tol: float = 1e-6,
    scan: int = 16,
    phi0: Optional[float] = None,
    ellipsoid: Optional[UncertaintyEllipsoid] = None,
    force_generic: bool = False,
):
    """Adversary's minimum over the uncertainty-set boundary: (phi_check, value).

    A collapsed set (kappa = 0) evaluates the center directly and reports the
    angle as absent; force_generic runs the scan-and-polish machinery anyway,
    where every angle maps to the center.
    """
    ell = _site_ellipsoid(x, spec, ellipsoid)
    c = ell.center
    if ell.kappa <= 0 and not force_generic:
        val = _portfolio_theta_values(x, u, c.mu_bar, c.sigma_bar, rule, next_value, spec)
        return None, float(val[0])
    phis = np.linspace(0.0, 2.0 * math.pi, scan, endpoint=False)
    if phi0 is not None:
        phis = np.append(phis, float(phi0) % (2.0 * math.pi))
    rho = np.full(phis.shape, ell.kappa)
    mu, sg = _polar_thetas(ell, phis, rho)
    vals = _portfolio_theta_values(x, u, mu, sg, rule, next_value, spec)
    j = int(np.argmin(vals))
    width = 2.0 * math.pi / scan

    def objective(phi):
        m, s = _polar_thetas(ell, np.array([phi]), np.array([ell.kappa]))
        return float(_portfolio_theta_values(x, u, m, s, rule, next_value, spec)[0])

    phi_best, val_best = minimize_scalar(
        objective, phis[j] - width, phis[j] + width, tol=tol, x0=float(phis[j])
    )
    if vals[j] < val_best:  # polish must never lose to its own bracket center
        phi_best, val_best = float(phis[j]), float(vals[j])
    return phi_best % (2.0 * math.pi), float(val_best)


def inner_worst_case_hedging(
    x: AugmentedState,
    u: float,
    next_value,
    rule,
    spec: ProblemSpec,
    grid: Tuple[int, int] = (16, 8),
    *,
    ellipsoid: Optional[UncertaintyEllipsoid] = None,
    force_generic: bool = False,
):
    """Adversary's maximum over a polar grid of the set: (phi, rho, value).

    The candidate list starts with the set center (rho = 0), then the
    (n_phi x n_rho) grid with rho shells kappa*(j+1)/n_rho.  Ties keep the
    first candidate, so a flat continuation returns the center.  The (1, 1)
    grid is the degenerate center-only case.
    """
    ell = _site_ellipsoid(x, spec, ellipsoid)
    n_phi, n_rho = grid
    center_only = (n_phi == 1 and n_rho == 1) or (ell.kappa <= 0 and not force_generic)
    if center_only:
        phis = np.array([0.0])
        rhos = np.array([0.0])
    else:
        gp_phi = 2.0 * math.pi * np.arange(n_phi) / n_phi
        gp_rho = ell.kappa * (np.arange(n_rho) + 1.0) / n_rho
        pp, rr = np.meshgrid(gp_phi, gp_rho, indexing="ij")
        phis = np.concatenate([[0.0], pp.ravel()])
        rhos = np.concatenate([[0.0], rr.ravel()])
    mu, sg = _polar_thetas(ell, phis, rhos)
    vals = _hedging_theta_values(x, u, mu, sg, rule, next_value, spec)
    j = int(np.argmax(vals))
    phi = math.nan if rhos[j] == 0.0 else float(phis[j])
    return phi, float(rhos[j]), float(vals[j])


def outer_optimize(
    x: AugmentedState,
    next_value,
    rule,
    spec: ProblemSpec,
    mode: str,
    *,
    inner_grid: Tuple[int, int] = (16, 8),
    inner_tol: float = 1e-6,
    tol: float = 1e-6,
    flat_threshold: float = 1e-8,
    ellipsoid: Optional[UncertaintyEllipsoid] = None,
    singleton_shortcut: bool = True,
):
    """Optimize the control against the adversarial inner value at one site.

    Returns (u_check, value, record) with record = (phi, rho, mu, sigma) of
    the worst-case parameters at u_check; phi is nan when the worst case is
    the set center.
    """
    ell = _site_ellipsoid(x, spec, ellipsoid)
    force = not singleton_shortcut
    if mode == "portfolio_min_inner":
        lo, hi = spec.outer_domain()

        def neg_inner(u):
            return -inner_worst_case_portfolio(
                x, u, next_value, rule, spec,
                tol=inner_tol, scan=inner_grid[0], ellipsoid=ellipsoid, force_generic=force,
            )[1]

        u_best, f_best = minimize_scalar(neg_inner, lo, hi, tol=tol)
        for u_end in (lo, hi):  # the bounded search never lands exactly on the ends
            f_end = neg_inner(u_end)
            if f_end < f_best:
                u_best, f_best = u_end, f_end
        phi, val = inner_worst_case_portfolio(
            x, u_best, next_value, rule, spec,
            tol=inner_tol, scan=inner_grid[0], ellipsoid=ellipsoid, force_generic=force,
        )
        if phi is None:
            record = (math.nan, 0.0, ell.center.mu_bar, ell.center.sigma_bar)
        else:
            mu, sg = _polar_thetas(ell, np.array([phi]), np.array([ell.kappa]))
            record = (float(phi), float(ell.kappa), float(mu[0]), float(sg[0]))
        return float(u_best), float(val), record

    if mode == "hedging_max_inner":
        lo, hi = spec.control_domain

        def inner_val(u):
            return inner_worst_case_hedging(
                x, u, next_value, rule, spec, inner_grid, ellipsoid=ellipsoid, force_generic=force,
            )[2]

        price, _ = _bs_call(x.k * spec.dt, x.market[0], spec.strike, spec.r, x.beliefs.sigma_bar, spec.horizon)
        scale = max(float(price), 1.0)
        probes = (lo, 0.5 * (lo + hi), hi)
        probe_vals = [inner_val(u) for u in probes]
        if all(v < flat_threshold * scale for v in probe_vals):
            # super-hedged region: the loss is numerically zero whatever we do
            c = ell.center
            return float(lo), float(probe_vals[0]), (math.nan, 0.0, c.mu_bar, c.sigma_bar)
        j = int(np.argmin(probe_vals))
        x0 = probes[j] if lo < probes[j] < hi else None
        u_best, f_best = minimize_scalar(inner_val, lo, hi, tol=tol, x0=x0)
        if probe_vals[j] < f_best:
            u_best, f_best = probes[j], probe_vals[j]
        phi, rho, val = inner_worst_case_hedging(
            x, u_best, next_value, rule, spec, inner_grid, ellipsoid=ellipsoid, force_generic=force,
        )
        mu, sg = _polar_thetas(ell, np.array([0.0 if math.isnan(phi) else phi]), np.array([rho]))
        return float(u_best), float(val), (phi, float(rho), float(mu[0]), float(sg[0]))

    raise ValueError(f"unknown outer mode {mode!r}")


# ---------------------------------------------------------------------------
# the backward pass


def _site_rule(cfg: SolverConfig, shared_rule, k: int, site_index: int):
    if cfg.integration == "quadrature":
        return shared_rule
    seed = cfg.seed if cfg.mc_seed is None else cfg.mc_seed
    z = substream(seed, f"mc-knots-{k}", site_index).standard_normal(cfg.quad_points)
    return _PlainRule(knots=z, weights=np.full(cfg.quad_points, 1.0 / cfg.quad_points))


def _solve_chunk(payload):
    """Worker: nested optimization over a slice of one step's sites."""
    sites, indices, spec, cfg, mode, next_value, shared_rule, frozen = payload
    n = len(sites)
    v = np.empty(n)
    u = np.empty(n)
    rec = np.empty((n, 4))
    for i, (site, idx) in enumerate(zip(sites, indices)):
        rule = _site_rule(cfg, shared_rule, site.k, idx)
        try:
            u_i, v_i, rec_i = outer_optimize(
                site, next_value, rule, spec, mode,
                inner_grid=cfg.inner_grid,
                inner_tol=cfg.inner_tol,
                tol=cfg.outer_tol,
                flat_threshold=cfg.flat_threshold,
                ellipsoid=frozen,
                singleton_shortcut=cfg.inner_singleton_shortcut,
            )
        except Exception as exc:
            raise SolveError(f"step {site.k}, site {idx}: {exc}") from exc
        v[i], u[i], rec[i] = v_i, u_i, rec_i
    return v, u, rec


def _optimize_design(design: Design, spec, cfg, mode, next_value, shared_rule, frozen):
    n = len(design.sites)
    if cfg.threads <= 1 or n < 2 * cfg.threads:
        return _solve_chunk((design.sites, list(range(n)), spec, cfg, mode, next_value, shared_rule, frozen))
    bounds = np.linspace(0, n, cfg.threads + 1).astype(int)
    payloads = [
        (design.sites[a:b], list(range(a, b)), spec, cfg, mode, next_value, shared_rule, frozen)
        for a, b in zip(bounds[:-1], bounds[1:])
        if b > a
    ]
    with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
        parts = list(pool.map(_solve_chunk, payloads))
    v = np.concatenate([p[0] for p in parts])
    u = np.concatenate([p[1] for p in parts])
    rec = np.vstack([p[2] for p in parts])
    return v, u, rec


def _fit_kwargs(cfg: SolverConfig, prev_kernel):
    if cfg.gp_mode == "refit" or prev_kernel is None:
        return {"init": None, "freeze": False}
    return {"init": prev_kernel, "freeze": cfg.gp_mode == "freeze"}


def _write_diagnostics(path: str, design: Design, v, u, rec):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    coords = design.inputs()
    coord_names = ["mu_bar", "sigma_bar"] if coords.shape[1] == 2 else ["s", "w", "mu_bar", "sigma_bar"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(coord_names + ["provenance", "value", "control", "phi_check", "rho_check"])
        for i in range(coords.shape[0]):
            writer.writerow(
                [repr(float(c)) for c in coords[i]]
                + [design.provenance[i], repr(float(v[i])), repr(float(u[i])),
                   repr(float(rec[i, 0])), repr(float(rec[i, 1]))]
            )


def solve(spec: ProblemSpec, cfg: SolverConfig) -> PolicyBundle:
    """Backward pass: design, per-site saddle solves, surrogate fits per step.

    The terminal step is analytic.  Interior steps run from the last one
    down to k = 1; each records raw per-site results, the worst-case
    parameter angles, and the two fitted surrogates.  Honors cfg.frozen_set
    by pinning every uncertainty set at the initial beliefs.
    """
    if cfg.quad_points < 2:
        raise ValueError(f"quadrature size must be >= 2, got {cfg.quad_points}")
    min_design = cfg.n_qmc if spec.kind == "portfolio" else cfg.n_pilot
    if min_design < 10:
        raise ValueError(f"design size must be >= 10, got {min_design}")
    rule = gaussian_rule(cfg.quad_points)
    mode = "portfolio_min_inner" if spec.kind == "portfolio" else "hedging_max_inner"
    if spec.kind == "portfolio":
        pilots = simulate_portfolio_pilots(spec, cfg.mu0, cfg.sigma0, cfg.n_pilot, cfg.seed)
    else:
        pilots = simulate_hedging_pilots(
            spec, cfg.mu0, cfg.sigma0, (cfg.n_pilot, cfg.n_qmc, cfg.n_edge), cfg.seed
        )
    frozen = None
    if cfg.frozen_set:
        frozen = uncertainty_set(
            Beliefs(cfg.mu0, cfg.sigma0, spec.n_eff0), spec.kappa, spec.dt
        )
    next_value = TerminalValue(spec)
    value_kernel = control_kernel = None
    steps = []
    prev_solution = None
    for k in range(spec.n_steps - 1, 0, -1):
        try:
            if spec.kind == "portfolio":
                design = build_design_portfolio(
                    k, pilots, prev_solution, (cfg.n_pilot, cfg.n_qmc, cfg.n_adaptive), spec, seed=cfg.seed
                )
            else:
                design = build_design_hedging(k, pilots, (cfg.n_pilot, cfg.n_qmc, cfg.n_edge), spec)
        except ValueError as exc:
            raise SolveError(f"step {k}: design construction failed: {exc}") from exc
        v, u, rec = _optimize_design(design, spec, cfg, mode, next_value, rule, frozen)
        if spec.kind == "hedging":
            v = np.maximum(v, 0.0)  # the loss recursion cannot go negative
        inputs = design.inputs()
        try:
            value_surrogate = gp.fit(
                inputs, v, family=cfg.gp_family, nugget=cfg.gp_nugget, **_fit_kwargs(cfg, value_kernel)
            )
            control_surrogate = gp.fit(
                inputs, u, family=cfg.gp_family, nugget=cfg.gp_nugget, prior_mean=0.0,
                **_fit_kwargs(cfg, control_kernel),
            )
        except Exception as exc:
            raise SolveError(f"step {k}: surrogate fit failed: {exc}") from exc
        value_kernel, control_kernel = value_surrogate.kernel, control_surrogate.kernel
        if cfg.diagnostics_dir:
            _write_diagnostics(
                os.path.join(cfg.diagnostics_dir, f"design_step_{k:02d}.csv"), design, v, u, rec
            )
        solution = StepSolution(
            k=k,
            design=design,
            value_surrogate=value_surrogate,
            control_surrogate=control_surrogate,
            worst_case_records=rec,
            raw_values=v,
            raw_controls=u,
        )
        steps.append(solution)
        prev_solution = solution
        next_value = SurrogateValue(value_surrogate)
    terminal = "crra_reduced" if spec.kind == "portfolio" else "loss_at_expiry"
    return PolicyBundle(
        spec=spec,
        quadrature=rule,
        steps=tuple(reversed(steps)),
        terminal=terminal,
        mode="static_robust" if cfg.frozen_set else "adaptive",
    )


def macro_replicate(
    spec: ProblemSpec,
    cfg: SolverConfig,
    reps: int,
    probes: Sequence[AugmentedState],
    seeds: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """Re-run the whole solve under fresh seeds; control predictions at probes.

    Returns (reps, len(probes)).  Distinct seeds are derived from cfg.seed
    unless given explicitly.
    """
    if reps < 2:
        raise ValueError(f"need at least 2 replications, got {reps}")
    if not probes:
        raise ValueError("need at least one probe state")
    if seeds is None:
        seeds = [cfg.seed + i for i in range(reps)]
    seeds = [int(s) for s in seeds]
    if len(seeds) != reps or len(set(seeds)) != reps:
        raise ValueError("seeds must be one distinct value per replication")
    for p in probes:
        if not 1 <= p.k <= spec.n_steps - 1:
            raise ValueError(f"probe step {p.k} has no surrogate (interior steps are 1..{spec.n_steps - 1})")
    out = np.empty((reps, len(probes)))
    for i, seed in enumerate(seeds):
        try:
            bundle = solve(spec, replace(cfg, seed=seed))
            for j, p in enumerate(probes):
                rows = (
                    [[p.beliefs.mu_bar, p.beliefs.sigma_bar]]
                    if spec.kind == "portfolio"
                    else [[p.market[0], p.market[1], p.beliefs.mu_bar, p.beliefs.sigma_bar]]
                )
                out[i, j] = float(np.asarray(bundle.control_at(rows, p.k))[0])
        except Exception as exc:
            raise SolveError(f"macro-replication {i} (seed {seed}) failed: {exc}") from exc
    return out
