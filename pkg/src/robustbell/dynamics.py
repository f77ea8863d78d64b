"""Problem dynamics: states, belief recursions, transitions, uncertainty sets.

The market log-return over one step of length dt under parameters
theta = (mu, sigma) is mu*dt + sigma*sqrt(dt)*Z with Z standard normal.  The
controller never observes theta; it carries running maximum-likelihood
estimates (mu_bar, sigma_bar) built from the observed returns, updated by the
recursions

    mu_bar'      = (n*mu_bar + (mu + sigma*Z/sqrt(dt))) / (n + 1)
    sigma_bar'^2 = n/(n+1) * sigma_bar^2
                   + n/(n+1)^2 * ((mu_bar - mu)*sqrt(dt) - sigma*Z)^2

where n is the effective sample size (number of observations the current
estimate is worth; it grows by one per step).  The adversary in the robust
Bellman recursion picks theta inside the confidence ellipsoid

    n*dt/sigma_bar^2 * (mu - mu_bar)^2
    + n/(2*sigma_bar^4) * (sigma^2 - sigma_bar^2)^2  <=  kappa

whose radius kappa is the chi-square(2 dof) quantile at confidence 1 - alpha.

Two built-in problems share this machinery:

* portfolio: market state is wealth y, control u is the fraction invested in
  the risky asset, objective is terminal CRRA utility y^(1-gamma)/(1-gamma);
* hedging: market state is (S, W) = (stock, hedge-portfolio wealth), control
  u is the number of shares held, objective is an asymmetric loss
  l(h) = h^+ + lam*h^- of the terminal hedging error h = payoff(S_T) - W_T.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy.stats import norm


@dataclass(frozen=True)
class ModelParams:
    """Market parameters theta = (mu, sigma); sigma may be 0 (degenerate)."""

    mu: float
    sigma: float

    def __post_init__(self):
        if not math.isfinite(self.mu) or not math.isfinite(self.sigma):
            raise ValueError("model parameters must be finite")
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")


@dataclass(frozen=True)
class Beliefs:
    """Running MLE estimates with their effective sample size n_eff >= 1."""

    mu_bar: float
    sigma_bar: float
    n_eff: int

    def __post_init__(self):
        if self.sigma_bar < 0:
            raise ValueError(f"sigma_bar must be >= 0, got {self.sigma_bar}")
        if self.n_eff < 1:
            raise ValueError(f"n_eff must be >= 1, got {self.n_eff}")


@dataclass(frozen=True)
class AugmentedState:
    """Market state, beliefs, and the time index k (time is t_k = k*dt).

    market is (y,) for the portfolio problem and (S, W) for hedging.
    """

    market: Tuple[float, ...]
    beliefs: Beliefs
    k: int


@dataclass(frozen=True)
class LossFunction:
    """Asymmetric terminal loss l(h) = h^+ + lam * h^-, lam >= 0.

    lam = 1 is absolute error; lam = 0 ignores windfalls (h < 0 costs nothing).
    """

    lam: float

    def __post_init__(self):
        if self.lam < 0 or not math.isfinite(self.lam):
            raise ValueError(f"loss weight lam must be finite and >= 0, got {self.lam}")

    def __call__(self, h):
        h = np.asarray(h, dtype=float)
        out = np.maximum(h, 0.0) + self.lam * np.maximum(-h, 0.0)
        return float(out) if out.ndim == 0 else out


def chi2_quantile_2dof(p: float) -> float:
    """Quantile of the chi-square distribution with 2 degrees of freedom.

    Closed form -2*ln(1-p) since chi2(2) is Exp(1/2).  p must lie in (0, 1);
    p -> 0 gives radius -> 0 (robustness collapses to the point estimate).
    """
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must be in (0, 1), got {p}")
    return -2.0 * math.log1p(-p)


@dataclass(frozen=True)
class UncertaintyEllipsoid:
    """Confidence set for theta around a Beliefs center.

    The set is { (mu, sigma): constraint_value(mu, sigma) <= kappa } with the
    quadratic form given in the module docstring.  kappa = 0 degenerates to
    the singleton {(mu_bar, sigma_bar)}.
    """

    center: Beliefs
    kappa: float
    dt: float

    def constraint_value(self, mu: float, sigma: float) -> float:
        """Left-hand side of the ellipsoid inequality at (mu, sigma)."""
        c = self.center
        if c.sigma_bar == 0.0:
            # degenerate center: only the center itself is in the set
            return 0.0 if (mu == c.mu_bar and sigma == c.sigma_bar) else math.inf
        s2 = c.sigma_bar**2
        return c.n_eff * self.dt / s2 * (mu - c.mu_bar) ** 2 + c.n_eff / (2.0 * s2**2) * (
            sigma**2 - s2
        ) ** 2

    def contains(self, mu: float, sigma: float, tol: float = 1e-12) -> bool:
        return self.constraint_value(mu, sigma) <= self.kappa + tol


def uncertainty_set(beliefs: Beliefs, kappa: float, dt: float) -> UncertaintyEllipsoid:
    """Build the confidence ellipsoid around beliefs with squared radius kappa."""
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if beliefs.sigma_bar == 0.0 and kappa > 0:
        raise ValueError("sigma_bar = 0 admits no nondegenerate uncertainty set")
    return UncertaintyEllipsoid(center=beliefs, kappa=float(kappa), dt=float(dt))


def ellipsoid_point(e: UncertaintyEllipsoid, phi: float, rho: float) -> ModelParams:
    """Map polar coordinates (phi, rho) to a point of the ellipsoid.

    rho in [0, kappa] selects the shell (rho = kappa is the boundary, rho = 0
    the center) and phi in [0, 2*pi) the angle:

        mu      = mu_bar + sqrt(rho/(n_eff*dt)) * sigma_bar * cos(phi)
        sigma^2 = max(0, sigma_bar^2 * (1 + sqrt(2*rho/n_eff) * sin(phi)))

    Without the clamp the constraint value of the image equals rho exactly.
    """
    if rho < 0 or rho > e.kappa + 1e-12:
        raise ValueError(f"rho must be in [0, kappa={e.kappa}], got {rho}")
    c = e.center
    if rho == 0.0:
        return ModelParams(mu=c.mu_bar, sigma=c.sigma_bar)
    mu = c.mu_bar + math.sqrt(rho / (c.n_eff * e.dt)) * c.sigma_bar * math.cos(phi)
    s2 = c.sigma_bar**2 * (1.0 + math.sqrt(2.0 * rho / c.n_eff) * math.sin(phi))
    return ModelParams(mu=mu, sigma=math.sqrt(max(0.0, s2)))


def drift_interval(beliefs: Beliefs, sigma: float, alpha: float, dt: float) -> Tuple[float, float]:
    """Two-sided confidence interval for the drift when sigma is known.

    Returns mu_bar -/+ sigma*q/sqrt(n_eff*dt) with q the standard normal
    quantile at 1 - alpha/2.  alpha -> 1 collapses the interval to {mu_bar}.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if sigma <= 0:
        raise ValueError(f"known sigma must be > 0, got {sigma}")
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    q = norm.ppf(1.0 - alpha / 2.0)
    half = sigma * q / math.sqrt(beliefs.n_eff * dt)
    return beliefs.mu_bar - half, beliefs.mu_bar + half


def update_beliefs(beliefs: Beliefs, theta: ModelParams, z: float, dt: float) -> Beliefs:
    """One-step MLE update after observing the return generated by (theta, z)."""
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    mu_b, sig_b = update_beliefs_batch(
        beliefs.mu_bar, beliefs.sigma_bar, beliefs.n_eff, theta.mu, theta.sigma, z, dt
    )
    return Beliefs(mu_bar=float(mu_b), sigma_bar=float(sig_b), n_eff=beliefs.n_eff + 1)


def update_beliefs_batch(mu_bar, sigma_bar, n_eff, mu, sigma, z, dt):
    """Vectorized belief update; broadcasts over any mix of array arguments.

    Returns (mu_bar', sigma_bar').  Same arithmetic as update_beliefs, used by
    the solver and evaluator hot paths.
    """
    mu_bar = np.asarray(mu_bar, dtype=float)
    sigma_bar = np.asarray(sigma_bar, dtype=float)
    z = np.asarray(z, dtype=float)
    n = float(n_eff)
    obs = mu + sigma * z / math.sqrt(dt)
    mu_next = (n * mu_bar + obs) / (n + 1.0)
    dev = (mu_bar - mu) * math.sqrt(dt) - sigma * z
    var_next = n / (n + 1.0) * sigma_bar**2 + n / (n + 1.0) ** 2 * dev**2
    return mu_next, np.sqrt(var_next)


def _growth_factor(u, r, dt, mu, sigma, z):
    """Per-step wealth growth 1 + r*dt + u*(e^{mu*dt+sigma*sqrt(dt)*z} - r*dt - 1)."""
    excess = np.exp(mu * dt + sigma * math.sqrt(dt) * z) - r * dt - 1.0
    return 1.0 + r * dt + u * excess


def transition_portfolio(
    x: AugmentedState, u: float, theta: ModelParams, z: float, spec: "ProblemSpec"
) -> AugmentedState:
    """Advance the portfolio state one step: wealth compounds, beliefs update.

    u is the fraction of wealth in the risky asset; u = 0 compounds at the
    riskless rate, u = 1 holds the risky asset outright.
    """
    (y,) = x.market
    if y <= 0:
        raise ValueError(f"wealth must be positive, got {y}")
    g = float(_growth_factor(u, spec.r, spec.dt, theta.mu, theta.sigma, z))
    y_next = y * g
    if y_next <= 0:
        raise ValueError(f"control u={u} drives wealth nonpositive (growth factor {g})")
    return AugmentedState(
        market=(y_next,),
        beliefs=update_beliefs(x.beliefs, theta, z, spec.dt),
        k=x.k + 1,
    )


def transition_hedging(
    x: AugmentedState, u: float, theta: ModelParams, z: float, spec: "ProblemSpec"
) -> AugmentedState:
    """Advance the hedging state one step holding u shares over the period.

    S' = S * e^{mu*dt + sigma*sqrt(dt)*z};  W' = W + u * (S' - S).
    """
    s, w = x.market
    if s <= 0:
        raise ValueError(f"stock price must be positive, got {s}")
    ratio = math.exp(theta.mu * spec.dt + theta.sigma * math.sqrt(spec.dt) * z)
    s_next = s * ratio
    w_next = w + u * s * (ratio - 1.0)
    return AugmentedState(
        market=(s_next, w_next),
        beliefs=update_beliefs(x.beliefs, theta, z, spec.dt),
        k=x.k + 1,
    )


def crra_utility(y: float, gamma: float):
    """CRRA utility y^(1-gamma)/(1-gamma), gamma > 0, gamma != 1 (accepts arrays)."""
    if gamma <= 0 or gamma == 1:
        raise ValueError(f"gamma must be > 0 and != 1, got {gamma}")
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("CRRA utility requires positive wealth")
    out = y ** (1.0 - gamma) / (1.0 - gamma)
    return float(out) if out.ndim == 0 else out


def call_payoff(s, strike: float):
    """European call payoff (s - strike)^+ (accepts arrays)."""
    if strike <= 0:
        raise ValueError(f"strike must be > 0, got {strike}")
    out = np.maximum(np.asarray(s, dtype=float) - strike, 0.0)
    return float(out) if out.ndim == 0 else out


_KINDS = ("portfolio", "hedging")


@dataclass(frozen=True)
class ProblemSpec:
    """Static description of one control problem instance.

    Fields not used by a problem kind stay None (gamma for hedging, strike /
    loss / k0 for the portfolio).  Horizon is T = n_steps * dt.  alpha is the
    robustness level: the adversary's set has confidence 1 - alpha, so
    alpha = 1 switches robustness off (kappa = 0).
    """

    kind: str
    r: float
    dt: float
    n_steps: int
    alpha: float
    gamma: Optional[float] = None
    strike: Optional[float] = None
    loss: Optional[LossFunction] = None
    k0: Optional[int] = None
    control_domain: Tuple[float, float] = (0.0, 1.0)
    relaxed_control_domain: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        if self.dt <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError(f"n_steps must be >= 1, got {self.n_steps}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        lo, hi = self.control_domain
        if not lo < hi:
            raise ValueError(f"control_domain must be a proper interval, got {self.control_domain}")
        if self.kind == "portfolio" and self.relaxed_control_domain is None:
            # searching past the admissible box sharpens the fitted control map
            object.__setattr__(self, "relaxed_control_domain", (lo - 0.2, hi + 0.2))
        if self.relaxed_control_domain is not None:
            rlo, rhi = self.relaxed_control_domain
            if rlo > lo or rhi < hi:
                raise ValueError("relaxed_control_domain must contain control_domain")
        if self.kind == "portfolio":
            if self.gamma is None or self.gamma <= 0 or self.gamma == 1:
                raise ValueError(f"portfolio requires gamma > 0, gamma != 1, got {self.gamma}")
        else:
            if self.strike is None or self.strike <= 0:
                raise ValueError(f"hedging requires strike > 0, got {self.strike}")
            if self.loss is None:
                raise ValueError("hedging requires a loss function")
            if self.k0 is None or self.k0 < 1:
                raise ValueError(f"hedging requires prior weight k0 >= 1, got {self.k0}")

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def kappa(self) -> float:
        """Squared ellipsoid radius; 0 when alpha = 1 (no robustness)."""
        if self.alpha >= 1.0:
            return 0.0
        return chi2_quantile_2dof(1.0 - self.alpha)

    @property
    def n_eff0(self) -> int:
        """Effective sample size of the time-0 beliefs (k0 for hedging, else 1)."""
        return self.k0 if self.kind == "hedging" else 1

    def n_eff_at(self, k: int) -> int:
        """Effective sample size after k observed steps."""
        return self.n_eff0 + k

    def outer_domain(self) -> Tuple[float, float]:
        """Domain the outer optimizer searches; defaults to the control domain."""
        return self.relaxed_control_domain or self.control_domain

    def project_control(self, u):
        """Clip a (possibly relaxed) control back into the admissible set."""
        lo, hi = self.control_domain
        out = np.clip(np.asarray(u, dtype=float), lo, hi)
        return float(out) if out.ndim == 0 else out

    def terminal_value(self, market: np.ndarray) -> np.ndarray:
        """Exact terminal objective on an (m, state_dim) array of market states.

        Portfolio: reduced terminal value 1/(1-gamma) (the wealth power is
        factored out of the recursion).  Hedging: loss of the hedging error.
        """
        market = np.atleast_2d(np.asarray(market, dtype=float))
        if self.kind == "portfolio":
            return np.full(market.shape[0], 1.0 / (1.0 - self.gamma))
        s, w = market[:, 0], market[:, 1]
        return self.loss(call_payoff(s, self.strike) - w)
