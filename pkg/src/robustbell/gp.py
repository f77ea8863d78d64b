"""Gaussian-process regression for value and control surrogates.

The solver refits a small GP at every backward step, so this module favors
plain dense linear algebra (Cholesky throughout) and keeps the model simple:

* anisotropic product-form kernels.  With r_j = |x_j - x'_j| and per-dimension
  lengthscales rho_j,

      matern52:  tau2 * prod_j (1 + t_j + t_j^2/3) exp(-t_j),  t_j = sqrt(5) r_j / rho_j
      sqexp:     tau2 * prod_j exp(-r_j^2 / (2 rho_j^2))

  (The Matern factorizes per dimension; it is not the radial Matern on the
  anisotropically scaled Euclidean distance.)
* a constant prior mean (the output mean for value surrogates, zero for
  control surrogates, so far-field predictions fall back to something sane);
* observation covariance (K + eta^2 I) with a small fixed nugget eta; if the
  factorization fails the nugget is doubled, up to 1e-2, before giving up;
* hyperparameter fitting by maximum marginal likelihood over (tau2, rho) in
  log space, Powell search from a deterministic set of restart points, with
  an optional warm start from a previous fit and a freeze switch that skips
  refitting entirely (the previous hyperparameters are reused as-is).

Inputs are affinely rescaled to [0,1]^d inside fit(), which keeps
lengthscales comparable across time steps and makes the search box
problem-independent.  Duplicate input rows are merged (outputs averaged)
before fitting.  Surrogates serialize to plain dicts of floats; reloading
reproduces predictions bit-for-bit because the factorization is recomputed
from identical numbers by identical code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from .numerics import sobol

_FAMILIES = ("matern52", "sqexp")
_SQRT5 = math.sqrt(5.0)
_NUGGET_CAP = 1e-2
_LOG_RHO_BOUNDS = (math.log(1e-3), math.log(1e3))
_LOG_TAU2_SPREAD = math.log(1e6)


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Kernel family plus hyperparameters (tau2, per-dimension lengthscales, nugget)."""

    family: str
    tau2: float
    lengthscales: np.ndarray
    nugget: float = 1e-5

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"kernel family must be one of {_FAMILIES}, got {self.family!r}")
        if not self.tau2 > 0:
            raise ValueError(f"tau2 must be > 0, got {self.tau2}")
        ls = np.asarray(self.lengthscales, dtype=float)
        if ls.ndim != 1 or np.any(ls <= 0):
            raise ValueError("lengthscales must be a 1-d array of positive reals")
        if self.nugget < 0:
            raise ValueError(f"nugget must be >= 0, got {self.nugget}")
        ls.flags.writeable = False
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dim(self) -> int:
        return self.lengthscales.size


def _cross(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kernel matrix between row sets a (m,d) and b (n,d)."""
    ls = spec.lengthscales
    if spec.family == "sqexp":
        q = 0.0
        for j in range(ls.size):
            d = (a[:, j, None] - b[None, :, j]) / ls[j]
            q = q + d * d
        return spec.tau2 * np.exp(-0.5 * q)
    poly = 1.0
    tsum = 0.0
    for j in range(ls.size):
        t = _SQRT5 * np.abs(a[:, j, None] - b[None, :, j]) / ls[j]
        poly = poly * (1.0 + t + t * t / 3.0)
        tsum = tsum + t
    return spec.tau2 * poly * np.exp(-tsum)


def kernel_value(spec: KernelSpec, x, x2) -> float:
    """Kernel evaluated at a single pair of points."""
    a = np.asarray(x, dtype=float).reshape(1, -1)
    b = np.asarray(x2, dtype=float).reshape(1, -1)
    if a.shape[1] != spec.dim or b.shape[1] != spec.dim:
        raise ValueError(f"points must have dimension {spec.dim}")
    return float(_cross(spec, a, b)[0, 0])


@dataclass(eq=False)
class GpSurrogate:
    """Fitted GP: merged training data, kernel, prior mean, input rescaling.

    lo/span hold the affine map z = (x - lo)/span applied to inputs before any
    kernel evaluation.  chol and alpha are the cached Cholesky factor of
    (K + eta^2 I) and its solve against the centered outputs.
    """

    kernel: KernelSpec
    inputs: np.ndarray
    outputs: np.ndarray
    prior_mean: float
    lo: np.ndarray
    span: np.ndarray
    chol: np.ndarray
    alpha: np.ndarray

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def _rescale(self, x: np.ndarray) -> np.ndarray:
        return (x - self.lo) / self.span

    def _as_rows(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        rows = np.atleast_2d(x)
        if rows.shape[1] != self.dim:
            raise ValueError(f"query dimension {rows.shape[1]} != surrogate dimension {self.dim}")
        return rows, single


def _factorize(k_matrix: np.ndarray, nugget: float):
    """Cholesky of K + eta^2 I, doubling eta (capped) until it succeeds."""
    eta = nugget
    n = k_matrix.shape[0]
    while True:
        try:
            chol = linalg.cholesky(k_matrix + eta**2 * np.eye(n), lower=True)
            return chol, eta
        except linalg.LinAlgError:
            if eta >= _NUGGET_CAP:
                cond = float(np.linalg.cond(k_matrix + eta**2 * np.eye(n)))
                raise linalg.LinAlgError(
                    f"kernel matrix not positive definite even with nugget {eta:g} "
                    f"(condition estimate {cond:.3e})"
                )
            eta = min(2.0 * eta if eta > 0 else 1e-8, _NUGGET_CAP)


def _merge_duplicates(x: np.ndarray, v: np.ndarray):
    """Average outputs over exactly repeated input rows."""
    uniq, inverse = np.unique(x, axis=0, return_inverse=True)
    if uniq.shape[0] == x.shape[0]:
        return x, v
    counts = np.bincount(inverse)
    sums = np.bincount(inverse, weights=v)
    return uniq, sums / counts


def _pairwise_legs(family: str, z: np.ndarray) -> np.ndarray:
    """Per-dimension distance legs (d, n, n), shared across likelihood calls."""
    diff = z.T[:, :, None] - z.T[:, None, :]
    return diff if family == "sqexp" else _SQRT5 * np.abs(diff)


def _kernel_from_legs(family: str, tau2: float, ls: np.ndarray, legs: np.ndarray) -> np.ndarray:
    # must mirror _cross exactly, operation for operation
    if family == "sqexp":
        q = 0.0
        for j in range(ls.size):
            d = legs[j] / ls[j]
            q = q + d * d
        return tau2 * np.exp(-0.5 * q)
    poly = 1.0
    tsum = 0.0
    for j in range(ls.size):
        t = legs[j] / ls[j]
        poly = poly * (1.0 + t + t * t / 3.0)
        tsum = tsum + t
    return tau2 * poly * np.exp(-tsum)


def _nll(legs: np.ndarray, centered: np.ndarray, family: str, log_params: np.ndarray, nugget: float) -> float:
    """Negative log marginal likelihood at log(tau2), log(rho_1..d)."""
    tau2 = math.exp(log_params[0])
    ls = np.exp(log_params[1:])
    k = _kernel_from_legs(family, tau2, ls, legs)
    n = k.shape[0]
    k.flat[:: n + 1] += nugget**2
    try:
        chol = linalg.cholesky(k, lower=True, check_finite=False)
    except linalg.LinAlgError:
        return 1e25  # finite penalty; inf breaks Powell's line search
    alpha = linalg.cho_solve((chol, True), centered, check_finite=False)
    ll = -0.5 * float(centered @ alpha) - float(np.sum(np.log(np.diag(chol)))) - 0.5 * n * math.log(2.0 * math.pi)
    return -ll if math.isfinite(ll) else 1e25


def fit(
    inputs,
    outputs,
    family: str = "matern52",
    init: Optional[KernelSpec] = None,
    freeze: bool = False,
    *,
    nugget: float = 1e-5,
    prior_mean: Optional[float] = None,
    restarts: int = 5,
) -> GpSurrogate:
    """Fit a GP surrogate to scattered data.

    init seeds the hyperparameter search (warm start); freeze skips the search
    and keeps init (or, without init, the defaults) as-is.  prior_mean of None
    uses the output mean.  The restart points are Sobol points in the log-space
    search box, so fitting is deterministic.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    v = np.asarray(outputs, dtype=float).ravel()
    if x.shape[0] != v.size or x.shape[0] == 0:
        raise ValueError(f"inputs ({x.shape}) and outputs ({v.shape}) do not align")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise ValueError("training data must be finite")
    x, v = _merge_duplicates(x, v)
    n, d = x.shape
    if n < 2:
        raise ValueError(f"need at least 2 distinct training sites, got {n}")
    if init is not None and init.dim != d:
        raise ValueError(f"init has dimension {init.dim}, data has {d}")

    lo = x.min(axis=0)
    span = x.max(axis=0) - lo
    span = np.where(span > 0, span, 1.0)
    z = (x - lo) / span

    m0 = float(np.mean(v)) if prior_mean is None else float(prior_mean)
    centered = v - m0

    scale = float(np.var(v))
    if scale == 0.0:
        scale = max(float(np.mean(centered**2)), 1e-12)

    if init is not None:
        start = np.concatenate(([math.log(init.tau2)], np.log(init.lengthscales)))
        base_nugget = init.nugget
    else:
        start = np.concatenate(([math.log(scale)], np.full(d, math.log(0.5))))
        base_nugget = nugget

    if freeze or np.all(centered == 0.0):
        best = start
    else:
        lo_b = np.concatenate(([math.log(scale) - _LOG_TAU2_SPREAD], np.full(d, _LOG_RHO_BOUNDS[0])))
        hi_b = np.concatenate(([math.log(scale) + _LOG_TAU2_SPREAD], np.full(d, _LOG_RHO_BOUNDS[1])))
        starts = [np.clip(start, lo_b, hi_b)]
        if restarts > 1:
            extra = sobol(restarts - 1, min(d + 1, 8), skip=1)
            if d + 1 > 8:  # sobol dimension cap; tile the tail coordinates
                extra = np.concatenate([extra, extra[:, : d + 1 - 8]], axis=1)
            starts.extend(lo_b + extra * (hi_b - lo_b))
        legs = _pairwise_legs(family, z)
        best, best_val = None, np.inf
        for s in starts:
            res = optimize.minimize(
                lambda p: _nll(legs, centered, family, p, base_nugget),
                s,
                method="Powell",
                bounds=list(zip(lo_b, hi_b)),
                options={"xtol": 1e-4, "ftol": 1e-7, "maxfev": 400 * (d + 1)},
            )
            val = res.fun if np.isfinite(res.fun) else np.inf
            if val < best_val:
                best, best_val = res.x, val
        if best is None:
            best = start

    spec = KernelSpec(
        family=family,
        tau2=math.exp(best[0]),
        lengthscales=np.exp(best[1:]),
        nugget=base_nugget,
    )
    k = _cross(spec, z, z)
    chol, eta = _factorize(k, spec.nugget)
    if eta != spec.nugget:
        spec = KernelSpec(family=family, tau2=spec.tau2, lengthscales=spec.lengthscales, nugget=eta)
    alpha = linalg.cho_solve((chol, True), centered)
    return GpSurrogate(
        kernel=spec,
        inputs=x,
        outputs=v,
        prior_mean=m0,
        lo=lo,
        span=span,
        chol=chol,
        alpha=alpha,
    )


def rehydrate(kernel: KernelSpec, inputs, outputs, prior_mean: float, lo, span) -> GpSurrogate:
    """Rebuild a surrogate from its stored pieces without re-running the MLE.

    Recomputes the Cholesky factor and solve from the saved kernel and data;
    with exactly round-tripped floats the rebuilt predictions are bit-identical
    to the original's.
    """
    x = np.atleast_2d(np.asarray(inputs, dtype=float))
    v = np.asarray(outputs, dtype=float).ravel()
    lo = np.asarray(lo, dtype=float)
    span = np.asarray(span, dtype=float)
    if x.shape[0] != v.size or x.shape[1] != lo.size or lo.size != span.size:
        raise ValueError(f"inconsistent surrogate pieces: {x.shape}, {v.shape}, {lo.shape}, {span.shape}")
    z = (x - lo) / span
    k = _cross(kernel, z, z)
    chol, eta = _factorize(k, kernel.nugget)
    if eta != kernel.nugget:
        kernel = KernelSpec(family=kernel.family, tau2=kernel.tau2, lengthscales=kernel.lengthscales, nugget=eta)
    alpha = linalg.cho_solve((chol, True), v - prior_mean)
    return GpSurrogate(
        kernel=kernel, inputs=x, outputs=v, prior_mean=float(prior_mean),
        lo=lo, span=span, chol=chol, alpha=alpha,
    )


def predict_mean(s: GpSurrogate, x):
    """Posterior mean at x (single point or (m, d) array)."""
    rows, single = s._as_rows(x)
    kstar = _cross(s.kernel, s._rescale(rows), s._rescale(s.inputs))
    out = s.prior_mean + kstar @ s.alpha
    return float(out[0]) if single else out


def predict_var(s: GpSurrogate, x):
    """Posterior variance of the latent function at x (clamped at 0)."""
    rows, single = s._as_rows(x)
    kstar = _cross(s.kernel, s._rescale(rows), s._rescale(s.inputs))
    half = linalg.solve_triangular(s.chol, kstar.T, lower=True)
    out = np.maximum(s.kernel.tau2 - np.sum(half**2, axis=0), 0.0)
    return float(out[0]) if single else out


def predict_cov(s: GpSurrogate, x, x2) -> float:
    """Posterior covariance between the latent values at two points."""
    a, _ = s._as_rows(x)
    b, _ = s._as_rows(x2)
    za, zb = s._rescale(a), s._rescale(b)
    zt = s._rescale(s.inputs)
    ka = linalg.solve_triangular(s.chol, _cross(s.kernel, zt, za), lower=True)
    kb = linalg.solve_triangular(s.chol, _cross(s.kernel, zt, zb), lower=True)
    return float(_cross(s.kernel, za, zb)[0, 0] - (ka * kb).sum())


def log_marginal_likelihood(s: GpSurrogate) -> float:
    """Log marginal likelihood of the training data under the fitted kernel."""
    centered = s.outputs - s.prior_mean
    n = centered.size
    return (
        -0.5 * float(centered @ s.alpha)
        - float(np.sum(np.log(np.diag(s.chol))))
        - 0.5 * n * math.log(2.0 * math.pi)
    )


def to_dict(s: GpSurrogate) -> dict:
    """Plain-float document representation (JSON-friendly, exact round-trip)."""
    return {
        "family": s.kernel.family,
        "tau2": float(s.kernel.tau2),
        "lengthscales": [float(l) for l in s.kernel.lengthscales],
        "nugget": float(s.kernel.nugget),
        "prior_mean": float(s.prior_mean),
        "input_lo": [float(a) for a in s.lo],
        "input_span": [float(a) for a in s.span],
        "inputs": [[float(a) for a in row] for row in s.inputs],
        "outputs": [float(a) for a in s.outputs],
    }


def from_dict(doc: dict) -> GpSurrogate:
    """Rebuild a surrogate from to_dict output; predictions match bit-for-bit."""
    spec = KernelSpec(
        family=doc["family"],
        tau2=doc["tau2"],
        lengthscales=np.asarray(doc["lengthscales"], dtype=float),
        nugget=doc["nugget"],
    )
    x = np.asarray(doc["inputs"], dtype=float)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    v = np.asarray(doc["outputs"], dtype=float)
    lo = np.asarray(doc["input_lo"], dtype=float)
    span = np.asarray(doc["input_span"], dtype=float)
    z = (x - lo) / span
    k = _cross(spec, z, z)
    chol = linalg.cholesky(k + spec.nugget**2 * np.eye(x.shape[0]), lower=True)
    alpha = linalg.cho_solve((chol, True), v - doc["prior_mean"])
    return GpSurrogate(
        kernel=spec,
        inputs=x,
        outputs=v,
        prior_mean=float(doc["prior_mean"]),
        lo=lo,
        span=span,
        chol=chol,
        alpha=alpha,
    )
