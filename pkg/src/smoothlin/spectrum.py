"""Dichotomy spectrum of a cocycle, projections and adapted norms.

The spectrum is located by scanning moduli ``mu``: the rescaled cocycle
``A_n / mu`` has an exponential dichotomy exactly when ``ln mu`` avoids the
growth rates measured by the discrete QR method.  Projections come from
pushing subspaces forward (unstable part) and pulling them back (stable
part) along the cocycle.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import subspace_angles

from .errors import (DegenerateCocycleError, NonHyperbolicError, ResolutionError,
                     SplittingError)

__all__ = [
    "Cocycle",
    "GrowthRates",
    "SpectrumEstimate",
    "ProjectionFamily",
    "DichotomyData",
    "SequenceSpaceModel",
    "qr_growth_rates",
    "dichotomy_test",
    "estimate_spectrum",
    "estimate_projections",
    "fit_dichotomy_constants",
    "adapted_norms",
]


class Cocycle:
    """Products of the one-step matrices A_n.

    ``provider(n)`` returns ``A_n``; matrices are cached.  ``window`` is the
    index range ``[N_minus, N_plus]`` used by the spectral scan (matrices
    ``A_n`` with ``N_minus <= n < N_plus``).  ``bounds`` restricts lazily
    available indices, if any.
    """

    def __init__(self, provider, window, dim=None, autonomous=False, bounds=None):
        self._provider = provider
        self.window = (int(window[0]), int(window[1]))
        if self.window[1] <= self.window[0]:
            raise ValueError("empty window")
        self.autonomous = autonomous
        self.bounds = bounds
        self._mats = {}
        self._invs = {}
        self.dim = dim if dim is not None else self.matrix(self.window[0]).shape[0]

    @classmethod
    def from_matrices(cls, matrices, start=0):
        mats = [np.atleast_2d(np.asarray(M, dtype=float)) for M in matrices]
        lo, hi = start, start + len(mats)

        def provider(n):
            return mats[n - lo]

        return cls(provider, (lo, hi), dim=mats[0].shape[0], bounds=(lo, hi - 1))

    @classmethod
    def constant(cls, matrix, window=(0, 100)):
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(lambda n: M, window, dim=M.shape[0], autonomous=True)

    @classmethod
    def from_system(cls, system, window):
        """Cocycle of a :class:`~smoothlin.evolution.DiscreteSystem`."""
        return cls(system.A, window, dim=system.dim, autonomous=system.autonomous)

    def matrix(self, n):
        n = int(n)
        key = 0 if self.autonomous else n
        M = self._mats.get(key)
        if M is None:
            if self.bounds is not None and not self.bounds[0] <= n <= self.bounds[1]:
                raise IndexError(f"A_{n} not available (bounds {self.bounds})")
            M = np.atleast_2d(np.asarray(self._provider(n), dtype=float))
            self._mats[key] = M
        return M

    def inverse(self, n):
        key = 0 if self.autonomous else int(n)
        Mi = self._invs.get(key)
        if Mi is None:
            Mi = np.linalg.inv(self.matrix(n))
            self._invs[key] = Mi
        return Mi

    def product(self, m, n):
        """The cocycle from index n to index m (inverses for m < n)."""
        P = np.eye(self.dim)
        if m > n:
            for j in range(n, m):
                P = self.matrix(j) @ P
        elif m < n:
            for j in range(n - 1, m - 1, -1):
                P = self.inverse(j) @ P
        return P

    def condition_numbers(self):
        return {n: float(np.linalg.cond(self.matrix(n)))
                for n in range(self.window[0], self.window[1])}


# ---------------------------------------------------------------------------
# growth rates

@dataclass
class GrowthRates:
    """Per-direction log growth intervals from the QR iteration.

    ``intervals[j] = (lo_j, hi_j)``, sorted ascending by midpoint.
    """

    intervals: np.ndarray
    subwindow: int
    step_logs: np.ndarray = field(repr=False)

    @property
    def hull(self):
        return float(self.intervals[:, 0].min()), float(self.intervals[:, 1].max())

    def margin(self, log_mu):
        """Distance from ``log_mu`` to the union of the rate intervals."""
        lo = self.intervals[:, 0]
        hi = self.intervals[:, 1]
        d = np.maximum(np.maximum(lo - log_mu, log_mu - hi), 0.0)
        return float(d.min())

    def shifted(self, c):
        return GrowthRates(self.intervals + c, self.subwindow, self.step_logs + c)


def qr_growth_rates(cocycle, w, burn_in=0):
    """Discrete QR iteration along the cocycle window.

    For each triangular diagonal direction the average log growth over every
    subwindow of ``w`` consecutive steps is formed; the returned interval
    is its min and max.

    Raises
    ------
    DegenerateCocycleError
        If a diagonal entry of a triangular factor drops below 1e-12.
    """
    lo, hi = cocycle.window
    n_steps = hi - lo - burn_in
    if w < 1 or n_steps < 2 * w:
        raise ValueError(f"window of {n_steps} steps too short for subwindow {w}")
    d = cocycle.dim
    Q = np.eye(d)
    logs = []
    for n in range(lo, hi):
        Q, R = np.linalg.qr(cocycle.matrix(n) @ Q)
        diag = np.abs(np.diag(R))
        if np.any(diag < 1e-12):
            raise DegenerateCocycleError(f"rank collapse at n={n}")
        if n >= lo + burn_in:
            logs.append(np.log(diag))
    logs = np.asarray(logs)
    csum = np.vstack([np.zeros(d), np.cumsum(logs, axis=0)])
    means = (csum[w:] - csum[:-w]) / w
    ivals = np.column_stack([means.min(axis=0), means.max(axis=0)])
    order = np.argsort(ivals.mean(axis=1), kind="stable")
    return GrowthRates(ivals[order], w, logs[:, order])


def _rates(obj, w=20):
    return obj if isinstance(obj, GrowthRates) else qr_growth_rates(obj, w)


def dichotomy_test(rates, mu, gap=0.05):
    """Whether the cocycle rescaled by ``1/mu`` shows a uniform splitting.

    Returns ``(passes, margin)``; ``margin`` is the log distance from ``mu``
    to the nearest rate interval, and the test passes when it is at least
    ``gap``.  ``rates`` may be a :class:`GrowthRates` or a :class:`Cocycle`.
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    margin = _rates(rates).margin(math.log(mu))
    return margin >= gap, margin


# ---------------------------------------------------------------------------
# spectrum

@dataclass
class SpectrumEstimate:
    intervals: list
    k: int
    r: int
    hyperbolic: bool
    grid_step: float
    scan: list = field(default_factory=list, repr=False)

    @property
    def log_intervals(self):
        return [(math.log(a), math.log(b)) for a, b in self.intervals]

    def require_hyperbolic(self):
        if not self.hyperbolic:
            raise NonHyperbolicError("an interval of the spectrum contains 1")

    @property
    def stable(self):
        return self.intervals[:self.k]

    @property
    def unstable(self):
        return self.intervals[self.k:]

    def to_json(self):
        return {
            "intervals": [[float(a), float(b)] for a, b in self.intervals],
            "k": self.k,
            "r": self.r,
            "log_intervals": [[float(a), float(b)] for a, b in self.log_intervals],
            "hyperbolic": self.hyperbolic,
            "grid_step": self.grid_step,
        }

    @classmethod
    def from_intervals(cls, intervals, grid_step=0.0):
        """Spectrum from explicit moduli intervals (used for fixtures)."""
        ivals = sorted((float(a), float(b)) for a, b in intervals)
        for (a, b), (c, _) in zip(ivals, ivals[1:]):
            if not b < c:
                raise ValueError("intervals must be disjoint and ordered")
        if any(a <= 0 or b < a for a, b in ivals):
            raise ValueError("intervals must satisfy 0 < a <= b")
        hyper = all(not (a <= 1.0 <= b) for a, b in ivals)
        k = sum(1 for a, b in ivals if b < 1.0)
        return cls(ivals, k, len(ivals), hyper, grid_step)


def estimate_spectrum(rates, step=1e-3, padding=0.2, gap=0.05, grid=None,
                      refine_tol=None):
    """Scan ``mu`` on a logarithmic grid and collect the failing set.

    A grid point fails when its log distance to the growth rates is at most
    half a grid step.  Consecutive failing points are merged into one
    interval whose endpoints are refined by bisection to ``refine_tol``
    (default: ``step``).  Reported intervals contain the rate intervals.

    ``scan`` rows hold ``(mu, passes, margin)`` where ``passes`` is the
    dichotomy test with the configured ``gap``.
    """
    rates = _rates(rates)
    refine_tol = step if refine_tol is None else refine_tol
    if grid is None:
        lo, hi = rates.hull
        n = int(math.ceil((hi - lo + 2 * padding) / step)) + 1
        logs = lo - padding + step * np.arange(n)
    else:
        logs = np.log(np.asarray(grid, dtype=float))
        step = float(np.max(np.diff(logs))) if len(logs) > 1 else step
    margins = np.array([rates.margin(x) for x in logs])
    fail_tol = 0.5 * step
    fails = margins <= fail_tol
    if fails[0] or fails[-1]:
        raise ResolutionError("spectrum touches the edge of the mu grid; widen padding")
    scan = [(float(math.exp(x)), bool(m >= gap), float(m)) for x, m in zip(logs, margins)]

    runs = []
    i = 0
    while i < len(logs):
        if fails[i]:
            j = i
            while j + 1 < len(logs) and fails[j + 1]:
                j += 1
            runs.append((i, j))
            i = j + 1
        else:
            i += 1
    for (_, j0), (i1, _) in zip(runs, runs[1:]):
        if i1 - j0 <= 2:
            raise ResolutionError("spectral intervals closer than two grid cells",
                                  suggested_step=step / 4)

    crit = 0.5 * refine_tol

    def failing(x):
        return rates.margin(x) <= crit

    def bisect(x_pass, x_fail):
        while abs(x_fail - x_pass) > refine_tol / 8:
            mid = 0.5 * (x_pass + x_fail)
            if failing(mid):
                x_fail = mid
            else:
                x_pass = mid
        return x_fail

    log_ivals = []
    for i, j in runs:
        # locate a point inside the run that fails the refinement criterion
        inner = logs[i:j + 1]
        m = margins[i:j + 1]
        c = inner[int(np.argmin(m))]
        if not failing(c):
            # the rate set lies between grid points: project onto it
            c = _nearest_rate_point(rates, c)
        left = bisect(logs[i - 1], c)
        right = bisect(logs[j + 1], c)
        log_ivals.append((min(left, right), max(left, right)))

    intervals = [(math.exp(a), math.exp(b)) for a, b in log_ivals]
    hyper = all(not (a <= 0.0 <= b) for a, b in log_ivals)
    k = sum(1 for a, b in log_ivals if b < 0.0)
    return SpectrumEstimate(intervals, k, len(intervals), hyper, step, scan)


def _nearest_rate_point(rates, x):
    lo = rates.intervals[:, 0]
    hi = rates.intervals[:, 1]
    cand = np.clip(x, lo, hi)
    return float(cand[np.argmin(np.abs(cand - x))])


# ---------------------------------------------------------------------------
# projections

@dataclass
class ProjectionFamily:
    projections: dict
    stable_dim: int
    residuals: dict
    min_angle: float

    def __call__(self, n):
        return self.projections[int(n)]

    @property
    def max_residual(self):
        return max(self.residuals.values(), default=0.0)


def _orth(Z):
    Q, _ = np.linalg.qr(Z)
    return Q


def estimate_projections(cocycle, mu_gap, indices, lookahead=40, rates=None,
                         min_angle=1e-3, seed=12345, tol_proj=1e-6):
    """Projections P(n) onto the stable directions of ``A_n / mu_gap``.

    The stable dimension is the number of growth-rate intervals below
    ``ln mu_gap``.  The unstable subspace at n is a generic subspace pushed
    forward from ``n - lookahead``; the stable subspace is pulled back from
    ``n + lookahead``.

    Raises
    ------
    SplittingError
        If the smallest principal angle between the two subspaces is below
        ``min_angle``.
    """
    rates = rates if rates is not None else qr_growth_rates(cocycle, min(20, (cocycle.window[1] - cocycle.window[0]) // 2))
    passes, _ = dichotomy_test(rates, mu_gap, gap=0.0)
    lm = math.log(mu_gap)
    if rates.margin(lm) <= 0.0:
        raise SplittingError(f"mu_gap={mu_gap} lies in the spectrum")
    d = cocycle.dim
    ks = int(np.sum(rates.intervals[:, 1] < lm))
    ku = d - ks
    indices = sorted(int(n) for n in indices)
    lo, hi = indices[0], indices[-1] + 1     # invariance check needs P(hi)
    rng = np.random.default_rng(seed)
    projs = {}
    if ks == d or ku == d:
        P = np.eye(d) if ks == d else np.zeros((d, d))
        projs = {n: P for n in range(lo, hi + 1)}
        angle = math.pi / 2
    else:
        Zu = _orth(rng.standard_normal((d, ku)))
        Eu = {}
        for m in range(lo - lookahead, hi + 1):
            if m >= lo:
                Eu[m] = Zu
            Zu = _orth(cocycle.matrix(m) @ Zu)
        Zs = _orth(rng.standard_normal((d, ks)))
        Es = {}
        for m in range(hi + lookahead, lo - 1, -1):
            if m <= hi:
                Es[m] = Zs
            Zs = _orth(cocycle.inverse(m - 1) @ Zs)
        angle = math.pi / 2
        for n in range(lo, hi + 1):
            angle = min(angle, float(np.min(subspace_angles(Es[n], Eu[n]))))
            V = np.hstack([Es[n], Eu[n]])
            D = np.diag([1.0] * ks + [0.0] * ku)
            projs[n] = V @ D @ np.linalg.inv(V)
        if angle < min_angle:
            raise SplittingError(f"ill-conditioned splitting: min angle {angle:.3g}")
    residuals = {}
    for n in range(lo, hi):
        A = cocycle.matrix(n)
        residuals[n] = float(np.linalg.norm(projs[n + 1] @ A - A @ projs[n], 2))
    return ProjectionFamily(projs, ks, residuals, angle)


# ---------------------------------------------------------------------------
# dichotomy constants and adapted norms

def fit_dichotomy_constants(transition, projection, pairs, slack=1.05):
    """Least-squares fit of (M, lambda, lambda_bar, eps) on log envelopes.

    Parameters
    ----------
    transition : callable
        ``transition(t, s)`` returning the cocycle / evolution from s to t.
    projection : callable
        ``projection(s)`` returning P(s).
    pairs : iterable of (t, s)
    slack : float
        Multiplicative slack on M after shifting the fitted envelope above
        every sample.

    Four envelopes are fitted separately by least squares:
    ``log|T(t,s)P(s)| ~ log M - lambda (t-s) + eps |s|`` (t >= s), its mirror
    for ``Id - P`` (t <= s), and ``log|T(t,s)| ~ log M + lambda_bar |t-s| +
    eps |s|`` forward and backward.  lambda is the slowest decay, lambda_bar
    the fastest growth and eps the largest drift; the intercept is then raised
    so that every sample lies under the envelope.
    """
    groups = {"stable": ([], []), "unstable": ([], []), "fwd": ([], []), "bwd": ([], [])}
    for t, s in pairs:
        T = transition(t, s)
        P = projection(s)
        d = T.shape[0]
        lag = abs(t - s)
        if lag == 0:
            continue
        if t > s and np.any(P):
            v = np.linalg.norm(T @ P, 2)
            if v > 0:
                groups["stable"][0].append((1.0, -lag, abs(s)))
                groups["stable"][1].append(math.log(v))
        if t < s and np.any(np.eye(d) - P):
            v = np.linalg.norm(T @ (np.eye(d) - P), 2)
            if v > 0:
                groups["unstable"][0].append((1.0, -lag, abs(s)))
                groups["unstable"][1].append(math.log(v))
        g = groups["fwd" if t > s else "bwd"]
        g[0].append((1.0, lag, abs(s)))
        g[1].append(math.log(np.linalg.norm(T, 2)))
    coefs = {}
    for key, (rows, y) in groups.items():
        if rows:
            coefs[key] = _lstsq_nonneg_eps(np.array(rows), np.array(y))
    dich = [coefs[k] for k in ("stable", "unstable") if k in coefs]
    if not dich:
        raise SplittingError("no samples for the dichotomy envelope")
    lam = min(c[1] for c in dich)
    if lam <= 0:
        raise SplittingError(f"fitted contraction rate {lam:.3g} is not positive")
    grow = [coefs[k] for k in ("fwd", "bwd") if k in coefs]
    lam_bar = max([lam] + [c[1] for c in grow])
    eps = max([0.0] + [c[2] for c in coefs.values()])
    logM = 0.0
    for key, (rows, y) in groups.items():
        if not rows:
            continue
        X = np.array(rows)
        rate = lam if key in ("stable", "unstable") else lam_bar
        logM = max(logM, float(np.max(np.array(y) - X[:, 1] * rate - X[:, 2] * eps)))
    M = math.exp(logM) * slack
    return {"M": M, "lambda": float(lam), "lambda_bar": float(lam_bar), "eps": float(eps)}


def _lstsq_nonneg_eps(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    if coef[2] < 0 or not np.any(X[:, 2]):
        coef2, *_ = np.linalg.lstsq(X[:, :2], y, rcond=None)
        coef = np.array([coef2[0], coef2[1], 0.0])
    return coef


@dataclass
class DichotomyData:
    """Projections, dichotomy constants and adapted norms on a window."""

    cocycle: Cocycle
    projections: ProjectionFamily
    M: float
    lam: float
    lam_bar: float
    eps: float
    C: float = 1.0
    horizon: int = 40
    tail_bound: float = 0.0

    def P(self, n):
        return self.projections(n)

    @property
    def stable_dim(self):
        return self.projections.stable_dim

    def norm(self, n, x):
        """Adapted norm |x|_n, suprema truncated to ``horizon`` steps."""
        x = np.asarray(x, dtype=float)
        X = x.reshape(-1, self.cocycle.dim)
        P = self.P(n)
        Q = np.eye(self.cocycle.dim) - P
        s_part = X @ P.T
        u_part = X @ Q.T
        sup_s = np.linalg.norm(s_part, axis=1)
        sup_u = np.linalg.norm(u_part, axis=1)
        ys, yu = s_part, u_part
        for j in range(1, self.horizon + 1):
            ys = ys @ self.cocycle.matrix(n + j - 1).T
            yu = yu @ self.cocycle.inverse(n - j).T
            sup_s = np.maximum(sup_s, math.exp(self.lam * j) * np.linalg.norm(ys, axis=1))
            sup_u = np.maximum(sup_u, math.exp(self.lam * j) * np.linalg.norm(yu, axis=1))
        out = sup_s + sup_u
        return out[0] if x.ndim == 1 else out

    def continuous_projection(self, family, t):
        """P(t) = T(t, n) P(n) T(n, t) with n = floor(t)."""
        n = math.floor(t)
        return family.transition(n, t) @ self.P(n) @ family.transition(t, n)

    def as_dict(self):
        return {"M": self.M, "lambda": self.lam, "lambda_bar": self.lam_bar,
                "eps": self.eps, "C": self.C, "stable_dim": self.stable_dim,
                "norm_horizon": self.horizon, "tail_bound": self.tail_bound,
                "max_invariance_residual": self.projections.max_residual}


def adapted_norms(cocycle, projections, constants, sample_indices=None,
                  n_samples=200, horizon=40, seed=0, slack=1.05, eps_cap=None):
    """Build :class:`DichotomyData` with adapted norms and a fitted C.

    ``constants`` is the dict returned by :func:`fit_dichotomy_constants`.
    C is fitted from the sandwich ``|x| <= |x|_n <= C e^{eps|n|} |x|`` on
    random unit vectors.
    """
    import warnings

    eps = constants["eps"]
    if eps_cap is not None and eps > eps_cap:
        warnings.warn(f"fitted eps={eps:.3g} exceeds cap {eps_cap}: nonuniformity too strong")
    data = DichotomyData(cocycle, projections, constants["M"], constants["lambda"],
                         constants["lambda_bar"], eps, 1.0, horizon)
    data.tail_bound = math.exp((data.lam - data.lam_bar) * horizon)
    rng = np.random.default_rng(seed)
    if sample_indices is None:
        sample_indices = sorted(projections.projections)[:-1]
    ratio = 1.0
    idx = list(sample_indices)
    for j in range(n_samples):
        n = idx[j % len(idx)]
        x = rng.standard_normal(cocycle.dim)
        x /= np.linalg.norm(x)
        ratio = max(ratio, data.norm(n, x) / math.exp(eps * abs(n)))
    data.C = ratio * slack
    return data


@dataclass
class SequenceSpaceModel:
    """Finite-window stand-in for the shift operator on bounded sequences."""

    cocycle: Cocycle
    dichotomy: DichotomyData = None
    min_window: int = 40

    def __post_init__(self):
        lo, hi = self.cocycle.window
        if hi - lo < self.min_window:
            raise ValueError(f"window length {hi - lo} below minimum {self.min_window}")

    def apply(self, xs, start):
        """(A x)_n = A_{n-1} x_{n-1} on a window starting at index ``start``."""
        xs = np.asarray(xs, dtype=float)
        out = np.zeros_like(xs)
        for j in range(1, len(xs)):
            out[j] = self.cocycle.matrix(start + j - 1) @ xs[j - 1]
        return out
