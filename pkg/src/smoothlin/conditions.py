"""Hypothesis checks: nonlinearity audit, spectral bound, Hoelder exponent
bound and the smallness budget that fixes the neighborhoods.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, NonHyperbolicError

__all__ = [
    "SpectralBoundReport",
    "AlphaBound",
    "NonlinearityAudit",
    "LyapunovPerronParams",
    "SmallnessBudget",
    "check_spectral_bound",
    "alpha_upper_bound",
    "autonomous_alpha_bound",
    "audit_nonlinearity",
    "lp_params",
    "smallness_budget",
    "max_admissible_eta_tilde",
]


# ---------------------------------------------------------------------------
# spectral bound

@dataclass
class SpectralBoundReport:
    passed: bool
    margins: list
    violating: list

    def to_json(self):
        return {"pass": self.passed, "margins": self.margins, "violating": self.violating}


def _require_hyperbolic(spectrum):
    if not spectrum.hyperbolic:
        raise NonHyperbolicError("spectrum contains 1; conditions are undefined")


def check_spectral_bound(spectrum):
    """Check b_i/a_i < 1/b_k (i <= k) and b_j/a_j < a_{k+1} (j > k).

    Margins are ``log(bound) - log(ratio)``; positive means pass.  One-sided
    spectra only have the tests of the side that exists.
    """
    _require_hyperbolic(spectrum)
    iv = spectrum.intervals
    k = spectrum.k
    rows = []
    for i, (a, b) in enumerate(iv, start=1):
        ratio = math.log(b / a)
        if i <= k:
            bound = -math.log(iv[k - 1][1])
            side = "stable"
        else:
            bound = math.log(iv[k][0])
            side = "unstable"
        margin = bound - ratio
        rows.append({"index": i, "side": side, "log_ratio": ratio, "log_bound": bound,
                     "margin": margin, "pass": margin > 0})
    bad = [r["index"] for r in rows if not r["pass"]]
    return SpectralBoundReport(not bad, rows, bad)


# ---------------------------------------------------------------------------
# alpha

@dataclass
class AlphaBound:
    alpha_max: float
    branch: str
    chosen: float
    rho: float = 0.1
    branches: dict = field(default_factory=dict)
    overridden: bool = False

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise ValueError("regularity order rho must lie in (0, 1)")

    def to_json(self):
        amax = self.alpha_max if math.isfinite(self.alpha_max) else None
        return {"max": amax, "chosen": self.chosen, "branch": self.branch,
                "rho": self.rho, "overridden": self.overridden,
                "branches": {k: (v if math.isfinite(v) else None)
                             for k, v in self.branches.items()}}


def _choose_alpha(alpha_max, branch, branches, override, rho):
    if override is not None:
        override = float(override)
        if not 0.0 < override:
            raise ConfigError("alpha override must be positive")
        if override >= alpha_max:
            raise ConfigError(f"alpha override {override} is not below alpha_max={alpha_max:.6g}")
        return AlphaBound(alpha_max, branch, override, rho, branches, True)
    if not math.isfinite(alpha_max):
        raise NonHyperbolicError("one-sided spectrum: the Hoelder bound needs both "
                                 "stable and unstable intervals (supply an alpha override)")
    return AlphaBound(alpha_max, branch, min(0.9 * alpha_max, 0.95), rho, branches)


def alpha_upper_bound(spectrum, override=None, rho=0.1):
    """alpha_max = gap / max(ln b_r, ln(1/a_1)) with gap = ln a_{k+1} - ln b_k.

    A branch is dropped when its denominator is not positive.  One-sided
    spectra have no central gap: alpha_max is infinite and an override is
    required.
    """
    _require_hyperbolic(spectrum)
    iv = spectrum.intervals
    k, r = spectrum.k, spectrum.r
    branches = {}
    if 0 < k < r:
        gap = math.log(iv[k][0]) - math.log(iv[k - 1][1])
        br = math.log(iv[-1][1])
        a1 = -math.log(iv[0][0])
        if br > 0:
            branches["unstable"] = gap / br
        if a1 > 0:
            branches["stable"] = gap / a1
    if not branches:
        return _choose_alpha(math.inf, "none", branches, override, rho)
    branch = min(branches, key=branches.get)
    return _choose_alpha(branches[branch], branch, branches, override, rho)


def autonomous_alpha_bound(eigenvalues, override=None, rho=0.1, tol=1e-12):
    """The bound from real parts of the eigenvalues of a constant matrix."""
    re = np.sort(np.real(np.asarray(eigenvalues, dtype=complex)))
    if np.any(np.abs(re) <= tol):
        raise NonHyperbolicError("eigenvalue on the imaginary axis")
    p = int(np.sum(re < 0))
    branches = {}
    if 0 < p < len(re):
        gap = re[p] - re[p - 1]
        branches["unstable"] = float(gap / re[-1])
        branches["stable"] = float(gap / -re[0])
    if not branches:
        return _choose_alpha(math.inf, "none", branches, override, rho)
    branch = min(branches, key=branches.get)
    return _choose_alpha(branches[branch], branch, branches, override, rho)


# ---------------------------------------------------------------------------
# nonlinearity audit

@dataclass
class NonlinearityAudit:
    passed: dict
    eta: float
    B: float
    n_samples: int
    worst: dict
    eta_required: float = None

    @property
    def all_pass(self):
        return all(self.passed.values())

    def to_json(self):
        return {"pass": self.passed, "eta": self.eta, "B": self.B,
                "n_samples": self.n_samples, "worst": self.worst,
                "eta_required": self.eta_required}


def audit_nonlinearity(f, times, radius, eps=None, n_samples=2000, seed=0,
                       tol=1e-10, slack=1.05, eta_required=None):
    """Measure (F1)-(F4) for ``f`` on sampled times and a ball of states.

    ``eta`` is ``slack * sup |D_x f(t, x)| e^{3 eps |t|}`` and ``B`` is
    ``slack * sup |D_x f(t,x) - D_x f(t,y)| e^{4 eps |t|} / |x - y|``.
    F3 passes when ``eta <= eta_required`` (when given).
    """
    eps = f.eps if eps is None else float(eps)
    times = np.asarray(times, dtype=float)
    d = f.dim
    rng = np.random.default_rng(seed)
    zero = np.zeros((1, d))
    f0 = np.array([np.linalg.norm(f(t, zero)[0]) for t in times])
    J0 = np.array([np.linalg.norm(f.jac(t, zero)[0], 2) for t in times])
    per_t = max(1, n_samples // len(times))
    eta = 0.0
    B = 0.0
    worst_eta = worst_B = None
    for t in times:
        X = _ball(rng, per_t, d, radius)
        Y = X + _ball(rng, per_t, d, 0.05 * radius)
        JX = f.jac(t, X)
        JY = f.jac(t, Y)
        nx = np.linalg.norm(JX, ord=2, axis=(1, 2)) * math.exp(3 * eps * abs(t))
        j = int(np.argmax(nx))
        if nx[j] > eta:
            eta, worst_eta = float(nx[j]), {"t": float(t), "x": X[j].tolist()}
        dist = np.linalg.norm(X - Y, axis=1)
        ok = dist > 0
        lip = (np.linalg.norm(JX - JY, ord=2, axis=(1, 2))[ok] / dist[ok]
               * math.exp(4 * eps * abs(t)))
        if lip.size:
            j = int(np.argmax(lip))
            if lip[j] > B:
                B, worst_B = float(lip[j]), {"t": float(t), "x": X[ok][j].tolist()}
    eta *= slack
    B *= slack
    i1 = int(np.argmax(f0))
    i2 = int(np.argmax(J0))
    passed = {
        "F1": bool(f0[i1] <= tol),
        "F2": bool(J0[i2] <= tol),
        "F3": bool(np.isfinite(eta) and (eta_required is None or eta <= eta_required)),
        "F4": bool(np.isfinite(B)),
    }
    worst = {"F1": {"t": float(times[i1]), "value": float(f0[i1])},
             "F2": {"t": float(times[i2]), "value": float(J0[i2])},
             "F3": worst_eta, "F4": worst_B}
    return NonlinearityAudit(passed, eta, B, per_t * len(times), worst, eta_required)


def _ball(rng, n, d, radius):
    Z = rng.standard_normal((n, d))
    Z /= np.linalg.norm(Z, axis=1, keepdims=True)
    return Z * (radius * rng.random(n) ** (1.0 / d))[:, None]


# ---------------------------------------------------------------------------
# Lyapunov-Perron rates and the smallness budget

@dataclass
class LyapunovPerronParams:
    """Rates b_k < lam_s_plus < gamma_s < 1 < gamma_u < lam_u_minus < a_{k+1}.

    ``lam_u_plus`` (> b_r) is ``None`` for spectra without unstable part.
    """

    lam_s_plus: float
    gamma_s: float
    gamma_u: float
    lam_u_minus: float
    lam_u_plus: float = None
    n_tail: int = 40
    max_iter: int = 200
    tol_fp: float = 1e-13

    def __post_init__(self):
        chain = [self.lam_s_plus, self.gamma_s, 1.0, self.gamma_u, self.lam_u_minus]
        if not all(a < b for a, b in zip(chain, chain[1:])):
            raise ValueError(f"rate ordering violated: {chain}")

    @property
    def tail_rate(self):
        return max(self.lam_s_plus / self.gamma_s, self.gamma_u / self.lam_u_minus)

    def to_json(self):
        return {"lam_s_plus": self.lam_s_plus, "gamma_s": self.gamma_s,
                "gamma_u": self.gamma_u, "lam_u_minus": self.lam_u_minus,
                "lam_u_plus": self.lam_u_plus, "n_tail": self.n_tail,
                "max_iter": self.max_iter, "tol_fp": self.tol_fp}


def lp_params(spectrum, alpha, tau=None, **kw):
    """Rates placed in the central gap at relative depth ``tau`` (log scale).

    Without ``tau`` the depth adapts to ``alpha`` so that
    ``gamma_s / gamma_u * lam_u_plus**alpha < 1`` holds.
    """
    _require_hyperbolic(spectrum)
    iv = spectrum.intervals
    k, r = spectrum.k, spectrum.r
    L = math.log(iv[k - 1][1]) if k > 0 else None
    U = math.log(iv[k][0]) if k < r else None
    if L is None:
        L = -U
    if U is None:
        U = -L
    lbr = math.log(iv[-1][1]) if k < r else None
    if tau is None:
        tau = 0.25
        if lbr is not None and lbr > 0:
            rr = alpha * lbr / (U - L)
            if rr >= 1:
                raise ValueError("alpha at or above the unstable branch of its bound")
            tau = 0.5 * (1 - rr) / (2 + rr)
    if not 0 < tau < 0.5:
        raise ValueError("tau must lie in (0, 1/2)")
    return LyapunovPerronParams(
        lam_s_plus=math.exp(L * (1 - tau)), gamma_s=math.exp(L * (1 - 2 * tau)),
        gamma_u=math.exp(U * (1 - 2 * tau)), lam_u_minus=math.exp(U * (1 - tau)),
        lam_u_plus=math.exp(lbr * (1 + tau)) if lbr is not None else None, **kw)


@dataclass
class SmallnessBudget:
    eta_tilde: float
    B_tilde: float
    M_tilde: float
    a: float
    C: float
    eps: float
    K: float
    delta: float
    delta_max: float
    thresholds: list
    alpha: float

    @property
    def rho(self):
        return self.delta / 4.0

    @property
    def rho_tilde(self):
        return self.rho * math.exp(-2 * self.eps) / (self.a * self.C)

    @property
    def satisfied(self):
        return all(t["pass"] for t in self.thresholds)

    def U_radius(self, n):
        return math.exp(-self.eps * abs(n)) * self.rho / self.C

    def V_radius(self, t):
        return math.exp(-2 * self.eps * abs(t)) * self.rho_tilde

    def to_json(self):
        return {"eta_tilde": self.eta_tilde, "B_tilde": self.B_tilde,
                "M_tilde": self.M_tilde, "a": self.a, "C": self.C, "K": self.K,
                "delta": self.delta, "delta_max": _finite(self.delta_max),
                "rho": self.rho, "rho_tilde": self.rho_tilde,
                "thresholds": self.thresholds, "satisfied": self.satisfied}


def _finite(v):
    return v if math.isfinite(v) else None


def default_K(lp):
    return 4.0 * max(1.0, 1.0 / (1.0 - lp.lam_s_plus / lp.gamma_s),
                     1.0 / (1.0 - lp.gamma_u / lp.lam_u_minus))


def smallness_budget(bounds, C, alpha, lp, K=None, delta_cap=1.0):
    """Evaluate the three smallness thresholds and size the neighborhoods.

    ``delta`` is 0.99 of the largest value allowed by
    ``K (C B_tilde)^2 delta < 1/4``, capped at ``delta_cap``.
    """
    K = default_K(lp) if K is None else float(K)
    et, bt = bounds.eta_tilde, bounds.B_tilde
    t1 = C * K * et
    denom = 4.0 * K * (C * bt) ** 2
    delta_max = math.inf if denom == 0 else 1.0 / denom
    delta = min(0.99 * delta_max, delta_cap)
    t2 = K * (C * bt) ** 2 * delta
    rows = [
        {"name": "C*K*eta_tilde < 1/4", "value": t1, "bound": 0.25,
         "margin": 0.25 - t1, "pass": t1 < 0.25},
        {"name": "K*(C*B_tilde)^2*delta < 1/4", "value": t2, "bound": 0.25,
         "margin": 0.25 - t2, "pass": t2 < 0.25},
    ]
    if lp.lam_u_plus is not None:
        t3 = lp.gamma_s / lp.gamma_u * (lp.lam_u_plus + C * et) ** alpha
        rows.append({"name": "gamma_s/gamma_u*(lam_u_plus+C*eta_tilde)^alpha < 1",
                     "value": t3, "bound": 1.0, "margin": 1.0 - t3, "pass": t3 < 1.0})
    else:
        rows.append({"name": "gamma_s/gamma_u*(lam_u_plus+C*eta_tilde)^alpha < 1",
                     "value": None, "bound": 1.0, "margin": None, "pass": True,
                     "note": "no unstable spectrum"})
    return SmallnessBudget(et, bt, bounds.M_tilde, bounds.a, float(C), bounds.eps, K,
                           delta, delta_max, rows, alpha)


def max_admissible_eta_tilde(spectrum, alpha, C):
    """Largest eta_tilde for which the third threshold can hold at ``alpha``.

    Taking the supremum over admissible rates gives
    ``C eta_tilde < (a_{k+1}/b_k)^{1/alpha} - b_r``; the same condition for
    the inverse map replaces ``b_r`` by ``1/a_1``.  The minimum of the two
    vanishes as ``alpha`` reaches its upper bound.
    """
    _require_hyperbolic(spectrum)
    iv = spectrum.intervals
    k, r = spectrum.k, spectrum.r
    if not 0 < k < r:
        return math.inf
    ratio = (iv[k][0] / iv[k - 1][1]) ** (1.0 / alpha)
    vals = [ratio - iv[-1][1], ratio - 1.0 / iv[0][0]]
    return max(0.0, min(vals)) / C
