"""Empirical checks of the regularity and conjugation properties of H, G."""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import EscapeError

__all__ = [
    "HolderFit",
    "ExpansionReport",
    "VerificationReport",
    "check_solution_mapping",
    "check_inverse",
    "fit_holder",
    "check_expansion",
    "check_equivariance",
    "sample_ball",
    "sample_sphere",
]


def sample_sphere(rng, n, d, radius):
    Z = rng.standard_normal((n, d))
    return radius * Z / np.linalg.norm(Z, axis=1, keepdims=True)


def sample_ball(rng, n, d, radius):
    r = radius * rng.random(n) ** (1.0 / d)
    return sample_sphere(rng, n, d, 1.0) * r[:, None]


def _witness(x):
    return [float(v) for v in np.atleast_1d(x)]


# ---------------------------------------------------------------------------
# (A4)/(A5)

def check_solution_mapping(cc, x0, t0=0.0, horizon=5.0, n_times=21, tol=1e-4, which="H"):
    """sup_t |H(t, x(t)) - T(t, t0) H(t0, x0)| along nonlinear solutions x(t).

    With ``which="G"`` the roles swap: y(t) = T(t, t0) y0 is a linear solution
    and ``G(t, y(t))`` is compared with ``phi(t, t0; G(t0, y0))``.
    Escaping samples are skipped and counted.
    """
    fam = cc.family
    X0 = np.atleast_2d(np.asarray(x0, dtype=float))
    times = np.linspace(t0, t0 + horizon, n_times)
    keep = np.ones(len(X0), dtype=bool)
    if which == "H":
        base = cc.H(t0, X0)
    else:
        base = cc.G(t0, X0)
    lhs_all, rhs_all = [], []
    for t in times:
        if which == "H":
            try:
                Xt = fam.flow(t0, t, X0)
            except EscapeError as exc:
                keep &= ~exc.mask
                Xt = np.where(exc.mask[:, None], 0.0, exc.result)
            lhs_all.append(Xt)
            rhs_all.append(base @ fam.transition(t0, t).T)
        else:
            lhs_all.append(X0 @ fam.transition(t0, t).T)
            try:
                rhs = fam.flow(t0, t, base)
            except EscapeError as exc:
                keep &= ~exc.mask
                rhs = np.where(exc.mask[:, None], 0.0, exc.result)
            rhs_all.append(rhs)
    many = cc.H_many if which == "H" else cc.G_many
    lhs_all = many(times, lhs_all)
    worst = np.zeros(len(X0))
    for lhs, rhs in zip(lhs_all, rhs_all):
        worst = np.maximum(worst, np.linalg.norm(lhs - rhs, axis=1))
    worst = np.where(keep, worst, 0.0)
    j = int(np.argmax(worst))
    res = float(worst[j])
    return {"pass": res <= tol, "residual": res, "tol": tol, "samples": int(keep.sum()),
            "skipped": int((~keep).sum()), "horizon": [t0, t0 + horizon],
            "witness": _witness(X0[j])}


# ---------------------------------------------------------------------------
# (A3)

def check_inverse(cc, times, n_samples, radius, tol, seed=0):
    """Max of |H(t, G(t, x)) - x| and |G(t, H(t, x)) - x| over sampled x."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    wit = None
    for t in times:
        r = radius(t) if callable(radius) else radius
        X = sample_ball(rng, n_samples, cc.dim, r)
        for res in (cc.H(t, cc.G(t, X)) - X, cc.G(t, cc.H(t, X)) - X):
            e = np.linalg.norm(res, axis=1)
            j = int(np.argmax(e))
            if e[j] >= worst:
                worst, wit = float(e[j]), {"t": float(t), "x": _witness(X[j])}
    return {"pass": worst <= tol, "residual": worst, "tol": tol,
            "samples": n_samples * len(times), "witness": wit}


# ---------------------------------------------------------------------------
# (A2)

@dataclass
class HolderFit:
    slope: float
    intercept: float
    r2: float
    n_pairs: int
    radius_range: tuple
    alpha: float
    margin: float = 0.05

    @property
    def decades(self):
        lo, hi = self.radius_range
        return math.log10(hi / lo)

    @property
    def target(self):
        return min(self.alpha, 0.95) - self.margin

    @property
    def passed(self):
        return self.slope >= self.target

    @property
    def constant(self):
        return math.exp(self.intercept)

    def to_json(self):
        return {"pass": self.passed, "slope": self.slope, "target": self.target,
                "intercept": self.intercept, "constant": self.constant, "r2": self.r2,
                "n_pairs": self.n_pairs, "radius_range": list(self.radius_range),
                "decades": self.decades}


def fit_holder(fn, dim, radius, alpha, pairs=400, decades=4.0, seed=0,
               min_pairs=200, min_decades=3.0):
    """Log-log regression of |fn(x) - fn(y)| on |x - y| over sampled pairs.

    x is drawn in the ball of ``radius``; separations are log-uniform over
    ``decades`` decades below ``radius / 2``.

    Raises
    ------
    ValueError
        If fewer than ``min_pairs`` usable pairs or less than
        ``min_decades`` decades of spread remain.
    """
    rng = np.random.default_rng(seed)
    X = sample_ball(rng, pairs, dim, 0.5 * radius)
    sep = 0.5 * radius * 10.0 ** (-decades * rng.random(pairs))
    Y = X + sample_sphere(rng, pairs, dim, 1.0) * sep[:, None]
    F = fn(np.concatenate([X, Y]))
    dF = np.linalg.norm(F[:pairs] - F[pairs:], axis=1)
    dx = np.linalg.norm(X - Y, axis=1)
    ok = (dF > 0) & (dx > 0)
    if ok.sum() < min_pairs:
        raise ValueError(f"only {int(ok.sum())} usable pairs (need {min_pairs})")
    lx, ly = np.log(dx[ok]), np.log(dF[ok])
    rng_x = (float(dx[ok].min()), float(dx[ok].max()))
    if math.log10(rng_x[1] / rng_x[0]) < min_decades:
        raise ValueError("separations span fewer than the required decades")
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - pred) ** 2)) / ss if ss > 0 else 1.0
    return HolderFit(float(slope), float(intercept), r2, int(ok.sum()), rng_x, alpha)


# ---------------------------------------------------------------------------
# (A1)

@dataclass
class ExpansionReport:
    radii: list
    ratios: list
    rho: float
    last: int = 6
    noise: float = 0.05

    @property
    def passed(self):
        r = self.ratios[-self.last:]
        return all(b <= a * (1 + self.noise) for a, b in zip(r, r[1:]))

    def to_json(self):
        return {"pass": self.passed, "rho": self.rho, "radii": self.radii,
                "ratios": self.ratios, "levels_checked": self.last,
                "noise_allowance": self.noise}


def check_expansion(fn, dim, rho, levels=range(4, 15), n_dirs=32, seed=0, last=6,
                    noise=0.05):
    """r_j = max_{|x| = 2^-j} |fn(x) - x| / |x|^{1 + rho} on dyadic spheres."""
    levels = list(levels)
    radii = [2.0 ** -j for j in levels]
    if min(radii) < 1e-12:
        raise ValueError("dyadic radii below 1e-12 hit the floating-point floor")
    rng = np.random.default_rng(seed)
    dirs = sample_sphere(rng, n_dirs, dim, 1.0)
    X = np.concatenate([r * dirs for r in radii])
    F = fn(X)
    err = np.linalg.norm(F - X, axis=1).reshape(len(radii), n_dirs).max(axis=1)
    ratios = [float(e / r ** (1 + rho)) for e, r in zip(err, radii)]
    return ExpansionReport(radii, ratios, rho, last, noise)


# ---------------------------------------------------------------------------
# (B3)

def check_equivariance(cc, x, times=(0.25, 0.5, 1.0), tol=1e-4):
    """|e^{At} H~(x) - H~(phi(t, 0; x))| at the given times."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    fam = cc.family
    Hx = cc.averaged_H(X)
    rows = []
    for t in times:
        lhs = Hx @ fam.transition(0.0, t).T
        rhs = cc.averaged_H(fam.flow(0.0, t, X))
        rows.append({"t": float(t), "residual": float(np.max(np.linalg.norm(lhs - rhs, axis=1)))})
    worst = max(r["residual"] for r in rows)
    return {"pass": worst <= tol, "residual": worst, "tol": tol, "times": rows}


# ---------------------------------------------------------------------------
# report

_ITEMS = ("A1", "A2", "A3", "A4", "A5")
_TITLES = {"A1": "expansion H = x + o(|x|^(1+rho))",
           "A2": "Hoelder continuity of H and G",
           "A3": "inverse identities H(G) = G(H) = id",
           "A4": "H maps nonlinear to linear solutions",
           "A5": "G maps linear to nonlinear solutions",
           "B3": "equivariance of the averaged conjugacy"}


@dataclass
class VerificationReport:
    items: dict = field(default_factory=dict)
    radii: dict = field(default_factory=dict)
    seed: int = 0
    samples: dict = field(default_factory=dict)
    guaranteed: bool = True
    extra: dict = field(default_factory=dict)

    def add(self, key, result):
        if key in self.items:
            raise ValueError(f"{key} already reported")
        self.items[key] = result

    @property
    def complete(self):
        return all(k in self.items for k in _ITEMS)

    @property
    def passed(self):
        return self.complete and all(v["pass"] for v in self.items.values())

    def to_json(self):
        return {"pass": self.passed, "regime": "guaranteed" if self.guaranteed
                else "outside guaranteed regime", "items": self.items,
                "radii": self.radii, "seed": self.seed, "samples": self.samples,
                "extra": self.extra}

    def to_text(self):
        lines = []
        if not self.guaranteed:
            lines.append("*** outside guaranteed regime: smallness budget not satisfied ***")
        for key in sorted(self.items):
            v = self.items[key]
            mark = "PASS" if v["pass"] else "FAIL"
            detail = ""
            if "residual" in v:
                detail = f"residual={v['residual']:.3e}"
            elif "slope" in v:
                detail = f"slope={v['slope']:.4f} target={v['target']:.4f}"
            lines.append(f"{key} {mark} {_TITLES.get(key, key)} {detail}".rstrip())
        for k, v in self.extra.items():
            lines.append(f"{k}: {v}")
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} (seed {self.seed})")
        return "\n".join(lines) + "\n"
