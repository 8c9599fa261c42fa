"""Built-in systems x' = A(t) x + f(t, x) with known ground truth."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .evolution import CutoffNonlinearity, LinearSystem, NonlinearTerm

__all__ = ["CatalogEntry", "build", "names", "load_table"]


@dataclass
class CatalogEntry:
    name: str
    system: LinearSystem
    nonlinearity: NonlinearTerm = None
    eigenvalues: np.ndarray = None
    truth: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    alpha_override: float = None

    @property
    def autonomous(self):
        return self.system.autonomous and (self.nonlinearity is None
                                           or self.nonlinearity.autonomous)

    @property
    def dim(self):
        return self.system.dim


def _merge(defaults, params, name):
    unknown = set(params) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown parameters for {name}: {sorted(unknown)}")
    out = dict(defaults)
    out.update(params)
    return out


def _moduli_truth(eigs):
    re = np.sort(np.real(eigs))
    mods = sorted(set(np.round(np.exp(re), 14)))
    k = int(np.sum(np.array(mods) < 1))
    return {"intervals": [[m, m] for m in mods], "k": k, "r": len(mods)}


def _constant(name, A, nl, params, alpha_override=None):
    A = np.asarray(A, dtype=float)
    eigs = np.linalg.eigvals(A)
    truth = _moduli_truth(eigs)
    return CatalogEntry(name, LinearSystem.constant(A, name=name), nl, eigs, truth,
                        params, alpha_override)


def _saddle(p):
    c, r0 = p["c"], p["r0"]
    nl = None
    if c:
        nl = CutoffNonlinearity(
            lambda X: c * np.column_stack([X[:, 1] ** 2, X[:, 0] ** 2]),
            lambda X: c * np.stack([np.column_stack([0 * X[:, 0], 2 * X[:, 1]]),
                                    np.column_stack([2 * X[:, 0], 0 * X[:, 1]])], axis=1),
            2, r0)
    return _constant("autonomous_saddle", np.diag([-1.0, 1.0]), nl, p)


def _three(p):
    c, r0 = p["c"], p["r0"]
    nl = None
    if c:
        def g(X):
            return c * np.column_stack([X[:, 2] ** 2, X[:, 2] ** 2,
                                        X[:, 0] ** 2 + X[:, 1] ** 2])

        def dg(X):
            z = 0 * X[:, 0]
            return c * np.stack([np.column_stack([z, z, 2 * X[:, 2]]),
                                 np.column_stack([z, z, 2 * X[:, 2]]),
                                 np.column_stack([2 * X[:, 0], 2 * X[:, 1], z])], axis=1)

        nl = CutoffNonlinearity(g, dg, 3, r0)
    return _constant("autonomous_3d", np.diag([-3.0, -1.0, 2.0]), nl, p)


def _jordan(p):
    return _constant("jordan", [[-1.0, 1.0], [0.0, -1.0]], None, p,
                     alpha_override=p["alpha"])


def _jordan_saddle(p):
    A = [[-1.0, 1.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]]
    return _constant("jordan_saddle", A, None, p)


def _scalar_quadratic(p):
    lam, c, r0 = p["lam"], p["c"], p["r0"]
    if not 0 < lam < 1:
        raise ConfigError("scalar_quadratic needs 0 < lam < 1")
    a = math.log(lam)
    # x' = a x + b x^2 has time-one map lam x + c x^2 + O(x^3)
    b = c * a / (lam * (lam - 1.0))
    nl = CutoffNonlinearity(lambda X: b * X ** 2, lambda X: (2 * b * X)[:, :, None], 1, r0)
    e = _constant("scalar_quadratic", [[a]], nl, p, alpha_override=p["alpha"])
    e.truth["h_coefficient"] = c / (lam - lam ** 2)
    e.truth["ode_coefficient"] = b
    return e


def _scalar_nonuniform(p):
    om, beta, c, r0 = p["omega"], p["beta"], p["c"], p["r0"]
    eps = 2 * beta

    def A(t):
        return np.array([[-om + beta * t * math.sin(t)]])

    def g_int(t):
        return math.sin(t) - t * math.cos(t)

    lam = math.exp(-om)
    b = c * -om / (lam * (lam - 1.0))

    def w(t):
        return math.exp(-3 * eps * abs(t))

    nl = CutoffNonlinearity(lambda X: b * X ** 2, lambda X: (2 * b * X)[:, :, None], 1, r0,
                            weight=w, eps=eps)
    sysm = LinearSystem(A, 1, name="scalar_nonuniform")

    def closed_form(t, s):
        return math.exp(-om * (t - s) + beta * (g_int(t) - g_int(s)))

    truth = {"eps": eps, "lambda": om - beta, "transition": closed_form}
    return CatalogEntry("scalar_nonuniform", sysm, nl, None, truth, p, p["alpha"])


def _thick(p):
    P, lo, hi, u = p["period"], p["a_lo"], p["a_hi"], p["unstable"]
    mid, amp = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def A(t):
        s = mid + amp * math.tanh(5.0 * math.sin(2 * math.pi * t / P))
        return np.array([[s, 0.0], [0.0, u]])

    sysm = LinearSystem(A, 2, name="thick_spectrum_fail")
    truth = {"violating_index": 1}
    return CatalogEntry("thick_spectrum_fail", sysm, None, None, truth, p)


_CATALOG = {
    "autonomous_saddle": (_saddle, {"c": 0.0, "r0": 0.5}),
    "autonomous_3d": (_three, {"c": 0.0, "r0": 0.5}),
    "jordan": (_jordan, {"alpha": 0.9}),
    "jordan_saddle": (_jordan_saddle, {}),
    "scalar_quadratic": (_scalar_quadratic, {"lam": 0.5, "c": 1.0, "r0": 0.1, "alpha": 0.9}),
    "scalar_nonuniform": (_scalar_nonuniform, {"omega": math.log(2.0), "beta": 0.005,
                                               "c": 1.0, "r0": 0.1, "alpha": 0.9}),
    "thick_spectrum_fail": (_thick, {"period": 40.0, "a_lo": -2.0, "a_hi": -0.2,
                                     "unstable": 1.0}),
}


def names():
    return sorted(_CATALOG)


def build(name, params=None):
    """Instantiate a catalog entry by name with parameter overrides."""
    if name not in _CATALOG:
        raise ConfigError(f"unknown catalog system {name!r}; known: {names()}")
    fn, defaults = _CATALOG[name]
    return fn(_merge(defaults, params or {}, name))


def load_table(path):
    """Read a coefficient table: header ``t,a11,a12,...`` then one row per time."""
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"malformed table {path}: {exc}") from exc
    if data.ndim != 2 or data.shape[1] < 2:
        raise ConfigError(f"malformed table {path}")
    d = int(round(math.sqrt(data.shape[1] - 1)))
    if d * d != data.shape[1] - 1:
        raise ConfigError(f"table {path}: need 1 + d^2 columns")
    return LinearSystem.tabular(data[:, 0], data[:, 1:].reshape(-1, d, d), name=str(path))
