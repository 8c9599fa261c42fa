"""Continuous-time objects: linear evolution family, nonlinear flow,
variational flow and the time-one discretization.

All trajectories are integrated with the classical fourth-order Runge-Kutta
scheme on a fixed step.  Time is split at a grid of nodes (multiples of
``node_spacing``, half-integers by default) and every integration, linear or
nonlinear, uses the same partition, so that for ``f = 0`` the nonlinear flow
and the transition matrix agree to rounding.
"""

import math
import threading

import numpy as np

from .errors import EscapeError, NumericalFailure

__all__ = [
    "LinearSystem",
    "NonlinearTerm",
    "CutoffNonlinearity",
    "EvolutionFamily",
    "FlowBounds",
    "DiscreteSystem",
    "MapSystem",
    "FamilyDiscretization",
    "bump",
    "bump_derivative",
]

_MAX_STEPS = 10_000_000


# ---------------------------------------------------------------------------
# linear part

class LinearSystem:
    """The linear equation x' = A(t) x.

    Parameters
    ----------
    A : callable
        ``A(t)`` returning a ``(d, d)`` array.
    dim : int
    horizon : (float, float)
        Interval on which ``A`` is defined.
    autonomous : bool
        Declares ``A`` constant; enables reuse of cached transition pieces.
    """

    def __init__(self, A, dim, horizon=(-math.inf, math.inf), autonomous=False,
                 name=None):
        if int(dim) < 1:
            raise ValueError("dimension must be >= 1")
        self._A = A
        self.dim = int(dim)
        self.horizon = (float(horizon[0]), float(horizon[1]))
        if not self.horizon[0] < self.horizon[1]:
            raise ValueError("empty horizon")
        self.autonomous = bool(autonomous)
        self.name = name

    def __call__(self, t):
        return np.asarray(self._A(t), dtype=float).reshape(self.dim, self.dim)

    @classmethod
    def constant(cls, matrix, horizon=(-math.inf, math.inf), name=None):
        M = np.atleast_2d(np.asarray(matrix, dtype=float))
        return cls(lambda t: M, M.shape[0], horizon, autonomous=True, name=name)

    @classmethod
    def tabular(cls, times, matrices, name=None):
        """Piecewise-linear interpolation of sampled coefficient matrices."""
        times = np.asarray(times, dtype=float)
        mats = np.asarray(matrices, dtype=float)
        if mats.ndim == 1:
            mats = mats[:, None, None]
        if len(times) < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("table times must be strictly increasing, >= 2 rows")
        if mats.shape[0] != len(times) or mats.shape[1] != mats.shape[2]:
            raise ValueError("table must hold one square matrix per time")
        d = mats.shape[1]
        flat = mats.reshape(len(times), d * d)

        def A(t):
            return np.array([np.interp(t, times, flat[:, j]) for j in range(d * d)])

        return cls(A, d, (times[0], times[-1]), autonomous=False, name=name)

    def contains(self, t):
        return self.horizon[0] - 1e-12 <= t <= self.horizon[1] + 1e-12


# ---------------------------------------------------------------------------
# nonlinear part

def _psi(s):
    s = np.asarray(s, dtype=float)
    pos = s > 0
    out = np.zeros_like(s)
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def _dpsi(s):
    s = np.asarray(s, dtype=float)
    pos = s > 0
    out = np.zeros_like(s)
    out[pos] = np.exp(-1.0 / s[pos]) / s[pos] ** 2
    return out


def bump(u):
    """C-infinity cut-off: 1 for u <= 1, 0 for u >= 2."""
    u = np.asarray(u, dtype=float)
    if u.ndim and np.all(u <= 1.0):
        return np.ones_like(u)
    a = _psi(2.0 - u)
    b = _psi(u - 1.0)
    return a / (a + b)


def bump_derivative(u):
    u = np.asarray(u, dtype=float)
    if u.ndim and np.all(u <= 1.0):
        return np.zeros_like(u)
    a = _psi(2.0 - u)
    b = _psi(u - 1.0)
    da = -_dpsi(2.0 - u)
    db = _dpsi(u - 1.0)
    return (da * b - a * db) / (a + b) ** 2


class NonlinearTerm:
    """The nonlinearity f(t, x) together with its spatial Jacobian.

    ``f`` and ``jac`` act on batches: ``x`` has shape ``(N, d)``, ``f``
    returns ``(N, d)`` and ``jac`` returns ``(N, d, d)``.  Without ``jac`` a
    central finite-difference Jacobian is used.

    ``eps``, ``eta`` and ``B`` are the declared nonuniformity rate and the
    constants of the derivative bound and the derivative Lipschitz bound.
    They are not trusted; the audit in :mod:`smoothlin.conditions` measures
    them.
    """

    def __init__(self, f, dim, jac=None, eps=0.0, eta=None, B=None,
                 autonomous=False, zero=False, fd_step=1e-6):
        self._f = f
        self._jac = jac
        self.dim = int(dim)
        self.eps = float(eps)
        self.eta = eta
        self.B = B
        self.autonomous = bool(autonomous)
        self.is_zero = bool(zero)
        self.fd_step = fd_step

    @classmethod
    def zero(cls, dim):
        return cls(lambda t, x: np.zeros_like(x), dim,
                   jac=lambda t, x: np.zeros((x.shape[0], dim, dim)),
                   eta=0.0, B=0.0, autonomous=True, zero=True)

    def __call__(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros_like(x)
        return self._f(t, x)

    def jac(self, t, x):
        x = np.asarray(x, dtype=float)
        if self.is_zero:
            return np.zeros((x.shape[0], self.dim, self.dim))
        if self._jac is not None:
            return self._jac(t, x)
        return self._fd_jac(t, x)

    def _fd_jac(self, t, x):
        n, d = x.shape
        J = np.empty((n, d, d))
        for j in range(d):
            hstep = self.fd_step * np.maximum(1.0, np.abs(x[:, j]))
            xp = x.copy()
            xm = x.copy()
            xp[:, j] += hstep
            xm[:, j] -= hstep
            J[:, :, j] = (self._f(t, xp) - self._f(t, xm)) / (2 * hstep[:, None])
        return J


class CutoffNonlinearity(NonlinearTerm):
    """f(t, x) = w(t) * bump(|x| / r0) * g(x).

    ``g`` and its Jacobian ``dg`` are batch polynomials; ``w(t)`` is a
    scalar time weight (e.g. ``exp(-3 eps |t|)``).  The bump equals 1 on the
    ball of radius ``r0`` and vanishes outside ``2 r0``, which turns a local
    nonlinearity into a globally Lipschitz one.
    """

    def __init__(self, g, dg, dim, r0, weight=None, eps=0.0, eta=None, B=None):
        self.g = g
        self.dg = dg
        self.r0 = float(r0)
        self.weight = weight
        super().__init__(self._eval, dim, jac=self._eval_jac, eps=eps, eta=eta,
                         B=B, autonomous=weight is None)

    def _w(self, t):
        return 1.0 if self.weight is None else float(self.weight(t))

    def _eval(self, t, x):
        r = np.linalg.norm(x, axis=1)
        return self._w(t) * bump(r / self.r0)[:, None] * self.g(x)

    def _eval_jac(self, t, x):
        r = np.linalg.norm(x, axis=1)
        u = r / self.r0
        chi = bump(u)
        dchi = bump_derivative(u) / self.r0
        safe = np.where(r > 0, r, 1.0)
        grad = (dchi / safe)[:, None] * x          # d chi / d x
        J = chi[:, None, None] * self.dg(x) + self.g(x)[:, :, None] * grad[:, None, :]
        return self._w(t) * J


# ---------------------------------------------------------------------------
# integration

def _rk4(rhs, t0, t1, y, n_steps):
    dt = (t1 - t0) / n_steps
    for k in range(n_steps):
        t = t0 + k * dt
        k1 = rhs(t, y)
        k2 = rhs(t + 0.5 * dt, y + 0.5 * dt * k1)
        k3 = rhs(t + 0.5 * dt, y + 0.5 * dt * k2)
        k4 = rhs(t + dt, y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


class EvolutionFamily:
    """Evaluator for T(t, s), phi(t, s; x) and D_x phi(t, s; x).

    Parameters
    ----------
    system : LinearSystem
    nonlinearity : NonlinearTerm, optional
        Defaults to ``f = 0``.
    step : float
        Fixed Runge-Kutta step.
    tol : float
        Declared integrator tolerance, used by consistency checks.
    escape_radius : float
        Trajectories whose norm exceeds this raise :class:`EscapeError`.
    node_spacing : float
        Spacing of the grid whose transition pieces are cached.
    """

    order = 4

    def __init__(self, system, nonlinearity=None, step=1e-3, tol=1e-10,
                 escape_radius=1e8, node_spacing=0.5):
        if step <= 0:
            raise ValueError("step must be positive")
        self.system = system
        self.nonlinearity = nonlinearity or NonlinearTerm.zero(system.dim)
        if self.nonlinearity.dim != system.dim:
            raise ValueError("dimension mismatch between A and f")
        self.dim = system.dim
        self.step = float(step)
        self.tol = float(tol)
        self.escape_radius = float(escape_radius)
        self.node_spacing = float(node_spacing)
        self.autonomous = system.autonomous and self.nonlinearity.autonomous
        self._cache = {}
        self._lock = threading.Lock()

    # -- time partition ---------------------------------------------------

    def _check_times(self, *times):
        for t in times:
            if not self.system.contains(t):
                raise NumericalFailure(f"time {t} outside horizon {self.system.horizon}",
                                       s=times[0], t=times[-1])

    def _segments(self, s, t):
        """Breakpoints from s to t: s, interior grid nodes, t."""
        if s == t:
            return []
        h = self.node_spacing
        if t > s:
            k0 = math.floor(s / h + 1e-12) + 1
            k1 = math.ceil(t / h - 1e-12) - 1
            nodes = [k * h for k in range(k0, k1 + 1)]
        else:
            k0 = math.ceil(s / h - 1e-12) - 1
            k1 = math.floor(t / h + 1e-12) + 1
            nodes = [k * h for k in range(k0, k1 - 1, -1)]
        pts = [s] + nodes + [t]
        return list(zip(pts[:-1], pts[1:]))

    def _n_steps(self, a, b):
        n = max(1, math.ceil(abs(b - a) / self.step - 1e-9))
        if n > _MAX_STEPS:
            raise NumericalFailure("step underflow: too many steps", s=a, t=b)
        return n

    def _is_node(self, t):
        q = t / self.node_spacing
        return abs(q - round(q)) < 1e-12

    # -- linear evolution -------------------------------------------------

    def _piece(self, a, b):
        A = self.system
        rhs = lambda t, Y: A(t) @ Y
        cacheable = self._is_node(a) and self._is_node(b)
        if cacheable:
            key = ("T", round(b - a, 12)) if self.system.autonomous else \
                ("T", round(a, 12), round(b, 12))
            with self._lock:
                hit = self._cache.get(key)
            if hit is not None:
                return hit
        Y = _rk4(rhs, a, b, np.eye(self.dim), self._n_steps(a, b))
        if not np.all(np.isfinite(Y)):
            raise NumericalFailure("non-finite transition matrix", s=a, t=b)
        if cacheable:
            with self._lock:
                self._cache[key] = Y
        return Y

    def transition(self, s, t, return_cond=False):
        """T(t, s), the solution operator of x' = A(t) x from s to t.

        Backward transitions are integrated in reversed time rather than
        obtained by inversion.
        """
        self._check_times(s, t)
        T = np.eye(self.dim)
        for a, b in self._segments(s, t):
            T = self._piece(a, b) @ T
        if return_cond:
            return T, float(np.linalg.cond(T))
        return T

    # -- nonlinear flow ---------------------------------------------------

    def _rhs(self, t, X):
        A = self.system(t)
        out = X @ A.T
        if not self.nonlinearity.is_zero:
            out = out + self.nonlinearity(t, X)
        return out

    def _as_batch(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = x.reshape(1, -1) if single else x
        if X.shape[1] != self.dim:
            raise ValueError(f"expected states of dimension {self.dim}")
        return X, single

    def flow(self, s, t, x, check_escape=True):
        """phi(t, s; x) for a single state ``(d,)`` or a batch ``(N, d)``."""
        self._check_times(s, t)
        X, single = self._as_batch(x)
        Y = X.copy()
        for a, b in self._segments(s, t):
            Y = _rk4(self._rhs, a, b, Y, self._n_steps(a, b))
        self._escape_check(Y, s, t, single, check_escape)
        return Y[0] if single else Y

    def _escape_check(self, Y, s, t, single, check_escape):
        bad = ~np.all(np.isfinite(Y), axis=1)
        if check_escape:
            bad |= np.linalg.norm(np.where(np.isfinite(Y), Y, 0.0), axis=1) > self.escape_radius
        if np.any(bad):
            res = Y[0] if single else Y
            raise EscapeError(f"{int(bad.sum())} trajectories escaped between "
                              f"s={s} and t={t}", result=res, mask=bad)

    def variational_flow(self, s, t, x, return_state=False):
        """D_x phi(t, s; x), integrating the variational equation along the orbit."""
        self._check_times(s, t)
        X, single = self._as_batch(x)
        n, d = X.shape
        nl = self.nonlinearity

        def rhs(tt, Z):
            Xs = Z[:, :d]
            Y = Z[:, d:].reshape(n, d, d)
            A = self.system(tt)
            dX = Xs @ A.T
            M = np.broadcast_to(A, (n, d, d))
            if not nl.is_zero:
                dX = dX + nl(tt, Xs)
                M = M + nl.jac(tt, Xs)
            dY = M @ Y
            return np.concatenate([dX, dY.reshape(n, d * d)], axis=1)

        Z = np.concatenate([X, np.broadcast_to(np.eye(d).ravel(), (n, d * d))], axis=1)
        for a, b in self._segments(s, t):
            Z = _rk4(rhs, a, b, Z, self._n_steps(a, b))
        if not np.all(np.isfinite(Z)):
            raise NumericalFailure("non-finite variational flow", s=s, t=t)
        J = Z[:, d:].reshape(n, d, d)
        Xt = Z[:, :d]
        if single:
            J, Xt = J[0], Xt[0]
        return (J, Xt) if return_state else J

    # -- discretization ---------------------------------------------------

    def discretize(self, window):
        """Time-one maps A_n = T(n+1, n) and f_n(x) = phi(n+1, n; x) - A_n x.

        Returns a :class:`FamilyDiscretization` restricted (for listing) to
        ``window = (N_minus, N_plus)``; evaluation outside it is allowed as
        long as the horizon permits.
        """
        lo, hi = int(window[0]), int(window[1])
        self._check_times(lo, hi + 1)
        return FamilyDiscretization(self, (lo, hi))


def _exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return math.inf


def _prod(*vals):
    """Product with 0 * inf = 0 (a vanishing constant kills the bound)."""
    if any(v == 0 for v in vals):
        return 0.0
    out = 1.0
    for v in vals:
        out *= v
    return out


class FlowBounds:
    """Constants controlling the discretized nonlinearity.

    Built from the dichotomy constants (M, lambda_bar, eps) and the measured
    derivative bounds (eta, B) of ``f``.

    * ``M_tilde = M e^{lb} exp(M e^{lb + 2 eps})`` bounds |D_x phi(t, n; x)|
      by ``M_tilde e^{eps|n|}`` on unit intervals (``eta < 1`` dropped).
    * ``a``: Gronwall Lipschitz constant of phi(r, n; .) on unit intervals.
    * ``d_lip``: Gronwall Lipschitz constant of D_x phi(r, n; .).
    * ``eta_tilde = M M_tilde eta e^{lb + 2 eps + 1}``.
    * ``B_tilde = 2 a d_lip e^{lb + 4 eps} B M M_tilde``.
    """

    def __init__(self, M, lambda_bar, eps, eta, B):
        self.M = float(M)
        self.lambda_bar = float(lambda_bar)
        self.eps = float(eps)
        self.eta = float(eta)
        self.B = float(B)
        lb, e = self.lambda_bar, self.eps
        exp = _exp
        self.M_tilde = M * exp(lb) * exp(M * exp(lb + 2 * e))
        self.a = M * exp(lb) * exp(M * eta * exp(lb + 2 * e))
        self.d_lip = _prod(M, B, self.a, self.M_tilde, exp(lb + 2 * e),
                           exp(M * eta * exp(lb)))
        self.eta_tilde = _prod(M, self.M_tilde, eta, exp(lb + 2 * e + 1))
        self.B_tilde = _prod(2 * self.a, self.d_lip, exp(lb + 4 * e), B, M, self.M_tilde)

    def as_dict(self):
        return {"M": self.M, "lambda_bar": self.lambda_bar, "eps": self.eps,
                "eta": self.eta, "B": self.B, "M_tilde": self.M_tilde, "a": self.a,
                "d_lip": self.d_lip, "eta_tilde": self.eta_tilde,
                "B_tilde": self.B_tilde}


# ---------------------------------------------------------------------------
# discrete-time systems x_{n+1} = A_n x_n + f_n(x_n)

class DiscreteSystem:
    """Interface of a nonautonomous map sequence A_n + f_n.

    Subclasses provide ``A(n)``, ``f(n, X)`` and ``Df(n, X)``; states are
    batches of shape ``(N, d)``.
    """

    dim = None
    autonomous = False
    is_linear = False
    tol_fp = 1e-13
    max_iter = 200

    def A(self, n):
        raise NotImplementedError

    def f(self, n, X):
        raise NotImplementedError

    def Df(self, n, X):
        raise NotImplementedError

    def A_inv(self, n):
        return np.linalg.inv(self.A(n))

    def step(self, n, X):
        return X @ self.A(n).T + self.f(n, X)

    def f_many(self, ns, X):
        """f_{ns[j]}(X[j]) for an index array ``ns`` aligned with rows of X."""
        ns = np.asarray(ns)
        out = np.zeros_like(X)
        if self.is_linear or len(X) == 0:
            return out
        if self.autonomous:
            return self.f(int(ns[0]), X)
        for n in np.unique(ns):
            sel = ns == n
            out[sel] = self.f(int(n), X[sel])
        return out

    def _initial_inverse(self, n, Y):
        return Y @ self.A_inv(n).T

    def inverse_step(self, n, Y):
        """Solve (A_n + f_n)(x) = y by fixed-point iteration, Newton fallback."""
        Y = np.asarray(Y, dtype=float)
        if self.is_linear:
            return Y @ self.A_inv(n).T
        Ainv = self.A_inv(n)
        X = self._initial_inverse(n, Y)
        prev = None
        scale = 1.0 + np.max(np.abs(Y), initial=0.0)
        for _ in range(self.max_iter):
            Xn = (Y - self.f(n, X)) @ Ainv.T
            delta = np.max(np.abs(Xn - X), initial=0.0)
            X = Xn
            if delta <= self.tol_fp * scale:
                return X
            if prev is not None and delta >= prev and delta > 1e3 * self.tol_fp * scale:
                break
            prev = delta
        return self._newton_inverse(n, Y, X)

    def _newton_inverse(self, n, Y, X):
        from .errors import OrbitError
        A = self.A(n)
        scale = 1.0 + np.max(np.abs(Y), initial=0.0)
        for _ in range(50):
            R = self.step(n, X) - Y
            if np.max(np.abs(R), initial=0.0) <= self.tol_fp * scale:
                return X
            J = A[None] + self.Df(n, X)
            X = X - np.linalg.solve(J, R[..., None])[..., 0]
            if not np.all(np.isfinite(X)):
                break
        raise OrbitError(f"backward step at n={n} did not converge")


class MapSystem(DiscreteSystem):
    """Discrete system given directly by matrices and maps.

    Parameters
    ----------
    A : callable or array
        ``A(n)`` or a constant matrix.
    f, Df : callable, optional
        ``f(n, X)`` and ``Df(n, X)``; omitted means linear.
    """

    def __init__(self, A, f=None, Df=None, dim=None, autonomous=None):
        if callable(A):
            self._A = A
            d = dim if dim is not None else np.atleast_2d(A(0)).shape[0]
            auto = bool(autonomous)
        else:
            M = np.atleast_2d(np.asarray(A, dtype=float))
            self._A = lambda n: M
            d = M.shape[0]
            auto = True if autonomous is None else autonomous
        self.dim = d
        self._f = f
        self._Df = Df
        self.is_linear = f is None
        self.autonomous = auto
        self._inv = {}

    def A(self, n):
        return np.atleast_2d(np.asarray(self._A(n), dtype=float))

    def A_inv(self, n):
        key = 0 if self.autonomous else n
        if key not in self._inv:
            self._inv[key] = np.linalg.inv(self.A(n))
        return self._inv[key]

    def f(self, n, X):
        if self._f is None:
            return np.zeros_like(X)
        return self._f(n, X)

    def Df(self, n, X):
        if self._Df is None:
            if self._f is None:
                return np.zeros((X.shape[0], self.dim, self.dim))
            h = 1e-7
            J = np.empty((X.shape[0], self.dim, self.dim))
            for j in range(self.dim):
                E = np.zeros(self.dim)
                E[j] = h
                J[:, :, j] = (self._f(n, X + E) - self._f(n, X - E)) / (2 * h)
            return J
        return self._Df(n, X)


class FamilyDiscretization(DiscreteSystem):
    """Time-one maps of an :class:`EvolutionFamily`.

    ``step(n, x)`` is ``flow(n, n+1, x)`` and ``f(n, x)`` is that value minus
    ``A_n x``, so ``f_n(x) + A_n x - phi(n+1, n; x)`` vanishes up to rounding.
    """

    def __init__(self, family, window):
        self.family = family
        self.window = window
        self.dim = family.dim
        self.autonomous = family.autonomous
        self.is_linear = family.nonlinearity.is_zero
        self._inv = {}

    def indices(self):
        return range(self.window[0], self.window[1] + 1)

    def matrices(self):
        return [self.A(n) for n in self.indices()]

    def A(self, n):
        return self.family.transition(n, n + 1)

    def A_inv(self, n):
        key = 0 if self.family.system.autonomous else n
        if key not in self._inv:
            self._inv[key] = np.linalg.inv(self.A(n))
        return self._inv[key]

    def step(self, n, X):
        return self.family.flow(n, n + 1, X, check_escape=False)

    def f(self, n, X):
        if self.is_linear:
            return np.zeros_like(np.asarray(X, dtype=float))
        X = np.asarray(X, dtype=float)
        return self.step(n, X) - X @ self.A(n).T

    def Df(self, n, X):
        return self.family.variational_flow(n, n + 1, X) - self.A(n)[None]

    def _initial_inverse(self, n, Y):
        # backward integration is already the inverse up to integrator error
        return self.family.flow(n + 1, n, Y, check_escape=False)
