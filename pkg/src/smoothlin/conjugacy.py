"""Discrete conjugacies h_n, the stable-foliation fixed point and the
continuous-time conjugacies H, G (and the averaged autonomous H~).

Notation: the discrete system is x_{m+1} = A_m x_m + f_m(x_m), the cocycle is
``Acal(m, n)`` and ``P(n)`` projects onto the stable directions.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (BudgetViolation, DomainError, InverseError, OrbitError,
                     TailError)

__all__ = [
    "Orbit",
    "nonlinear_orbit",
    "StableUnstableSplitting",
    "DiscreteConjugacy",
    "FoliationSolution",
    "solve_foliation",
    "seq_norms",
    "ContinuousConjugacy",
]


def _batch(x, d):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x.reshape(1, d) if single else x
    return X, single


# ---------------------------------------------------------------------------
# orbits

@dataclass
class Orbit:
    """States ``X[j]`` at indices ``start + j`` for a batch of initial points.

    ``alive[j]`` is False for rows that left ``escape_radius`` at or before
    index ``start + j`` (their later entries are meaningless).
    """

    start: int
    X: np.ndarray
    alive: np.ndarray

    @property
    def truncated(self):
        return not bool(np.all(self.alive))

    def at(self, m):
        return self.X[m - self.start]

    def __len__(self):
        return len(self.X)


def nonlinear_orbit(system, n, x, n_back, n_fwd, escape_radius=1e6):
    """Orbit of ``x`` at index ``n`` over ``[n - n_back, n + n_fwd]``.

    Forward steps evaluate the map; backward steps solve
    ``(A_m + f_m)(x_m) = x_{m+1}`` (see ``DiscreteSystem.inverse_step``).
    Rows escaping ``escape_radius`` are frozen and flagged.
    """
    X0, single = _batch(x, system.dim)
    N = len(X0)
    L = n_back + n_fwd + 1
    X = np.zeros((L, N, system.dim))
    alive = np.ones((L, N), dtype=bool)
    X[n_back] = X0
    for j in range(n_back, L - 1):
        m = n - n_back + j
        live = alive[j]
        X[j + 1] = X[j]
        if np.any(live):
            X[j + 1, live] = system.step(m, X[j, live])
        alive[j + 1] = live & _inside(X[j + 1], escape_radius)
    for j in range(n_back, 0, -1):
        m = n - n_back + j - 1
        live = alive[j]
        X[j - 1] = X[j]
        if np.any(live):
            try:
                X[j - 1, live] = system.inverse_step(m, X[j, live])
            except OrbitError as exc:
                raise OrbitError(f"backward orbit from n={n} failed at m={m}: {exc}") from exc
        alive[j - 1] = live & _inside(X[j - 1], escape_radius)
    orb = Orbit(n - n_back, X, alive)
    if single:
        orb = Orbit(orb.start, X[:, 0], alive[:, 0])
    return orb


def _inside(X, R):
    return np.all(np.isfinite(X), axis=1) & (np.linalg.norm(X, axis=1) <= R)


# ---------------------------------------------------------------------------
# splitting

class StableUnstableSplitting:
    """Per-index projections pi_s = P(n), pi_u = Id - P(n)."""

    def __init__(self, projection, dim, stable_dim):
        if callable(projection):
            self._P = projection
        else:
            Pc = np.asarray(projection, dtype=float)
            self._P = lambda n: Pc
        self.dim = dim
        self.stable_dim = int(stable_dim)
        self._I = np.eye(dim)

    @classmethod
    def from_family(cls, projections):
        return cls(projections, projections(next(iter(projections.projections))).shape[0],
                   projections.stable_dim)

    @classmethod
    def trivial(cls, dim, stable=True):
        return cls(np.eye(dim) if stable else np.zeros((dim, dim)), dim,
                   dim if stable else 0)

    def pi_s(self, n):
        return self._P(n)

    def pi_u(self, n):
        return self._I - self._P(n)

    @property
    def one_sided(self):
        return self.stable_dim in (0, self.dim)


# ---------------------------------------------------------------------------
# discrete conjugacy

class DiscreteConjugacy:
    """Evaluator of h_n and its inverse for x_{m+1} = A_m x_m + f_m(x_m).

    ``h_n(x) = x + v_n(x)`` where ``v`` solves
    ``v_{m+1}(x_{m+1}) = A_m v_m(x_m) - f_m(x_m)`` along the orbit of x.
    Two Green's-function forms are available:

    ``"bounded"``
        stable part summed over the past, unstable part over the future.
        This is the unique solution bounded along full orbits.
    ``"smooth"``
        stable part summed over the future, unstable part over the past.
        Each sum only follows the orbit in the direction in which it decays,
        which keeps h as smooth as f for one-sided spectra.

    ``"auto"`` uses ``smooth`` when the spectrum is one-sided and ``bounded``
    otherwise.

    Parameters
    ----------
    system : DiscreteSystem
    splitting : StableUnstableSplitting
    n_tail : int
        Number of terms kept on each side.
    tol_conj : float
        Allowed geometric tail estimate.
    tol_fp : float
        Fixed-point / Newton tolerance for the inverse.
    """

    def __init__(self, system, splitting, n_tail=40, mode="auto", tol_conj=1e-6,
                 tol_fp=1e-13, max_iter=200, escape_radius=1e6, check_tail=True,
                 domain_radius=None):
        if mode not in ("auto", "bounded", "smooth"):
            raise ValueError(f"unknown mode {mode!r}")
        self.system = system
        self.split = splitting
        self.dim = system.dim
        self.n_tail = int(n_tail)
        self.mode = ("smooth" if splitting.one_sided else "bounded") if mode == "auto" else mode
        self.tol_conj = tol_conj
        self.tol_fp = tol_fp
        self.max_iter = max_iter
        self.escape_radius = escape_radius
        self.check_tail = check_tail
        self.domain_radius = domain_radius
        self.last_tail = 0.0
        self.last_truncated = False

    # projections summed forward (i >= n) and backward (i < n)
    def _fwd_proj(self, i):
        return self.split.pi_s(i) if self.mode == "smooth" else self.split.pi_u(i)

    def _bwd_proj(self, i):
        return self.split.pi_u(i) if self.mode == "smooth" else self.split.pi_s(i)

    @property
    def _needs_fwd(self):
        ks, d = self.split.stable_dim, self.dim
        return ks > 0 if self.mode == "smooth" else ks < d

    @property
    def _needs_bwd(self):
        ks, d = self.split.stable_dim, self.dim
        return ks < d if self.mode == "smooth" else ks > 0

    def _check_domain(self, n, X):
        if self.domain_radius is None:
            return
        r = self.domain_radius(n)
        bad = np.linalg.norm(X, axis=1) > r * (1 + 1e-12)
        if np.any(bad):
            raise DomainError(f"{int(bad.sum())} points outside U_{n} (radius {r:.3g})")

    # -- Green's sums -------------------------------------------------------

    def _forward_sum(self, n, Gf):
        """sum_{i=n}^{n+T} Acal(n, i+1) Pf(i+1) g_i with Gf[j] = g_{n+j}."""
        Pf = self._fwd_proj
        S = np.zeros_like(Gf[0])
        for i in range(n + len(Gf) - 1, n - 1, -1):
            S = Gf[i - n] @ Pf(i + 1).T + S
            S = S @ (Pf(i) @ self.system.A_inv(i)).T
        return S

    def _backward_sum(self, n, Gb):
        """sum_{i=n-T}^{n-1} Acal(n, i+1) Pb(i+1) g_i with Gb[j] = g_{n-T+j}."""
        Pb = self._bwd_proj
        begin = n - len(Gb)
        U = np.zeros_like(Gb[0])
        for i in range(begin, n):
            U = U @ self.system.A(i).T + Gb[i - begin] @ Pb(i + 1).T
        return U

    def _tail_fwd(self, n, Gf):
        T = self.n_tail
        k = min(4, T)
        t_last = self._single_fwd(n, Gf, n + T)
        t_prev = self._single_fwd(n, Gf, n + T - k)
        return _geometric_tail(t_last, t_prev, k, self._floor)

    def _tail_bwd(self, n, Gb):
        T = self.n_tail
        k = min(4, T - 1)
        if k < 1:
            return 0.0
        t_last = self._single_bwd(n, Gb, n - T)
        t_prev = self._single_bwd(n, Gb, n - T + k)
        return _geometric_tail(t_last, t_prev, k, self._floor)

    def _single_fwd(self, n, Gf, j):
        v = Gf[j - n] @ self._fwd_proj(j + 1).T
        for i in range(j, n - 1, -1):
            v = v @ (self._fwd_proj(i) @ self.system.A_inv(i)).T
        return np.linalg.norm(v, axis=1)

    def _single_bwd(self, n, Gb, j):
        begin = n - self.n_tail
        v = Gb[j - begin] @ self._bwd_proj(j + 1).T
        for i in range(j + 1, n):
            v = v @ self.system.A(i).T
        return np.linalg.norm(v, axis=1)

    # -- h ------------------------------------------------------------------

    def _orbit_terms(self, n, X):
        """g_i = f_i(x_i) along the orbit, forward and backward as needed."""
        T = self.n_tail
        nb = T if self._needs_bwd else 0
        nf = T + 1 if self._needs_fwd else 0
        orb = nonlinear_orbit(self.system, n, X, nb, nf, self.escape_radius)
        Xo, alive = orb.X, orb.alive
        self.last_truncated = orb.truncated
        G = np.zeros((nb + nf, len(X), self.dim))
        for j in range(nb + nf):
            m = n - nb + j
            g = Xo[j + 1] - Xo[j] @ self.system.A(m).T
            ok = alive[j] & alive[j + 1]
            G[j] = np.where(ok[:, None], g, 0.0)
        Gb = G[:nb]
        Gf = G[nb:]
        return Gf, Gb

    def v(self, n, x):
        """The correction v_n(x) = h_n(x) - x.

        smooth:  v = sum_{i>=n} Acal(n,i+1) P g_i - sum_{i<n} Acal(n,i+1) Q g_i
        bounded: v = sum_{i>=n} Acal(n,i+1) Q g_i - sum_{i<n} Acal(n,i+1) P g_i
        with g_i = f_i(x_i) along the orbit and Q = Id - P.
        """
        X, single = _batch(x, self.dim)
        if self.system.is_linear:
            self.last_tail = 0.0
            out = np.zeros_like(X)
            return out[0] if single else out
        Gf, Gb = self._orbit_terms(n, X)
        self._floor = 64 * np.finfo(float).eps * np.linalg.norm(X, axis=1)
        out = np.zeros_like(X)
        tail = 0.0
        if self._needs_fwd:
            out += self._forward_sum(n, Gf)
            tail = max(tail, self._tail_fwd(n, Gf))
        if self._needs_bwd:
            out -= self._backward_sum(n, Gb)
            tail = max(tail, self._tail_bwd(n, Gb))
        self.last_tail = tail
        if self.check_tail and tail > self.tol_conj:
            raise TailError(f"Green's sum tail {tail:.3g} exceeds tol_conj "
                            f"{self.tol_conj:.3g}; increase n_tail")
        return out[0] if single else out

    def solve_h(self, n, x):
        """h_n(x) = x + v_n(x)."""
        X, single = _batch(x, self.dim)
        self._check_domain(n, X)
        H = X + self.v(n, X)
        return H[0] if single else H

    __call__ = solve_h

    def residual(self, n, x, relative=True):
        """|h_{n+1}((A_n + f_n)(x)) - A_n h_n(x)|, optionally relative."""
        X, single = _batch(x, self.dim)
        lhs = self.solve_h(n + 1, self.system.step(n, X))
        rhs = self.solve_h(n, X) @ self.system.A(n).T
        r = np.linalg.norm(lhs - rhs, axis=1)
        if relative:
            r = r / np.maximum(np.linalg.norm(rhs, axis=1), 1e-300)
            r = np.where(np.linalg.norm(X, axis=1) == 0, 0.0, r)
        return r[0] if single else r

    # -- inverse --------------------------------------------------------------

    def _inverse_picard(self, n, Y):
        """Picard iteration for u = h^{-1} - id along the linear orbit of y."""
        T = self.n_tail
        nb = T if self._needs_bwd else 0
        nf = T + 1 if self._needs_fwd else 0
        L = nb + nf + 1
        Ys = np.zeros((L, len(Y), self.dim))
        Ys[nb] = Y
        for j in range(nb, L - 1):
            Ys[j + 1] = Ys[j] @ self.system.A(n - nb + j).T
        for j in range(nb, 0, -1):
            Ys[j - 1] = Ys[j] @ self.system.A_inv(n - nb + j - 1).T
        U = np.zeros_like(Ys)
        idx = np.arange(n - nb, n - nb + L)
        prev = None
        for _ in range(self.max_iter):
            Z = (Ys[:-1] + U[:-1]).reshape(-1, self.dim)
            ns = np.repeat(idx[:-1], len(Y))
            G = self.system.f_many(ns, Z).reshape(L - 1, len(Y), self.dim)
            Un = self._all_index_sums(n - nb, G, L)
            delta = float(np.max(np.abs(Un - U), initial=0.0))
            U = Un
            # Newton polishes the last digits
            if delta <= 1e-10 * (1.0 + float(np.max(np.abs(Y), initial=0.0))):
                break
            if prev is not None and delta > prev and delta > 1e-8:
                break
            prev = delta
        return Y + U[nb]

    def _all_index_sums(self, begin, G, L):
        """u_m for every window index m (sign convention of h^{-1})."""
        end = begin + L - 1
        out = np.zeros((L,) + G.shape[1:])
        if self._needs_fwd:
            S = np.zeros(G.shape[1:])
            for i in range(end - 1, begin - 1, -1):
                S = S + G[i - begin] @ self._fwd_proj(i + 1).T
                S = S @ (self._fwd_proj(i) @ self.system.A_inv(i)).T
                out[i - begin] -= S
        if self._needs_bwd:
            U = np.zeros(G.shape[1:])
            for i in range(begin, end):
                U = U @ self.system.A(i).T + G[i - begin] @ self._bwd_proj(i + 1).T
                out[i + 1 - begin] += U
        return out

    def solve_h_inverse(self, n, y, newton_iter=30, fd_step=1e-7):
        """h_n^{-1}(y): Picard along the linear orbit, then Newton on h_n(x) = y."""
        Y, single = _batch(y, self.dim)
        if self.system.is_linear:
            return Y[0].copy() if single else Y.copy()
        X = self._inverse_picard(n, Y)
        scale = 1.0 + np.max(np.abs(Y), axis=1)
        d = self.dim
        done = np.zeros(len(Y), dtype=bool)
        for _ in range(newton_iter):
            R = self.solve_h(n, X) - Y
            err = np.max(np.abs(R), axis=1)
            done = err <= self.tol_fp * scale
            if np.all(done):
                break
            act = ~done
            Xa = X[act]
            hstep = fd_step * np.maximum(1e-3, np.max(np.abs(Xa), axis=1))
            stack = [Xa]
            for j in range(d):
                Xp = Xa.copy()
                Xp[:, j] += hstep
                stack.append(Xp)
            Hs = self.solve_h(n, np.concatenate(stack)).reshape(d + 1, len(Xa), d)
            J = np.empty((len(Xa), d, d))
            for j in range(d):
                J[:, :, j] = (Hs[j + 1] - Hs[0]) / hstep[:, None]
            step = np.linalg.solve(J, R[act][..., None])[..., 0]
            X[act] = Xa - step
            if not np.all(np.isfinite(X)):
                raise InverseError(f"Newton iteration for h_{n}^-1 diverged")
        else:
            R = self.solve_h(n, X) - Y
            if np.max(np.abs(R)) > 1e3 * self.tol_fp * np.max(scale):
                raise InverseError(f"Newton iteration for h_{n}^-1 did not converge")
        return X[0] if single else X


def _geometric_tail(t_last, t_prev, k, floor):
    """Per-sample geometric tail estimate from two term norms k apart.

    Terms below ``floor`` (rounding level of the orbit) count as converged.
    """
    t_last = np.where(t_last <= floor, 0.0, t_last)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(t_prev > 0, (t_last / np.where(t_prev > 0, t_prev, 1.0)) ** (1.0 / k), 0.0)
    tail = np.where(t_last == 0, 0.0,
                    np.where(q < 1, t_last * q / np.maximum(1 - q, 1e-300), np.inf))
    return float(np.max(tail, initial=0.0))


# ---------------------------------------------------------------------------
# stable foliation

@dataclass
class FoliationSolution:
    """Fixed point q*_n(x, xi_s), n = 0..N, of the stable-foliation equation.

    ``q`` has shape ``(N + 1, W, d)``: for each n a window sequence of ``W``
    states at indices ``start .. start + W - 1``.
    """

    q: np.ndarray
    start: int
    gamma_s: float
    log: list = field(default_factory=list)
    contraction: float = 0.0
    bound: float = None
    iterations: int = 0
    converged: bool = False

    @property
    def q0(self):
        return self.q[0]

    def weighted_norm(self, split):
        return _weighted_norm(self.q, self.start, split, self.gamma_s)


def seq_norms(z, start, split):
    """sup_m |P(m) z_m| + |(I - P(m)) z_m| for each window in a stack (..., W, d)."""
    z = np.asarray(z, dtype=float)
    vals = np.empty(z.shape[:-1])
    for j in range(z.shape[-2]):
        m = start + j
        zm = z[..., j, :]
        vals[..., j] = (np.linalg.norm(zm @ split.pi_s(m).T, axis=-1)
                        + np.linalg.norm(zm @ split.pi_u(m).T, axis=-1))
    return vals.max(axis=-1)


def _seq_norm(z, start, split):
    return float(np.max(seq_norms(z, start, split)))


def _weighted_norm(q, start, split, gamma_s):
    return max(gamma_s ** (-n) * _seq_norm(qn, start, split) for n, qn in enumerate(q))


def _shift(system, z, start):
    """(Acal z)_m = A_{m-1} z_{m-1} on the window; the entry entering is 0."""
    out = np.zeros_like(z)
    for j in range(1, z.shape[-2]):
        out[..., j, :] = z[..., j - 1, :] @ system.A(start + j - 1).T
    return out


def _shift_inv(system, z, start):
    """(Acal^{-1} z)_m = A_m^{-1} z_{m+1}; the last entry is 0."""
    out = np.zeros_like(z)
    for j in range(z.shape[-2] - 1):
        out[..., j, :] = z[..., j + 1, :] @ system.A_inv(start + j).T
    return out


def _lift_f(system, Z, start):
    """(f~(z))_m = f_{m-1}(z_{m-1}) for a stack of windows ``Z`` (..., W, d)."""
    shp = Z.shape
    W, d = shp[-2], shp[-1]
    flat = Z.reshape(-1, W, d)
    out = np.zeros_like(flat)
    src = flat[:, :-1, :]
    idx = np.broadcast_to(start + np.arange(W - 1), src.shape[:2])
    nz = np.any(src != 0, axis=2)
    if np.any(nz):
        vals = system.f_many(idx[nz], src[nz])
        tgt = out[:, 1:, :]
        tgt[nz] = vals
        out[:, 1:, :] = tgt
    return out.reshape(shp)


def _lift_F(system, z, start):
    return _shift(system, z, start) + _lift_f(system, z, start)


def _proj(split, z, start, stable=True):
    out = np.empty_like(z)
    for j in range(z.shape[-2]):
        P = split.pi_s(start + j) if stable else split.pi_u(start + j)
        out[..., j, :] = z[..., j, :] @ P.T
    return out


def solve_foliation(system, split, x, xi_s, start, n_max, gamma_s, delta=None,
                    bound=None, max_iter=100, tol=1e-14, override=False):
    """Picard iteration for the stable-foliation equation on a finite window.

    q_n = As^n (xi_s - pi_s x) + sum_{i<n} As^{n-i-1} pi_s D_i
          - sum_{n<=i<=N} Au^{n-i-1} pi_u D_i,
    D_i = f~(q_i + F^i x) - f~(F^i x).

    Parameters
    ----------
    x, xi_s : array (W, d) or (B, W, d)
        Window sequences (or a batch of them); ``xi_s`` must lie in the
        stable subspace. Norms and the contraction factor are taken as the
        supremum over the batch.
    start : int
        Index of the first window entry.
    n_max : int
        Truncation N of the sums.
    gamma_s : float
        Weight of the metric sup_n gamma_s^{-n} |q_n|.
    delta : float, optional
        Domain scale; the domain requires |x|, |xi_s| <= delta/4.
    bound : float, optional
        Reported theoretical contraction bound (C K eta~).

    Raises
    ------
    DomainError
        If (x, xi_s) lies outside the domain (unless ``override``).
    BudgetViolation
        If the measured contraction factor reaches 1.
    """
    x = np.asarray(x, dtype=float)
    xi_s = np.asarray(xi_s, dtype=float)
    if x.shape != xi_s.shape or x.ndim not in (2, 3):
        raise ValueError("x and xi_s must be window sequences of equal shape (W, d) "
                         "or (B, W, d)")
    if delta is not None and not override:
        nx, nxi = _seq_norm(x, start, split), _seq_norm(xi_s, start, split)
        if max(nx, nxi) > delta / 4 * (1 + 1e-12):
            raise DomainError(f"(x, xi_s) outside the domain: norms {nx:.3g}, {nxi:.3g} "
                              f"> delta/4 = {delta / 4:.3g}")
    N = int(n_max)
    # orbit F^i x and the linear part As^n (xi_s - pi_s x)
    Fx = np.empty((N + 1,) + x.shape)
    Fx[0] = x
    for i in range(N):
        Fx[i + 1] = _lift_F(system, Fx[i], start)
    lin = np.empty_like(Fx)
    lin[0] = xi_s - _proj(split, x, start)
    for i in range(N):
        lin[i + 1] = _proj(split, _shift(system, lin[i], start), start)
    fFx = _lift_f(system, Fx, start)

    q = lin.copy()
    sol = FoliationSolution(q, start, gamma_s, bound=bound)
    sol.log.append((0, _weighted_norm(q, start, split, gamma_s)))
    prev_diff = None
    factor = 0.0
    for it in range(1, max_iter + 1):
        D = _lift_f(system, q + Fx, start) - fFx
        S = np.zeros_like(x)
        Ssum = np.empty_like(q)
        for n in range(N + 1):
            Ssum[n] = S
            S = _proj(split, _shift(system, S, start) + _proj(split, D[n], start), start)
        U = np.zeros_like(x)
        Usum = np.empty_like(q)
        for n in range(N, -1, -1):
            U = _proj(split, _shift_inv(system, _proj(split, D[n], start, False) + U, start),
                      start, False)
            Usum[n] = U
        qn = lin + Ssum - Usum
        diff = _weighted_norm(qn - q, start, split, gamma_s)
        q = qn
        sol.log.append((it, _weighted_norm(q, start, split, gamma_s)))
        if prev_diff is not None and prev_diff > 1e-300 and diff > 1e-300:
            factor = max(factor, diff / prev_diff)
        if factor >= 1.0:
            raise BudgetViolation(f"Picard contraction factor {factor:.3g} >= 1")
        prev_diff = diff
        if diff <= tol * (1.0 + sol.log[0][1]):
            sol.converged = True
            break
    sol.q = q
    sol.iterations = it
    sol.contraction = factor
    return sol


# ---------------------------------------------------------------------------
# continuous time

class ContinuousConjugacy:
    """H(t, x) = T(t, n) h_n(phi(n, t; x)) and
    G(t, x) = phi(t, n; h_n^{-1}(T(n, t) x)) with n = floor(t).

    Parameters
    ----------
    family : EvolutionFamily
    conjugacy : DiscreteConjugacy
        Built on ``family.discretize``.
    V_radius : callable, optional
        ``V_radius(t)``; points outside raise :class:`DomainError` unless
        ``override`` is set.
    """

    def __init__(self, family, conjugacy, V_radius=None, override=False, quad_nodes=64):
        self.family = family
        self.h = conjugacy
        self.dim = family.dim
        self.V_radius = V_radius
        self.override = override
        self.quad_nodes = int(quad_nodes)

    def _check(self, t, X):
        if self.V_radius is None or self.override:
            return
        r = self.V_radius(t)
        bad = np.linalg.norm(X, axis=1) > r * (1 + 1e-12)
        if np.any(bad):
            raise DomainError(f"{int(bad.sum())} points outside V_t at t={t} (radius {r:.3g})")

    def H(self, t, x):
        X, single = _batch(x, self.dim)
        self._check(t, X)
        n = math.floor(t)
        Z = self.family.flow(t, n, X, check_escape=False)
        W = self.h.solve_h(n, Z) @ self.family.transition(n, t).T
        return W[0] if single else W

    def G(self, t, x):
        X, single = _batch(x, self.dim)
        self._check(t, X)
        n = math.floor(t)
        Z = X @ self.family.transition(t, n).T
        W = self.family.flow(n, t, self.h.solve_h_inverse(n, Z), check_escape=False)
        return W[0] if single else W

    def _many(self, times, Xs, inverse):
        """Evaluate H or G at several (t, X_t) pairs, batching equal floor(t)."""
        out = [None] * len(times)
        groups = {}
        for i, t in enumerate(times):
            self._check(t, Xs[i])
            groups.setdefault(math.floor(t), []).append(i)
        for n, idx in groups.items():
            if inverse:
                Z = np.concatenate([Xs[i] @ self.family.transition(times[i], n).T for i in idx])
                W = self.h.solve_h_inverse(n, Z)
            else:
                Z = np.concatenate([self.family.flow(times[i], n, Xs[i], check_escape=False)
                                    for i in idx])
                W = self.h.solve_h(n, Z)
            k = 0
            for i in idx:
                m = len(Xs[i])
                Wi = W[k:k + m]
                k += m
                if inverse:
                    out[i] = self.family.flow(n, times[i], Wi, check_escape=False)
                else:
                    out[i] = Wi @ self.family.transition(n, times[i]).T
        return out

    def H_many(self, times, Xs):
        """``[H(t, X) for t, X in zip(times, Xs)]`` with batched solves."""
        return self._many(list(times), [np.atleast_2d(X) for X in Xs], False)

    def G_many(self, times, Xs):
        """``[G(t, X) for t, X in zip(times, Xs)]`` with batched solves."""
        return self._many(list(times), [np.atleast_2d(X) for X in Xs], True)

    def averaged_H(self, x):
        """H~(x) = int_0^1 e^{As} h(phi(-s, 0; x)) ds by Gauss-Legendre."""
        if not (self.family.autonomous and self.h.system.autonomous):
            raise ValueError("averaged conjugacy needs an autonomous system")
        X, single = _batch(x, self.dim)
        nodes, weights = np.polynomial.legendre.leggauss(self.quad_nodes)
        s = 0.5 * (nodes + 1.0)
        w = 0.5 * weights
        Zs = np.concatenate([self.family.flow(0.0, -sk, X, check_escape=False) for sk in s])
        Hz = self.h.solve_h(0, Zs).reshape(len(s), len(X), self.dim)
        out = np.zeros_like(X)
        for k, sk in enumerate(s):
            out += w[k] * Hz[k] @ self.family.transition(0.0, sk).T
        return out[0] if single else out
