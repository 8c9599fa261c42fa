"""Stage-by-stage orchestration: spectrum, conditions, conjugacy, verification.

Each stage stores its results on a :class:`Run`; the CLI writes them out.
"""

import logging
import math

import numpy as np

from . import catalog
from .conditions import (alpha_upper_bound, audit_nonlinearity, autonomous_alpha_bound,
                         check_spectral_bound, lp_params, max_admissible_eta_tilde,
                         smallness_budget)
from .conjugacy import (ContinuousConjugacy, DiscreteConjugacy, StableUnstableSplitting,
                        solve_foliation)
from .evolution import CutoffNonlinearity, EvolutionFamily, FlowBounds
from .spectrum import (Cocycle, adapted_norms, estimate_projections, estimate_spectrum,
                       fit_dichotomy_constants, qr_growth_rates)
from .verify import (VerificationReport, check_equivariance, check_expansion, check_inverse,
                     check_solution_mapping, fit_holder, sample_ball, sample_sphere)

log = logging.getLogger(__name__)

__all__ = ["Run"]


class Run:
    """Pipeline state for one resolved configuration."""

    def __init__(self, cfg, override_budget=False):
        self.cfg = cfg
        self.override_budget = override_budget
        self.seed = int(cfg["seed"])
        sysc = cfg["system"]
        if "table" in sysc:
            lin = catalog.load_table(sysc["table"])
            self.entry = catalog.CatalogEntry(str(sysc["table"]), lin)
        else:
            self.entry = catalog.build(sysc["name"], sysc.get("params", {}))
        ic = cfg["integrator"]
        self.family = EvolutionFamily(self.entry.system, self.entry.nonlinearity,
                                      step=ic["step"], tol=ic["tol"],
                                      escape_radius=ic["escape_radius"])
        self.window = tuple(cfg["window"])
        self.disc = self.family.discretize(self.window)
        self.cocycle = Cocycle.from_system(self.disc, self.window)
        self.dim = self.family.dim

    # -- spectrum -----------------------------------------------------------

    def spectrum(self):
        g = self.cfg["mu_grid"]
        self.rates = qr_growth_rates(self.cocycle, g["subwindow"])
        self.spec = estimate_spectrum(self.rates, step=g["step"], padding=g["padding"],
                                      gap=g["gap"])
        return self.spec

    # -- conditions ---------------------------------------------------------

    def _projection_range(self):
        T = self.cfg["lp"]["n_tail"]
        hi = int(math.ceil(max(self.cfg["verify"]["times"]) + self.cfg["verify"]["horizon"]))
        R = self.cfg["dichotomy"]["fit_range"]
        return min(-R, -T - 2), max(R, hi + T + 3)

    def dichotomy(self):
        self.spec.require_hyperbolic()
        dc = self.cfg["dichotomy"]
        lo, hi = self._projection_range()
        if self.entry.system.autonomous:
            pf = estimate_projections(self.cocycle, 1.0, [0, 1], dc["lookahead"],
                                      rates=self.rates, seed=self.seed)
            P0 = pf(0)
            pf.projections = {n: P0 for n in range(lo, hi + 1)}
        else:
            pf = estimate_projections(self.cocycle, 1.0, range(lo, hi + 1), dc["lookahead"],
                                      rates=self.rates, seed=self.seed)
        self.projections = pf
        R, lag = dc["fit_range"], dc["max_lag"]
        pairs = [(m, n) for n in range(-R, R + 1) for m in range(n - lag, n + lag + 1)]
        consts = fit_dichotomy_constants(self.cocycle.product, pf, pairs)
        self.dich = adapted_norms(self.cocycle, pf, consts, sample_indices=range(-R, R + 1),
                                  horizon=dc["norm_horizon"], seed=self.seed,
                                  eps_cap=dc["eps_cap"])
        return self.dich

    def conditions(self):
        self.spec.require_hyperbolic()
        self.bound = check_spectral_bound(self.spec)
        if not self.bound.passed:
            self.alpha = None
            self.budget = None
            self.audit = None
            return self.bound
        self.dichotomy()
        override = self.cfg["alpha"]
        if override is None and self.spec.k in (0, self.spec.r):
            override = self.entry.alpha_override
        rho = self.cfg["rho"]
        if self.entry.eigenvalues is not None:
            self.alpha = autonomous_alpha_bound(self.entry.eigenvalues, override, rho)
        else:
            self.alpha = alpha_upper_bound(self.spec, override, rho)
        lpc = self.cfg["lp"]
        self.lp = lp_params(self.spec, self.alpha.chosen, tau=lpc["tau"],
                            n_tail=lpc["n_tail"], max_iter=lpc["max_iter"],
                            tol_fp=lpc["tol_fp"])
        d = self.dich
        ac = self.cfg["audit"]
        nl = self.family.nonlinearity
        radius = ac["radius"]
        if radius is None:
            radius = 2.5 * nl.r0 if isinstance(nl, CutoffNonlinearity) else 1.0
        R = ac["t_range"]
        times = np.linspace(-R, R, ac["t_samples"])
        # eta allowed by C K eta~ < 1/4 at the fitted constants
        probe = FlowBounds(d.M, d.lam_bar, d.eps, 1.0, 0.0)
        K0 = lpc["K"]
        tmp = smallness_budget(probe, d.C, self.alpha.chosen, self.lp, K=K0)
        eta_req = 0.25 / (d.C * tmp.K * probe.eta_tilde)
        self.audit = audit_nonlinearity(nl, times, radius, eps=max(nl.eps, 0.0),
                                        n_samples=ac["samples"], seed=self.seed,
                                        eta_required=eta_req)
        self.flow_bounds = FlowBounds(d.M, d.lam_bar, d.eps, self.audit.eta, self.audit.B)
        self.budget = smallness_budget(self.flow_bounds, d.C, self.alpha.chosen, self.lp,
                                       K=K0, delta_cap=self.cfg["budget"]["delta_cap"])
        if self.spec.k not in (0, self.spec.r):
            self.eta_admissible = max_admissible_eta_tilde(self.spec, self.alpha.chosen, d.C)
        else:
            self.eta_admissible = None
        return self.bound

    @property
    def guaranteed(self):
        return self.budget is not None and self.budget.satisfied

    def conditions_json(self):
        out = {"spectral_bound": self.bound.to_json()}
        if self.alpha is not None:
            out["alpha"] = self.alpha.to_json()
            out["audit"] = self.audit.to_json()
            out["budget"] = self.budget.to_json()
            out["budget"]["eta_tilde_admissible"] = (
                self.eta_admissible if self.eta_admissible is None
                or math.isfinite(self.eta_admissible) else None)
            out["dichotomy"] = self.dich.as_dict()
            out["flow_bounds"] = self.flow_bounds.as_dict()
            out["lp"] = self.lp.to_json()
        return out

    # -- conjugacy ----------------------------------------------------------

    def conjugacy(self):
        lpc = self.cfg["lp"]
        split = StableUnstableSplitting(self.projections, self.dim,
                                        self.projections.stable_dim)
        self.h = DiscreteConjugacy(self.disc, split, n_tail=lpc["n_tail"], mode=lpc["mode"],
                                   tol_conj=lpc["tol_conj"], tol_fp=lpc["tol_fp"],
                                   max_iter=lpc["max_iter"])
        vr = self.cfg["verify"]["radius"]
        if self.guaranteed:
            self.working_radius = lambda t: min(vr, self.budget.V_radius(t))
        else:
            self.working_radius = lambda t: vr
        self.cc = ContinuousConjugacy(self.family, self.h, V_radius=self.working_radius)
        return self.cc

    def conjugacy_dump(self):
        """Rows (n, x, h_n(x), residual) on sampled x."""
        vc = self.cfg["verify"]
        rng = np.random.default_rng(self.seed + 1)
        rows = []
        for n in vc["dump_indices"]:
            X = sample_ball(rng, vc["dump_samples"], self.dim, self.working_radius(n))
            Hx = self.h.solve_h(n, X)
            res = self.h.residual(n, X)
            for x, hx, r in zip(X, Hx, res):
                rows.append((n, x, hx, float(r)))
        return rows

    def foliation(self):
        fc = self.cfg["foliation"]
        W, N = fc["window"], fc["n_max"]
        split = self.h.split
        rng = np.random.default_rng(self.seed + 2)
        delta = self.budget.delta
        scale = self.cfg["verify"]["radius"]
        if self.guaranteed:
            scale = min(delta / 8, scale)
        x = np.zeros((W, self.dim))
        x[0] = sample_sphere(rng, 1, self.dim, scale)[0]
        xi = np.zeros((W, self.dim))
        xi[0] = split.pi_s(0) @ sample_sphere(rng, 1, self.dim, scale)[0]
        bound = self.budget.C * self.budget.K * self.budget.eta_tilde
        return solve_foliation(self.disc, split, x, xi, 0, N, self.lp.gamma_s, delta=delta,
                               bound=bound, max_iter=fc["max_iter"],
                               override=not self.guaranteed)

    # -- verification -------------------------------------------------------

    def verify(self):
        vc = self.cfg["verify"]
        rng = np.random.default_rng(self.seed + 3)
        rep = VerificationReport(seed=self.seed, guaranteed=self.guaranteed)
        cc = self.cc
        t0 = float(vc["times"][0])
        r0 = self.working_radius(t0)
        rep.radii = {"working_radius_t0": r0,
                     "V_t0": self.budget.V_radius(t0) if self.budget else None,
                     "U_0": self.budget.U_radius(0) if self.budget else None}
        rep.samples = {"orbits": vc["orbits"], "inverse": vc["samples"],
                       "pairs": vc["pairs"], "times": vc["times"]}
        X0 = sample_ball(rng, vc["orbits"], self.dim, r0)
        rho = self.cfg["rho"]
        alpha = self.alpha.chosen
        # samples are drawn inside the working radius; images and trajectories
        # may leave it, so the domain check is relaxed for the checks
        cc.override = True
        self.dyadic = {"H": check_expansion(lambda X: cc.H(t0, X), self.dim, rho,
                                            seed=self.seed),
                       "G": check_expansion(lambda X: cc.G(t0, X), self.dim, rho,
                                            seed=self.seed)}
        rep.add("A1", {"pass": all(r.passed for r in self.dyadic.values()),
                       **{k: r.to_json() for k, r in self.dyadic.items()}})
        self.holder = {}
        for key, fn in (("H", lambda X: cc.H(t0, X)), ("G", lambda X: cc.G(t0, X))):
            self.holder[key] = _fit_with_data(fn, self.dim, r0, alpha, vc["pairs"],
                                              self.seed)
        rep.add("A2", {"pass": all(f.passed for _, _, f in self.holder.values()),
                       "slope": min(f.slope for _, _, f in self.holder.values()),
                       "target": self.holder["H"][2].target,
                       **{k: v[2].to_json() for k, v in self.holder.items()}})
        rep.add("A3", check_inverse(cc, vc["times"], vc["samples"], self.working_radius,
                                    vc["tol"], seed=self.seed))
        rep.add("A4", check_solution_mapping(cc, X0, t0, vc["horizon"], tol=vc["tol"]))
        rep.add("A5", check_solution_mapping(cc, X0, t0, vc["horizon"], tol=vc["tol"],
                                             which="G"))
        if self.entry.autonomous and self.dim >= 1:
            xs = sample_sphere(rng, 4, self.dim, min(1e-2, 0.5))
            rep.add("B3", check_equivariance(cc, xs, tol=vc["tol"]))
        if self.dim == 1:
            r = 1e-3
            hp = self.h.solve_h(0, np.array([[r], [-r]]))[:, 0]
            rep.extra["h_coefficient"] = float((hp[0] + hp[1]) / (2 * r * r))
        cc.override = False
        self.report = rep
        return rep


def _fit_with_data(fn, dim, radius, alpha, pairs, seed):
    """Hoelder fit plus the raw pairs (for plotting)."""
    cache = {}

    def wrapped(X):
        F = fn(X)
        cache["X"], cache["F"] = X, F
        return F

    fit = fit_holder(wrapped, dim, radius, alpha, pairs=pairs, seed=seed)
    X, F = cache["X"], cache["F"]
    n = len(X) // 2
    dx = np.linalg.norm(X[:n] - X[n:], axis=1)
    dF = np.linalg.norm(F[:n] - F[n:], axis=1)
    return dx, dF, fit
