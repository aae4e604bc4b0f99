"""Implicit Euler for M du/dt = -A u and growth-rate diagnostics.

Each step solves (M + dt A) u_{k+1} = M u_k by preconditioned conjugate
gradients; the preconditioner is the exact inverse of M0 + dt K0 for the
unweighted forms (fast diagonalization on the tensor mesh). The mesh
studies use the vertex-quadrature forms, whose system matrices have
nonpositive off-diagonal entries, so nonnegative data stay nonnegative.
Small systems are factored once instead (symmetric ordering, diagonal
pivots): the triangular factors of a Stieltjes matrix are M-matrices, so
the substitutions involve no cancellation and keep signs exactly. Conjugate
gradients detects negative curvature, which certifies that M + dt A is
not positive definite; the step then breaks down and the trace stops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import PreconditionError
from .functions import ProductBump
from .spectrum import (DIRECT_LIMIT, DiscreteForms, MeshSchedule, assemble, assemble_lumped, lambda1,
                       tensor_preconditioner)


@dataclass
class EvolutionTrace:
    times: np.ndarray
    norms: np.ndarray
    min_on_K: np.ndarray
    dt: float
    mesh_level: int = 0
    breakdown: bool = False
    breakdown_step: Optional[int] = None
    indefinite: bool = False
    cg_iterations: int = 0
    states: Optional[list] = None
    state_times: Optional[list] = None

    def as_dict(self):
        return {"dt": self.dt, "mesh_level": self.mesh_level, "breakdown": self.breakdown,
                "breakdown_step": self.breakdown_step, "indefinite": self.indefinite,
                "steps": len(self.times) - 1, "final_time": float(self.times[-1]),
                "final_norm": float(self.norms[-1]), "cg_iterations": self.cg_iterations}


class _Breakdown(Exception):
    pass


def _pcg(S, b, apply_pre, x0, tol=1e-10, max_iter=500):
    """Conjugate gradients; raises _Breakdown on nonpositive curvature."""
    x = x0.copy()
    r = b - S @ x
    nb = np.linalg.norm(b)
    if nb == 0:
        return np.zeros_like(b), 0
    z = apply_pre(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        if np.linalg.norm(r) <= tol * nb:
            return x, it - 1
        Sp = S @ p
        curv = p @ Sp
        if not curv > 0:
            raise _Breakdown()
        a = rz / curv
        x += a * p
        r -= a * Sp
        z = apply_pre(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if np.linalg.norm(r) <= 1e3 * tol * nb:
        return x, max_iter
    raise _Breakdown()


class _DirectStep:
    """LU of M + dt A with diagonal pivots; nonpositive pivots mean breakdown."""

    def __init__(self, S):
        import scipy.sparse.linalg as spla

        try:
            self.lu = spla.splu(S.tocsc(), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise _Breakdown() from exc
        # symmetric row/column permutation with unit L: pivots are diag(U)
        if not np.all(self.lu.perm_r == self.lu.perm_c) or not np.all(self.lu.U.diagonal() > 0):
            raise _Breakdown()

    def __call__(self, b):
        return self.lu.solve(b)


def default_compact_mask(forms: DiscreteForms, margin_ratio=0.25):
    """Interior nodes of [-L/2, L/2]^N away from B(a_i, margin_ratio r0)."""
    cfg = forms.mesh.config
    X = forms.mesh.interior_nodes()
    inside = np.all(np.abs(X) <= 0.5 * forms.mesh.L, axis=1)
    away = (cfg.distances(X) >= margin_ratio * cfg.r0).all(axis=1)
    return inside & away


def default_initial_data(forms: DiscreteForms):
    """Normalised product bump centred at the centroid of the poles, positive in the box."""
    mesh = forms.mesh
    centroid = mesh.config.poles.mean(axis=0)
    half = tuple(mesh.L - abs(ck) for ck in centroid)
    u = ProductBump(tuple(centroid), half)(mesh.interior_nodes())
    return u / np.sqrt(u @ (forms.M @ u))


def evolve(forms: DiscreteForms, u0, T: float = 0.1, dt: Optional[float] = None,
           K_mask=None, store_every: int = 0, tol: float = 1e-10,
           solver: str = "auto") -> EvolutionTrace:
    """Implicit Euler trace of |u(t)| = sqrt(u^T M u) and min_K u.

    solver: "direct" (sparse LU), "cg" or "auto" (direct up to DIRECT_LIMIT dofs).
    """
    u0 = np.asarray(u0, dtype=float)
    if np.any(u0 < 0):
        raise PreconditionError("u0 must be nonnegative")
    if T <= 0:
        raise PreconditionError("T must be positive")
    dt = 1e-3 * T if dt is None else float(dt)
    if dt <= 0:
        raise PreconditionError("dt must be positive")
    steps = int(round(T / dt))
    if K_mask is None:
        K_mask = default_compact_mask(forms)
    if solver not in ("auto", "direct", "cg"):
        raise PreconditionError("solver must be auto, direct or cg")
    M = forms.M
    S = (M + dt * forms.A).tocsr()
    direct = solver == "direct" or (solver == "auto" and forms.mesh.dof_count <= DIRECT_LIMIT)
    step = None
    if direct:
        try:
            step = _DirectStep(S)
        except _Breakdown:
            step = False
    else:
        pre = tensor_preconditioner(forms).operator(1.0 / dt)

        def apply_pre(r):
            return pre.matvec(r) / dt

    def norm(u):
        with np.errstate(over="ignore", invalid="ignore"):
            return float(np.sqrt(max(u @ (M @ u), 0.0)))

    def kmin(u):
        return float(u[K_mask].min()) if K_mask.any() else float("nan")

    times, norms, mins = [0.0], [norm(u0)], [kmin(u0)]
    states, state_times = ([u0.copy()], [0.0]) if store_every else (None, None)
    u = u0.copy()
    breakdown, where, total = False, None, 0
    for k in range(1, steps + 1):
        if not np.any(u):
            un = u
        else:
            try:
                if step is False:
                    raise _Breakdown()
                with np.errstate(over="ignore", invalid="ignore"):
                    if step is not None:
                        un, its = step(M @ u), 1
                    else:
                        un, its = _pcg(S, M @ u, apply_pre, u, tol)
                total += its
            except _Breakdown:
                breakdown, where = True, k
                break
            if not np.all(np.isfinite(un)):
                breakdown, where = True, k
                break
        u = un
        times.append(k * dt)
        norms.append(norm(u))
        mins.append(kmin(u))
        if store_every and k % store_every == 0:
            states.append(u.copy())
            state_times.append(k * dt)
    return EvolutionTrace(np.array(times), np.array(norms), np.array(mins), dt,
                          breakdown=breakdown, breakdown_step=where, indefinite=breakdown,
                          cg_iterations=total, states=states, state_times=state_times)


@dataclass
class BoundFit:
    M: float
    omega: float
    residual: float
    verdict: str
    samples: int = 0

    def as_dict(self):
        return dict(self.__dict__)


def fit_exponential_bound(trace: EvolutionTrace, tol: float = 0.1) -> BoundFit:
    """Least-squares line through (t, log |u(t)|).

    omega is the slope; M = exp of the largest positive excess of
    log |u(t)| over log |u0| + omega t, clamped to M >= 1. The residual is
    the largest deviation from the fitted line; the trace counts as
    exponentially bounded when it stays within ``tol``.
    """
    t = np.asarray(trace.times, dtype=float)
    y = np.asarray(trace.norms, dtype=float)
    good = (y > 0) & np.isfinite(y)
    if not good[0]:
        return BoundFit(1.0, 0.0, 0.0, "bounded", 0)
    # positive finite prefix
    stop = len(y) if good.all() else int(np.argmin(good))
    t, y = t[:stop], np.log(y[:stop])
    if len(t) < 10:
        raise PreconditionError("trace needs at least 10 samples")
    omega, icpt = np.polyfit(t, y, 1)
    excess = y - (y[0] + omega * t)
    M = max(1.0, float(np.exp(excess.max())))
    residual = float(np.max(np.abs(y - (icpt + omega * t))))
    return BoundFit(M, float(omega), residual, "bounded" if residual <= tol else "unbounded", len(t))


def blowup_indicator(spec, config, c, levels=3, T=0.1, dt=None,
                     schedule: MeshSchedule = MeshSchedule(base_layers=4, layers_per_level=4),
                     growth=0.5, with_lambda=True, keep_traces=False, lumped=True):
    """Fitted growth rate omega across mesh levels.

    nonexistence-consistent: step breakdown beyond the coarsest level, or
    omega growing by at least ``growth`` (relative, floor 1) at every level;
    existence-consistent: the last change of omega below 10% of max(1, |omega|).
    """
    if c < 0:
        raise PreconditionError("c must be nonnegative")
    rows, traces = [], []
    for level in range(levels):
        build = assemble_lumped if lumped else assemble
        forms = build(spec, config, c, schedule.L, schedule.spacing, schedule.layers(level))
        u0 = default_initial_data(forms)
        trace = evolve(forms, u0, T, dt)
        trace.mesh_level = level
        if keep_traces:
            traces.append(trace)
        row = {"level": level, "layers": schedule.layers(level), "dofs": forms.mesh.dof_count,
               "breakdown": trace.breakdown, "breakdown_step": trace.breakdown_step}
        if with_lambda:
            row["lambda1"] = lambda1(forms, level=level).lambda1
        if not trace.breakdown or len(trace.times) >= 10:
            fit = fit_exponential_bound(trace)
            row.update(omega=fit.omega, M=fit.M, fit_residual=fit.residual, fit_verdict=fit.verdict)
        else:
            row.update(omega=None)
        rows.append(row)
    omegas = [r["omega"] for r in rows]
    broke = [r["breakdown"] for r in rows]
    verdict = "inconclusive"
    if any(broke[1:]) and not broke[0]:
        verdict = "nonexistence-consistent"
    elif all(o is not None for o in omegas):
        grows = all(b >= a + growth * max(abs(a), 1.0) for a, b in zip(omegas[:-1], omegas[1:]))
        stable = abs(omegas[-1] - omegas[-2]) <= 0.1 * max(1.0, abs(omegas[-1]))
        if grows:
            verdict = "nonexistence-consistent"
        elif stable:
            verdict = "existence-consistent"
    out = {"c": c, "levels": rows, "omega": omegas, "verdict": verdict,
           "note": "desk-scale proxy: mesh-refinement study of the fitted growth rate"}
    if keep_traces:
        out["traces"] = traces
    return out


def positivity_check(trace: EvolutionTrace, states, K_mask, u0, forms: DiscreteForms, floor=0.0):
    """min_K u(t) > 0 for recorded t > 0 and the ratio min_K u(t) / int_K u0 dmu."""
    u0 = np.asarray(u0, dtype=float)
    if not np.any(u0):
        return {"verdict": "zero initial data", "ratios": [], "times": []}
    mass_K = float(np.sum((forms.M @ u0)[K_mask]))
    times = trace.state_times if trace.state_times is not None else trace.times
    ratios, worst = [], None
    for t, u in zip(times, states):
        if t <= 0:
            continue
        m = float(u[K_mask].min())
        ratios.append(m / mass_K if mass_K > 0 else float("inf") if m > 0 else float("nan"))
        if m <= floor and (worst is None or m < worst[1]):
            j = int(np.argmin(np.where(K_mask, u, np.inf)))
            worst = (t, m, forms.mesh.interior_nodes()[j].tolist())
    out = {"times": [float(t) for t in times if t > 0], "ratios": ratios, "mass_on_K": mass_K}
    if worst is not None:
        out.update(verdict="positivity violated", time=worst[0], value=worst[1], location=worst[2])
    else:
        out["verdict"] = "positive"
    return out
