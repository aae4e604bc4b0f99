"""Discrete bottom of the spectrum and the optimality witness.

The forms

    K(phi) = int |grad phi|^2 dmu,  P(phi) = int V_n phi^2 dmu,  M(phi) = int phi^2 dmu

are assembled with multilinear (Q1) elements on a tensor mesh of the box
[-L, L]^N with zero boundary values. Along every axis the mesh is graded
geometrically (ratio 1/2 per layer) toward each pole coordinate, and every
pole sits at the centre of a cell, so no degree of freedom lies on a pole.
A = K - c P. The smallest generalized eigenvalue of (A, M) approximates
the Rayleigh-quotient infimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InconclusiveError, PreconditionError, SolverError
from .geometry import PoleConfiguration
from .hardy import hardy_constant
from .weights import WeightSpec, eval_weight

DIRECT_LIMIT = 6000


# --- mesh -------------------------------------------------------------------


def graded_breaks(L, spacing, centres, layers):
    """Breakpoints on [-L, L]: uniform spacing, graded toward each centre.

    Around a centre p the breakpoints p +- spacing/2 * 2^{-j}, j = 0..layers,
    replace the background nodes within 0.75 spacing, so p is the midpoint
    of a cell of width spacing / 2^layers.
    """
    cells = max(2, int(round(2 * L / spacing)))
    base = np.linspace(-L, L, cells + 1)
    h = 2 * L / cells
    centres = np.unique(np.round(np.asarray(centres, dtype=float), 14))
    keep = np.ones(len(base), dtype=bool)
    for p in centres:
        keep &= np.abs(base - p) >= 0.75 * h
    keep[0] = keep[-1] = True
    pts = [base[keep]]
    for p in centres:
        offs = 0.5 * h * 0.5 ** np.arange(layers + 1)
        pts.append(p + offs)
        pts.append(p - offs)
    b = np.unique(np.concatenate(pts))
    return b[(b >= -L) & (b <= L)]


@dataclass(eq=False)
class TensorMesh:
    L: float
    breaks: list
    config: PoleConfiguration
    layers: int
    spacing: float

    @property
    def dimension(self):
        return len(self.breaks)

    @property
    def shape(self):
        return tuple(len(b) for b in self.breaks)

    @property
    def interior_shape(self):
        return tuple(len(b) - 2 for b in self.breaks)

    @property
    def dof_count(self):
        return int(np.prod(self.interior_shape))

    @property
    def h_min(self):
        return min(float(np.min(np.diff(b))) for b in self.breaks)

    def interior_nodes(self):
        grids = np.meshgrid(*[b[1:-1] for b in self.breaks], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)


def build_mesh(config: PoleConfiguration, L: float, spacing: float, layers: int) -> TensorMesh:
    N = config.dimension
    if np.any(np.abs(config.poles).max(axis=1) >= L):
        raise PreconditionError("truncation box too small")
    breaks = [graded_breaks(L, spacing, config.poles[:, k], layers) for k in range(N)]
    # every pole must be the midpoint of its cell in each axis
    for a in config.poles:
        for k, b in enumerate(breaks):
            j = np.searchsorted(b, a[k]) - 1
            lo, hi = b[j], b[j + 1]
            if abs(0.5 * (lo + hi) - a[k]) > 1e-9 * (hi - lo) + 1e-15:
                raise PreconditionError("pole cells overlap")
    # distinct poles may not share a cell
    cells = set()
    for a in config.poles:
        key = tuple(int(np.searchsorted(b, a[k])) for k, b in enumerate(breaks))
        if key in cells:
            raise PreconditionError("pole cells overlap")
        cells.add(key)
    return TensorMesh(float(L), breaks, config, int(layers), float(spacing))


# --- reference element -------------------------------------------------------


def _corner_offsets(N):
    return np.array(list(product((0, 1), repeat=N)))


def _basis_tables(N, xi):
    """Values (Q, 2^N) and reference derivatives (Q, N, 2^N) of Q1 shape
    functions at points xi in [0,1]^N."""
    corners = _corner_offsets(N)
    Q = xi.shape[0]
    lin = np.where(corners[None, :, :] == 1, xi[:, None, :], 1.0 - xi[:, None, :])  # (Q, 2^N, N)
    dlin = np.where(corners == 1, 1.0, -1.0)  # (2^N, N)
    val = np.prod(lin, axis=2)
    der = np.empty((Q, N, len(corners)))
    for k in range(N):
        others = np.prod(np.delete(lin, k, axis=2), axis=2)
        der[:, k, :] = dlin[None, :, k] * others
    return val, der


def _tensor_gauss(N, order):
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    grids = np.meshgrid(*([x] * N), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    wts = np.ones(1)
    for _ in range(N):
        wts = np.multiply.outer(wts, w)
    return pts, wts.ravel()


def _pyramid_unit(N, shells=24, t_min=1e-7, order=4):
    """Rule on [0,1]^N graded toward the centre (1/2, ..., 1/2)."""
    gx, gw = np.polynomial.legendre.leggauss(order)
    edges = np.geomspace(1.0, t_min, shells + 1)
    lo, hi = edges[1:, None], edges[:-1, None]
    tn = (0.5 * (lo + hi) + 0.5 * (hi - lo) * gx).ravel()
    tw = (0.5 * (hi - lo) * gw).ravel() * tn ** (N - 1)
    fu = np.meshgrid(*([gx] * (N - 1)), indexing="ij")
    face = np.stack([g.ravel() for g in fu], axis=1)
    fw = np.ones(1)
    for _ in range(N - 1):
        fw = np.multiply.outer(fw, gw)
    fw = fw.ravel()
    pts, wts = [], []
    for k in range(N):
        for s in (-1.0, 1.0):
            base = np.empty((len(face), N))
            base[:, k] = s
            base[:, [j for j in range(N) if j != k]] = face
            pts.append((tn[:, None, None] * base[None]).reshape(-1, N))
            wts.append(np.outer(tw, fw).ravel())
    y = np.vstack(pts)
    # map [-1,1]^N -> [0,1]^N (Jacobian 2^-N)
    return 0.5 * (y + 1.0), np.concatenate(wts) * 0.5 ** N


# --- assembly -------------------------------------------------------------


@dataclass(eq=False)
class DiscreteForms:
    mesh: TensorMesh
    K: sp.csr_matrix
    P: sp.csr_matrix
    M: sp.csr_matrix
    c: float
    spec: Optional[WeightSpec] = None
    dof_map: Optional[np.ndarray] = None
    lumped: bool = False

    @property
    def A(self):
        return (self.K - self.c * self.P).tocsr()

    def with_c(self, c):
        return DiscreteForms(self.mesh, self.K, self.P, self.M, float(c), self.spec, self.dof_map,
                             self.lumped)


def _cell_arrays(mesh):
    N = mesh.dimension
    lo = [b[:-1] for b in mesh.breaks]
    h = [np.diff(b) for b in mesh.breaks]
    G = np.meshgrid(*[np.arange(len(x)) for x in lo], indexing="ij")
    idx = np.stack([g.ravel() for g in G], axis=1)  # (C, N) cell multi-index
    origin = np.stack([lo[k][idx[:, k]] for k in range(N)], axis=1)
    sizes = np.stack([h[k][idx[:, k]] for k in range(N)], axis=1)
    return idx, origin, sizes


def _dof_numbers(mesh, idx):
    """Global interior dof of each cell corner, -1 on the boundary."""
    N = mesh.dimension
    shape = mesh.shape
    ishape = mesh.interior_shape
    corners = _corner_offsets(N)
    node = idx[:, None, :] + corners[None, :, :]  # (C, 2^N, N)
    interior = np.all((node > 0) & (node < np.array(shape) - 1), axis=2)
    inner = node - 1
    flat = np.ravel_multi_index(tuple(np.clip(inner[..., k], 0, ishape[k] - 1) for k in range(N)), ishape)
    return np.where(interior, flat, -1)


def _scatter(dofs, local, n):
    C, E, _ = local.shape
    rows = np.broadcast_to(dofs[:, :, None], (C, E, E)).ravel()
    cols = np.broadcast_to(dofs[:, None, :], (C, E, E)).ravel()
    vals = local.ravel()
    keep = (rows >= 0) & (cols >= 0)
    mat = sp.coo_matrix((vals[keep], (rows[keep], cols[keep])), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    return mat


def assemble(spec: Optional[WeightSpec], config: PoleConfiguration, c: float, L: float = 2.0,
             spacing: float = 0.25, layers: int = 6, gauss_order: int = 3,
             batch: int = 20000) -> DiscreteForms:
    """Assemble K, P, M on the graded mesh; A = K - c P."""
    if c < 0:
        raise PreconditionError("c must be nonnegative")
    mesh = build_mesh(config, L, spacing, layers)
    N = mesh.dimension
    E = 2 ** N
    n = mesh.dof_count
    idx, origin, sizes = _cell_arrays(mesh)
    dofs = _dof_numbers(mesh, idx)
    # drop cells without interior corners
    useful = (dofs >= 0).any(axis=1)
    idx, origin, sizes, dofs = idx[useful], origin[useful], sizes[useful], dofs[useful]
    vol = np.prod(sizes, axis=1)

    xi, wq = _tensor_gauss(N, gauss_order)
    val, der = _basis_tables(N, xi)
    pxi, pw = _pyramid_unit(N)
    pval, pder = _basis_tables(N, pxi)

    centres = origin + 0.5 * sizes
    pole_cell = np.zeros(len(origin), dtype=bool)
    for a in config.poles:
        pole_cell |= np.all(np.abs(centres - a) <= 1e-9 * sizes + 1e-15, axis=1)

    weighted = spec is not None and not spec.is_lebesgue
    Kl = np.empty((len(origin), E, E))
    Pl = np.empty((len(origin), E, E))
    Ml = np.empty((len(origin), E, E))

    def fill(sel, xq, w, bv, bd):
        o, s, v = origin[sel], sizes[sel], vol[sel]
        x = o[:, None, :] + s[:, None, :] * xq[None, :, :]  # (C, Q, N)
        flat = x.reshape(-1, N)
        mu = eval_weight(spec, flat).reshape(x.shape[:2]) if weighted else 1.0
        pot = (1.0 / config.distances(flat) ** 2).sum(axis=1).reshape(x.shape[:2])
        wmu = (w[None, :] * v[:, None]) * mu
        Ml[sel] = np.einsum("cq,qa,qb->cab", wmu, bv, bv, optimize=True)
        Pl[sel] = np.einsum("cq,qa,qb->cab", wmu * pot, bv, bv, optimize=True)
        inv2 = 1.0 / s ** 2
        Kl[sel] = np.einsum("cq,ck,qka,qkb->cab", wmu, inv2, bd, bd, optimize=True)

    regular = np.nonzero(~pole_cell)[0]
    for start in range(0, len(regular), batch):
        fill(regular[start:start + batch], xi, wq, val, der)
    if pole_cell.any():
        fill(np.nonzero(pole_cell)[0], pxi, pw, pval, pder)

    K = _scatter(dofs, Kl, n)
    P = _scatter(dofs, Pl, n)
    M = _scatter(dofs, Ml, n)
    return DiscreteForms(mesh, K, P, M, float(c), spec, np.arange(n))


def dual_widths(breaks):
    """Length of the dual cell (half the two adjacent intervals) at every node."""
    h = np.diff(breaks)
    d = np.empty(len(breaks))
    d[0], d[-1] = 0.5 * h[0], 0.5 * h[-1]
    d[1:-1] = 0.5 * (h[:-1] + h[1:])
    return d


def assemble_lumped(spec: Optional[WeightSpec], config: PoleConfiguration, c: float,
                    L: float = 2.0, spacing: float = 0.25, layers: int = 6) -> DiscreteForms:
    """Q1 forms with vertex quadrature on every cell.

    The vertex rule makes M and P diagonal and turns K into a weighted edge
    Laplacian: the edge from node i to its neighbour along axis k carries
    (mu_i + mu_j) / (2 h_k) times the product of the dual widths in the other
    axes. All off-diagonal entries are nonpositive, so M + dt A is a
    Stieltjes matrix whenever it is positive definite and implicit Euler
    preserves nonnegativity.
    """
    if c < 0:
        raise PreconditionError("c must be nonnegative")
    mesh = build_mesh(config, L, spacing, layers)
    N = mesh.dimension
    shape = mesh.shape
    grids = np.meshgrid(*mesh.breaks, indexing="ij")
    X = np.stack([g.ravel() for g in grids], axis=1)
    weighted = spec is not None and not spec.is_lebesgue
    mu = eval_weight(spec, X).reshape(shape) if weighted else np.ones(shape)
    pot = (1.0 / config.distances(X) ** 2).sum(axis=1).reshape(shape)
    duals = [dual_widths(b) for b in mesh.breaks]

    def outer(arrays):
        out = np.ones(1)
        for a in arrays:
            out = np.multiply.outer(out, a)
        return out.reshape(tuple(len(a) for a in arrays))

    volume = outer(duals)
    interior = tuple(slice(1, -1) for _ in range(N))
    mass = (mu * volume)[interior].ravel()
    potential = (mu * pot * volume)[interior].ravel()

    inner = -np.ones(shape, dtype=np.int64)
    inner[interior] = np.arange(mesh.dof_count).reshape(mesh.interior_shape)
    rows, cols, vals = [], [], []
    for k in range(N):
        h = np.diff(mesh.breaks[k])
        lo = [slice(None)] * N
        hi = [slice(None)] * N
        lo[k], hi[k] = slice(0, -1), slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        others = [duals[j] if j != k else 1.0 / h for j in range(N)]
        w = 0.5 * (mu[lo] + mu[hi]) * outer(others)
        a, b, w = inner[lo].ravel(), inner[hi].ravel(), w.ravel()
        for p, q in ((a, b), (b, a)):
            keep = p >= 0
            rows.append(p[keep])
            cols.append(p[keep])
            vals.append(w[keep])
            both = keep & (q >= 0)
            rows.append(p[both])
            cols.append(q[both])
            vals.append(-w[both])
    n = mesh.dof_count
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    K.sum_duplicates()
    return DiscreteForms(mesh, K, sp.diags(potential).tocsr(), sp.diags(mass).tocsr(), float(c),
                         spec, np.arange(n), lumped=True)


# --- tensor preconditioner ---------------------------------------------------


def one_d_matrices(breaks, lumped=False):
    """1-d Q1 stiffness and mass matrices on the interior nodes of ``breaks``."""
    h = np.diff(breaks)
    left, right = h[:-1], h[1:]
    K = np.diag(1.0 / left + 1.0 / right) - np.diag(1.0 / right[:-1], 1) - np.diag(1.0 / right[:-1], -1)
    if lumped:
        return K, np.diag(0.5 * (left + right))
    Mm = np.diag((left + right) / 3.0) + np.diag(right[:-1] / 6.0, 1) + np.diag(right[:-1] / 6.0, -1)
    return K, Mm


class TensorPreconditioner:
    """Exact inverse of K0 + s M0 for the unweighted forms, by fast diagonalization.

    On a tensor mesh the unweighted stiffness and mass matrices are Kronecker
    sums/products of 1-d matrices; with the 1-d generalized eigenvectors
    the inverse is a diagonal scaling between N axis transforms. For a
    weight mu the operator is symmetrically scaled by mu^{-1/2} at the nodes.
    """

    def __init__(self, mesh: TensorMesh, nodal_weight=None, lumped=False):
        import scipy.linalg as sla

        self.shape = mesh.interior_shape
        self.vectors, self.values = [], []
        for b in mesh.breaks:
            K, Mm = one_d_matrices(b, lumped)
            lam, V = sla.eigh(K, Mm)
            self.vectors.append(V)
            self.values.append(lam)
        total = np.zeros(self.shape)
        for k, lam in enumerate(self.values):
            idx = [None] * len(self.shape)
            idx[k] = slice(None)
            total = total + lam[tuple(idx)]
        self.total = total
        self.scale = None if nodal_weight is None else 1.0 / np.sqrt(nodal_weight)

    def _transform(self, X, transpose):
        for k, V in enumerate(self.vectors):
            W = V.T if transpose else V
            X = np.moveaxis(np.tensordot(W, X, axes=([1], [k])), 0, k)
        return X

    def operator(self, shift):
        n = int(np.prod(self.shape))
        D = (self.total + shift)[..., None]

        def apply(r):
            r = np.asarray(r, dtype=float)
            cols = r.reshape(n, -1)
            if self.scale is not None:
                cols = cols * self.scale[:, None]
            X = cols.reshape(self.shape + (-1,))
            X = self._transform(self._transform(X, True) / D, False)
            out = X.reshape(n, -1)
            if self.scale is not None:
                out = out * self.scale[:, None]
            return out.reshape(r.shape)

        return spla.LinearOperator((n, n), matvec=apply, matmat=apply, dtype=float)


def tensor_preconditioner(forms: DiscreteForms) -> TensorPreconditioner:
    weight = None
    if forms.spec is not None and not forms.spec.is_lebesgue:
        weight = eval_weight(forms.spec, forms.mesh.interior_nodes())
    return TensorPreconditioner(forms.mesh, weight, forms.lumped)


# --- eigen solver -------------------------------------------------------------


@dataclass
class SpectrumResult:
    lambda1: float
    eigenvector: np.ndarray
    iterations: int
    residual: float
    mesh_level: int = 0
    converged: bool = True
    method: str = "shift-invert"
    dofs: int = 0
    h_min: float = 0.0

    @property
    def verdict(self):
        return "converged" if self.converged else "inconclusive"

    def as_dict(self):
        return {"lambda1": self.lambda1, "iterations": self.iterations, "residual": self.residual,
                "mesh_level": self.mesh_level, "converged": self.converged, "method": self.method,
                "dofs": self.dofs, "h_min": self.h_min, "verdict": self.verdict}


def _pd_factor(A, M, sigma):
    """LU of A - sigma M without pivoting; positive pivots <=> positive definite."""
    S = (A - sigma * M).tocsc()
    try:
        lu = spla.splu(S, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                       options={"SymmetricMode": True})
    except RuntimeError:
        return None
    d = lu.U.diagonal()
    if np.all(np.isfinite(d)) and np.all(d > 0):
        return lu
    return None


def is_positive_definite(S):
    return _pd_factor(S, sp.csr_matrix(S.shape), 0.0) is not None


def _residual(A, M, x, lam):
    Mx = M @ x
    return float(np.linalg.norm(A @ x - lam * Mx) / np.linalg.norm(Mx))


def _start_vector(M):
    x = np.ones(M.shape[0])
    return x / np.sqrt(x @ (M @ x))


def _shift_invert(A, M, tol, max_iter, retries=60):
    x = _start_vector(M)
    rq = float(x @ (A @ x))
    sigma = min(rq, 0.0) - 1.0
    lu = None
    for _ in range(retries):
        lu = _pd_factor(A, M, sigma)
        if lu is not None:
            break
        sigma = 4.0 * sigma - 1.0
    if lu is None:
        raise SolverError("indefinite shift retry exceeded")
    # sigma is a certified lower bound of lambda_1 from here on
    lam = rq
    it = 0
    for it in range(1, max_iter + 1):
        y = lu.solve(M @ x)
        x = y / np.sqrt(y @ (M @ y))
        lam_new = float(x @ (A @ x))
        res = _residual(A, M, x, lam_new)
        stalled = abs(lam_new - lam) <= 1e-15 * max(1.0, abs(lam_new))
        lam = lam_new
        if res <= tol * max(1.0, abs(lam)) or stalled:
            break
        if it % 3 == 0:
            # move the shift toward the quotient while keeping it below lambda_1
            trial = lam - 0.05 * (lam - sigma)
            lu2 = _pd_factor(A, M, trial)
            if lu2 is not None:
                lu, sigma = lu2, trial
    res = _residual(A, M, x, lam)
    return lam, x, it, res, res <= max(tol, 1e-6) * max(1.0, abs(lam))


def _lobpcg(forms, A, M, tol, max_iter, x0=None):
    """Single-vector LOBPCG returning the last iterate.

    The Rayleigh-Ritz step runs on span{x, T r, p} after an M-orthonormal
    reduction that drops directions with negligible M-norm. The
    preconditioner T is the fast-diagonalization inverse of K0 + s M0 with
    s = max(1, -lambda) re-tuned at every step.
    """
    import scipy.linalg as sla

    pre = tensor_preconditioner(forms)
    x = _start_vector(M) if x0 is None else x0 / np.sqrt(x0 @ (M @ x0))
    Ax, Mx = A @ x, M @ x
    lam = float(x @ Ax)
    p = Ap = Mp = None
    it = 0
    res = np.inf
    for it in range(1, max_iter + 1):
        r = Ax - lam * Mx
        res = float(np.linalg.norm(r) / np.linalg.norm(Mx))
        if res <= tol * max(1.0, abs(lam)):
            break
        w = pre.operator(max(1.0, -lam)).matvec(r)
        Aw, Mw = A @ w, M @ w
        cols = [(x, Ax, Mx), (w, Aw, Mw)] + ([(p, Ap, Mp)] if p is not None else [])
        S = np.stack([c[0] for c in cols], axis=1)
        AS = np.stack([c[1] for c in cols], axis=1)
        MS = np.stack([c[2] for c in cols], axis=1)
        GA = S.T @ AS
        GM = S.T @ MS
        GA = 0.5 * (GA + GA.T)
        GM = 0.5 * (GM + GM.T)
        # M-orthonormal basis of the trial space
        d = 1.0 / np.sqrt(np.diag(GM))
        mu, U = sla.eigh(GM * np.outer(d, d))
        keep = mu > 1e-13 * mu.max()
        B = (d[:, None] * U[:, keep]) / np.sqrt(mu[keep])
        vals, vecs = sla.eigh(B.T @ GA @ B)
        coef = B @ vecs[:, 0]
        x_new = S @ coef
        # search direction: the part of the update outside the old x
        p, Ap, Mp = S[:, 1:] @ coef[1:], AS[:, 1:] @ coef[1:], MS[:, 1:] @ coef[1:]
        x, Ax, Mx = x_new, AS @ coef, MS @ coef
        nrm = np.sqrt(x @ Mx)
        x, Ax, Mx = x / nrm, Ax / nrm, Mx / nrm
        lam = float(x @ Ax)
        if it % 25 == 0:
            # refresh products against round-off drift
            Ax, Mx = A @ x, M @ x
    Ax, Mx = A @ x, M @ x
    lam = float(x @ Ax) / float(x @ Mx)
    res = _residual(A, M, x, lam)
    return lam, x / np.sqrt(x @ Mx), it, res, res <= tol * max(1.0, abs(lam))


def lambda1(forms: DiscreteForms, tol: float = 1e-6, max_iter: int = 200, level: int = 0,
            method: str = "auto", x0=None) -> SpectrumResult:
    """Smallest eigenvalue of A x = lambda M x.

    Small problems use shift-and-invert inverse iteration; the shift is
    certified to lie below the spectrum by the positive pivots of an
    unpivoted factorization of A - sigma M. Larger problems use LOBPCG
    preconditioned by the fast-diagonalization inverse of K0 + s M0.
    ``tol`` bounds |A x - lambda M x| / |M x| relative to max(1, |lambda|).
    """
    A, M = forms.A, forms.M
    n = A.shape[0]
    if method == "auto":
        method = "shift-invert" if n <= DIRECT_LIMIT else "lobpcg"
    if method == "shift-invert":
        lam, x, it, res, ok = _shift_invert(A, M, tol, max_iter)
    elif method == "lobpcg":
        lam, x, it, res, ok = _lobpcg(forms, A, M, tol, max_iter, x0)
    else:
        raise PreconditionError(f"unknown eigen method {method!r}")
    return SpectrumResult(lam, x, it, res, level, bool(ok), method, n, forms.mesh.h_min)


# --- refinement levels -------------------------------------------------------


@dataclass(frozen=True)
class MeshSchedule:
    """Level l uses ``base_layers + l * layers_per_level`` graded layers."""

    L: float = 2.0
    spacing: float = 0.25
    base_layers: int = 8
    layers_per_level: int = 8

    def layers(self, level):
        return self.base_layers + level * self.layers_per_level


def lambda1_levels(spec, config, c, levels=3, schedule: MeshSchedule = MeshSchedule(),
                   tol=1e-6):
    out = []
    for level in range(levels):
        forms = assemble(spec, config, c, schedule.L, schedule.spacing, schedule.layers(level))
        out.append(lambda1(forms, tol=tol, level=level))
    return out


def refinement_stability(values):
    """First and last successive changes of a level sequence."""
    v = np.asarray(values, dtype=float)
    if len(v) < 3:
        raise PreconditionError("need at least three levels")
    d = np.diff(v)
    return {"first_change": float(abs(d[0])), "last_change": float(abs(d[-1])),
            "stable": bool(abs(d[-1]) < 0.1 * abs(d[0])),
            "monotone_decreasing": bool(np.all(d < 0))}


# --- optimality witness -----------------------------------------------------


def eta_window(c, N, k2=0.0):
    lo = max(-np.sqrt(c), -(N + k2) / 2.0)
    hi = min(-(N + k2 - 2) / 2.0, 0.0)
    return lo, hi


def choose_eta(c, N, k2=0.0) -> float:
    """Midpoint of the admissible exponent window; needs c > c_o(N + k2)."""
    if c <= hardy_constant(N, k2):
        raise PreconditionError("witness requires c > c_o")
    lo, hi = eta_window(c, N, k2)
    if not lo < hi:
        raise PreconditionError("witness requires c > c_o")
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class WitnessSpec:
    pole_index: int
    eta: float
    epsilon: float

    def function(self, config):
        from .functions import Witness

        return Witness(tuple(config.poles[self.pole_index]), self.eta, self.epsilon)


def witness_rule(config, pole_index=0, r_min_ratio=1e-10, panels=None, shells=None):
    """Quadrature rule whose box contains the witness support B(a_i, 2).

    Default resolution: 16 panels / 60 shells in three dimensions, 4 / 30 above
    (the tensor far field grows like panels^N).
    """
    from .quadrature import build_rule

    if panels is None:
        panels = 16 if config.dimension <= 3 else 4
    if shells is None:
        shells = 60 if config.dimension <= 3 else 30

    a = config.poles[pole_index]
    L = float(np.max(np.abs(a)) + max(2.0, config.r0)) + 1e-9
    L = max(L, float(np.abs(config.poles).max() + config.r0) + 1e-9)
    return build_rule(config, L, panels_per_axis=panels, shells_per_pole=shells,
                      r_min_ratio=r_min_ratio)


def witness_quotient(spec, config, witness: WitnessSpec, c, rule=None, details=False):
    """Rayleigh quotient of phi_eps = (eps + |x - a_i|)^eta theta on the rule."""
    from .quadrature import integrate

    if witness.epsilon <= 0:
        raise PreconditionError("epsilon must be positive")
    if rule is None:
        rule = witness_rule(config, witness.pole_index)
    phi = witness.function(config)
    x = rule.all_points
    v, g = phi.value_grad(x)
    V = (1.0 / config.distances(x) ** 2).sum(axis=1)
    grad = integrate(rule, np.einsum("md,md->m", g, g), spec)
    pot = integrate(rule, V * v * v, spec)
    mass = integrate(rule, v * v, spec)
    q = (grad.value - c * pot.value) / mass.value
    if details:
        return q, {"grad_energy": grad.value, "potential": pot.value, "mass": mass.value,
                   "error": (grad.error_estimate + c * pot.error_estimate) / mass.value
                   + abs(q) * mass.error_estimate / mass.value}
    return q


def optimality_sweep(spec, config, c, eps_list=(1e-1, 1e-2, 1e-3, 1e-4), levels=3,
                     schedule: MeshSchedule = MeshSchedule(), threshold=-100.0, pole_index=0,
                     k2=None):
    """Witness quotients over eps and discrete lambda_1 over mesh levels."""
    N = config.dimension
    custom = spec is not None and spec.density is not None
    if k2 is None:
        k2 = 0.0 if spec is None else spec.require_k2()
    co = hardy_constant(N, k2)
    if c <= co:
        raise PreconditionError("sweep requires supercritical c")
    eta = choose_eta(c, N, k2)
    rule = witness_rule(config, pole_index)
    quotients = [witness_quotient(spec, config, WitnessSpec(pole_index, eta, e), c, rule)
                 for e in eps_list]
    spectra = lambda1_levels(spec, config, c, levels, schedule)
    lams = [s.lambda1 for s in spectra]
    witness_ok = bool(quotients[-1] < threshold)
    lam_ok = bool(lams[-1] < threshold and np.all(np.diff(lams) < 0))
    verdict = "optimality confirmed" if witness_ok and lam_ok else "not confirmed"
    if not all(s.converged for s in spectra):
        verdict = "inconclusive"
    return {
        "c": c, "c_o": co, "eta": eta, "threshold": threshold,
        "eps": list(map(float, eps_list)), "quotients": list(map(float, quotients)),
        "levels": list(range(levels)), "layers": [schedule.layers(l) for l in range(levels)],
        "lambda1": lams, "spectra": [s.as_dict() for s in spectra],
        "witness_diverges": witness_ok, "lambda1_diverges": lam_ok,
        "witness_strictly_decreasing": bool(np.all(np.diff(quotients) < 0)),
        "verdict": verdict,
        "conditional_on_H3": custom,
    }


def write_sweep_csv(path_eps, path_levels, sweep):
    from .report import atomic_write_text

    rows = ["epsilon,quotient"] + [f"{e!r},{q!r}" for e, q in zip(sweep["eps"], sweep["quotients"])]
    atomic_write_text(path_eps, "\n".join(rows) + "\n")
    rows = ["level,layers,lambda1"] + [f"{l},{k},{v!r}" for l, k, v in
                                       zip(sweep["levels"], sweep["layers"], sweep["lambda1"])]
    atomic_write_text(path_levels, "\n".join(rows) + "\n")
