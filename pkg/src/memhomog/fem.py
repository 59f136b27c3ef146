"""Periodic P1 finite elements for the cell problem on the unit torus.

The corrector ``chi^e`` solves

    div( sqrt|g| g^{-1} (e + grad chi^e) ) = 0   on the torus,

and the effective diffusion tensor is

    D_ij = (1/Z) int (e_i + grad chi_i) . sqrt|g| g^{-1} (e_j + grad chi_j) dy,

with ``Z = int sqrt|g| dy`` the excess surface area.  The coefficient field
``C = sqrt|g| g^{-1}`` is evaluated at the mesh nodes and averaged over the
three vertices of each triangle (nodal quadrature).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import cg
from scipy.integrate import quad

from . import surface as surf

__all__ = [
    "PeriodicMesh",
    "CellSolution",
    "EffectiveTensor",
    "AssemblyError",
    "SolverError",
    "nodal_coefficients",
    "assemble_system",
    "solve_cell",
    "solve_cell_problem",
    "surface_area_Z",
    "effective_tensor",
    "voigt_reuss",
    "eigen_summary",
    "one_dim_Z",
    "one_dim_D",
]


class AssemblyError(ArithmeticError):
    """Non-finite coefficient data encountered during assembly."""


class SolverError(ArithmeticError):
    """Iterative solver failed to reach the requested tolerance."""

    def __init__(self, msg, residual=None, iterations=None):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


# Reference gradients (in units of M) of the barycentric basis functions on the
# two triangle types of a grid square split along its lower-left -> upper-right
# diagonal.  Type 0: (00, 10, 11); type 1: (00, 11, 01).
_GRADS = (
    np.array([[-1.0, 0.0], [1.0, -1.0], [0.0, 1.0]]),
    np.array([[0.0, -1.0], [1.0, 0.0], [-1.0, 1.0]]),
)


class PeriodicMesh:
    """Uniform ``M x M`` periodic grid, each square cut into two triangles.

    Node ``(i, j)`` sits at ``(i/M, j/M)`` and has index ``i*M + j``.
    """

    def __init__(self, M: int):
        M = int(M)
        if M < 2:
            raise ValueError(f"mesh resolution must be >= 2, got {M}")
        self.M = M
        i, j = np.meshgrid(np.arange(M), np.arange(M), indexing="ij")
        i, j = i.ravel(), j.ravel()
        ip, jp = (i + 1) % M, (j + 1) % M
        n00, n10 = i * M + j, ip * M + j
        n01, n11 = i * M + jp, ip * M + jp
        self.points = np.stack([i / M, j / M], axis=1)
        # element blocks, one per triangle type
        self.elements = (np.stack([n00, n10, n11], axis=1),
                         np.stack([n00, n11, n01], axis=1))
        self.area = 0.5 / M ** 2

    @property
    def n_nodes(self) -> int:
        return self.M * self.M

    @property
    def n_elements(self) -> int:
        return 2 * self.M * self.M

    def gradients(self, t: int) -> np.ndarray:
        """Physical basis gradients (3, 2) on triangles of type ``t``."""
        return _GRADS[t] * self.M


def nodal_coefficients(mesh: PeriodicMesh, spec):
    """Coefficient tensor ``sqrt|g| g^{-1}`` and ``sqrt|g|`` at the nodes.

    Returns
    -------
    C : ndarray (n, 3)
        Columns ``(C11, C12, C22)``.
    sqrtg : ndarray (n,)
    grad : ndarray (n, 2)
    """
    grad, _ = surf.eval_derivatives(spec, mesh.points)
    h1, h2 = grad[:, 0], grad[:, 1]
    gi11, gi12, gi22, sq = surf.metric_from_derivatives(h1, h2)
    C = np.stack([sq * gi11, sq * gi12, sq * gi22], axis=1)
    bad = ~np.all(np.isfinite(C), axis=1)
    if np.any(bad):
        n = int(np.flatnonzero(bad)[0])
        raise AssemblyError(f"non-finite surface data at node {n}, x={mesh.points[n]}")
    return C, sq, grad


def _element_coefficients(C, elems):
    return C[elems].mean(axis=1)          # (nE, 3)


def assemble_system(mesh: PeriodicMesh, spec=None, *, C=None, sqrtg=None):
    """Stiffness matrix, the two load vectors and nodal ``sqrt|g|`` weights.

    Parameters
    ----------
    mesh : PeriodicMesh
    spec : surface spec, optional
        Evaluated at the nodes unless ``C`` and ``sqrtg`` are supplied.

    Returns
    -------
    K : scipy.sparse.csr_matrix
        Symmetric, with constants in its kernel.
    loads : ndarray (2, n)
        ``loads[e][i] = -int grad phi_i . C e``.
    weights : ndarray (n,)
        Nodal ``sqrt|g|`` values.
    """
    if C is None:
        C, sqrtg, _ = nodal_coefficients(mesh, spec)
    n = mesh.n_nodes
    rows, cols, vals = [], [], []
    loads = np.zeros((2, n))
    A = mesh.area
    for t, elems in enumerate(mesh.elements):
        G = mesh.gradients(t)
        Ce = _element_coefficients(C, elems)
        c11, c12, c22 = Ce[:, 0], Ce[:, 1], Ce[:, 2]
        # K_ab = |T| G_a . C G_b, linear in (c11, c12, c22)
        for a in range(3):
            for b in range(3):
                w11 = G[a, 0] * G[b, 0]
                w12 = G[a, 0] * G[b, 1] + G[a, 1] * G[b, 0]
                w22 = G[a, 1] * G[b, 1]
                rows.append(elems[:, a])
                cols.append(elems[:, b])
                vals.append(A * (w11 * c11 + w12 * c12 + w22 * c22))
            # C e1 = (c11, c12), C e2 = (c12, c22)
            np.add.at(loads[0], elems[:, a], -A * (G[a, 0] * c11 + G[a, 1] * c12))
            np.add.at(loads[1], elems[:, a], -A * (G[a, 0] * c12 + G[a, 1] * c22))
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    K.sum_duplicates()
    # enforce exact symmetry against summation-order rounding
    K = ((K + K.T) * 0.5).tocsr()
    return K, loads, np.asarray(sqrtg, dtype=float)


def solve_cell(K, load, weights, tol: float = 1e-10, maxiter: int | None = None):
    """Jacobi-preconditioned CG for the singular periodic system ``K chi = load``.

    The load is projected orthogonally to the constants, and the solution is
    shifted to zero ``weights``-weighted mean.

    Returns
    -------
    chi : ndarray
    info : dict with ``iterations`` and relative ``residual``.
    """
    n = K.shape[0]
    if maxiter is None:
        maxiter = 10 * n
    b = np.asarray(load, dtype=float)
    b = b - b.mean()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), {"iterations": 0, "residual": 0.0}
    dinv = 1.0 / K.diagonal()
    Minv = sp.diags(dinv)
    it = [0]

    def cb(_):
        it[0] += 1

    x, info = cg(K, b, rtol=tol, atol=0.0, maxiter=maxiter, M=Minv, callback=cb)
    res = np.linalg.norm(b - K @ x) / bnorm
    if info != 0 and res > tol:
        raise SolverError(f"CG did not converge in {it[0]} iterations "
                          f"(relative residual {res:.3e})", res, it[0])
    w = np.asarray(weights, dtype=float)
    x = x - np.dot(w, x) / w.sum()
    return x, {"iterations": it[0], "residual": float(res)}


@dataclass
class CellSolution:
    """Both corrector components and their energy inner products."""

    chi1: np.ndarray
    chi2: np.ndarray
    energy: np.ndarray
    iterations: int = 0
    residual: float = 0.0


def solve_cell_problem(mesh: PeriodicMesh, spec, tol: float = 1e-10, *, system=None):
    """Assemble and solve for ``chi^{e1}``, ``chi^{e2}``."""
    K, loads, w = system if system is not None else assemble_system(mesh, spec)
    chis, its, res = [], 0, 0.0
    for e in range(2):
        chi, info = solve_cell(K, loads[e], w, tol)
        chis.append(chi)
        its = max(its, info["iterations"])
        res = max(res, info["residual"])
    X = np.stack(chis, axis=1)
    energy = X.T @ (K @ X)
    energy = 0.5 * (energy + energy.T)
    return CellSolution(chis[0], chis[1], energy, its, res)


def surface_area_Z(mesh: PeriodicMesh, spec) -> float:
    """Nodal-quadrature excess area ``int sqrt(1 + |grad h|^2) dy``."""
    grad, _ = surf.eval_derivatives(spec, mesh.points)
    return float(np.mean(np.sqrt(1.0 + (grad ** 2).sum(axis=1))))


def _sym(c11, c12, c22):
    return np.array([[c11, c12], [c12, c22]])


def _bounds_from_nodes(C, sqrtg, grad):
    Z = float(np.mean(sqrtg))
    Cbar = C.mean(axis=0)
    upper = _sym(*Cbar) / Z
    # g / sqrt|g| = (I + grad h grad h^T) / sqrt|g|
    h1, h2 = grad[:, 0], grad[:, 1]
    G = np.stack([(1 + h1 * h1) / sqrtg, h1 * h2 / sqrtg, (1 + h2 * h2) / sqrtg], axis=1)
    Gbar = _sym(*G.mean(axis=0))
    try:
        lower = np.linalg.inv(Gbar) / Z
    except np.linalg.LinAlgError as exc:          # pragma: no cover - cannot occur for finite grad h
        raise ArithmeticError("singular averaged metric in lower bound") from exc
    return lower, upper, Z


def voigt_reuss(mesh: PeriodicMesh, spec):
    """Voigt-Reuss bounds ``(D_lower, D_upper)`` by nodal quadrature.

    ``D_upper = (1/Z) int sqrt|g| g^{-1}`` and
    ``D_lower = (1/Z) (int g / sqrt|g|)^{-1}``.
    """
    C, sq, grad = nodal_coefficients(mesh, spec)
    lower, upper, _ = _bounds_from_nodes(C, sq, grad)
    return lower, upper


def eigen_summary(D, Z):
    """Sorted eigenvalues of ``D`` and the duality residual ``|det(D) Z^2 - 1|``."""
    D = np.asarray(D, dtype=float)
    lam = np.linalg.eigvalsh(0.5 * (D + D.T))
    return float(lam[0]), float(lam[1]), float(abs(np.linalg.det(D) * Z * Z - 1.0))


@dataclass
class EffectiveTensor:
    """Homogenised tensor with excess area, bounds and diagnostics."""

    D: np.ndarray
    Z: float
    lower: np.ndarray
    upper: np.ndarray
    areaScaling: float
    mesh_M: int = 0
    cg_iters: int = 0
    cg_residual: float = 0.0
    solution: CellSolution | None = field(default=None, repr=False)

    def eigen(self):
        return eigen_summary(self.D, self.Z)

    def to_record(self) -> dict:
        """Flat key/value record."""
        l1, l2, r = self.eigen()
        return {
            "D11": float(self.D[0, 0]), "D12": float(self.D[0, 1]), "D22": float(self.D[1, 1]),
            "Z": float(self.Z), "Das": float(self.areaScaling),
            "lower11": float(self.lower[0, 0]), "lower22": float(self.lower[1, 1]),
            "upper11": float(self.upper[0, 0]), "upper22": float(self.upper[1, 1]),
            "lambda1": l1, "lambda2": l2, "det_residual": r,
            "mesh_M": int(self.mesh_M), "cg_iters": int(self.cg_iters),
            "cg_residual": float(self.cg_residual),
        }


def effective_tensor(mesh, spec, tol: float = 1e-10) -> EffectiveTensor:
    """Effective diffusion tensor of lateral diffusion on a periodic surface.

    Parameters
    ----------
    mesh : PeriodicMesh or int
        Mesh, or its resolution ``M``.
    spec : surface spec
    tol : float
        CG relative-residual tolerance.

    Notes
    -----
    The entries are evaluated with the form that is stationary in the
    corrector error,

        Z D_ij = Cbar_ij - chi_i.b_j - chi_j.b_i + chi_i.K chi_j,

    which equals ``Cbar_ij - <chi_i, chi_j>_V`` at the exact discrete solution.
    """
    if not isinstance(mesh, PeriodicMesh):
        mesh = PeriodicMesh(mesh)
    C, sq, grad = nodal_coefficients(mesh, spec)
    K, loads, w = assemble_system(mesh, C=C, sqrtg=sq)
    sol = solve_cell_problem(mesh, spec, tol, system=(K, loads, w))
    lower, upper, Z = _bounds_from_nodes(C, sq, grad)
    X = np.stack([sol.chi1, sol.chi2], axis=1)
    cross = X.T @ loads.T                  # cross[i, j] = chi_i . b_j
    Cbar = upper * Z
    D = (Cbar - cross - cross.T + sol.energy) / Z
    D = 0.5 * (D + D.T)
    return EffectiveTensor(D, Z, lower, upper, 1.0 / Z, mesh.M,
                           sol.iterations, sol.residual, sol)


def one_dim_Z(A: float, n: int | None = None) -> float:
    """Excess length ``int_0^1 sqrt(1 + (2 pi A cos 2 pi s)^2) ds``.

    With ``n`` given, uses the ``n``-point periodic midpoint rule (spectrally
    accurate for this smooth periodic integrand); otherwise adaptive quadrature.
    """
    f = lambda s: np.sqrt(1.0 + (2 * np.pi * A * np.cos(2 * np.pi * s)) ** 2)
    if n is not None:
        s = (np.arange(n) + 0.5) / n
        return float(np.mean(f(s)))
    val, _ = quad(f, 0.0, 1.0, limit=200, epsabs=1e-14, epsrel=1e-13)
    return float(val)


def one_dim_D(A: float) -> float:
    """Exact effective coefficient ``1/Z_1^2`` across a one-dimensional corrugation."""
    return 1.0 / one_dim_Z(A) ** 2
