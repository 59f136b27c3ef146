"""Joint fast process of position and one fluctuating mode (diffusive time scaling).

The fast variables are the cell position ``y`` on the torus and the mode
amplitude ``eta`` on ``[-M, M]``; the surface is ``h(y, eta) = eta * s(y)``.
Their generator is

    G f = (1/sqrt|g|) div_y(sqrt|g| g^{-1} grad_y f) - Gamma eta f_eta + Gamma Pi f_eta_eta.

The pipeline discretises ``G`` with P1 elements on a structured tetrahedral
mesh, computes the invariant density ``rho`` (``G* rho = 0``), checks the
centering condition ``int F rho = 0``, solves ``G chi = -F.e`` and assembles

    D = int (I + grad_y chi) g^{-1} (I + grad_y chi)^T rho
        + int Gamma Pi d_eta chi d_eta chi^T rho.

Weak form
---------
With the weight ``w = sqrt|g| rho_eta`` (``rho_eta`` the ``N(0, Pi)``
density) the generator is symmetric up to one first-order term:

    -int phi (G f) w = int w [grad_y phi . g^{-1} grad_y f + Gamma Pi phi_eta f_eta]
                       + int phi (d_eta sqrt|g|) rho_eta Gamma Pi f_eta
                    =: a(f, phi).

The no-flux condition at ``eta = +-M`` is the natural boundary condition.
With ``A_ij = a(phi_j, phi_i)`` one has ``A 1 = 0`` exactly, and the
invariant density is ``rho = w q`` with ``A^T q = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import helfrich as hf
from . import surface as surf

__all__ = [
    "Case4Config",
    "Case4Mesh",
    "Generator",
    "InvariantDensity",
    "Case4Result",
    "DegeneracyError",
    "DiscretizationError",
    "SolverError",
    "CenteringError",
    "build_mesh",
    "assemble_generator",
    "solve_invariant_density",
    "check_centering",
    "solve_corrector",
    "effective_tensor_case4",
    "energy_identity",
    "eta_marginal",
    "run_case4",
]


class DegeneracyError(ArithmeticError):
    """The zero eigenvalue of the adjoint is not isolated."""


class DiscretizationError(ArithmeticError):
    """The discrete density violates positivity beyond tolerance."""


class SolverError(ArithmeticError):
    """Krylov iteration failed to converge."""


class CenteringError(ArithmeticError):
    """The centering condition fails, so the corrector problem is ill-posed."""


@dataclass(frozen=True)
class Case4Config:
    """Configuration of the joint fast-process computation.

    Parameters
    ----------
    gamma, pi : float
        OU rate and stationary variance of the mode amplitude.
    M : float, optional
        Half-width of the amplitude domain; default ``5 sqrt(pi)`` (the smallest
        allowed; the Gaussian tail beyond it carries mass below ``1e-6``).
    meshY : int
        Grid cells per spatial axis.
    meshEta : int
        Grid cells across ``[-M, M]`` (must be even so that ``eta = 0`` is a node).
    profile : tuple of surface specs
        The spatial profile ``s(y)`` is their sum; default ``sin(2 pi y1) sin(2 pi y2)``.
    scale : float
        Multiplies the profile (``0`` gives the flat, decoupled problem).
    tol : float
        Krylov relative tolerance.
    """

    gamma: float
    pi: float
    M: float | None = None
    meshY: int = 32
    meshEta: int = 64
    profile: tuple = (surf.EggCarton(1.0),)
    scale: float = 1.0
    tol: float = 1e-10

    def __post_init__(self):
        if not self.pi >= 1e-8:
            raise hf.ConfigError(f"Pi={self.pi} below 1e-8: amplitude domain collapses")
        if not self.gamma > 0:
            raise hf.ConfigError("Gamma must be positive")
        M = 5.0 * np.sqrt(self.pi) if self.M is None else float(self.M)
        object.__setattr__(self, "M", M)
        if M < 5.0 * np.sqrt(self.pi) * (1 - 1e-12):
            raise hf.ConfigError(f"M={M} must be at least 5 sqrt(Pi)={5*np.sqrt(self.pi)}")
        if self.meshY < 8 or self.meshEta < 8:
            raise hf.ConfigError("meshY and meshEta must be >= 8")
        if self.meshEta % 2:
            raise hf.ConfigError("meshEta must be even")

    @classmethod
    def from_params(cls, params: hf.HelfrichParams, k=(1, 1), **kw):
        k2 = float(k[0] ** 2 + k[1] ** 2)
        q2 = (2.0 * np.pi) ** 2 * k2
        e = params.kappaStar * q2 * q2 + params.sigmaStar * q2
        return cls(gamma=e / np.sqrt(q2), pi=1.0 / e, **kw)


class Case4Mesh:
    """Tensor grid ``meshY^2 x (meshEta + 1)`` nodes, periodic in ``y``.

    Every cube is cut into the six Kuhn tetrahedra sharing its main
    diagonal.  The mesh is invariant under ``(y, eta) -> (1 - y, -eta)``.
    Node ``(i, j, l)`` has index ``(l * meshY + i) * meshY + j``.
    """

    def __init__(self, meshY: int, meshEta: int, M: float):
        nY, nE = int(meshY), int(meshEta)
        self.nY, self.nE, self.M = nY, nE, float(M)
        self.hy = 1.0 / nY
        self.he = 2.0 * M / nE
        l, i, j = np.meshgrid(np.arange(nE + 1), np.arange(nY), np.arange(nY), indexing="ij")
        self.y = np.stack([i.ravel() * self.hy, j.ravel() * self.hy], axis=1)
        self.eta = -M + l.ravel() * self.he
        self.n_nodes = nY * nY * (nE + 1)
        self.vol = self.hy * self.hy * self.he / 6.0
        # element blocks and constant gradients, one per Kuhn permutation
        ci, cj, cl = np.meshgrid(np.arange(nY), np.arange(nY), np.arange(nE), indexing="ij")
        ci, cj, cl = ci.ravel(), cj.ravel(), cl.ravel()
        h = np.array([self.hy, self.hy, self.he])
        self.blocks = []
        for perm in permutations(range(3)):
            offs = [np.zeros(3, int)]
            for ax in perm:
                nxt = offs[-1].copy()
                nxt[ax] = 1
                offs.append(nxt)
            elems = np.stack([self._node(ci + o[0], cj + o[1], cl + o[2]) for o in offs], axis=1)
            E = np.array([(offs[m] - offs[0]) * h for m in (1, 2, 3)])
            Einv = np.linalg.inv(E)
            G = np.zeros((4, 3))
            G[1:] = Einv.T
            G[0] = -G[1:].sum(axis=0)
            self.blocks.append((elems, G))
        # lumped (unweighted) nodal volumes
        self.lumped = np.zeros(self.n_nodes)
        for elems, _ in self.blocks:
            np.add.at(self.lumped, elems.ravel(), self.vol / 4.0)

    def _node(self, i, j, l):
        return (l * self.nY + i % self.nY) * self.nY + j % self.nY

    def reflect_index(self) -> np.ndarray:
        """Node permutation realising ``(y, eta) -> (1 - y, -eta)``."""
        l, i, j = np.meshgrid(np.arange(self.nE + 1), np.arange(self.nY), np.arange(self.nY),
                              indexing="ij")
        return self._node(-i.ravel(), -j.ravel(), self.nE - l.ravel())


def build_mesh(config: Case4Config) -> Case4Mesh:
    return Case4Mesh(config.meshY, config.meshEta, config.M)


@dataclass
class _NodalFields:
    gi: np.ndarray          # (n, 3) inverse metric entries
    sqrtg: np.ndarray
    dsq_deta: np.ndarray
    rho_eta: np.ndarray
    F: np.ndarray           # (n, 2) drift


def _profile_jet(config: Case4Config, y):
    acc = None
    for spec in config.profile:
        j = spec._jet(np.mod(y[:, 0], 1.0), np.mod(y[:, 1], 1.0))
        acc = list(j) if acc is None else [a + b for a, b in zip(acc, j)]
    return [config.scale * a for a in acc]


def _nodal_fields(mesh: Case4Mesh, config: Case4Config) -> _NodalFields:
    _, s1, s2, s11, s12, s22 = _profile_jet(config, mesh.y)
    e = mesh.eta
    h1, h2 = e * s1, e * s2
    gi11, gi12, gi22, sq = surf.metric_from_derivatives(h1, h2)
    F1, F2 = surf.drift_from_derivatives(h1, h2, e * s11, e * s12, e * s22)
    dsq = e * (s1 * s1 + s2 * s2) / sq
    rho_eta = np.exp(-e * e / (2 * config.pi)) / np.sqrt(2 * np.pi * config.pi)
    return _NodalFields(np.stack([gi11, gi12, gi22], axis=1), sq, dsq, rho_eta,
                        np.stack([F1, F2], axis=1))


@dataclass
class Generator:
    """Assembled weak generator ``A`` (``A_ij = a(phi_j, phi_i)``) and companions.

    ``G = -A`` is the Galerkin realisation of the generator in the weighted
    inner product and ``G_adjoint = -A^T`` that of its adjoint; ``loads[e]``
    is the right side for direction ``e``; ``wmass`` holds ``int phi_i w``.
    """

    A: sp.csr_matrix
    loads: np.ndarray
    wmass: np.ndarray
    mesh: Case4Mesh = field(repr=False)
    fields: _NodalFields = field(repr=False)
    config: Case4Config = field(repr=False)
    _lu: object = field(default=None, repr=False, compare=False)

    @property
    def scale(self) -> float:
        return float(np.abs(self.A.diagonal()).max())

    @property
    def shift(self) -> float:
        """Regularising shift, ``1e-12`` relative to the operator scale."""
        return -1e-12 * self.scale / float(self.wmass.max())

    def factor(self):
        """Sparse LU of ``A^T - shift W`` (cached).

        Minimum-degree ordering on ``A^T + A`` keeps the fill of the periodic
        3-d stencil far below the default column ordering.  The transposed
        factors serve as a preconditioner for systems in ``A``.
        """
        if self._lu is None:
            At = (self.A.T - self.shift * sp.diags(self.wmass)).tocsc()
            self._lu = spla.splu(At, permc_spec="MMD_AT_PLUS_A")
        return self._lu

    @property
    def G(self):
        return -self.A

    @property
    def G_adjoint(self):
        return -self.A.T.tocsr()


def assemble_generator(config: Case4Config) -> Generator:
    """Weighted P1 Galerkin discretisation of the joint generator."""
    mesh = build_mesh(config)
    f = _nodal_fields(mesh, config)
    w = f.sqrtg * f.rho_eta
    GP = config.gamma * config.pi
    n = mesh.n_nodes
    rows, cols, vals = [], [], []
    loads = np.zeros((2, n))
    c_first = f.dsq_deta * f.rho_eta * GP          # coefficient of the first-order term
    for elems, G in mesh.blocks:
        wv = w[elems]
        wg = (wv[:, :, None] * f.gi[elems]).mean(axis=1)      # (nE, 3) mean of w g^{-1}
        wbar = wv.mean(axis=1)
        for a in range(4):
            ga = G[a]
            for b in range(4):
                gb = G[b]
                val = (wg[:, 0] * ga[0] * gb[0] + wg[:, 1] * (ga[0] * gb[1] + ga[1] * gb[0])
                       + wg[:, 2] * ga[1] * gb[1] + GP * wbar * ga[2] * gb[2])
                val = val + c_first[elems[:, a]] / 4.0 * gb[2]
                rows.append(elems[:, a])
                cols.append(elems[:, b])
                vals.append(mesh.vol * val)
            loads[0] -= np.bincount(elems[:, a], mesh.vol * (wg[:, 0] * ga[0] + wg[:, 1] * ga[1]),
                                    minlength=n)
            loads[1] -= np.bincount(elems[:, a], mesh.vol * (wg[:, 1] * ga[0] + wg[:, 2] * ga[1]),
                                    minlength=n)
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    A.sum_duplicates()
    return Generator(A, loads, w * mesh.lumped, mesh, f, config)


@dataclass
class InvariantDensity:
    """Nodal invariant density with ``sum rho * lumped = 1``."""

    rho: np.ndarray
    q: np.ndarray
    eigenvalue: float
    gap: float
    residual: float
    negative_mass: float


def solve_invariant_density(gen: Generator, tol: float | None = None,
                            check: bool = True) -> InvariantDensity:
    """Null vector of the discrete adjoint, turned into a normalised density.

    Solves the generalised problem ``A^T q = lambda W q`` (``W`` the weighted
    lumped mass) by shift-invert Arnoldi about a tiny negative shift
    (``1e-12`` relative to the operator scale), which regularises the exactly
    singular factorisation.  The eigenvector of the eigenvalue closest to zero
    gives ``q`` and ``rho = w q``; the second eigenvalue measures the gap.
    """
    tol = gen.config.tol if tol is None else tol
    At = gen.A.T.tocsc()
    n = At.shape[0]
    W = gen.wmass
    scale = gen.scale
    shift = gen.shift
    Wm = sp.diags(W).tocsc()
    lu = gen.factor()
    op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
    # two steps of inverse iteration from the constant vector give a good start
    v = np.ones(n)
    for _ in range(2):
        v = lu.solve(W * v)
        v /= np.linalg.norm(v)
    vals, vecs = spla.eigs(At, k=2, M=Wm, sigma=shift, OPinv=op, v0=v, tol=1e-14)
    order = np.argsort(np.abs(vals))
    lam0, lam1 = vals[order[0]], vals[order[1]]
    q = np.real(vecs[:, order[0]])
    q = q / np.abs(q).max()
    # polish with inverse iteration on the real vector
    for _ in range(2):
        q = lu.solve(W * q)
        q /= np.abs(q).max()
    w = gen.fields.sqrtg * gen.fields.rho_eta
    rho = w * q
    m = gen.mesh.lumped
    total = float(rho @ m)
    if total < 0:
        rho, q, total = -rho, -q, -total
    rho /= total
    q /= total
    res = float(np.linalg.norm(gen.A.T @ q) / (scale * np.linalg.norm(q)))
    gap = float(abs(lam1))
    neg = float(np.sum(np.minimum(rho, 0.0) * m) / np.sum(np.abs(rho) * m))
    neg = abs(neg)
    if check:
        if gap < 10 * tol:
            raise DegeneracyError(f"zero eigenvalue not isolated (gap {gap:.3e})")
        if neg > 1e-4:
            raise DiscretizationError(f"negative density mass fraction {neg:.3e}")
    return InvariantDensity(rho, q, float(np.real(lam0)), gap, res, neg)


def eta_marginal(gen: Generator, dens: InvariantDensity):
    """``(eta_levels, marginal, gaussian, L1_error)`` of the amplitude marginal."""
    mesh = gen.mesh
    nY, nE = mesh.nY, mesh.nE
    r = dens.rho.reshape(nE + 1, nY * nY).sum(axis=1) * mesh.hy ** 2
    e = -mesh.M + np.arange(nE + 1) * mesh.he
    pi = gen.config.pi
    ref = np.exp(-e * e / (2 * pi)) / np.sqrt(2 * np.pi * pi)
    wts = np.full(nE + 1, mesh.he)
    wts[[0, -1]] *= 0.5
    return e, r, ref, float(np.sum(np.abs(r - ref) * wts))


def check_centering(gen: Generator, dens: InvariantDensity) -> np.ndarray:
    """Quadrature of ``int F rho`` (lumped nodal rule)."""
    return (dens.rho * gen.mesh.lumped) @ gen.fields.F


def solve_corrector(gen: Generator, dens: InvariantDensity, tol: float | None = None,
                    gate: float = 1e-6):
    """Solve ``G chi = -F.e`` for both unit directions.

    The right side is projected onto the range of ``A`` (orthogonal to ``q``),
    the system is solved with restarted GMRES preconditioned by the (shifted,
    transposed) sparse LU of the density solve, and each component is shifted
    to ``int chi rho = 0``.

    Returns
    -------
    chi : ndarray (n, 2)
    info : dict with GMRES iteration counts and residuals
    """
    tol = gen.config.tol if tol is None else tol
    cent = check_centering(gen, dens)
    if np.max(np.abs(cent)) > gate:
        raise CenteringError(f"centering residual {cent} exceeds gate {gate}")
    A = gen.A.tocsc()
    n = A.shape[0]
    lu = gen.factor()
    Mop = spla.LinearOperator((n, n), matvec=lambda v: lu.solve(v, trans="T"), dtype=float)
    q = dens.q
    m = gen.wmass
    chi = np.zeros((n, 2))
    info = {"iterations": [], "residual": []}
    for e in range(2):
        b = gen.loads[e].copy()
        b -= (q @ b) / (q @ m) * m
        bn = np.linalg.norm(b)
        if bn == 0.0:
            info["iterations"].append(0)
            info["residual"].append(0.0)
            continue
        count = [0]

        def cb(_):
            count[0] += 1

        x, flag = spla.gmres(A, b, rtol=tol, atol=0.0, restart=50, maxiter=200, M=Mop,
                             callback=cb, callback_type="pr_norm")
        x = x - (x @ (dens.rho * gen.mesh.lumped))
        res = float(np.linalg.norm(b - A @ x) / bn)
        if flag != 0 and res > 10 * tol:
            raise SolverError(f"GMRES stagnated (direction {e}, residual {res:.3e})")
        chi[:, e] = x
        info["iterations"].append(count[0])
        info["residual"].append(res)
    return chi, info


def _element_gradients(mesh, values):
    """Constant gradients (nE, 3, k) of nodal fields on each Kuhn block."""
    out = []
    for elems, G in mesh.blocks:
        out.append((elems, np.einsum("ad,eak->edk", G, values[elems])))
    return out


def effective_tensor_case4(gen: Generator, chi: np.ndarray, dens: InvariantDensity) -> np.ndarray:
    """Effective tensor by elementwise quadrature with element-constant gradients."""
    mesh, f = gen.mesh, gen.fields
    GP = gen.config.gamma * gen.config.pi
    D = np.zeros((2, 2))
    rho = dens.rho
    for elems, grad in _element_gradients(mesh, chi):
        rg = (rho[elems][:, :, None] * f.gi[elems]).mean(axis=1)
        Gi = np.stack([np.stack([rg[:, 0], rg[:, 1]], -1), np.stack([rg[:, 1], rg[:, 2]], -1)], -2)
        J = np.transpose(grad[:, :2, :], (0, 2, 1))           # J[e, i, j] = d chi_i / d y_j
        B = np.eye(2)[None] + J
        D += mesh.vol * np.einsum("eij,ejk,elk->il", B, Gi, B)
        de = grad[:, 2, :]                                     # d chi / d eta
        rbar = rho[elems].mean(axis=1)
        D += mesh.vol * GP * np.einsum("e,ei,ej->ij", rbar, de, de)
    return 0.5 * (D + D.T)


def energy_identity(gen: Generator, chi: np.ndarray, dens: InvariantDensity):
    """Both sides of the corrector energy identity and their relative mismatch.

    ``lhs = int (grad_y chi g^{-1} grad_y chi + Gamma Pi (d_eta chi)^2) rho``
    (elementwise quadrature) and ``rhs = -int chi (G chi) rho = int chi (F.e) rho``.
    The right side is evaluated in the divergence form the drift has in the
    discretisation: with ``rho = w q``,
    ``int chi_i F_j rho = -int w g^{-1} grad(chi_i q) . e_j``, i.e. the load
    vectors paired with the nodal product ``chi_i q``.
    Returns ``(lhs (2,2), rhs (2,2), max relative residual)``.
    """
    mesh, f = gen.mesh, gen.fields
    GP = gen.config.gamma * gen.config.pi
    rho = dens.rho
    lhs = np.zeros((2, 2))
    for elems, grad in _element_gradients(mesh, chi):
        rg = (rho[elems][:, :, None] * f.gi[elems]).mean(axis=1)
        gy = grad[:, :2, :]
        for i in range(2):
            for j in range(2):
                a, b = gy[:, :, i], gy[:, :, j]
                lhs[i, j] += mesh.vol * np.sum(rg[:, 0] * a[:, 0] * b[:, 0]
                                               + rg[:, 1] * (a[:, 0] * b[:, 1] + a[:, 1] * b[:, 0])
                                               + rg[:, 2] * a[:, 1] * b[:, 1])
        rbar = rho[elems].mean(axis=1)
        lhs += mesh.vol * GP * np.einsum("e,ei,ej->ij", rbar, grad[:, 2, :], grad[:, 2, :])
    rhs = (chi * dens.q[:, None]).T @ gen.loads.T
    rhs = 0.5 * (rhs + rhs.T)
    denom = max(abs(lhs[0, 0]), abs(lhs[1, 1]))
    if denom == 0.0:
        return lhs, rhs, 0.0
    r = float(max(abs(lhs[0, 0] - rhs[0, 0]), abs(lhs[1, 1] - rhs[1, 1])) / denom)
    return lhs, rhs, r


@dataclass
class Case4Result:
    D: np.ndarray
    centering: np.ndarray
    eig_residual: float
    energy_residual: float
    marginal_L1: float
    negative_mass: float
    config: Case4Config
    density: InvariantDensity = field(repr=False, default=None)
    chi: np.ndarray = field(repr=False, default=None)
    generator: Generator = field(repr=False, default=None)

    def to_record(self) -> dict:
        return {
            "D11": float(self.D[0, 0]), "D12": float(self.D[0, 1]), "D22": float(self.D[1, 1]),
            "centering_x": float(self.centering[0]), "centering_y": float(self.centering[1]),
            "eig_residual": float(self.eig_residual),
            "energy_identity_residual": float(self.energy_residual),
            "marginal_L1": float(self.marginal_L1), "negative_mass": float(self.negative_mass),
            "gap": float(self.density.gap),
            "meshY": int(self.config.meshY), "meshEta": int(self.config.meshEta),
            "M": float(self.config.M),
        }


def run_case4(config: Case4Config) -> Case4Result:
    """Full pipeline: generator, density, centering, corrector, tensor."""
    gen = assemble_generator(config)
    dens = solve_invariant_density(gen)
    cent = check_centering(gen, dens)
    chi, _ = solve_corrector(gen, dens)
    D = effective_tensor_case4(gen, chi, dens)
    _, _, er = energy_identity(gen, chi, dens)
    _, _, _, l1 = eta_marginal(gen, dens)
    return Case4Result(D, cent, dens.residual, er, l1, dens.negative_mass, config,
                       dens, chi, gen)
