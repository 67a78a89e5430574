"""1D piecewise-linear finite elements on (0, 1).

Assembly with per-element constant coefficients is exact; source terms
use a 4-point Gauss rule per element.  Dirichlet conditions are imposed
by row/column elimination, which keeps the reduced system symmetric
positive definite for the diffusion-dominated problems.  The module
also hosts the extension (coarse-to-fine interpolation) operator, the
overlapping block-Jacobi preconditioners, discrete norms, and a
Riesz/dual-norm oracle on a fine mesh.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "Mesh1D",
    "FemSystem",
    "assemble",
    "extension_matrix",
    "Preconditioner",
    "block_jacobi",
    "exact_inverse",
    "identity_preconditioner",
    "discrete_norm",
    "solve_reference",
    "export_coo",
    "DualNormOracle",
    "ZeroResidualError",
]

# 4-point Gauss-Legendre on [-1, 1]
_GX = np.array([-0.8611363115940526, -0.3399810435848563,
                0.3399810435848563, 0.8611363115940526])
_GW = np.array([0.3478548451374538, 0.6521451548625461,
                0.6521451548625461, 0.3478548451374538])


@dataclass(frozen=True)
class Mesh1D:
    """Sorted nodes on [0, 1] with node 0 at x = 0."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes[0] != 0.0 or np.any(np.diff(nodes) <= 0.0):
            raise ValueError("nodes must start at 0 and increase strictly")
        object.__setattr__(self, "nodes", nodes)

    @classmethod
    def uniform(cls, n_elements: int) -> "Mesh1D":
        return cls(np.linspace(0.0, 1.0, n_elements + 1))

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1

    @property
    def h(self) -> np.ndarray:
        return np.diff(self.nodes)

    def refine(self) -> "Mesh1D":
        mids = 0.5 * (self.nodes[:-1] + self.nodes[1:])
        out = np.empty(self.n_nodes + self.n_elements)
        out[0::2] = self.nodes
        out[1::2] = mids
        return Mesh1D(out)

    def hat_values(self, x: np.ndarray) -> sp.csr_matrix:
        """Basis evaluation matrix: (len(x), n_nodes) with psi_j(x_i)."""
        x = np.asarray(x, dtype=float)
        idx = np.clip(np.searchsorted(self.nodes, x, side="right") - 1,
                      0, self.n_elements - 1)
        xl = self.nodes[idx]
        h = self.h[idx]
        t = (x - xl) / h
        rows = np.repeat(np.arange(x.size), 2)
        cols = np.column_stack([idx, idx + 1]).ravel()
        vals = np.column_stack([1.0 - t, t]).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(x.size, self.n_nodes))

    def interpolate(self, nodal: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.hat_values(x) @ np.asarray(nodal, dtype=float)


def _element_matrices(mesh: Mesh1D):
    """Unweighted element stiffness and mass contributions as COO triples."""
    h = mesh.h
    n = mesh.n_nodes
    left = np.arange(n - 1)
    rows = np.concatenate([left, left, left + 1, left + 1])
    cols = np.concatenate([left, left + 1, left, left + 1])

    def build(scale_diag, scale_off):
        vals = np.concatenate([scale_diag, scale_off, scale_off, scale_diag])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    K = build(1.0 / h, -1.0 / h)
    M = build(h / 3.0, h / 6.0)
    return K, M, build


@dataclass
class FemSystem:
    """Assembled system with Dirichlet nodes eliminated.

    ``A = K_sigma + M_alpha`` on the free degrees of freedom; ``K`` and
    ``M`` are the unweighted stiffness and mass used by the discrete H1
    and L2 norms.  Full (pre-elimination) matrices are kept for norm
    checks on complete nodal vectors.
    """

    mesh: Mesh1D
    dirichlet: tuple
    free: np.ndarray
    A: sp.csr_matrix
    f: np.ndarray
    K: sp.csr_matrix
    M: sp.csr_matrix
    K_sigma: sp.csr_matrix
    M_alpha: sp.csr_matrix
    K_full: sp.csr_matrix
    M_full: sp.csr_matrix
    sigma: np.ndarray
    alpha: np.ndarray

    @property
    def n_free(self) -> int:
        return self.free.size

    def expand(self, u_free: np.ndarray) -> np.ndarray:
        """Insert Dirichlet zeros to recover the full nodal vector."""
        full = np.zeros(self.mesh.n_nodes)
        full[self.free] = u_free
        return full

    def restrict(self, u_full: np.ndarray) -> np.ndarray:
        return np.asarray(u_full, dtype=float)[self.free]


def assemble(mesh: Mesh1D, sigma=1.0, alpha=0.0, source=None, point_loads=(),
             neumann_flux: float = 0.0, dirichlet=(0,)) -> FemSystem:
    """Assemble ``(sigma u', v') + (alpha u, v) = (f, v) + point/flux terms``.

    ``sigma``/``alpha`` are scalars or per-element vectors (sigma > 0).
    ``source`` is a callable density; ``point_loads`` is an iterable of
    ``(coeff, x0)`` adding ``coeff * psi_j(x0)``; ``neumann_flux`` adds
    ``flux * psi_j(1)`` (the natural boundary term ``sigma u'(1) v(1)``).
    """
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (mesh.n_elements,))
    alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (mesh.n_elements,))
    if np.any(sigma <= 0.0):
        raise ValueError("sigma must be positive elementwise")
    dirichlet = tuple(sorted(set(int(d) % mesh.n_nodes for d in dirichlet)))
    if neumann_flux and (mesh.n_nodes - 1) in dirichlet:
        raise ValueError("Neumann flux prescribed on a Dirichlet node")

    h = mesh.h
    _, _, build = _element_matrices(mesh)
    K_full = build(1.0 / h, -1.0 / h)
    M_full = build(h / 3.0, h / 6.0)
    K_sig_full = build(sigma / h, -sigma / h)
    M_alp_full = build(alpha * h / 3.0, alpha * h / 6.0)
    A_full = (K_sig_full + M_alp_full).tocsr()

    load = np.zeros(mesh.n_nodes)
    if source is not None:
        mid = 0.5 * (mesh.nodes[:-1] + mesh.nodes[1:])
        for gx, gw in zip(_GX, _GW):
            x = mid + 0.5 * h * gx
            fx = np.asarray(source(x), dtype=float)
            t = (x - mesh.nodes[:-1]) / h
            contrib = 0.5 * h * gw * fx
            np.add.at(load, np.arange(mesh.n_elements), contrib * (1.0 - t))
            np.add.at(load, np.arange(1, mesh.n_nodes), contrib * t)
    for coeff, x0 in point_loads:
        load += float(coeff) * np.asarray(
            mesh.hat_values(np.atleast_1d(float(x0))).todense()
        ).ravel()
    if neumann_flux:
        load[-1] += neumann_flux

    free = np.array([i for i in range(mesh.n_nodes) if i not in dirichlet])

    def reduce(mat):
        return sp.csr_matrix(mat.tocsr()[free, :][:, free])

    return FemSystem(
        mesh=mesh,
        dirichlet=dirichlet,
        free=free,
        A=reduce(A_full),
        f=load[free],
        K=reduce(K_full),
        M=reduce(M_full),
        K_sigma=reduce(K_sig_full),
        M_alpha=reduce(M_alp_full),
        K_full=K_full,
        M_full=M_full,
        sigma=np.array(sigma),
        alpha=np.array(alpha),
    )


def extension_matrix(coarse: Mesh1D, fine: Mesh1D) -> sp.csr_matrix:
    """Interpolation from coarse to fine nodal vectors (entries 1 and 1/2).

    ``fine`` must be the uniform refinement of ``coarse``: retained
    nodes carry weight one, inserted midpoints average their parents.
    """
    expected = coarse.refine()
    if fine.n_nodes != expected.n_nodes or not np.allclose(fine.nodes, expected.nodes):
        raise ValueError("fine mesh is not the uniform refinement of the coarse mesh")
    nc, nf = coarse.n_nodes, fine.n_nodes
    rows, cols, vals = [], [], []
    for j in range(nc):
        rows.append(2 * j)
        cols.append(j)
        vals.append(1.0)
    for e in range(coarse.n_elements):
        rows += [2 * e + 1, 2 * e + 1]
        cols += [e, e + 1]
        vals += [0.5, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(nf, nc))


class Preconditioner:
    """SPD action mimicking A^{-1}: identity, overlapping block-Jacobi, or exact."""

    def __init__(self, kind: str, n: int, blocks=None, solve=None):
        self.kind = kind
        self.n = n
        self._blocks = blocks      # list of (indices, inv_block, sqrt_weights)
        self._solve = solve

    def apply(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "identity":
            return v.copy()
        if self.kind == "exact-inverse":
            return self._solve(v)
        out = np.zeros_like(v)
        for idx, inv, w in self._blocks:
            if v.ndim == 1:
                out[idx] += w * (inv @ (w * v[idx]))
            else:
                out[idx] += w[:, None] * (inv @ (w[:, None] * v[idx]))
        return out

    def quadratic(self, v: np.ndarray) -> float:
        """v^T P v (the squared preconditioned norm before the square root)."""
        return float(np.dot(v, self.apply(v)))

    def dense(self) -> np.ndarray:
        return self.apply(np.eye(self.n))


def identity_preconditioner(n: int) -> Preconditioner:
    return Preconditioner("identity", n)


def exact_inverse(A: sp.spmatrix) -> Preconditioner:
    lu = spla.factorized(sp.csc_matrix(A))

    def solve(v):
        if v.ndim == 1:
            return lu(v)
        return np.column_stack([lu(v[:, k]) for k in range(v.shape[1])])

    return Preconditioner("exact-inverse", A.shape[0], solve=solve)


def block_jacobi(A: sp.spmatrix, block_size: int) -> Preconditioner:
    """Overlapping block-Jacobi: adjacent blocks share one element's nodes.

    Blocks of ``block_size`` consecutive dofs advance with stride
    ``block_size - 2`` so neighbours overlap in two dofs; shared dofs
    are split with 1/coverage weights applied symmetrically, which keeps
    the combined action SPD.
    """
    if block_size < 1:
        raise ValueError("block size must be >= 1")
    n = A.shape[0]
    dense = A.toarray() if sp.issparse(A) else np.asarray(A, dtype=float)
    if block_size >= n:
        starts = [0]
        block_size = n
    else:
        stride = max(block_size - 2, 1)
        starts = list(range(0, n - block_size, stride)) + [n - block_size]
        starts = sorted(set(starts))
    coverage = np.zeros(n)
    for s in starts:
        coverage[s:s + block_size] += 1.0
    blocks = []
    for s in starts:
        idx = np.arange(s, s + block_size)
        sub = dense[np.ix_(idx, idx)]
        try:
            inv = np.linalg.inv(sub)
        except np.linalg.LinAlgError as exc:
            raise ValueError(f"singular block at dofs {s}..{s + block_size - 1}") from exc
        blocks.append((idx, inv, 1.0 / np.sqrt(coverage[idx])))
    return Preconditioner("block-jacobi", n, blocks=blocks)


def discrete_norm(v: np.ndarray, kind: str, system: FemSystem | None = None,
                  precond: Preconditioner | None = None,
                  b_matrix: sp.spmatrix | None = None) -> float:
    """``sqrt(v^T X v)`` with X chosen by ``kind``.

    kinds: ``P`` (preconditioner), ``energy`` (A), ``l2`` (M),
    ``h1`` (K + M), ``b-composed`` (``||P v||_B``).
    """
    v = np.asarray(v, dtype=float)
    if kind == "P":
        q = precond.quadratic(v)
    elif kind == "energy":
        q = float(v @ (system.A @ v))
    elif kind == "l2":
        q = float(v @ (system.M @ v))
    elif kind == "h1":
        q = float(v @ (system.K @ v) + v @ (system.M @ v))
    elif kind == "b-composed":
        B = b_matrix if b_matrix is not None else (system.K + system.M)
        pv = precond.apply(v)
        q = float(pv @ (B @ pv))
    else:
        raise ValueError(f"unknown norm kind {kind!r}")
    if q < -1e-12 * (1.0 + float(np.dot(v, v))):
        raise ValueError("negative quadratic form: matrix is not SPD for this use")
    return float(np.sqrt(max(q, 0.0)))


def solve_reference(system: FemSystem) -> np.ndarray:
    """Direct sparse solve; returns the full nodal vector."""
    u_free = spla.spsolve(sp.csc_matrix(system.A), system.f)
    if not np.all(np.isfinite(u_free)):
        raise np.linalg.LinAlgError("singular system")
    return system.expand(u_free)


def export_coo(matrix: sp.spmatrix, path) -> None:
    """Dump a sparse matrix as `row col value` triplets (debugging aid)."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{r} {c} {v:.17g}\n")


class ZeroResidualError(ValueError):
    """The residual vanished: the test maximizer is undefined at the solution."""


class DualNormOracle:
    """Discrete dual norm of the residual and its normalized Riesz maximizer.

    Realizes the test space of a 1D variational problem on a fine mesh
    and solves the Gram system ``G r = rho`` with
    ``rho_i = b(u, psi_i) - l(psi_i)``.  Supports the weak diffusion
    form (test space H1_0, Gram = stiffness) and the ultraweak
    convection form (test v(1) = 0, Gram = stiffness + mass).
    """

    def __init__(self, problem, n_elements: int = 1024):
        if problem.form not in ("weak", "ultraweak-convection"):
            raise ValueError(f"unsupported form {problem.form!r}")
        self.problem = problem
        self.mesh = Mesh1D.uniform(n_elements)
        n = self.mesh.n_nodes
        K, M, _ = _element_matrices(self.mesh)
        if problem.form == "weak":
            self.test_dirichlet = (0, n - 1)
            G_full = K
        else:
            self.test_dirichlet = (n - 1,)
            G_full = (K + M).tocsr()
        self.free = np.array([i for i in range(n) if i not in self.test_dirichlet])
        self.G = sp.csc_matrix(G_full.tocsr()[self.free, :][:, self.free])
        self._G_solve = spla.factorized(self.G)
        self._K_full = K
        self._M_full = M
        self._load = self._assemble_load()

    # -- assembly helpers ----------------------------------------------

    def _gauss_points(self):
        mesh = self.mesh
        mid = 0.5 * (mesh.nodes[:-1] + mesh.nodes[1:])
        for gx, gw in zip(_GX, _GW):
            yield mid + 0.5 * mesh.h * gx, 0.5 * mesh.h * gw

    def _assemble_against_tests(self, density, dv: int) -> np.ndarray:
        """integral(density * D^dv psi_i) for all i, 4-pt Gauss per element."""
        mesh = self.mesh
        out = np.zeros(mesh.n_nodes)
        left = np.arange(mesh.n_elements)
        for x, w in self._gauss_points():
            fx = np.asarray(density(x), dtype=float)
            t = (x - mesh.nodes[:-1]) / mesh.h
            if dv == 0:
                pl, pr = 1.0 - t, t
            else:
                pl, pr = -1.0 / mesh.h, 1.0 / mesh.h
            np.add.at(out, left, w * fx * pl)
            np.add.at(out, left + 1, w * fx * pr)
        return out

    def _assemble_load(self) -> np.ndarray:
        load = np.zeros(self.mesh.n_nodes)
        for dv, density in self.problem.load_terms:
            load += self._assemble_against_tests(density, dv[0])
        for coeff, point in self.problem.point_loads:
            load += float(coeff) * np.asarray(
                self.mesh.hat_values(np.atleast_1d(point[0])).todense()
            ).ravel()
        return load

    def residual_vector(self, u=None, du=None, u_nodal=None) -> np.ndarray:
        """rho_i = b(u, psi_i) - l(psi_i) on the free test dofs.

        Pass ``u``/``du`` as callables (quadrature route) or ``u_nodal``
        as a full nodal vector of a mesh function (exact route).
        """
        b_vec = np.zeros(self.mesh.n_nodes)
        if self.problem.form == "weak":
            if u_nodal is not None:
                b_vec = self._K_full @ np.asarray(u_nodal, dtype=float)
            else:
                b_vec = self._assemble_against_tests(du, 1)
        else:  # -int u psi'
            if u_nodal is not None:
                b_vec = -self._convective_matrix() @ np.asarray(u_nodal, dtype=float)
            else:
                b_vec = -self._assemble_against_tests(u, 1)
        return (b_vec - self._load)[self.free]

    def _convective_matrix(self) -> sp.csr_matrix:
        # C[i, j] = int psi_j psi_i' ; exact on each element
        n = self.mesh.n_nodes
        left = np.arange(n - 1)
        rows = np.concatenate([left, left, left + 1, left + 1])
        cols = np.concatenate([left, left + 1, left, left + 1])
        half = np.full(n - 1, 0.5)
        vals = np.concatenate([-half, -half, half, half])
        return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))

    # -- public oracle ----------------------------------------------------

    def dual_norm(self, u=None, du=None, u_nodal=None) -> float:
        rho = self.residual_vector(u=u, du=du, u_nodal=u_nodal)
        return float(np.sqrt(max(rho @ self._G_solve(rho), 0.0)))

    def test_maximizer(self, u=None, du=None, u_nodal=None,
                       tol: float = 1e-10) -> np.ndarray:
        """Normalized Riesz representative r/||r||_V as a full nodal vector."""
        rho = self.residual_vector(u=u, du=du, u_nodal=u_nodal)
        r = self._G_solve(rho)
        norm = float(np.sqrt(max(rho @ r, 0.0)))
        if norm < tol:
            raise ZeroResidualError(
                "residual is numerically zero; the maximizer is undefined"
            )
        full = np.zeros(self.mesh.n_nodes)
        full[self.free] = r / norm
        return full

    def v_norm(self, nodal_full: np.ndarray) -> float:
        """Test-space norm of a nodal function (for maximizer distances)."""
        v = np.asarray(nodal_full, dtype=float)[self.free]
        return float(np.sqrt(max(v @ (self.G @ v), 0.0)))
