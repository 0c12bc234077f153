"""Implicit elastic simulation on tetrahedral meshes.

One time step minimizes::

    1/(2 dt^2) |x - x_tilde|_M^2 + sum_i v_i psi(F_i(x))

which is posed as ``min f(x) + g(z) s.t. W D x - W z = 0`` with ``D``
mapping node positions to per-element deformation gradients and ``W`` a
positive diagonal scaling. Deformation gradients are stored row-major, nine
entries per element.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..core import GOracle, ProxError, SeparableProblem
from ..oracles import BlockOracle, HalfspaceOracle

logger = logging.getLogger(__name__)

ENERGY_KINDS = ("corotational", "stvk", "neohookean")
NEWTON_MAX_ITERS = 50
NEWTON_RTOL = 1e-10
STRAIN_LIMITS = (0.95, 1.05)

_EYE = np.eye(3)
_BASIS = np.eye(9).reshape(9, 3, 3)


# -- kinematics ---------------------------------------------------------------

def svd_rotation_safe(F):
    """Batched SVD ``F = U diag(s) V^T`` with ``U``, ``V`` proper rotations.

    A reflection is absorbed by flipping the sign of the smallest singular
    value, so ``s[..., 2]`` is negative for inverted elements.
    """
    U, s, Vt = np.linalg.svd(F)
    flip = np.linalg.det(U) * np.linalg.det(Vt) < 0
    if np.any(flip):
        U = U.copy()
        s = s.copy()
        U[flip, :, 2] *= -1.0
        s[flip, 2] *= -1.0
    detU = np.linalg.det(U)
    neg = detU < 0
    if np.any(neg):
        U[neg] *= -1.0
        Vt[neg] *= -1.0
    return U, s, Vt


def polar_rotation(F):
    U, _, Vt = svd_rotation_safe(F)
    return U @ Vt


def strain_limit_project(F, lo=STRAIN_LIMITS[0], hi=STRAIN_LIMITS[1]):
    """Clamp the singular values of ``F`` (one matrix or a stack) to ``[lo, hi]``."""
    if not 0 < lo <= hi:
        raise ValueError(f"need 0 < lo <= hi, got {lo}, {hi}")
    F = np.asarray(F, dtype=float)
    single = F.ndim == 2
    Fb = F[None] if single else F
    U, s, Vt = svd_rotation_safe(Fb)
    s = np.clip(s, lo, hi)
    out = np.einsum("nij,nj,njk->nik", U, s, Vt)
    return out[0] if single else out


def halfspace_project(p, plane):
    """Project points onto ``{p : n . p >= offset}``; ``plane = (n, offset)`` with unit ``n``."""
    normal, offset = plane
    normal = np.asarray(normal, dtype=float)
    p = np.asarray(p, dtype=float)
    d = p @ normal - offset
    corr = np.minimum(d, 0.0)
    return p - corr[..., None] * normal if p.ndim > 1 else p - corr * normal


# -- energies -----------------------------------------------------------------

def _green(F):
    return 0.5 * (np.swapaxes(F, -1, -2) @ F - _EYE)


def stvk_energy(F, lam1, lam2):
    """``lam1 E:E + lam2/2 tr(E)^2`` with Green strain ``E``."""
    E = _green(np.asarray(F, dtype=float))
    tr = np.trace(E, axis1=-2, axis2=-1)
    return lam1 * np.sum(E * E, axis=(-2, -1)) + 0.5 * lam2 * tr * tr


def stvk_piola(F, lam1, lam2):
    """First Piola-Kirchhoff stress ``F (2 lam1 E + lam2 tr(E) I)``."""
    F = np.asarray(F, dtype=float)
    E = _green(F)
    tr = np.trace(E, axis1=-2, axis2=-1)
    lam1 = np.asarray(lam1, dtype=float)[..., None, None]
    lam2 = np.asarray(lam2, dtype=float)[..., None, None]
    S = 2.0 * lam1 * E + lam2 * tr[..., None, None] * _EYE
    return F @ S


def _stvk_hessian(F, lam1, lam2):
    # directional derivative of P along each basis matrix
    F = F[:, None]
    dF = _BASIS[None]
    E = _green(F)
    dE = 0.5 * (np.swapaxes(dF, -1, -2) @ F + np.swapaxes(F, -1, -2) @ dF)
    l1 = lam1[:, None, None, None]
    l2 = lam2[:, None, None, None]
    S = 2 * l1 * E + l2 * np.trace(E, axis1=-2, axis2=-1)[..., None, None] * _EYE
    dS = 2 * l1 * dE + l2 * np.trace(dE, axis1=-2, axis2=-1)[..., None, None] * _EYE
    dP = dF @ S + F @ dS
    return dP.reshape(-1, 9, 9)


def corotational_energy(F, lam1, lam2):
    """``lam1 |F - R|^2 + lam2/2 tr(R^T F - I)^2`` with ``R`` the polar rotation."""
    F = np.asarray(F, dtype=float)
    Fb = F.reshape(-1, 3, 3)
    _, s, _ = svd_rotation_safe(Fb)
    t = np.sum(s, axis=-1) - 3.0
    val = lam1 * np.sum((s - 1.0) ** 2, axis=-1) + 0.5 * lam2 * t * t
    return val.reshape(F.shape[:-2])


def corotational_piola(F, lam1, lam2):
    F = np.asarray(F, dtype=float)
    Fb = F.reshape(-1, 3, 3)
    U, s, Vt = svd_rotation_safe(Fb)
    R = U @ Vt
    t = np.sum(s, axis=-1) - 3.0
    l1 = np.broadcast_to(np.asarray(lam1, dtype=float), t.shape)[:, None, None]
    l2 = np.broadcast_to(np.asarray(lam2, dtype=float), t.shape)[:, None, None]
    P = 2.0 * l1 * (Fb - R) + l2 * t[:, None, None] * R
    return P.reshape(F.shape)


def _fd_hessian(piola, F, lam1, lam2, h=1e-6):
    n = F.shape[0]
    H = np.empty((n, 9, 9))
    for j in range(9):
        Fp = F + h * _BASIS[j]
        Fm = F - h * _BASIS[j]
        H[:, :, j] = ((piola(Fp, lam1, lam2) - piola(Fm, lam1, lam2)) / (2 * h)).reshape(n, 9)
    return 0.5 * (H + np.swapaxes(H, 1, 2))


def _cofactor(F):
    c0, c1, c2 = F[..., :, 0], F[..., :, 1], F[..., :, 2]
    return np.stack([np.cross(c1, c2), np.cross(c2, c0), np.cross(c0, c1)], axis=-1)


def neohookean_energy(F, lam1, lam2):
    """Stable neo-Hookean energy with shear modulus ``lam1`` and bulk term ``lam2``.

    ``lam1/2 (|F|^2 - 3) + lam2/2 (J - a)^2 - lam2/2 (1 - a)^2``, ``a = 1 + lam1/lam2``,
    which vanishes and is stationary at ``F = I`` and stays finite for ``J <= 0``.
    """
    F = np.asarray(F, dtype=float)
    a = 1.0 + np.asarray(lam1) / np.asarray(lam2)
    J = np.linalg.det(F)
    Ic = np.sum(F * F, axis=(-2, -1))
    return 0.5 * lam1 * (Ic - 3.0) + 0.5 * lam2 * (J - 1.0) * (J + 1.0 - 2.0 * a)


def neohookean_piola(F, lam1, lam2):
    F = np.asarray(F, dtype=float)
    lam1 = np.asarray(lam1, dtype=float)
    lam2 = np.asarray(lam2, dtype=float)
    a = 1.0 + lam1 / lam2
    J = np.linalg.det(F)
    coef = (lam2 * (J - a))[..., None, None]
    return lam1[..., None, None] * F + coef * _cofactor(F)


def _neohookean_hessian(F, lam1, lam2):
    n = F.shape[0]
    a = 1.0 + lam1 / lam2
    J = np.linalg.det(F)
    C = _cofactor(F).reshape(n, 9)
    H = lam1[:, None, None] * np.eye(9)[None] + lam2[:, None, None] * C[:, :, None] * C[:, None, :]
    # derivative of the cofactor: d cof(F)[:, i] = cross products of column increments
    dcof = np.empty((n, 9, 9))
    for j in range(9):
        dF = np.broadcast_to(_BASIS[j], F.shape)
        c0, c1, c2 = F[..., :, 0], F[..., :, 1], F[..., :, 2]
        d0, d1, d2 = dF[..., :, 0], dF[..., :, 1], dF[..., :, 2]
        dC = np.stack([np.cross(d1, c2) + np.cross(c1, d2),
                       np.cross(d2, c0) + np.cross(c2, d0),
                       np.cross(d0, c1) + np.cross(c0, d1)], axis=-1)
        dcof[:, :, j] = dC.reshape(n, 9)
    H += (lam2 * (J - a))[:, None, None] * dcof
    return H


_ENERGY = {"stvk": stvk_energy, "corotational": corotational_energy,
           "neohookean": neohookean_energy}
_PIOLA = {"stvk": stvk_piola, "corotational": corotational_piola,
          "neohookean": neohookean_piola}


def energy_density(kind, F, lam1, lam2):
    return _ENERGY[_check_kind(kind)](F, lam1, lam2)


def piola(kind, F, lam1, lam2):
    return _PIOLA[_check_kind(kind)](F, lam1, lam2)


def energy_hessian(kind, F, lam1, lam2):
    """Batched 9x9 Hessians of the energy density (row-major flattening)."""
    kind = _check_kind(kind)
    F = np.asarray(F, dtype=float).reshape(-1, 3, 3)
    n = F.shape[0]
    lam1 = np.broadcast_to(np.asarray(lam1, dtype=float), (n,))
    lam2 = np.broadcast_to(np.asarray(lam2, dtype=float), (n,))
    if kind == "stvk":
        return _stvk_hessian(F, lam1, lam2)
    if kind == "neohookean":
        return _neohookean_hessian(F, lam1, lam2)
    return _fd_hessian(corotational_piola, F, lam1, lam2)


def _check_kind(kind):
    if kind not in ENERGY_KINDS:
        raise ValueError(f"unknown energy kind {kind!r}; expected one of {ENERGY_KINDS}")
    return kind


# -- local solves ---------------------------------------------------------------

def newton_prox(T, mu_eff, volume, lam1, lam2, energy, pk1, hessian, element_ids=None):
    """Batched damped Newton for ``v e(X) + mu_eff/2 |X - T|^2`` over ``(n, 3, 3)`` blocks.

    ``energy``, ``pk1`` and ``hessian`` take ``(X, lam1, lam2)`` batches. The
    Hessian only steers the search direction, so an approximate one is fine.
    """
    n = T.shape[0]
    mu_eff = np.broadcast_to(np.asarray(mu_eff, dtype=float), (n,)).copy()
    if np.any(mu_eff <= 0):
        raise ValueError("mu_eff must be positive")
    v = np.broadcast_to(np.asarray(volume, dtype=float), (n,))
    l1 = np.broadcast_to(np.asarray(lam1, dtype=float), (n,))
    l2 = np.broadcast_to(np.asarray(lam2, dtype=float), (n,))
    ids = np.arange(n) if element_ids is None else np.asarray(element_ids)

    def objective(F, idx):
        d = (F - T[idx]).reshape(len(idx), 9)
        return v[idx] * energy(F, l1[idx], l2[idx]) + 0.5 * mu_eff[idx] * np.sum(d * d, axis=1)

    def gradient(F, idx):
        return (v[idx, None, None] * pk1(F, l1[idx], l2[idx])
                + mu_eff[idx, None, None] * (F - T[idx])).reshape(len(idx), 9)

    def newton_step(F, idx, grad):
        H = v[idx, None, None] * hessian(F, l1[idx], l2[idx])
        H += mu_eff[idx, None, None] * np.eye(9)
        w, Q = np.linalg.eigh(H)
        w = np.maximum(w, 1e-6 * mu_eff[idx, None])
        return -np.einsum("nij,nj,nkj,nk->ni", Q, 1.0 / w, Q, grad)

    F = T.copy()
    tol = NEWTON_RTOL * (1.0 + mu_eff)
    active = np.arange(n)
    grad = gradient(F, active)
    gnorm = np.linalg.norm(grad, axis=1)
    active = active[gnorm > tol]
    grad = grad[gnorm > tol]
    for _ in range(NEWTON_MAX_ITERS):
        if active.size == 0:
            break
        Fa = F[active]
        step = newton_step(Fa, active, grad)
        f0 = objective(Fa, active)
        slope = np.sum(grad * step, axis=1)
        t = np.ones(active.size)
        Fn = Fa + step.reshape(-1, 3, 3)
        fn = objective(Fn, active)
        gnew = gradient(Fn, active)
        # near the minimum, energy differences drown in round-off, so a full
        # step that halves the gradient is accepted as well
        bad = ~((fn <= f0 + 1e-4 * slope)
                | (np.linalg.norm(gnew, axis=1) <= 0.5 * np.linalg.norm(grad, axis=1)))
        for _ in range(40):
            if not np.any(bad):
                break
            t[bad] *= 0.5
            Fn[bad] = Fa[bad] + (t[bad, None] * step[bad]).reshape(-1, 3, 3)
            fn[bad] = objective(Fn[bad], active[bad])
            bad = bad & ~(fn <= f0 + 1e-4 * t * slope)
        F[active] = Fn
        grad = gnew if np.all(t == 1.0) else gradient(Fn, active)
        gnorm = np.linalg.norm(grad, axis=1)
        keep = gnorm > tol[active]
        active = active[keep]
        grad = grad[keep]
    if active.size:
        raise ProxError("element prox did not converge within "
                        f"{NEWTON_MAX_ITERS} Newton iterations", int(ids[active[0]]))
    # polishing Newton steps take the converged iterate to round-off level;
    # a second one helps when T is in extended precision and H is not
    allidx = np.arange(n)
    grad = gradient(F, allidx)
    for _ in range(2):
        Fp = F + newton_step(F, allidx, grad).reshape(-1, 3, 3)
        gp = gradient(Fp, allidx)
        better = np.linalg.norm(gp, axis=1) < np.linalg.norm(grad, axis=1)
        if not np.any(better):
            break
        F[better] = Fp[better]
        grad[better] = gp[better]
    return F


def element_prox(F_target, mu_eff, volume, lam1, lam2, kind="stvk", limits=None,
                 element_ids=None):
    """Minimize ``v psi(F) + mu_eff/2 |F - F_target|^2`` for a batch of elements.

    Damped Newton from ``F_target`` with eigenvalue clamping for indefinite
    Hessians and Armijo backtracking. With ``limits = (lo, hi)`` the
    minimizer is projected onto the strain-limit set afterwards.

    Parameters
    ----------
    F_target : (3, 3) or (n, 3, 3) array
    mu_eff, volume, lam1, lam2 : float or (n,) arrays

    Returns
    -------
    F : array with the shape of ``F_target``

    Raises
    ------
    ProxError
        If some element does not converge within ``NEWTON_MAX_ITERS``.
    """
    kind = _check_kind(kind)
    T = np.asarray(F_target, dtype=float)
    single = T.ndim == 2
    T = T.reshape(-1, 3, 3)
    energy, pk1 = _ENERGY[kind], _PIOLA[kind]
    F = newton_prox(T, mu_eff, volume, lam1, lam2, energy, pk1,
                    lambda F, a, b: energy_hessian(kind, F, a, b), element_ids)
    if limits is not None:
        F = strain_limit_project(F, *limits)
    return F[0] if single else F


@dataclass(frozen=True)
class ElementState:
    """Deformation gradient of one element with its cached signed singular values."""

    F: np.ndarray
    singulars: np.ndarray

    @classmethod
    def from_F(cls, F):
        F = np.array(F, dtype=float).reshape(3, 3)
        _, s, _ = svd_rotation_safe(F[None])
        return cls(F, s[0])


# -- mesh model -------------------------------------------------------------------

@dataclass
class TetMeshModel:
    """Tetrahedral mesh with material data.

    Attributes
    ----------
    nodes : (n, 3) rest positions
    tets : (m, 4) vertex indices
    rest_inverse : (m, 3, 3) inverse rest edge matrices
    volume : (m,) rest volumes
    mass : (n,) lumped nodal masses
    dt : time step
    lam1, lam2 : (m,) material parameters
    energy_kind : one of ``ENERGY_KINDS``
    """

    nodes: np.ndarray
    tets: np.ndarray
    rest_inverse: np.ndarray
    volume: np.ndarray
    mass: np.ndarray
    dt: float
    lam1: np.ndarray
    lam2: np.ndarray
    energy_kind: str = "stvk"

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def n_tets(self):
        return self.tets.shape[0]

    def deformation_operator(self):
        """Sparse ``D`` with ``(D x)[9 i: 9 i + 9] = F_i`` row-major."""
        m = self.n_tets
        Dm_inv = self.rest_inverse
        rows, cols, vals = [], [], []
        # F_ab = sum_c (p_{c+1,a} - p_{0,a}) Dm_inv[c, b]
        for a in range(3):
            for b in range(3):
                r = np.arange(m) * 9 + a * 3 + b
                for c in range(3):
                    rows.append(r)
                    cols.append(self.tets[:, c + 1] * 3 + a)
                    vals.append(Dm_inv[:, c, b])
                rows.append(r)
                cols.append(self.tets[:, 0] * 3 + a)
                vals.append(-Dm_inv[:, :, b].sum(axis=1))
        D = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(9 * m, 3 * self.n_nodes))
        return D.tocsr()

    def deformation_gradients(self, x):
        P = np.asarray(x, dtype=float).reshape(-1, 3)[self.tets]
        Ds = np.swapaxes(P[:, 1:] - P[:, :1], 1, 2)
        return Ds @ self.rest_inverse

    def element_weights(self):
        """Diagonal entries of ``W`` per element: ``sqrt(v (2 lam1 + lam2))``."""
        return np.sqrt(self.volume * (2.0 * self.lam1 + self.lam2))

    def elastic_energy(self, x):
        F = self.deformation_gradients(x)
        return float(np.sum(self.volume * _ENERGY[self.energy_kind](F, self.lam1, self.lam2)))


def make_model(nodes, tets, density=1000.0, dt=1.0 / 30.0, lam1=1e4, lam2=1e4,
               energy_kind="stvk"):
    """Build a ``TetMeshModel`` from rest positions and tetrahedra.

    Tetrahedra with negative orientation are re-ordered; degenerate ones
    raise ``ValueError``.
    """
    nodes = np.asarray(nodes, dtype=float)
    tets = np.array(tets, dtype=np.intp)
    if nodes.ndim != 2 or nodes.shape[1] != 3:
        raise ValueError("nodes must have shape (n, 3)")
    if tets.ndim != 2 or tets.shape[1] != 4:
        raise ValueError("tets must have shape (m, 4)")
    if tets.size and (tets.min() < 0 or tets.max() >= nodes.shape[0]):
        raise ValueError("tet indices out of range")
    _check_kind(energy_kind)
    P = nodes[tets]
    Dm = np.swapaxes(P[:, 1:] - P[:, :1], 1, 2)
    det = np.linalg.det(Dm)
    scale = np.max(np.abs(nodes)) + 1.0
    if np.any(np.abs(det) <= 1e-12 * scale ** 3):
        bad = int(np.argmin(np.abs(det)))
        raise ValueError(f"degenerate tetrahedron {bad}")
    neg = det < 0
    if np.any(neg):
        tets[neg] = tets[neg][:, [0, 2, 1, 3]]
        P = nodes[tets]
        Dm = np.swapaxes(P[:, 1:] - P[:, :1], 1, 2)
        det = np.linalg.det(Dm)
    volume = det / 6.0
    mass = np.zeros(nodes.shape[0])
    np.add.at(mass, tets.ravel(), np.repeat(density * volume / 4.0, 4))
    if np.any(mass <= 0):
        raise ValueError("every node must belong to at least one tetrahedron")
    m = tets.shape[0]
    return TetMeshModel(nodes=nodes, tets=tets, rest_inverse=np.linalg.inv(Dm),
                        volume=volume, mass=mass, dt=float(dt),
                        lam1=np.broadcast_to(np.asarray(lam1, float), (m,)).copy(),
                        lam2=np.broadcast_to(np.asarray(lam2, float), (m,)).copy(),
                        energy_kind=energy_kind)


def lame_parameters(young, poisson):
    """Lame parameters ``(mu, lambda)`` from Young's modulus and Poisson ratio."""
    mu = young / (2.0 * (1.0 + poisson))
    lam = young * poisson / ((1.0 + poisson) * (1.0 - 2.0 * poisson))
    return mu, lam


def box_tet_mesh(nx, ny, nz, h=0.1, origin=(0.0, 0.0, 0.0)):
    """Regular grid of ``nx*ny*nz`` cubes, each split into six tetrahedra."""
    ix, iy, iz = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1),
                             indexing="ij")
    nodes = np.column_stack([ix.ravel(), iy.ravel(), iz.ravel()]) * h + np.asarray(origin)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    corner = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (1, 1, 0),
              (0, 0, 1), (1, 0, 1), (0, 1, 1), (1, 1, 1)]
    # Kuhn split along the main diagonal 0-7
    kuhn = [(0, 1, 3, 7), (0, 1, 5, 7), (0, 2, 3, 7), (0, 2, 6, 7), (0, 4, 5, 7), (0, 4, 6, 7)]
    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                ids = [vid(i + a, j + b, k + c) for a, b, c in corner]
                tets.extend([[ids[t] for t in tet] for tet in kuhn])
    return nodes, np.array(tets, dtype=np.intp)


def boundary_faces(tets):
    """Triangles that belong to exactly one tetrahedron, oriented outward."""
    faces = np.concatenate([tets[:, [0, 2, 1]], tets[:, [0, 1, 3]],
                            tets[:, [1, 2, 3]], tets[:, [0, 3, 2]]])
    key = np.sort(faces, axis=1)
    _, idx, counts = np.unique(key, axis=0, return_index=True, return_counts=True)
    return faces[np.sort(idx[counts == 1])]


# -- g oracle ---------------------------------------------------------------------

class ElasticOracle(GOracle):
    """``g(z) = sum_i v_i psi(F_i)`` plus optional strain-limit indicators.

    ``z`` stacks row-major deformation gradients. The prox expects weights
    that are constant within each element block.
    """

    bounded_below = True

    def __init__(self, model, limits=None, limit_tol=1e-9):
        self.model = model
        self.limits = None if limits is None else (float(limits[0]), float(limits[1]))
        self.limit_tol = limit_tol
        self.smooth = self.limits is None
        self.domain_affine = self.limits is None
        self.has_indicator = self.limits is not None
        # StVK and stable neo-Hookean are bounded below but not convex
        self.bounded_below = True

    def _F(self, z):
        return np.asarray(z, dtype=float).reshape(-1, 3, 3)

    def value(self, z):
        F = self._F(z)
        m = self.model
        if self.limits is not None:
            _, s, _ = svd_rotation_safe(F)
            lo, hi = self.limits
            if np.any(s < lo - self.limit_tol) or np.any(s > hi + self.limit_tol):
                return np.inf
        return float(np.sum(m.volume * _ENERGY[m.energy_kind](F, m.lam1, m.lam2)))

    def grad(self, z):
        if self.limits is not None:
            return None
        m = self.model
        P = _PIOLA[m.energy_kind](self._F(z), m.lam1, m.lam2)
        return (m.volume[:, None, None] * P).ravel()

    def prox(self, target, weights):
        m = self.model
        mu_eff = np.asarray(weights, dtype=float).reshape(-1, 9)[:, 0]
        F = element_prox(self._F(target), mu_eff, m.volume, m.lam1, m.lam2,
                         m.energy_kind, self.limits)
        return F.ravel()


def build_problem(model, x_tilde, strain_limits=None, collision_plane=None,
                  collision_nodes=None, use_scaling=True):
    """Assemble the time-step problem ``A = W D``, ``B = W``, ``c = 0``, ``G = M/dt^2``.

    Parameters
    ----------
    model : TetMeshModel
    x_tilde : (3 n,) predicted positions
    strain_limits : (lo, hi), optional
        Clamp singular values of every deformation gradient.
    collision_plane : (normal, offset), optional
        Keeps ``collision_nodes`` (default all nodes) in the half-space
        ``normal . p >= offset`` through extra z blocks of node positions.
    use_scaling : bool
        ``False`` sets ``W = I``.
    """
    x_tilde = np.asarray(x_tilde, dtype=float)
    if x_tilde.shape != (3 * model.n_nodes,):
        raise ValueError(f"x_tilde must have length {3 * model.n_nodes}")
    D = model.deformation_operator()
    m = model.n_tets
    w_el = model.element_weights() if use_scaling else np.ones(m)
    w = np.repeat(w_el, 9)
    blocks = [(np.arange(9 * m), ElasticOracle(model, strain_limits))]
    A_blocks = [D]
    if collision_plane is not None:
        nodes = np.arange(model.n_nodes) if collision_nodes is None else \
            np.asarray(collision_nodes, dtype=np.intp)
        cols = (nodes[:, None] * 3 + np.arange(3)).ravel()
        S = sp.csr_matrix((np.ones(cols.size), (np.arange(cols.size), cols)),
                          shape=(cols.size, 3 * model.n_nodes))
        A_blocks.append(S)
        wc = np.repeat(np.sqrt(model.mass[nodes]) / model.dt, 3) if use_scaling else \
            np.ones(cols.size)
        w = np.concatenate([w, wc])
        normal, offset = collision_plane
        blocks.append((np.arange(9 * m, 9 * m + cols.size), HalfspaceOracle(normal, offset)))
    A = sp.diags(w) @ sp.vstack(A_blocks).tocsr()
    G = sp.diags(np.repeat(model.mass, 3) / model.dt ** 2)
    oracle = blocks[0][1] if len(blocks) == 1 else BlockOracle(blocks)
    prob = SeparableProblem(A, sp.diags(w), np.zeros(A.shape[0]), G, x_tilde, oracle,
                            name=f"elastic-{model.energy_kind}")
    prob.model = model
    prob.D = D
    return prob


def initial_state_arrays(problem, x0):
    """``(x0, z0, u0)`` with ``z0 = B^-1 (A x0 - c)`` and ``u0 = 0``."""
    x0 = np.asarray(x0, dtype=float)
    z0 = problem.B_inv(problem.A @ x0 - problem.c)
    return x0, z0, np.zeros(problem.q)


# -- scenarios -------------------------------------------------------------------

def bar_scenario(kind="stvk", dims=(6, 2, 2), h=0.1, young=2e5, poisson=0.3,
                 density=1000.0, dt=1.0 / 30.0, pull=None, gravity=9.8):
    """Bar stretched by opposite end forces under gravity.

    Returns ``(model, x_tilde, x0)`` for one implicit Euler step from rest.
    """
    nodes, tets = box_tet_mesh(*dims, h=h)
    lam1, lam2 = lame_parameters(young, poisson)
    model = make_model(nodes, tets, density, dt, lam1, lam2, kind)
    x0 = nodes.ravel().copy()
    force = np.zeros_like(nodes)
    force[:, 1] -= gravity * model.mass
    length = dims[0] * h
    if pull is None:
        pull = 0.002 * young * dims[1] * dims[2] * h * h
    left = np.isclose(nodes[:, 0], 0.0)
    right = np.isclose(nodes[:, 0], length)
    force[left, 0] -= pull / left.sum()
    force[right, 0] += pull / right.sum()
    x_tilde = x0 + dt * dt * (force / model.mass[:, None]).ravel()
    return model, x_tilde, x0


def flag_scenario(kind="corotational", dims=(6, 4, 1), h=0.1, young=1e5, poisson=0.3,
                  density=500.0, dt=1.0 / 30.0, wind=(0.0, 0.0, 60.0)):
    """Thin slab pushed by wind, to be solved with strain limits."""
    nodes, tets = box_tet_mesh(*dims, h=h)
    lam1, lam2 = lame_parameters(young, poisson)
    model = make_model(nodes, tets, density, dt, lam1, lam2, kind)
    x0 = nodes.ravel().copy()
    force = np.zeros_like(nodes)
    force += np.asarray(wind) * (nodes[:, :1] / (dims[0] * h)) ** 2 * model.mass[:, None]
    x_tilde = x0 + dt * dt * (force / model.mass[:, None]).ravel()
    return model, x_tilde, x0


def collision_scenario(kind="stvk", dims=(4, 2, 2), h=0.1, young=1e5, poisson=0.3,
                       density=1000.0, dt=1.0 / 30.0, height=0.01, speed=2.0):
    """Bar falling onto the floor ``y >= 0``; returns ``(model, x_tilde, x0, plane)``."""
    nodes, tets = box_tet_mesh(*dims, h=h, origin=(0.0, height, 0.0))
    lam1, lam2 = lame_parameters(young, poisson)
    model = make_model(nodes, tets, density, dt, lam1, lam2, kind)
    x0 = nodes.ravel().copy()
    vel = np.zeros_like(nodes)
    vel[:, 1] = -speed
    vel[:, 1] -= speed * nodes[:, 0] / (dims[0] * h)
    x_tilde = x0 + dt * vel.ravel()
    plane = (np.array([0.0, 1.0, 0.0]), 0.0)
    return model, x_tilde, x0, plane
