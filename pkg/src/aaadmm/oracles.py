"""Concrete oracles for common choices of g."""

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import GOracle


class ZeroOracle(GOracle):
    """g(z) = 0."""

    smooth = True
    domain_affine = True
    range_affine = True

    def value(self, z):
        return 0.0

    def grad(self, z):
        return np.zeros_like(np.asarray(z, dtype=float))

    def prox(self, target, weights):
        return np.array(target, dtype=float)

    def prox_general(self, v, mu, B):
        return spla.spsolve(sp.csc_matrix(B), v)


class QuadraticOracle(GOracle):
    """g(z) = 1/2 sum_j h_j (z_j - t_j)^2 with h_j >= 0.

    Parameters
    ----------
    h : float or array
        Non-negative curvature per coordinate.
    t : array
        Center of the quadratic.
    """

    smooth = True
    domain_affine = True
    range_affine = True
    quadratic = True

    def __init__(self, h, t):
        self.t = np.asarray(t, dtype=float)
        self.h = np.broadcast_to(np.asarray(h, dtype=float), self.t.shape).copy()
        if np.any(self.h < 0):
            raise ValueError("h must be non-negative")
        self.strictly_convex = bool(np.all(self.h > 0))

    def value(self, z):
        d = z - self.t
        return 0.5 * float(np.sum(self.h * d * d))

    def grad(self, z):
        return self.h * (z - self.t)

    def prox(self, target, weights):
        return (self.h * self.t + weights * target) / (self.h + weights)

    def prox_general(self, v, mu, B):
        B = sp.csr_matrix(B)
        M = sp.diags(self.h) + mu * (B.T @ B)
        return spla.spsolve(sp.csc_matrix(M), self.h * self.t + mu * (B.T @ v))


class ProjectionOracle(GOracle):
    """Indicator of a set given by a Euclidean projector on fixed-size blocks.

    ``projector`` maps an array of shape ``(n_blocks, block_size)`` to the
    projected array. Weights must be constant inside each block, which holds
    for every caller in this package.
    """

    has_indicator = True

    def __init__(self, projector, block_size, tol=1e-9, affine=False):
        self.projector = projector
        self.block_size = int(block_size)
        self.tol = tol
        if affine:
            self.has_indicator = False
            self.domain_affine = True

    def _blocks(self, z):
        z = np.asarray(z, dtype=float)
        if z.size % self.block_size:
            raise ValueError(f"length {z.size} is not a multiple of {self.block_size}")
        return z.reshape(-1, self.block_size)

    def value(self, z):
        blocks = self._blocks(z)
        proj = self.projector(blocks)
        gap = np.max(np.abs(proj - blocks)) if blocks.size else 0.0
        scale = 1.0 + (np.max(np.abs(blocks)) if blocks.size else 0.0)
        return 0.0 if gap <= self.tol * scale else np.inf

    def prox(self, target, weights):
        return self.projector(self._blocks(target)).ravel()


class HalfspaceOracle(ProjectionOracle):
    """Indicator of ``{p : n . p >= offset}`` applied to each 3-vector block."""

    def __init__(self, normal, offset=0.0, tol=1e-9):
        normal = np.asarray(normal, dtype=float)
        self.normal = normal / np.linalg.norm(normal)
        self.offset = float(offset)
        super().__init__(self._project, 3, tol=tol)

    def _project(self, P):
        from .problems.elastic import halfspace_project
        return halfspace_project(P, (self.normal, self.offset))


class GroupL2Oracle(GOracle):
    """g(z) = lam * sum_i |z_i| over consecutive blocks of length ``block_size``."""

    def __init__(self, lam, block_size=2):
        if lam < 0:
            raise ValueError("lam must be non-negative")
        self.lam = float(lam)
        self.block_size = int(block_size)

    def value(self, z):
        return self.lam * float(np.sum(np.linalg.norm(
            np.asarray(z).reshape(-1, self.block_size), axis=1)))

    def prox(self, target, weights):
        from .problems.imaging import z2_block_prox
        V = np.asarray(target, dtype=float).reshape(-1, self.block_size)
        w = np.asarray(weights, dtype=float).reshape(-1, self.block_size)[:, 0]
        return z2_block_prox(V, self.lam, w).ravel()


class BlockOracle(GOracle):
    """Sum of oracles acting on disjoint index sets covering ``0..q-1``."""

    def __init__(self, blocks, size=None):
        self.blocks = [(np.asarray(idx, dtype=np.intp), orc) for idx, orc in blocks]
        covered = np.concatenate([idx for idx, _ in self.blocks]) if self.blocks else \
            np.zeros(0, dtype=np.intp)
        size = covered.size if size is None else size
        if covered.size != size or np.unique(covered).size != size or \
                (size and (covered.min() < 0 or covered.max() >= size)):
            raise ValueError("block index sets must partition 0..q-1")
        self.size = size
        oracles = [orc for _, orc in self.blocks]
        self.bounded_below = all(o.bounded_below for o in oracles)
        self.smooth = all(o.smooth for o in oracles)
        self.domain_affine = all(o.domain_affine for o in oracles)
        self.strictly_convex = all(o.strictly_convex for o in oracles)
        self.range_affine = all(o.range_affine for o in oracles)
        self.has_indicator = any(o.has_indicator for o in oracles)
        self.quadratic = all(o.quadratic or isinstance(o, ZeroOracle) for o in oracles)

    def value(self, z):
        total = 0.0
        for idx, orc in self.blocks:
            total += orc.value(z[idx])
            if not np.isfinite(total):
                return np.inf
        return total

    def grad(self, z):
        out = np.empty(self.size)
        for idx, orc in self.blocks:
            gi = orc.grad(z[idx])
            if gi is None:
                return None
            out[idx] = gi
        return out

    def prox(self, target, weights):
        out = np.empty(self.size)
        for idx, orc in self.blocks:
            out[idx] = orc.prox(target[idx], weights[idx])
        return out
