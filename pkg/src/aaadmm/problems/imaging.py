"""TV-regularized deconvolution and a quadratic gradient-fitting problem.

Images are row-major ``(height, width)`` float arrays. Gradients are forward
differences with a zero difference at the last row and column, stored
interleaved per pixel as ``(d/dcol, d/drow)``.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..core import SeparableProblem
from ..oracles import BlockOracle, GroupL2Oracle, QuadraticOracle


@dataclass
class ImageGrid:
    """Scalar image with a convolution stencil."""

    values: np.ndarray
    kernel: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.kernel = np.asarray(self.kernel, dtype=float)
        if self.values.ndim != 2 or min(self.values.shape) == 0:
            raise ValueError("values must be a non-empty 2-D array")
        if not np.isfinite(self.kernel.sum()):
            raise ValueError("kernel must be finite")

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


def convolution_matrix(shape, kernel):
    """Sparse correlation with ``kernel`` under replicate padding.

    ``(K x)[i, j] = sum_{a, b} kernel[a, b] x[clip(i + a - ra), clip(j + b - rb)]``
    with ``ra, rb`` the kernel half sizes (odd kernel dimensions required).
    """
    h, w = shape
    kernel = np.asarray(kernel, dtype=float)
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel dimensions must be odd")
    if kh > 2 * h + 1 or kw > 2 * w + 1:
        raise ValueError("kernel does not fit the image")
    ra, rb = kh // 2, kw // 2
    I, J = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    rows, cols, vals = [], [], []
    for a in range(kh):
        for b in range(kw):
            if kernel[a, b] == 0:
                continue
            ii = np.clip(I + a - ra, 0, h - 1)
            jj = np.clip(J + b - rb, 0, w - 1)
            rows.append((I * w + J).ravel())
            cols.append((ii * w + jj).ravel())
            vals.append(np.full(h * w, kernel[a, b]))
    K = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(h * w, h * w))
    return K.tocsr()


def gradient_matrix(shape):
    """Forward differences ``(2 h w, h w)``, per pixel ``(x[i, j+1] - x[i, j], x[i+1, j] - x[i, j])``."""
    h, w = shape

    def diff(n):
        d = sp.diags([-np.ones(n), np.ones(n - 1)], [0, 1], shape=(n, n)).tolil()
        d[n - 1, n - 1] = 0.0
        return d.tocsr()

    Dcol = sp.kron(sp.identity(h), diff(w))
    Drow = sp.kron(diff(h), sp.identity(w))
    n = h * w
    idx = np.arange(n)
    P = sp.csr_matrix((np.ones(2 * n), (np.r_[2 * idx, 2 * idx + 1], np.r_[idx, n + idx])),
                      shape=(2 * n, 2 * n))
    return (P @ sp.vstack([Dcol, Drow])).tocsr()


def z1_prox(v, f, lam1, mu):
    """Minimizer of ``lam1 |z - f|^2 + mu/2 |z - v|^2``."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    return (2.0 * lam1 * np.asarray(f) + mu * np.asarray(v)) / (2.0 * lam1 + mu)


def z2_block_prox(V, lam2, mu):
    """Block soft-threshold ``max(0, 1 - (lam2/mu)/|v|) v`` for each row of ``V``.

    ``mu`` may be a scalar or one value per row.
    """
    V = np.asarray(V, dtype=float)
    single = V.ndim == 1
    Vb = V[None] if single else V
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise ValueError("mu must be positive")
    norm = np.linalg.norm(Vb, axis=1)
    thresh = lam2 / mu
    scale = np.where(norm > thresh, 1.0 - thresh / np.where(norm > 0, norm, 1.0), 0.0)
    out = scale[:, None] * Vb
    return out[0] if single else out


def build_deconv_problem(observed, kernel, lam1, lam2):
    """``min lam1 |z1 - f|^2 + lam2 sum |z2_ij|  s.t.  K x = z1, grad x = z2``.

    ``G = 0`` and ``x_tilde = 0``; the x-step matrix ``mu (K^T K + grad^T grad)``
    is positive definite whenever the kernel has a nonzero sum.
    """
    f = np.asarray(observed, dtype=float)
    K = convolution_matrix(f.shape, kernel)
    D = gradient_matrix(f.shape)
    n = f.size
    A = sp.vstack([K, D]).tocsr()
    oracle = BlockOracle([(np.arange(n), QuadraticOracle(2.0 * lam1, f.ravel())),
                          (np.arange(n, 3 * n), GroupL2Oracle(lam2, 2))])
    prob = SeparableProblem(A, sp.identity(3 * n, format="csr"), np.zeros(3 * n),
                            sp.csr_matrix((n, n)), np.zeros(n), oracle,
                            allow_singular_G=True, name="deconvolution")
    prob.image_shape = f.shape
    return prob


def build_quadratic_grad_problem(lam, target, shape, delta=1e-8, curvature=1.0):
    """``min lam |grad x|^2 + delta/2 |x|^2 + g(z)  s.t.  grad x = z``.

    ``g(z) = curvature/2 |z - target|^2``. ``delta`` makes f strongly convex;
    it only pins the free constant of x.
    """
    D = gradient_matrix(shape)
    n = shape[0] * shape[1]
    target = np.asarray(target, dtype=float).ravel()
    if target.size != 2 * n:
        raise ValueError(f"target must have {2 * n} entries")
    if curvature < 0:
        raise ValueError("g must be positive semidefinite")
    G = (2.0 * lam * (D.T @ D) + delta * sp.identity(n)).tocsr()
    prob = SeparableProblem(D, sp.identity(2 * n, format="csr"), np.zeros(2 * n), G,
                            np.zeros(n), QuadraticOracle(curvature, target), name="quadratic-grad")
    prob.image_shape = shape
    return prob


def checkerboard(size=16, block=4):
    I, J = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    return (((I // block) + (J // block)) % 2).astype(float)


def gaussian_kernel(radius=1, sigma=1.0):
    t = np.arange(-radius, radius + 1)
    k = np.exp(-(t[:, None] ** 2 + t[None, :] ** 2) / (2 * sigma ** 2))
    return k / k.sum()


def deconv_scenario(size=16, block=4, radius=1, sigma=1.0, noise=0.01, seed=0,
                    lam1=50.0, lam2=0.5):
    """Blurred noisy checkerboard; returns ``(problem, clean, observed)``."""
    clean = checkerboard(size, block)
    kernel = gaussian_kernel(radius, sigma)
    K = convolution_matrix(clean.shape, kernel)
    rng = np.random.default_rng(seed)
    observed = (K @ clean.ravel()).reshape(clean.shape) + noise * rng.standard_normal(clean.shape)
    return build_deconv_problem(observed, kernel, lam1, lam2), clean, observed
