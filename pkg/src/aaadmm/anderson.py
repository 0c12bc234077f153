"""Windowed type-II Anderson acceleration."""

import numpy as np

from ._validation import check_vector


class AndersonWindow:
    """Sliding window of fixed-point iterates and their images.

    Stores up to ``m + 1`` pairs ``(q, G(q))`` and hence up to ``m``
    consecutive residual differences. The Gram matrix of those differences is
    updated incrementally, so each push costs ``O(m n)``.

    Parameters
    ----------
    m : int
        Maximum number of residual differences used in the least-squares fit.
        ``m = 0`` disables acceleration.
    beta : float
        Mixing parameter. ``beta = 1`` uses images only.
    reg : float
        Relative Tikhonov regularization added to the Gram matrix,
        scaled by its mean diagonal entry (``solver="normal"`` only).
    solver : {"lstsq", "normal"}
        ``"lstsq"`` solves the fit from the stored differences with an SVD;
        ``"normal"`` solves the regularized normal equations.

    Examples
    --------
    >>> w = AndersonWindow(m=1)
    >>> w.push(np.array([0.0]), np.array([1.0]))
    >>> w.push(np.array([1.0]), np.array([1.5]))
    >>> w.accelerate()
    array([2.])
    """

    def __init__(self, m=6, beta=1.0, reg=1e-10, solver="lstsq"):
        if int(m) != m or m < 0:
            raise ValueError(f"m must be a non-negative integer, got {m}")
        if not 0.0 < beta <= 1.0:
            raise ValueError(f"beta must lie in (0, 1], got {beta}")
        self.m = int(m)
        self.beta = float(beta)
        self.reg = float(reg)
        if solver not in ("lstsq", "normal"):
            raise ValueError(f"unknown solver {solver!r}")
        self.solver = solver
        self.reset()

    def reset(self):
        self._q = None
        self._g = None
        self._f = None
        self._extra = None
        self._dq, self._dg, self._df, self._dextra = [], [], [], []
        self.normal_matrix = np.zeros((0, 0))
        self.size = 0
        self.theta = np.zeros(0)

    @property
    def n_diffs(self):
        return len(self._df)

    def push(self, q, g_of_q, extra=None):
        """Record an iterate ``q`` and its image ``G(q)``.

        ``extra`` is an optional companion vector combined with the same
        coefficients as the images (used to carry a variable that is a fixed
        linear function of ``q``).
        """
        q = check_vector(q, "q", allow_nonfinite=True)
        g = check_vector(g_of_q, "g_of_q", size=q.size, allow_nonfinite=True)
        if self._q is not None and q.size != self._q.size:
            raise ValueError(f"dimension changed from {self._q.size} to {q.size}")
        if (extra is None) != (self._extra is None) and self.size:
            raise ValueError("extra must be given on every push or on none")
        f = g - q
        if self._f is not None and self.m > 0:
            df = f - self._f
            self._dq.insert(0, q - self._q)
            self._dg.insert(0, g - self._g)
            self._df.insert(0, df)
            if extra is not None:
                self._dextra.insert(0, extra - self._extra)
            if len(self._df) > self.m:
                for hist in (self._dq, self._dg, self._df, self._dextra):
                    if len(hist) > self.m:
                        hist.pop()
            k = len(self._df)
            M = np.empty((k, k))
            M[1:, 1:] = self.normal_matrix[:k - 1, :k - 1]
            cross = np.array([d @ df for d in self._df])
            M[0, :] = cross
            M[:, 0] = cross
            self.normal_matrix = M
        self._q, self._g, self._f = q, g, f
        self._extra = None if extra is None else np.array(extra, dtype=float)
        self.size = min(self.size + 1, self.m + 1)

    def coefficients(self):
        """Least-squares coefficients ``theta`` for the stored differences."""
        k = self.n_diffs
        if k == 0:
            return np.zeros(0)
        if self.solver == "normal":
            M = self.normal_matrix
            rhs = np.array([d @ self._f for d in self._df])
            lam = self.reg * np.trace(M) / k
            return np.linalg.lstsq(M + lam * np.eye(k), rhs, rcond=None)[0]
        # Orthogonal solve on the difference matrix avoids squaring its
        # condition number; the SVD cutoff gives the least-norm theta.
        D = np.column_stack(self._df)
        return np.linalg.lstsq(D, self._f, rcond=None)[0]

    def accelerate(self, with_extra=False):
        """Return the accelerated iterate (and the combined extra vector if requested)."""
        if self._g is None:
            raise RuntimeError("accelerate() called on an empty window")
        theta = self.coefficients()
        self.theta = theta
        out = self._g.copy()
        for t, dg in zip(theta, self._dg):
            out -= t * dg
        if self.beta != 1.0:
            qmix = self._q.copy()
            for t, dq in zip(theta, self._dq):
                qmix -= t * dq
            out = (1.0 - self.beta) * qmix + self.beta * out
        if not with_extra:
            return out
        if self._extra is None:
            raise RuntimeError("no extra history was recorded")
        ext = self._extra.copy()
        for t, de in zip(theta, self._dextra):
            ext -= t * de
        return out, ext
