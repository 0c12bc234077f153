"""Mesh optimization with soft and hard constraints.

Vertex positions ``x`` (flattened ``(n, 3)``) minimize a fairness term
``1/2 |L (x - x_tilde)|^2`` plus weighted soft-constraint penalties, subject
to hard constraints ``A_j x in C_j``. Every constraint owns a block of z; hard
blocks are tied to ``A_j x`` with a dual variable, soft blocks enter the
objective as ``w_i/2 |A_i x - z_i|^2`` and are updated by projection in the
z-step.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from ..core import SeparableProblem
from ..oracles import BlockOracle, ProjectionOracle

logger = logging.getLogger(__name__)

ANGLE_RANGE = (np.pi / 4, 3 * np.pi / 4)
_DEGENERATE = 1e-12


# -- projectors ---------------------------------------------------------------

def planarity_project(points):
    """Project mean-centered points onto their best-fit plane through the origin.

    Parameters
    ----------
    points : (k, 3) or (n, k, 3) array, ``k >= 4``

    Collinear or coincident point sets are returned unchanged.
    """
    P = np.asarray(points, dtype=float)
    single = P.ndim == 2
    Pb = P[None] if single else P
    if Pb.shape[1] < 3:
        raise ValueError("planarity needs at least three points")
    _, s, Vt = np.linalg.svd(Pb, full_matrices=False)
    normal = Vt[:, -1, :]
    out = Pb - np.einsum("nk,nj->nkj", np.einsum("nkj,nj->nk", Pb, normal), normal)
    degenerate = s[:, 1] <= _DEGENERATE * np.maximum(s[:, 0], 1e-300)
    out[degenerate] = Pb[degenerate]
    return out[0] if single else out


def edge_length_project(p, q, length):
    """Move ``p`` and ``q`` symmetrically so that ``|p - q| = length``.

    Coincident points are separated along the x axis (``q`` on the positive side).
    Accepts single points or ``(n, 3)`` stacks.
    """
    if not np.all(np.asarray(length) > 0):
        raise ValueError("length must be positive")
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    mid = 0.5 * (p + q)
    d = q - p
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    tiny = n[..., 0] <= _DEGENERATE
    safe = np.where(n > _DEGENERATE, n, 1.0)
    e = d / safe
    if np.any(tiny):
        e = np.where(tiny[..., None], np.array([1.0, 0.0, 0.0]), e)
    half = 0.5 * np.asarray(length, dtype=float)[..., None] if np.ndim(length) else 0.5 * length
    return mid - half * e, mid + half * e


def _unit(v):
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v / np.where(n > 0, n, 1.0), n[..., 0]


def _any_perpendicular(v):
    # deterministic perpendicular: cross with the axis least aligned with v
    axis = np.eye(3)[np.argmin(np.abs(v), axis=-1)]
    return _unit(np.cross(v, axis))[0]


def angle_range_project_edges(e1, e2, lo=ANGLE_RANGE[0], hi=ANGLE_RANGE[1]):
    """Clamp the angle between edge vectors by rotating both about their bisector.

    Returns ``(e1', e2', degenerate)``; lengths are preserved and
    zero-length edges are left unchanged with ``degenerate`` set.
    """
    e1 = np.atleast_2d(np.asarray(e1, dtype=float))
    e2 = np.atleast_2d(np.asarray(e2, dtype=float))
    u1, n1 = _unit(e1)
    u2, n2 = _unit(e2)
    degenerate = (n1 <= _DEGENERATE) | (n2 <= _DEGENERATE)
    cross = np.cross(u1, u2)
    theta = np.arctan2(np.linalg.norm(cross, axis=-1), np.sum(u1 * u2, axis=-1))
    target = np.clip(theta, lo, hi)
    change = (target != theta) & ~degenerate
    out1, out2 = e1.copy(), e2.copy()
    if np.any(change):
        a, b = u1[change], u2[change]
        bis, bn = _unit(a + b)
        opposite = bn <= 1e-12
        if np.any(opposite):
            bis[opposite] = _any_perpendicular(a[opposite])
        perp = a - np.sum(a * bis, axis=-1, keepdims=True) * bis
        perp, pn = _unit(perp)
        collapsed = pn <= 1e-12
        if np.any(collapsed):
            perp[collapsed] = _any_perpendicular(bis[collapsed])
        half = 0.5 * target[change][:, None]
        out1[change] = n1[change, None] * (np.cos(half) * bis + np.sin(half) * perp)
        out2[change] = n2[change, None] * (np.cos(half) * bis - np.sin(half) * perp)
    return out1, out2, degenerate


def angle_range_project(a, b, c, lo=ANGLE_RANGE[0], hi=ANGLE_RANGE[1]):
    """Clamp the angle at ``b`` of the corner ``a-b-c``; ``b`` stays fixed."""
    b = np.asarray(b, dtype=float)
    e1, e2, _ = angle_range_project_edges(np.asarray(a) - b, np.asarray(c) - b, lo, hi)
    if np.ndim(b) == 1:
        return b + e1[0], b.copy(), b + e2[0]
    return b + e1, b.copy(), b + e2


class TriangleSurface:
    """Triangulated reference surface with exact closest-point queries.

    Candidate triangles come from a k-d tree over centroids; a point whose
    candidates cannot be certified by the centroid-radius bound falls back to
    all triangles, so results equal brute force.
    """

    def __init__(self, vertices, triangles, k=8):
        self.tri = np.asarray(vertices, dtype=float)[np.asarray(triangles, dtype=np.intp)]
        self.centroids = self.tri.mean(axis=1)
        self.radius = float(np.max(np.linalg.norm(self.tri - self.centroids[:, None], axis=2)))
        self.k = min(int(k), len(self.tri))
        self._tree = cKDTree(self.centroids)

    def closest_points(self, points):
        P = np.asarray(points, dtype=float).reshape(-1, 3)
        dist_c, idx = self._tree.query(P, k=self.k)
        dist_c = dist_c.reshape(len(P), -1)
        idx = idx.reshape(len(P), -1)
        out = closest_point_on_triangles(P, self.tri[idx])
        d_best = np.linalg.norm(out - P, axis=1)
        unsure = (dist_c[:, -1] - self.radius < d_best) & (self.k < len(self.tri))
        if np.any(unsure):
            out[unsure] = closest_point_on_triangles(P[unsure], self.tri)
        return out


def closest_point_on_triangles(points, tri_vertices):
    """Closest points on a triangle soup.

    Parameters
    ----------
    points : (p, 3)
    tri_vertices : (t, 3, 3) triangle corner positions shared by all points,
        or (p, t, 3, 3) candidate triangles per point

    Returns
    -------
    (p, 3) closest points
    """
    P = np.asarray(points, dtype=float)[:, None, :]
    tri_vertices = np.asarray(tri_vertices, dtype=float)
    if tri_vertices.ndim == 3:
        tri_vertices = tri_vertices[None]
    A, B, C = (tri_vertices[:, :, i, :] for i in range(3))
    ab, ac, ap = B - A, C - A, P - A
    d1 = np.sum(ab * ap, -1)
    d2 = np.sum(ac * ap, -1)
    bp = P - B
    d3 = np.sum(ab * bp, -1)
    d4 = np.sum(ac * bp, -1)
    cp = P - C
    d5 = np.sum(ab * cp, -1)
    d6 = np.sum(ac * cp, -1)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2
    denom = va + vb + vc
    denom = np.where(np.abs(denom) > 0, denom, 1.0)
    v = vb / denom
    w = vc / denom
    res = A + ab * v[..., None] + ac * w[..., None]

    def put(mask, value):
        nonlocal res
        res = np.where(mask[..., None], value, res)

    # edge regions, then vertex regions (vertex tests take precedence)
    m = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
    t = (d4 - d3) / np.where(m, (d4 - d3) + (d5 - d6), 1.0)
    put(m, B + (C - B) * t[..., None])
    m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
    t = d2 / np.where(m, d2 - d6, 1.0)
    put(m, A + ac * t[..., None])
    m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
    t = d1 / np.where(m, d1 - d3, 1.0)
    put(m, A + ab * t[..., None])
    put((d6 >= 0) & (d5 <= d6), np.broadcast_to(C, res.shape))
    put((d3 >= 0) & (d4 <= d3), np.broadcast_to(B, res.shape))
    put((d1 <= 0) & (d2 <= 0), np.broadcast_to(A, res.shape))
    dist = np.sum((res - P) ** 2, -1)
    best = np.argmin(dist, axis=1)
    return res[np.arange(res.shape[0]), best]


# -- metrics --------------------------------------------------------------------

def mesh_edges(faces):
    """Unique undirected edges of polygon faces as a sorted ``(e, 2)`` array."""
    pairs = []
    for f in faces:
        k = len(f)
        for i in range(k):
            a, b = f[i], f[(i + 1) % k]
            pairs.append((min(a, b), max(a, b)))
    return np.unique(np.array(pairs, dtype=np.intp).reshape(-1, 2), axis=0)


def face_angles(vertices, faces):
    """Interior corner angles of every polygon face, concatenated."""
    V = np.asarray(vertices, dtype=float)
    out = []
    for f in faces:
        k = len(f)
        for i in range(k):
            a, b, c = V[f[i - 1]], V[f[i]], V[f[(i + 1) % k]]
            e1, e2 = a - b, c - b
            out.append(np.arctan2(np.linalg.norm(np.cross(e1, e2)), e1 @ e2))
    return np.array(out)


def angle_error(alpha, lo=ANGLE_RANGE[0], hi=ANGLE_RANGE[1]):
    """Distance of angles to ``[lo, hi]``."""
    alpha = np.asarray(alpha, dtype=float)
    return np.where(alpha < lo, lo - alpha, np.where(alpha > hi, alpha - hi, 0.0))


def wire_metrics(vertices, faces, length):
    """Maximum relative edge-length error and maximum angle-range violation."""
    V = np.asarray(vertices, dtype=float)
    E = mesh_edges(faces)
    e = np.linalg.norm(V[E[:, 0]] - V[E[:, 1]], axis=1)
    xi = np.abs(e - length) / length
    gamma = angle_error(face_angles(V, faces))
    return float(xi.max(initial=0.0)), float(gamma.max(initial=0.0))


def planarity_metric(vertices, faces):
    """Per-face max distance to the best-fit plane divided by the mean edge length.

    Triangles report 0.
    """
    V = np.asarray(vertices, dtype=float)
    E = mesh_edges(faces)
    ebar = np.mean(np.linalg.norm(V[E[:, 0]] - V[E[:, 1]], axis=1))
    out = np.zeros(len(faces))
    for i, f in enumerate(faces):
        if len(f) < 4:
            continue
        P = V[list(f)]
        P = P - P.mean(axis=0)
        normal = np.linalg.svd(P)[2][-1]
        out[i] = np.max(np.abs(P @ normal)) / ebar
    return out


# -- constraint assembly -----------------------------------------------------------

@dataclass
class ConstraintGroup:
    """Constraints sharing one projector.

    ``rows`` is a sparse ``(n_blocks * block_size, 3 n)`` reduction matrix and
    ``project`` maps an ``(n_blocks, block_size)`` array to its projection.
    """

    name: str
    rows: sp.csr_matrix
    block_size: int
    project: object
    weight: float = 0.0

    @property
    def hard(self):
        return self.weight == 0.0


@dataclass
class ConstraintSet:
    n_vertices: int
    groups: list = field(default_factory=list)
    L: object = None
    x_tilde: np.ndarray = None

    def add(self, group):
        if group.rows.shape[1] != 3 * self.n_vertices:
            raise ValueError(f"{group.name}: rows reference {group.rows.shape[1] // 3} vertices, "
                             f"mesh has {self.n_vertices}")
        if group.weight < 0:
            raise ValueError("soft weights must be positive")
        self.groups.append(group)
        return self

    @property
    def hard(self):
        return [g for g in self.groups if g.hard]

    @property
    def soft(self):
        return [g for g in self.groups if not g.hard]


def _selection_rows(index_lists, coeffs, n_vertices):
    """Rows ``sum_k coeffs[k] * x[index[k]]`` per block, expanded to xyz."""
    rows, cols, vals = [], [], []
    r = 0
    for idx, co in zip(index_lists, coeffs):
        for terms in co:
            for d in range(3):
                for vid, val in terms:
                    rows.append(r + d)
                    cols.append(3 * idx[vid] + d)
                    vals.append(val)
            r += 3
    return sp.csr_matrix((vals, (rows, cols)), shape=(r, 3 * n_vertices))


def edge_length_group(edges, length, n_vertices):
    edges = np.asarray(edges, dtype=np.intp)
    coeffs = [[[(0, 1.0)], [(1, 1.0)]]] * len(edges)

    def project(Z):
        p, q = edge_length_project(Z[:, :3], Z[:, 3:], length)
        return np.hstack([p, q])

    return ConstraintGroup("edge_length", _selection_rows(edges, coeffs, n_vertices), 6, project)


def angle_group(corners, n_vertices, lo=ANGLE_RANGE[0], hi=ANGLE_RANGE[1]):
    """``corners`` rows ``(a, b, c)``: z holds the edge vectors ``a - b`` and ``c - b``."""
    corners = np.asarray(corners, dtype=np.intp)
    coeffs = [[[(0, 1.0), (1, -1.0)], [(2, 1.0), (1, -1.0)]]] * len(corners)

    def project(Z):
        e1, e2, _ = angle_range_project_edges(Z[:, :3], Z[:, 3:], lo, hi)
        return np.hstack([e1, e2])

    return ConstraintGroup("angle", _selection_rows(corners, coeffs, n_vertices), 6, project)


def planarity_group(faces, n_vertices):
    """Mean-centering rows for faces with a common vertex count."""
    faces = np.asarray(faces, dtype=np.intp)
    k = faces.shape[1]
    coeffs = [[[(j, (1.0 if j == i else 0.0) - 1.0 / k) for j in range(k)] for i in range(k)]]
    coeffs = coeffs * len(faces)

    def project(Z):
        return planarity_project(Z.reshape(-1, k, 3)).reshape(Z.shape)

    return ConstraintGroup("planarity", _selection_rows(faces, coeffs, n_vertices), 3 * k, project)


def closeness_group(vertex_ids, ref_vertices, ref_triangles, n_vertices, weight):
    """Soft constraint pulling vertices towards a triangulated reference surface."""
    vertex_ids = np.asarray(vertex_ids, dtype=np.intp)
    surface = TriangleSurface(ref_vertices, ref_triangles)
    coeffs = [[[(0, 1.0)]]] * len(vertex_ids)

    def project(Z):
        return surface.closest_points(Z)

    rows = _selection_rows(vertex_ids[:, None], coeffs, n_vertices)
    return ConstraintGroup("closeness", rows, 3, project, weight=float(weight))


def quad_corners(faces):
    """Corner triples ``(prev, vertex, next)`` of every face corner."""
    out = []
    for f in faces:
        k = len(f)
        for i in range(k):
            out.append((f[i - 1], f[i], f[(i + 1) % k]))
    return np.array(out, dtype=np.intp)


def uniform_laplacian(n_vertices, faces):
    """Graph Laplacian ``D - Adj`` expanded to xyz coordinates."""
    E = mesh_edges(faces)
    n = n_vertices
    adj = sp.coo_matrix((np.ones(2 * len(E)), (np.r_[E[:, 0], E[:, 1]], np.r_[E[:, 1], E[:, 0]])),
                        shape=(n, n)).tocsr()
    Lv = sp.diags(np.asarray(adj.sum(axis=1)).ravel()) - adj
    return sp.kron(Lv, sp.eye(3)).tocsr()


def build_geometry_problem(vertices, constraints):
    """Assemble the mesh optimization problem.

    ``G = L^T L`` (zero without fairness), ``B = I``, ``c = 0``; rows of soft
    groups carry their weights, rows of hard groups a dual variable.
    """
    V = np.asarray(vertices, dtype=float)
    n3 = V.size
    if V.shape != (constraints.n_vertices, 3):
        raise ValueError("vertex array does not match the constraint set")
    x_tilde = V.ravel().copy() if constraints.x_tilde is None else \
        np.asarray(constraints.x_tilde, dtype=float)
    if constraints.L is None:
        G = sp.csr_matrix((n3, n3))
    else:
        L = sp.csr_matrix(constraints.L)
        G = (L.T @ L).tocsr()
    groups = constraints.hard + constraints.soft
    if groups:
        A = sp.vstack([g.rows for g in groups]).tocsr()
    else:
        A = sp.csr_matrix((0, n3))
    weights = np.concatenate([np.full(g.rows.shape[0], g.weight) for g in groups]) \
        if groups else np.zeros(0)
    blocks = []
    start = 0
    for g in groups:
        size = g.rows.shape[0]
        blocks.append((np.arange(start, start + size), ProjectionOracle(g.project, g.block_size)))
        start += size
    oracle = BlockOracle(blocks, size=start)
    prob = SeparableProblem(A, sp.identity(A.shape[0], format="csr"), np.zeros(A.shape[0]), G,
                            x_tilde, oracle, soft_weights=weights, allow_singular_G=True,
                            name="geometry")
    prob.groups = groups
    if not constraints.hard:
        logger.info("no hard constraints; the problem reduces to a penalty solve")
    return prob


def geometry_initial_state_arrays(problem, x0):
    """``x0``, ``z0 = A x0`` projected blockwise, ``u0 = 0``."""
    x0 = np.asarray(x0, dtype=float)
    z0 = problem.g.prox(problem.A @ x0, np.ones(problem.q))
    return x0, z0, np.zeros(problem.q)


# -- scenarios ---------------------------------------------------------------------

def grid_quads(nu, nv):
    """Faces of an ``nu x nv`` quad grid over ``(nu + 1) (nv + 1)`` vertices."""
    faces = []
    for i in range(nu):
        for j in range(nv):
            a = i * (nv + 1) + j
            faces.append((a, a + nv + 1, a + nv + 2, a + 1))
    return np.array(faces, dtype=np.intp)


def grid_triangles(nu, nv):
    tris = []
    for a, b, c, d in grid_quads(nu, nv):
        tris.extend([(a, b, c), (a, c, d)])
    return np.array(tris, dtype=np.intp)


def sphere_cap(nu, nv, radius=2.0, half_width=0.8, shear=0.0):
    """Grid vertices on a sphere of the given radius above the origin."""
    s = np.linspace(-half_width, half_width, nu + 1)
    t = np.linspace(-half_width, half_width, nv + 1)
    S, T = np.meshgrid(s, t, indexing="ij")
    S = S + shear * T
    P = np.column_stack([S.ravel(), T.ravel(), np.full(S.size, radius)])
    P *= radius / np.linalg.norm(P, axis=1, keepdims=True)
    return P


def wire_mesh_scenario(n=5, radius=2.0, half_width=0.8, shear=1.2, weight=1.0,
                       ref_resolution=16):
    """Sheared ``n x n`` quad patch on a sphere with wire-mesh constraints.

    Returns ``(vertices, faces, constraints, length)``.
    """
    V = sphere_cap(n, n, radius, half_width, shear)
    faces = grid_quads(n, n)
    E = mesh_edges(faces)
    length = float(np.mean(np.linalg.norm(V[E[:, 0]] - V[E[:, 1]], axis=1)))
    ref_half = 1.6 * half_width * (1.0 + abs(shear))
    ref = sphere_cap(ref_resolution, ref_resolution, radius, ref_half)
    ref_tris = grid_triangles(ref_resolution, ref_resolution)
    cs = ConstraintSet(len(V))
    cs.add(edge_length_group(E, length, len(V)))
    cs.add(angle_group(quad_corners(faces), len(V)))
    cs.add(closeness_group(np.arange(len(V)), ref, ref_tris, len(V), weight))
    return V, faces, cs, length


def planar_quad_scenario(n=5, curvature=0.6, fairness=0.1, weight=1.0, ref_resolution=16):
    """Quad grid on a hyperbolic paraboloid with planarity constraints."""
    s = np.linspace(-1.0, 1.0, n + 1)
    S, T = np.meshgrid(s, s, indexing="ij")
    V = np.column_stack([S.ravel(), T.ravel(), curvature * (S * T).ravel()])
    faces = grid_quads(n, n)
    r = np.linspace(-1.2, 1.2, ref_resolution + 1)
    R, Q = np.meshgrid(r, r, indexing="ij")
    ref = np.column_stack([R.ravel(), Q.ravel(), curvature * (R * Q).ravel()])
    cs = ConstraintSet(len(V), L=fairness * uniform_laplacian(len(V), faces), x_tilde=V.ravel())
    cs.add(planarity_group(faces, len(V)))
    cs.add(closeness_group(np.arange(len(V)), ref, grid_triangles(ref_resolution, ref_resolution),
                           len(V), weight))
    return V, faces, cs
