"""Reference elements, quadrature rules, and cell mappings.

Scalar Lagrange bases are nodal on equispaced lattices.  The
normal-continuity vector families (used for the velocity in the
nonconforming discretizations) take edge moments of the normal component
against Legendre polynomials as edge degrees of freedom, with the
remaining interior degrees of freedom defined as moments against an
orthonormal basis of the zero-normal-trace subspace.  Every basis is
expressed in an orthonormal modal expansion (a warped tensor product on
the triangle, tensor Legendre on the square) and recovered by inverting
the generalized Vandermonde matrix of the degrees of freedom.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.linalg import null_space
from scipy.special import eval_jacobi, eval_legendre

from .meshtopo import QUAD_EDGE_SLOTS, TRI_EDGE_SLOTS

TRI_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
QUAD_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])

MAX_QUAD_DEGREE = 20
LAGRANGE_MAX_ORDER = 8
HDIV_MAX_ORDER = 4


@dataclass
class QuadratureRule:
    points: np.ndarray   # (nq, dim)
    weights: np.ndarray  # (nq,)


def _gauss01(n: int):
    x, w = leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def make_quadrature(cell_shape: str, degree: int) -> QuadratureRule:
    """Rule exact for polynomials up to `degree` on the reference cell."""
    if degree < 0 or degree > MAX_QUAD_DEGREE:
        raise ValueError(f"unsupported quadrature degree {degree}")
    n = degree // 2 + 1
    if cell_shape == "interval":
        x, w = _gauss01(n)
        return QuadratureRule(x[:, None], w)
    if cell_shape == "quad":
        x, w = _gauss01(n)
        pts = np.array([(a, b) for a in x for b in x])
        wts = np.array([wa * wb for wa in w for wb in w])
        return QuadratureRule(pts, wts)
    if cell_shape == "tri":
        # Collapsed-coordinate rule: Gauss-Legendre in the first direction
        # and Gauss-Jacobi (weight 1-v) in the second absorbs the area
        # factor of the square-to-triangle map (u, v) -> (u(1-v), v).
        from scipy.special import roots_jacobi
        u, wu = _gauss01(n)
        t, wt = roots_jacobi(n, 1.0, 0.0)
        v, wv = 0.5 * (t + 1.0), 0.25 * wt
        pts = np.array([(ui * (1.0 - vj), vj) for ui in u for vj in v])
        wts = np.array([wui * wvj for wui in wu for wvj in wv])
        return QuadratureRule(pts, wts)
    raise ValueError(f"unknown cell shape {cell_shape!r}")


# ---------------------------------------------------------------------------
# Orthonormal modal bases.

def _scaled_legendre_all(k: int, u: np.ndarray, s: np.ndarray):
    """s^a P_a(u/s) for a = 0..k with partials, well-defined at s = 0."""
    npts = len(u)
    L = np.zeros((k + 1, npts))
    Lu = np.zeros((k + 1, npts))
    Ls = np.zeros((k + 1, npts))
    L[0] = 1.0
    if k >= 1:
        L[1] = u
        Lu[1] = 1.0
    for a in range(1, k):
        L[a + 1] = ((2 * a + 1) * u * L[a] - a * s * s * L[a - 1]) / (a + 1)
        Lu[a + 1] = ((2 * a + 1) * (L[a] + u * Lu[a])
                     - a * s * s * Lu[a - 1]) / (a + 1)
        Ls[a + 1] = ((2 * a + 1) * u * Ls[a]
                     - a * (2 * s * L[a - 1] + s * s * Ls[a - 1])) / (a + 1)
    return L, Lu, Ls


def _dubiner_tri(k: int, pts: np.ndarray):
    """Orthonormal modal basis of degree <= k on the unit triangle."""
    x, y = pts[:, 0], pts[:, 1]
    u, s, z = 2 * x + y - 1.0, 1.0 - y, 2 * y - 1.0
    L, Lu, Ls = _scaled_legendre_all(k, u, s)
    nb = (k + 1) * (k + 2) // 2
    vals = np.empty((len(pts), nb))
    grads = np.empty((len(pts), nb, 2))
    col = 0
    for d in range(k + 1):
        for a in range(d + 1):
            b = d - a
            J = eval_jacobi(b, 2 * a + 1, 0, z)
            dJ = (0.5 * (b + 2 * a + 2) * eval_jacobi(b - 1, 2 * a + 2, 1, z)
                  if b > 0 else np.zeros_like(z))
            c = np.sqrt(2.0 * (2 * a + 1) * (a + b + 1))
            vals[:, col] = c * L[a] * J
            grads[:, col, 0] = c * 2.0 * Lu[a] * J
            grads[:, col, 1] = c * ((Lu[a] - Ls[a]) * J + L[a] * 2.0 * dJ)
            col += 1
    return vals, grads


def _legendre_1d_all(k: int, t: np.ndarray):
    """Normalized Legendre on [0,1] with derivatives, t in [0,1]."""
    z = 2.0 * t - 1.0
    vals = np.empty((k + 1, len(t)))
    ders = np.empty((k + 1, len(t)))
    for a in range(k + 1):
        scale = np.sqrt(2 * a + 1.0)
        vals[a] = scale * eval_legendre(a, z)
        if a == 0:
            ders[a] = 0.0
        else:
            ders[a] = scale * (a + 1) * eval_jacobi(a - 1, 1, 1, z)
    return vals, ders


def _legendre_quad(k: int, pts: np.ndarray):
    """Orthonormal tensor-Legendre basis of bi-degree <= k on the unit square."""
    px, dpx = _legendre_1d_all(k, pts[:, 0])
    py, dpy = _legendre_1d_all(k, pts[:, 1])
    nb = (k + 1) ** 2
    vals = np.empty((len(pts), nb))
    grads = np.empty((len(pts), nb, 2))
    col = 0
    for a in range(k + 1):
        for b in range(k + 1):
            vals[:, col] = px[a] * py[b]
            grads[:, col, 0] = dpx[a] * py[b]
            grads[:, col, 1] = px[a] * dpy[b]
            col += 1
    return vals, grads


# ---------------------------------------------------------------------------
# Reference element container.

@dataclass
class ReferenceElement:
    family: str
    degree: int
    cell_shape: str
    value_shape: tuple
    ndof: int
    mapping: str                     # "identity" | "piola"
    entity_dofs: dict                # dim -> per-local-entity dof index lists
    dof_entity: list                 # per dof: (dim, local entity, position)
    dof_points: list                 # per dof: (nq, 2) evaluation points
    dof_weights: list                # per dof: (nq,) or (nq, 2) weights
    edge_reverse_perm: np.ndarray    # position map on a direction-reversed edge
    edge_reverse_sign: np.ndarray    # sign map on a direction-reversed edge
    tab_fn: Callable = field(repr=False)
    # Normal-moment families normalize edge moments by edge length and
    # interior moments by the area scale, keeping basis magnitudes O(1)
    # under refinement; reference edge lengths convert between the two.
    length_normalized: bool = False
    edge_ref_lengths: np.ndarray | None = None

    @property
    def dofs_per_edge(self) -> int:
        return len(self.edge_reverse_perm)

    def edge_transform(self, aligned: bool):
        m = self.dofs_per_edge
        if aligned:
            return np.arange(m), np.ones(m)
        return self.edge_reverse_perm, self.edge_reverse_sign


def tabulate(element: ReferenceElement, points) -> tuple[np.ndarray, np.ndarray]:
    """Basis values and gradients at reference points.

    Values have shape (npoints, ndof) for scalar elements and
    (npoints, ndof, 2) for vector elements; gradients carry one extra
    trailing axis of length 2.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return element.tab_fn(pts)


def dual_apply(element: ReferenceElement, dof: int, values: np.ndarray) -> float:
    """Apply one dual functional to a field sampled at its dof_points."""
    return float(np.sum(element.dof_weights[dof] * values))


# ---------------------------------------------------------------------------
# Lagrange families.

def _tri_lattice(k: int):
    """Entity-ordered lattice: vertices, edge interiors, cell interior."""
    pts, owner = [], []
    for i, v in enumerate(TRI_VERTICES):
        pts.append(v)
        owner.append((0, i))
    for j, (la, lb) in enumerate(TRI_EDGE_SLOTS):
        a, b = TRI_VERTICES[la], TRI_VERTICES[lb]
        for i in range(1, k):
            pts.append(a + (i / k) * (b - a))
            owner.append((1, j))
    for i in range(1, k):
        for j in range(1, k - i):
            pts.append(np.array([i / k, j / k]))
            owner.append((2, 0))
    return np.array(pts), owner


def _quad_lattice(k: int):
    pts, owner = [], []
    for i, v in enumerate(QUAD_VERTICES):
        pts.append(v)
        owner.append((0, i))
    for j, (la, lb) in enumerate(QUAD_EDGE_SLOTS):
        a, b = QUAD_VERTICES[la], QUAD_VERTICES[lb]
        for i in range(1, k):
            pts.append(a + (i / k) * (b - a))
            owner.append((1, j))
    for i in range(1, k):
        for j in range(1, k):
            pts.append(np.array([i / k, j / k]))
            owner.append((2, 0))
    return np.array(pts), owner


def _entity_tables(owner, num_entities):
    entity_dofs = {d: [[] for _ in range(num_entities[d])] for d in range(3)}
    dof_entity = []
    for i, (dim, ent) in enumerate(owner):
        pos = len(entity_dofs[dim][ent])
        entity_dofs[dim][ent].append(i)
        dof_entity.append((dim, ent, pos))
    return entity_dofs, dof_entity


def _nodal_tab(prime, coeffs):
    def tab(pts):
        vals, grads = prime(pts)
        return vals @ coeffs, np.einsum("qpd,pj->qjd", grads, coeffs)
    return tab


def _make_lagrange(family: str, cell_shape: str, k: int) -> ReferenceElement:
    if cell_shape == "tri":
        pts, owner = _tri_lattice(k)
        prime = lambda p: _dubiner_tri(k, p)  # noqa: E731
        nums = (3, 3, 1)
    else:
        pts, owner = _quad_lattice(k)
        prime = lambda p: _legendre_quad(k, p)  # noqa: E731
        nums = (4, 4, 1)
    vand, _ = prime(pts)
    coeffs = np.linalg.inv(vand)
    entity_dofs, dof_entity = _entity_tables(owner, nums)
    m = k - 1
    return ReferenceElement(
        family=family, degree=k, cell_shape=cell_shape, value_shape=(),
        ndof=len(pts), mapping="identity",
        entity_dofs=entity_dofs, dof_entity=dof_entity,
        dof_points=[p[None, :] for p in pts],
        dof_weights=[np.ones(1) for _ in pts],
        edge_reverse_perm=np.arange(m)[::-1].copy(),
        edge_reverse_sign=np.ones(m),
        tab_fn=_nodal_tab(prime, coeffs))


def _make_discontinuous_lagrange(k: int) -> ReferenceElement:
    if k == 0:
        pts = np.array([[1.0 / 3.0, 1.0 / 3.0]])
        owner = [(2, 0)]
    else:
        pts, owner = _tri_lattice(k)
        owner = [(2, 0)] * len(pts)
    prime = lambda p: _dubiner_tri(k, p)  # noqa: E731
    vand, _ = prime(pts)
    coeffs = np.linalg.inv(vand)
    entity_dofs, dof_entity = _entity_tables(owner, (3, 3, 1))
    return ReferenceElement(
        family="dlagrange-tri", degree=k, cell_shape="tri", value_shape=(),
        ndof=len(pts), mapping="identity",
        entity_dofs=entity_dofs, dof_entity=dof_entity,
        dof_points=[p[None, :] for p in pts],
        dof_weights=[np.ones(1) for _ in pts],
        edge_reverse_perm=np.arange(0), edge_reverse_sign=np.ones(0),
        tab_fn=_nodal_tab(prime, coeffs))


def make_vector_element(scalar: ReferenceElement) -> ReferenceElement:
    """Two-component version with x/y interleaved per scalar dof."""
    ndof = 2 * scalar.ndof
    entity_dofs = {d: [[2 * i + c for i in ents for c in (0, 1)]
                       for ents in scalar.entity_dofs[d]]
                   for d in range(3)}
    dof_entity = []
    for i, (dim, ent, pos) in enumerate(scalar.dof_entity):
        dof_entity.append((dim, ent, 2 * pos))
        dof_entity.append((dim, ent, 2 * pos + 1))
    dof_points, dof_weights = [], []
    for i in range(scalar.ndof):
        for c in (0, 1):
            dof_points.append(scalar.dof_points[i])
            w = np.zeros((len(scalar.dof_weights[i]), 2))
            w[:, c] = scalar.dof_weights[i]
            dof_weights.append(w)
    m = scalar.dofs_per_edge
    perm = np.empty(2 * m, dtype=int)
    sign = np.empty(2 * m)
    for p in range(m):
        for c in (0, 1):
            perm[2 * p + c] = 2 * scalar.edge_reverse_perm[p] + c
            sign[2 * p + c] = scalar.edge_reverse_sign[p]

    def tab(pts):
        sv, sg = scalar.tab_fn(pts)
        nq = len(pts)
        vals = np.zeros((nq, ndof, 2))
        grads = np.zeros((nq, ndof, 2, 2))
        vals[:, 0::2, 0] = sv
        vals[:, 1::2, 1] = sv
        grads[:, 0::2, 0, :] = sg
        grads[:, 1::2, 1, :] = sg
        return vals, grads

    return ReferenceElement(
        family="vector-" + scalar.family, degree=scalar.degree,
        cell_shape=scalar.cell_shape, value_shape=(2,), ndof=ndof,
        mapping="identity", entity_dofs=entity_dofs, dof_entity=dof_entity,
        dof_points=dof_points, dof_weights=dof_weights,
        edge_reverse_perm=perm, edge_reverse_sign=sign, tab_fn=tab)


# ---------------------------------------------------------------------------
# Normal-continuity vector families on triangles.

def _hdiv_prime(family: str, k: int):
    """Modal spanning set and its dimension for the vector space."""
    if family == "bdm-tri":
        deg, nextra = k, 0
    else:
        deg, nextra = k - 1, k
    nb = (deg + 1) * (deg + 2) // 2
    nprime = 2 * nb + nextra

    def tab(pts):
        sv, sg = _dubiner_tri(deg, pts)
        nq = len(pts)
        vals = np.zeros((nq, nprime, 2))
        grads = np.zeros((nq, nprime, 2, 2))
        vals[:, 0:2 * nb:2, 0] = sv
        vals[:, 1:2 * nb:2, 1] = sv
        grads[:, 0:2 * nb:2, 0, :] = sg
        grads[:, 1:2 * nb:2, 1, :] = sg
        # x * m with m homogeneous of degree k-1: spans the complement of
        # the full-degree vector polynomials.
        x, y = pts[:, 0], pts[:, 1]
        for a in range(nextra):
            b = k - 1 - a
            m = x ** a * y ** b
            mx = a * x ** (a - 1) * y ** b if a > 0 else np.zeros_like(x)
            my = b * x ** a * y ** (b - 1) if b > 0 else np.zeros_like(x)
            col = 2 * nb + a
            vals[:, col, 0] = x * m
            vals[:, col, 1] = y * m
            grads[:, col, 0, 0] = m + x * mx
            grads[:, col, 0, 1] = x * my
            grads[:, col, 1, 0] = y * mx
            grads[:, col, 1, 1] = m + y * my
        return vals, grads

    return tab, nprime


def _make_hdiv(family: str, k: int) -> ReferenceElement:
    prime, nprime = _hdiv_prime(family, k)
    npe = k + 1 if family == "bdm-tri" else k  # normal moments per edge

    dof_points, dof_weights, owner = [], [], []
    nq_e = max(k + 2, 10)
    s_q, w_q = _gauss01(nq_e)
    edge_ref_lengths = np.empty(3)
    for j, (la, lb) in enumerate(TRI_EDGE_SLOTS):
        a, b = TRI_VERTICES[la], TRI_VERTICES[lb]
        elen = np.linalg.norm(b - a)
        edge_ref_lengths[j] = elen
        t = (b - a) / elen
        nrm = np.array([t[1], -t[0]])
        pts = a + s_q[:, None] * (b - a)
        for m in range(npe):
            # Length-normalized moment of the normal component.
            leg = eval_legendre(m, 2.0 * s_q - 1.0)
            dof_points.append(pts)
            dof_weights.append((w_q * leg)[:, None] * nrm[None, :])
            owner.append((1, j))

    nedge = 3 * npe
    emat = np.empty((nedge, nprime))
    for i in range(nedge):
        vals, _ = prime(dof_points[i])
        emat[i] = np.einsum("qv,qpv->p", dof_weights[i], vals)

    nint = nprime - nedge
    if nint > 0:
        bub = null_space(emat)
        if bub.shape[1] != nint:
            raise RuntimeError(
                f"{family} order {k}: zero-normal-trace subspace has "
                f"dimension {bub.shape[1]}, expected {nint}")
        rule = make_quadrature("tri", min(2 * k + 2, MAX_QUAD_DEGREE))
        pvals, _ = prime(rule.points)
        gram = np.einsum("q,qpv,qrv->pr", rule.weights, pvals, pvals)
        chol = np.linalg.cholesky(bub.T @ gram @ bub)
        bub = bub @ np.linalg.inv(chol).T
        irule = make_quadrature("tri", MAX_QUAD_DEGREE)
        ivals, _ = prime(irule.points)
        fields = np.einsum("qpv,pj->qjv", ivals, bub)
        for j in range(nint):
            dof_points.append(irule.points)
            dof_weights.append(irule.weights[:, None] * fields[:, j, :])
            owner.append((2, 0))

    ndof = nedge + nint
    vand = np.empty((ndof, nprime))
    for i in range(ndof):
        vals, _ = prime(dof_points[i])
        vand[i] = np.einsum("qv,qpv->p", dof_weights[i], vals)
    coeffs = np.linalg.inv(vand)

    entity_dofs, dof_entity = _entity_tables(owner, (3, 3, 1))

    def tab(pts):
        vals, grads = prime(pts)
        return (np.einsum("qpv,pj->qjv", vals, coeffs),
                np.einsum("qpvd,pj->qjvd", grads, coeffs))

    return ReferenceElement(
        family=family, degree=k, cell_shape="tri", value_shape=(2,),
        ndof=ndof, mapping="piola",
        entity_dofs=entity_dofs, dof_entity=dof_entity,
        dof_points=dof_points, dof_weights=dof_weights,
        edge_reverse_perm=np.arange(npe),
        edge_reverse_sign=np.array([(-1.0) ** (m + 1) for m in range(npe)]),
        tab_fn=tab, length_normalized=True,
        edge_ref_lengths=edge_ref_lengths)


def make_element(family: str, k: int) -> ReferenceElement:
    """Build a reference element.

    Families: "lagrange-tri", "lagrange-quad", "dlagrange-tri",
    "bdm-tri", "rt-tri".  Orders: Lagrange 1..8, discontinuous Lagrange
    0..8, normal-continuity families 1..4.
    """
    if family == "lagrange-tri":
        if not 1 <= k <= LAGRANGE_MAX_ORDER:
            raise ValueError(f"unsupported order {k} for {family}")
        return _make_lagrange(family, "tri", k)
    if family == "lagrange-quad":
        if not 1 <= k <= LAGRANGE_MAX_ORDER:
            raise ValueError(f"unsupported order {k} for {family}")
        return _make_lagrange(family, "quad", k)
    if family == "dlagrange-tri":
        if not 0 <= k <= LAGRANGE_MAX_ORDER:
            raise ValueError(f"unsupported order {k} for {family}")
        return _make_discontinuous_lagrange(k)
    if family in ("bdm-tri", "rt-tri"):
        if not 1 <= k <= HDIV_MAX_ORDER:
            raise ValueError(f"unsupported order {k} for {family}")
        return _make_hdiv(family, k)
    raise ValueError(f"unknown element family {family!r}")


# ---------------------------------------------------------------------------
# Physical cell mappings.

class CellMap:
    """Affine (triangle) or bilinear (quadrilateral) reference-cell map."""

    def __init__(self, cell_shape: str, vertices):
        self.cell_shape = cell_shape
        v = np.asarray(vertices, dtype=float)
        self.vertices = v
        self.origin = v[0]
        self.jac = np.column_stack([v[1] - v[0], v[2] - v[0]])
        if cell_shape == "tri":
            self.affine = True
            self.twist = np.zeros(2)
        else:
            self.twist = v[0] - v[1] - v[2] + v[3]
            self.affine = bool(np.allclose(self.twist, 0.0, atol=1e-14))

    def map_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        phys = self.origin + pts @ self.jac.T
        if not self.affine:
            phys = phys + np.outer(pts[:, 0] * pts[:, 1], self.twist)
        return phys

    def jacobians(self, pts: np.ndarray):
        """Per-point Jacobian, determinant, and inverse."""
        pts = np.atleast_2d(pts)
        nq = len(pts)
        jac = np.broadcast_to(self.jac, (nq, 2, 2)).copy()
        if not self.affine:
            jac[:, :, 0] += np.outer(pts[:, 1], self.twist)
            jac[:, :, 1] += np.outer(pts[:, 0], self.twist)
        det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
        inv = np.empty_like(jac)
        inv[:, 0, 0] = jac[:, 1, 1]
        inv[:, 0, 1] = -jac[:, 0, 1]
        inv[:, 1, 0] = -jac[:, 1, 0]
        inv[:, 1, 1] = jac[:, 0, 0]
        inv /= det[:, None, None]
        return jac, det, inv

    def inverse_map(self, phys: np.ndarray) -> np.ndarray:
        phys = np.atleast_2d(phys)
        ref = np.linalg.solve(self.jac, (phys - self.origin).T).T
        if not self.affine:
            for _ in range(30):
                res = self.map_points(ref) - phys
                if np.max(np.abs(res)) < 1e-14:
                    break
                _, _, inv = self.jacobians(ref)
                ref = ref - np.einsum("qab,qb->qa", inv, res)
        return ref


def push_forward(element: ReferenceElement, cmap: CellMap, reference_tab,
                 points: np.ndarray | None = None):
    """Map reference basis values/gradients to a physical cell.

    Point-value elements keep their values and map gradients by the
    inverse-transpose Jacobian; normal-continuity elements map values by
    J v / det(J) (preserving normal traces) and gradients accordingly.
    `points` is required only for genuinely bilinear cells.
    """
    vals, grads = reference_tab
    nq = vals.shape[0]
    if cmap.affine:
        jac, det, inv = cmap.jacobians(np.zeros((1, 2)))
        jac = np.broadcast_to(jac[0], (nq, 2, 2))
        det = np.broadcast_to(det[0], (nq,))
        inv = np.broadcast_to(inv[0], (nq, 2, 2))
    else:
        if points is None:
            raise ValueError("bilinear cell maps need the reference points")
        jac, det, inv = cmap.jacobians(points)
    if np.any(det <= 0):
        raise ValueError("degenerate cell: nonpositive Jacobian determinant")
    if element.mapping == "identity":
        if element.value_shape == ():
            return vals, np.einsum("qib,qba->qia", grads, inv)
        return vals, np.einsum("qicb,qba->qica", grads, inv)
    # Normal-trace preserving map.
    pvals = np.einsum("qcd,qid->qic", jac, vals) / det[:, None, None]
    pgrads = np.einsum("qcd,qidb,qba->qica", jac, grads, inv)
    pgrads /= det[:, None, None, None]
    return pvals, pgrads
