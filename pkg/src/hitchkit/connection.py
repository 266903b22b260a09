"""Flat connections from (bundle spec, harmonic metric) and their geometry.

The connection one-form in the local frame has coefficients

    A_z    = H^-1 dH + phi            (dz part)
    A_zbar = H^-1 conj(phi)^T H       (dzbar part)

with H the diagonal harmonic metric, first summand carrying the inverse
power of the scalar unknown. A dbar-deformation ``beta`` (rank 2 only) adds
[[0, h^2 conj(beta)], [0, 0]] to A_z and [[0, 0], [beta, 0]] to A_zbar,
matching the deformed holomorphic structure of the almost-Fuchsian family.

Parallel transport solves P' = -(A_z z' + A_zbar conj(z')) P with RK4 and
bilinear coefficient interpolation; developing maps transport section values
to a base node along a breadth-first tree of grid edges.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .bundles import SL2R, HiggsBundleSpec
from .charts import DISC, RECTANGLE, TORUS, ComplexField, DomainChart
from .errors import (
    ChartMismatch,
    DegenerateMetric,
    NoRealForm,
    NotConverged,
    NotSimplyConnected,
    PathOutsideChart,
    SectionVanishes,
    UnsupportedChart,
)
from .solver import HarmonicMetric


@dataclass
class ConnectionField:
    """Sampled matrix coefficients (A_z, A_zbar) of a flat connection."""

    chart: DomainChart
    A_z: np.ndarray       # (n1, n2, rank, rank) complex
    A_zbar: np.ndarray
    rank: int

    def trace_defect(self) -> float:
        tz = np.trace(self.A_z, axis1=2, axis2=3)
        tzb = np.trace(self.A_zbar, axis1=2, axis2=3)
        return float(max(np.max(np.abs(tz)), np.max(np.abs(tzb))))


@dataclass
class RealStructure:
    """Antilinear involution tau(v) = T(node) conj(v) with T anti-diagonal."""

    chart: DomainChart
    T: np.ndarray         # (n1, n2, rank, rank) complex

    def apply(self, v: np.ndarray) -> np.ndarray:
        return np.einsum("...ij,...j->...i", self.T, np.conj(v))

    def involution_defect(self) -> float:
        prod = np.einsum("...ij,...jk->...ik", self.T, np.conj(self.T))
        eye = np.eye(self.T.shape[-1])
        return float(np.max(np.abs(prod - eye)))


@dataclass
class DevelopingMapSample:
    """Section values transported to the base fiber along a canonical tree."""

    chart: DomainChart
    base: tuple[int, int]
    vectors: np.ndarray       # (n1, n2, rank) representatives, nonzero
    jacobian_sigmas: np.ndarray | None = None   # (n1, n2, 2) singular values
    chart_component: int = 0  # affine chart index used for the jacobian

    def jacobian_rank(self, tol: float = 1e-6) -> np.ndarray:
        s = self.jacobian_sigmas
        scale = np.maximum(s[..., 0], 1e-30)
        return (s[..., 0] > tol).astype(int) + (s[..., 1] > tol * scale).astype(int)


def assemble_connection(spec: HiggsBundleSpec, metric: HarmonicMetric,
                        dbar_deformation: ComplexField | None = None) -> ConnectionField:
    """Build (A_z, A_zbar) from the Higgs data and the diagonal metric."""
    if not metric.converged:
        raise NotConverged("metric did not converge; refusing to assemble")
    if metric.chart is not spec.chart:
        raise ChartMismatch("metric and spec live on different charts")
    chart = spec.chart
    n1, n2 = chart.resolution
    rank = spec.rank
    A_z = np.zeros((n1, n2, rank, rank), dtype=complex)
    A_zbar = np.zeros((n1, n2, rank, rank), dtype=complex)

    for k in range(rank):
        A_z[:, :, k, k] = chart.d_z(np.log(metric.h[k]))

    phi = spec.phi_array()
    A_z += phi

    h = np.stack(metric.h, axis=-1)                      # (n1, n2, rank)
    ratio = h[:, :, None, :] / h[:, :, :, None]          # h_j / h_i at (i, j)
    A_zbar += ratio * np.conj(np.swapaxes(phi, 2, 3))

    if dbar_deformation is not None:
        if rank != 2:
            raise ChartMismatch("dbar deformation supported for rank 2 only")
        beta = dbar_deformation.data
        A_zbar[:, :, 1, 0] += beta
        A_z[:, :, 0, 1] += metric.h[1] ** 2 * np.conj(beta)

    return ConnectionField(chart, A_z, A_zbar, rank)


def curvature_residual(conn: ConnectionField) -> np.ndarray:
    """Frobenius norm of the curvature coefficient per node.

    F = d_z A_zbar - d_zbar A_z + [A_z, A_zbar] (the dz^dzbar coefficient of
    dA + A^A); it vanishes identically on exact solutions.
    """
    chart = conn.chart
    rank = conn.rank
    F = np.empty_like(conn.A_z)
    for i in range(rank):
        for j in range(rank):
            F[:, :, i, j] = chart.d_z(conn.A_zbar[:, :, i, j]) \
                - chart.d_zbar(conn.A_z[:, :, i, j])
    F += np.einsum("xyij,xyjk->xyik", conn.A_z, conn.A_zbar)
    F -= np.einsum("xyij,xyjk->xyik", conn.A_zbar, conn.A_z)
    return np.sqrt(np.sum(np.abs(F) ** 2, axis=(2, 3)))


def real_structure(spec: HiggsBundleSpec, metric: HarmonicMetric) -> RealStructure:
    """Anti-diagonal T with T[i, r-1-i] = h_{r-1-i}; tau(v) = T conj(v)."""
    if spec.pairing is None and spec.kind not in (
            "cyclic3", "cyclic4", "symmetric_power"):
        raise NoRealForm(f"kind {spec.kind} carries no real form")
    chart = spec.chart
    n1, n2 = chart.resolution
    rank = spec.rank
    T = np.zeros((n1, n2, rank, rank), dtype=complex)
    for i in range(rank):
        T[:, :, i, rank - 1 - i] = metric.h[rank - 1 - i]
    return RealStructure(chart, T)


# ----------------------------------------------------------------------
# parallel transport


def _transport_batch(conn: ConnectionField, z0: np.ndarray, z1: np.ndarray,
                     steps: int) -> np.ndarray:
    """RK4 transport matrices along straight segments z0 -> z1 (batched)."""
    chart = conn.chart
    m = len(z0)
    rank = conn.rank
    P = np.tile(np.eye(rank, dtype=complex), (m, 1, 1))
    dz = (z1 - z0) / steps

    def coeff(z):
        Az = chart.sample_at(conn.A_z, z)
        Azb = chart.sample_at(conn.A_zbar, z)
        return -(Az * dz[:, None, None] + Azb * np.conj(dz)[:, None, None])

    for s in range(steps):
        za = z0 + s * dz
        zm = za + 0.5 * dz
        zb = za + dz
        Ma = coeff(za)
        Mm = coeff(zm)
        Mb = coeff(zb)
        k1 = np.einsum("mij,mjk->mik", Ma, P)
        k2 = np.einsum("mij,mjk->mik", Mm, P + 0.5 * k1)
        k3 = np.einsum("mij,mjk->mik", Mm, P + 0.5 * k2)
        k4 = np.einsum("mij,mjk->mik", Mb, P + k3)
        P = P + (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
    return P


def parallel_transport(conn: ConnectionField, path, steps_per_unit: float | None = None) -> np.ndarray:
    """Transport matrix along a polyline of chart points.

    Integration uses RK4 with step at most half the local grid spacing.
    """
    chart = conn.chart
    pts = [complex(z) for z in path]
    if len(pts) < 2:
        return np.eye(conn.rank, dtype=complex)
    for z in pts:
        if not chart.contains(z):
            raise PathOutsideChart(f"point {z} outside the chart")
    P = np.eye(conn.rank, dtype=complex)
    for z0, z1 in zip(pts[:-1], pts[1:]):
        seg = abs(z1 - z0)
        if seg == 0:
            continue
        spacing = min(chart.local_spacing(z0), chart.local_spacing(z1))
        steps = max(2, int(np.ceil(seg / (0.5 * spacing))))
        Pseg = _transport_batch(conn, np.array([z0]), np.array([z1]), steps)[0]
        P = Pseg @ P
    return P


def monodromy(conn: ConnectionField, base: complex = 0.0) -> tuple[np.ndarray, np.ndarray, float]:
    """Transport around the two period generators of a torus chart.

    Returns (P_a, P_b, commutator_defect).
    """
    chart = conn.chart
    if chart.kind != TORUS:
        raise UnsupportedChart("monodromy needs the nontrivial loops of a torus chart")
    z0 = complex(base)
    P_a = parallel_transport(conn, [z0, z0 + 1.0])
    P_b = parallel_transport(conn, [z0, z0 + chart.tau])
    comm = P_a @ P_b @ np.linalg.inv(P_a) @ np.linalg.inv(P_b)
    defect = float(np.max(np.abs(comm - np.eye(conn.rank))))
    return P_a, P_b, defect


# ----------------------------------------------------------------------
# developing maps


def _grid_edges(chart: DomainChart, base: tuple[int, int]):
    """Breadth-first tree over grid edges rooted at base.

    Returns (order, parents) where order lists nodes in visit order and
    parents maps node -> (parent node). Disc/rectangle grids use the full
    node set; tori are not simply connected and are rejected upstream.
    """
    from collections import deque

    n1, n2 = chart.resolution
    parents = {}
    seen = np.zeros((n1, n2), dtype=bool)
    q = deque([base])
    seen[base] = True
    order = [base]
    angular_wrap = chart.kind == DISC
    while q:
        i, j = q.popleft()
        nbrs = []
        if i + 1 < n1:
            nbrs.append((i + 1, j))
        if i - 1 >= 0:
            nbrs.append((i - 1, j))
        if angular_wrap:
            nbrs.append((i, (j + 1) % n2))
            nbrs.append((i, (j - 1) % n2))
        else:
            if j + 1 < n2:
                nbrs.append((i, j + 1))
            if j - 1 >= 0:
                nbrs.append((i, j - 1))
        for nb in nbrs:
            if not seen[nb]:
                seen[nb] = True
                parents[nb] = (i, j)
                order.append(nb)
                q.append(nb)
    return order, parents


def develop(conn: ConnectionField, section: np.ndarray,
            base: tuple[int, int] | None = None,
            jacobian: bool = True) -> DevelopingMapSample:
    """Transport section values to the base fiber along the grid tree.

    ``section`` has shape (n1, n2, rank) and must be nowhere zero. The
    result vector at a node is P_{base<-node} section(node), a representative
    of the developing map in the base-fiber projective space.
    """
    chart = conn.chart
    if chart.kind == TORUS:
        raise NotSimplyConnected(
            "developing maps need a simply connected chart; restrict the torus first")
    n1, n2 = chart.resolution
    section = np.asarray(section, dtype=complex)
    norms = np.linalg.norm(section, axis=-1)
    if np.min(norms) < 1e-14:
        raise SectionVanishes("section has (numerically) vanishing values")
    if base is None:
        base = (0, 0)

    order, parents = _grid_edges(chart, base)

    # batch per-edge transports: child -> parent segments
    edges = [(nb, pa) for nb, pa in parents.items()]
    nodes_c = np.array([chart.nodes[e[0]] for e in edges])
    nodes_p = np.array([chart.nodes[e[1]] for e in edges])
    seg = np.abs(nodes_p - nodes_c)
    spacing = np.array([min(chart.local_spacing(a), chart.local_spacing(b))
                        for a, b in zip(nodes_c, nodes_p)])
    steps = np.maximum(2, np.ceil(seg / (0.5 * spacing)).astype(int))
    P_edge = {}
    for st in np.unique(steps):
        sel = np.where(steps == st)[0]
        Ps = _transport_batch(conn, nodes_c[sel], nodes_p[sel], int(st))
        for t, idx in enumerate(sel):
            P_edge[edges[idx][0]] = Ps[t]

    G = np.zeros((n1, n2, conn.rank, conn.rank), dtype=complex)
    G[base] = np.eye(conn.rank)
    for node in order[1:]:
        G[node] = G[parents[node]] @ P_edge[node]

    vectors = np.einsum("xyij,xyj->xyi", G, section)

    sigmas = None
    comp = int(np.argmax(np.abs(vectors[base])))
    if jacobian:
        sigmas = _jacobian_sigmas(chart, vectors, comp)
    return DevelopingMapSample(chart, base, vectors, sigmas, comp)


def _jacobian_sigmas(chart: DomainChart, vectors: np.ndarray, comp: int) -> np.ndarray:
    """Singular values of the realified differential in an affine chart."""
    rank = vectors.shape[-1]
    denom = vectors[..., comp]
    small = np.abs(denom) < 1e-12
    denom = np.where(small, 1.0, denom)
    cols = []
    for i in range(rank):
        if i == comp:
            continue
        w = vectors[..., i] / denom
        wx, wy = chart.dx_dy(w)
        cols.append((wx, wy))
    J = np.zeros(chart.resolution + (2 * (rank - 1), 2))
    for t, (wx, wy) in enumerate(cols):
        J[..., 2 * t, 0] = wx.real
        J[..., 2 * t + 1, 0] = wx.imag
        J[..., 2 * t, 1] = wy.real
        J[..., 2 * t + 1, 1] = wy.imag
    return np.linalg.svd(J, compute_uv=False)


# ----------------------------------------------------------------------
# pullback metrics and curvature


@dataclass
class SymmetricTensorField:
    """Per-node symmetric 2-tensor in real (x, y) coordinates."""

    chart: DomainChart
    g: np.ndarray              # (n1, n2, 2, 2) real symmetric
    hopf: np.ndarray | None = None   # the dz^2 coefficient, complex

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.g)


def pullback_metric(spec: HiggsBundleSpec, metric: HarmonicMetric) -> SymmetricTensorField:
    """Pullback metric 4ab dz^2 + 4(|a|^2 h^-2 + |b|^2 h^2) dz dzbar + conj.

    Normalization is pinned by two anchors: the uniformizing solve yields the
    curvature -1 conformal metric 4 h^2 |dz|^2, and the dz^2 part equals the
    quadratic invariant 4 a b of the pair.
    """
    if spec.kind != SL2R:
        raise ChartMismatch("pullback metric is defined for rank-2 specs")
    if not metric.converged:
        raise NotConverged("metric did not converge")
    a = spec.entry(0, 1)
    b = spec.entry(1, 0)
    h = metric.h[1]
    P = 4.0 * a * b
    Q = 4.0 * (np.abs(a) ** 2 / h ** 2 + np.abs(b) ** 2 * h ** 2)
    n1, n2 = spec.chart.resolution
    g = np.zeros((n1, n2, 2, 2))
    g[:, :, 0, 0] = 2 * P.real + Q
    g[:, :, 1, 1] = -2 * P.real + Q
    g[:, :, 0, 1] = g[:, :, 1, 0] = -2 * P.imag
    return SymmetricTensorField(spec.chart, g, hopf=P)


def gaussian_curvature(tensor: SymmetricTensorField,
                       interior_layers: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian curvature of a 2x2 metric field (Brioschi formula).

    Returns (K, valid_mask); nodes where the metric is not positive definite
    or outside the interior evaluation set are masked out and reported via
    the mask, not fatally.
    """
    chart = tensor.chart
    E = tensor.g[:, :, 0, 0]
    F = tensor.g[:, :, 0, 1]
    G = tensor.g[:, :, 1, 1]
    det = E * G - F * F
    pos = (det > 1e-30) & (E > 0)
    interior = chart.interior_mask(interior_layers)

    def dx(f):
        return chart.dx_dy(f)[0].real

    def dy(f):
        return chart.dx_dy(f)[1].real

    Ex, Ey = dx(E), dy(E)
    Gx, Gy = dx(G), dy(G)
    Fx, Fy = dx(F), dy(F)
    Eyy = dy(Ey)
    Gxx = dx(Gx)
    Fxy = dy(Fx)

    m1 = np.stack([
        np.stack([-0.5 * Eyy + Fxy - 0.5 * Gxx, 0.5 * Ex, Fx - 0.5 * Ey], axis=-1),
        np.stack([Fy - 0.5 * Gx, E, F], axis=-1),
        np.stack([0.5 * Gy, F, G], axis=-1),
    ], axis=-2)
    m2 = np.stack([
        np.stack([np.zeros_like(E), 0.5 * Ey, 0.5 * Gx], axis=-1),
        np.stack([0.5 * Ey, E, F], axis=-1),
        np.stack([0.5 * Gx, F, G], axis=-1),
    ], axis=-2)
    safe_det = np.where(pos, det, 1.0)
    K = (np.linalg.det(m1) - np.linalg.det(m2)) / safe_det ** 2
    return K, pos & interior


def conformal_factor_curvature(chart: DomainChart, e2v: np.ndarray,
                               interior_layers: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Curvature -exp(-2v) lap v of a conformal metric exp(2v)|dz|^2."""
    if np.min(e2v) <= 0:
        raise DegenerateMetric(list(zip(*np.where(e2v <= 0))))
    v = 0.5 * np.log(e2v)
    K = -np.exp(-2.0 * v) * chart.laplacian(v).real
    return K, chart.interior_mask(interior_layers)


def hyperbolic_pullback(sample: DevelopingMapSample,
                        real_struct: RealStructure) -> SymmetricTensorField:
    """Pullback of the curvature -1 metric on the disc side of the real locus.

    For rank-2 developments the complement of the real-locus circle in the
    projective line carries the hyperbolic metric; the image is normalized
    into the unit-disc model and the metric 4|dw|^2/(1-|w|^2)^2 pulled back
    by finite differences.
    """
    if sample.vectors.shape[-1] != 2:
        raise ChartMismatch("hyperbolic pullback needs rank-2 developments")
    chart = sample.chart
    v = sample.vectors
    comp = sample.chart_component
    other = 1 - comp
    w = v[..., other] / v[..., comp]
    # the tau-fixed circle in this affine chart has radius h_base^{\pm 1}
    h_base = real_struct.T[sample.base][0, 1].real
    radius = 1.0 / h_base if comp == 0 else h_base
    w = w / radius
    inside = np.abs(w[sample.base]) < 1.0
    if not inside:
        w = 1.0 / w
    wx, wy = chart.dx_dy(w)
    lam = 1.0 - np.abs(w) ** 2
    lam = np.where(np.abs(lam) < 1e-12, 1e-12, lam)
    conf = 4.0 / lam ** 2
    n1, n2 = chart.resolution
    g = np.zeros((n1, n2, 2, 2))
    g[:, :, 0, 0] = conf * np.abs(wx) ** 2
    g[:, :, 1, 1] = conf * np.abs(wy) ** 2
    g[:, :, 0, 1] = g[:, :, 1, 0] = conf * (wx * np.conj(wy)).real
    return SymmetricTensorField(chart, g)
