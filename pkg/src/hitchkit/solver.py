"""Newton solver for the diagonal reductions of the self-duality equations.

With the convention lap = 4 d_z d_zbar and diagonal metric entries
h_k = exp(c_k + (S u)_k) parameterized by independent unknowns u_i, the
reduced equations read

    lap u_i = 4 * rhs_i(u),   rhs_i = the i-th diagonal of [phi, phi*_H]

expressed through the independent unknowns (see docs/reduced_equations.md
for the per-kind derivation and the two calibration anchors):

    rank 2        lap u = 4 (|b|^2 e^{2u} - |a|^2 e^{-2u}),   h = diag(e^-u, e^u)
    cyclic 3      lap u1 = 4 (|q3|^2 e^{2u1} - e^{-u1}),      h = (e^u1, 1, e^-u1)
    cyclic 4,     lap u1 = 4 (|q4|^2 e^{2u1} - e^{u2-u1})
      q3 = 0      lap u2 = 4 (e^{u2-u1} - e^{-2u2}),          h = (e^u1, e^u2, e^-u2, e^-u1)
    cyclic 4,     lap u1 = 4 (|q3|^2 e^{u1+u2} - e^{u2-u1})
      q4 = 0      lap u2 = 4 (e^{u2-u1} + |q3|^2 e^{u1+u2} - e^{-2u2})

Tensor products solve their two rank-2 factors and assemble the product
metric; symmetric powers solve the rank-2 base and raise it to the recorded
gauge-constant powers.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.sparse import csr_matrix, eye as speye, bmat as spbmat, diags as spdiags
from scipy.sparse.linalg import LinearOperator, cg, gmres, splu

from .bundles import CYCLIC3, CYCLIC4, SL2R, SYMMETRIC_POWER, TENSOR, HiggsBundleSpec, check_stability
from .charts import DISC, RECTANGLE, TORUS, DomainChart
from .errors import (
    ChartMismatch,
    MissingBoundaryData,
    NonConvergence,
    UnstableInput,
)

PERIODIC = "periodic"
DIRICHLET = "dirichlet"


@dataclass
class SolverConfig:
    max_iterations: int = 40
    residual_tolerance: float = 1e-11
    damping: float = 1.0
    boundary: str = PERIODIC
    # Dirichlet data: one array per independent unknown (log scale), each
    # broadcastable to the grid; values are read on the boundary node set.
    boundary_values: list | None = None
    initial_guess: str = "constant_balance"   # or "zero" / "provided"
    provided_guess: list | None = None

    def __post_init__(self):
        if self.residual_tolerance <= 0:
            raise ValueError("residual tolerance must be positive")
        if not (0 < self.damping <= 1):
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class HarmonicMetric:
    """Sampled positive diagonal entries of the harmonic metric."""

    chart: DomainChart
    h: list[np.ndarray]
    residual: float
    iterations: int
    converged: bool
    boundary: str = PERIODIC
    # independent unknowns (log scale) the solve worked with, for reassembly
    u: list[np.ndarray] = dc_field(default_factory=list)
    solve_seconds: float = 0.0

    @property
    def rank(self) -> int:
        return len(self.h)

    def det_defect(self) -> float:
        prod = np.ones(self.chart.resolution)
        for hk in self.h:
            prod = prod * hk
        return float(np.max(np.abs(prod - 1.0)))

    def summary(self) -> dict:
        return {
            "rank": self.rank,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "boundary": self.boundary,
            "det_defect": self.det_defect(),
        }


# ----------------------------------------------------------------------
# reduced systems


class _ReducedSystem:
    """One Toda-type system: p unknowns u_i, metric h_k = exp(c_k + S u)."""

    def __init__(self, spec: HiggsBundleSpec):
        self.spec = spec
        chart = spec.chart
        kind = spec.kind
        if kind == SL2R:
            self.p = 1
            self.S = np.array([[-1.0], [1.0]])
            self.c = np.zeros(2)
            self.a2 = np.abs(spec.entry(0, 1)) ** 2
            self.b2 = np.abs(spec.entry(1, 0)) ** 2
        elif kind == CYCLIC3:
            self.p = 1
            self.S = np.array([[1.0], [0.0], [-1.0]])
            self.c = np.zeros(3)
            self.q2 = np.abs(spec.entry(0, 2)) ** 2
        elif kind == CYCLIC4:
            self.p = 2
            self.S = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [-1.0, 0.0]])
            self.c = np.zeros(4)
            self.q3_case = (0, 2) in spec.phi_entries
            key = (0, 2) if self.q3_case else (0, 3)
            self.q2 = np.abs(spec.entry(*key)) ** 2
        else:
            raise ValueError(f"no direct reduced system for kind {kind}")
        self.chart = chart

    def rhs(self, u: list[np.ndarray]) -> list[np.ndarray]:
        kind = self.spec.kind
        if kind == SL2R:
            return [4.0 * (self.b2 * np.exp(2 * u[0]) - self.a2 * np.exp(-2 * u[0]))]
        if kind == CYCLIC3:
            return [4.0 * (self.q2 * np.exp(2 * u[0]) - np.exp(-u[0]))]
        u1, u2 = u
        e12 = np.exp(u2 - u1)
        if self.q3_case:
            eq = self.q2 * np.exp(u1 + u2)
            return [4.0 * (eq - e12), 4.0 * (e12 + eq - np.exp(-2 * u2))]
        eq = self.q2 * np.exp(2 * u1)
        return [4.0 * (eq - e12), 4.0 * (e12 - np.exp(-2 * u2))]

    def rhs_jacobian(self, u: list[np.ndarray]) -> np.ndarray:
        """Nodewise (p, p) array of d rhs_i / d u_j."""
        kind = self.spec.kind
        shape = self.chart.resolution
        if kind == SL2R:
            d = 8.0 * (self.b2 * np.exp(2 * u[0]) + self.a2 * np.exp(-2 * u[0]))
            return d.reshape((1, 1) + shape)
        if kind == CYCLIC3:
            d = 4.0 * (2 * self.q2 * np.exp(2 * u[0]) + np.exp(-u[0]))
            return d.reshape((1, 1) + shape)
        u1, u2 = u
        e12 = np.exp(u2 - u1)
        out = np.zeros((2, 2) + shape)
        if self.q3_case:
            eq = self.q2 * np.exp(u1 + u2)
            out[0, 0] = 4.0 * (eq + e12)
            out[0, 1] = 4.0 * (eq - e12)
            out[1, 0] = 4.0 * (-e12 + eq)
            out[1, 1] = 4.0 * (e12 + eq + 2 * np.exp(-2 * u2))
        else:
            eq = self.q2 * np.exp(2 * u1)
            out[0, 0] = 4.0 * (2 * eq + e12)
            out[0, 1] = -4.0 * e12
            out[1, 0] = -4.0 * e12
            out[1, 1] = 4.0 * (e12 + 2 * np.exp(-2 * u2))
        return out

    def initial_guess(self) -> list[np.ndarray]:
        """Pointwise algebraic balance where defined, clamped to [-10, 10]."""
        kind = self.spec.kind
        shape = self.chart.resolution
        tiny = 1e-300
        if kind == SL2R:
            if np.all(self.a2 > 1e-30) and np.all(self.b2 > 1e-30):
                u = 0.25 * np.log(self.a2 / np.maximum(self.b2, tiny))
                return [np.clip(u, -10, 10)]
            return [np.zeros(shape)]
        if kind == CYCLIC3:
            if np.all(self.q2 > 1e-30):
                return [np.clip(-np.log(self.q2) / 3.0, -10, 10)]
            return [np.zeros(shape)]
        if np.all(self.q2 > 1e-30):
            lq = 0.5 * np.log(self.q2)
            if self.q3_case:
                u1 = -lq
                u2 = -(np.log(2.0) + lq) / 3.0
            else:
                u1 = -0.75 * lq
                u2 = -0.25 * lq
            return [np.clip(u1, -10, 10), np.clip(u2, -10, 10)]
        return [np.zeros(shape), np.zeros(shape)]

    def assemble_h(self, u: list[np.ndarray]) -> list[np.ndarray]:
        logs = [self.c[k] + sum(self.S[k, i] * u[i] for i in range(self.p))
                for k in range(self.spec.rank)]
        return [np.exp(l) for l in logs]


# ----------------------------------------------------------------------
# linear algebra per chart kind


class _NewtonLinearSolver:
    """Solves (lap - D) delta = rhs for the stacked unknown blocks."""

    def __init__(self, chart: DomainChart, p: int, atol: float = 1e-14):
        self.chart = chart
        self.p = p
        self.atol = atol
        n1, n2 = chart.resolution
        if chart.kind == DISC:
            self.ni = n1 - 1          # interior rings
            self.shape_int = (self.ni, n2)
        elif chart.kind == RECTANGLE:
            self.mask = ~chart.boundary_mask()
            self.idx = np.where(self.mask.ravel())[0]
            self._rect_matrix = _rectangle_lap_matrix(chart)
        else:
            self.ni = n1

    # -- torus ---------------------------------------------------------

    def _solve_torus(self, D: np.ndarray, rhs: list[np.ndarray]) -> list[np.ndarray]:
        chart, p = self.chart, self.p
        n1, n2 = chart.resolution
        n = n1 * n2

        def matvec(x):
            xs = x.reshape(p, n1, n2)
            out = np.empty_like(xs)
            for i in range(p):
                acc = -chart.laplacian(xs[i]).real
                for j in range(p):
                    acc += D[i, j] * xs[j]
                out[i] = acc
            return out.ravel()

        cbar = [max(np.mean(D[i, i]), 1e-8) for i in range(p)]
        tb, t = np.conj(chart.tau), chart.tau
        mz = (tb * chart._ks - chart._kt) / (tb - t)
        mzb = (t * chart._ks - chart._kt) / (t - tb)
        lap_mult = (4.0 * mz * mzb).real   # non-positive multipliers

        def precond(x):
            xs = x.reshape(p, n1, n2)
            out = np.empty_like(xs)
            for i in range(p):
                fh = np.fft.fft2(xs[i])
                out[i] = np.fft.ifft2(fh / (-lap_mult + cbar[i])).real
            return out.ravel()

        A = LinearOperator((p * n, p * n), matvec=matvec)
        M = LinearOperator((p * n, p * n), matvec=precond)
        b = np.stack([r for r in rhs]).ravel()
        x, info = cg(A, b, rtol=1e-10, atol=self.atol, maxiter=500, M=M)
        if info != 0:
            x, info = cg(A, b, rtol=1e-7, atol=self.atol, maxiter=2000, M=M)
        return [x.reshape(p, n1, n2)[i] for i in range(p)]

    # -- disc ----------------------------------------------------------

    def _disc_radial_parts(self):
        """Split the interior radial operator into plain and folded parts.

        Rows/columns range over the interior rings; ``folded`` collects the
        across-origin ghost contributions, which pick up a (-1)^m sign per
        azimuthal mode m. Columns hitting the Dirichlet ring drop out.
        """
        chart = self.chart
        ni = self.ni
        w1, starts = chart._radial_w1
        w2, _ = chart._radial_w2
        width = w1.shape[1]
        pad = width // 2
        r = chart.r
        plain = np.zeros((ni, ni))
        folded = np.zeros((ni, ni))
        for k in range(ni):
            lo = starts[k]
            for s in range(width):
                p_idx = lo + s            # padded index
                wgt = w2[k, s] + w1[k, s] / r[k]
                if p_idx < pad:
                    folded[k, pad - 1 - p_idx] += wgt
                elif p_idx - pad < ni:
                    plain[k, p_idx - pad] += wgt
        return plain, folded

    def _disc_mode_factors(self, cbar: list[np.ndarray]):
        chart = self.chart
        ni = self.ni
        if not hasattr(self, "_radial_parts"):
            self._radial_parts = self._disc_radial_parts()
        plain, folded = self._radial_parts
        inv_r2 = 1.0 / chart.r[:ni] ** 2
        factors = []
        for i in range(self.p):
            per_mode = []
            for m in chart._mtheta:
                sign = (-1.0) ** int(round(abs(m)))
                L = plain + sign * folded
                L = L - np.diag(m ** 2 * inv_r2 + cbar[i][:ni])
                per_mode.append(lu_factor(L))
            factors.append(per_mode)
        return factors

    def _solve_disc(self, D: np.ndarray, rhs: list[np.ndarray]) -> list[np.ndarray]:
        chart, p = self.chart, self.p
        n1, n2 = chart.resolution
        ni = self.ni
        n = ni * n2

        def embed(x):
            full = np.zeros((n1, n2))
            full[:ni] = x
            return full

        def matvec(x):
            xs = x.reshape(p, ni, n2)
            out = np.empty_like(xs)
            for i in range(p):
                acc = -chart.laplacian(embed(xs[i])).real[:ni]
                for j in range(p):
                    acc += D[i, j][:ni] * xs[j]
                out[i] = acc
            return out.ravel()

        # radial profile of the diagonal term: exact for radial data
        cbar = [np.maximum(D[i, i].mean(axis=1), 1e-8) for i in range(p)]
        factors = self._disc_mode_factors(cbar)

        def precond(x):
            xs = x.reshape(p, ni, n2)
            out = np.empty_like(xs)
            for i in range(p):
                fh = np.fft.fft(xs[i], axis=1)
                sol = np.empty_like(fh)
                for jm in range(n2):
                    sol[:, jm] = lu_solve(factors[i][jm], -fh[:, jm])
                out[i] = np.fft.ifft(sol, axis=1).real
            return out.ravel()

        A = LinearOperator((p * n, p * n), matvec=matvec)
        M = LinearOperator((p * n, p * n), matvec=precond)
        b = np.stack([r[:ni] for r in rhs]).ravel()
        x, info = gmres(A, b, rtol=1e-8, atol=self.atol, restart=80, maxiter=8, M=M)
        if info != 0:
            x, info = gmres(A, b, rtol=1e-5, atol=self.atol, restart=120, maxiter=12, M=M)
        out = []
        for i in range(p):
            out.append(embed(x.reshape(p, ni, n2)[i]))
        return out

    # -- rectangle -----------------------------------------------------

    def _solve_rect(self, D: np.ndarray, rhs: list[np.ndarray]) -> list[np.ndarray]:
        chart, p = self.chart, self.p
        n1, n2 = chart.resolution
        idx = self.idx
        L = self._rect_matrix[idx][:, idx]
        blocks = []
        for i in range(p):
            row = []
            for j in range(p):
                dij = spdiags(D[i, j].ravel()[idx])
                row.append(-L + dij if i == j else dij)
            blocks.append(row)
        A = spbmat(blocks, format="csc")
        b = np.concatenate([r.ravel()[idx] for r in rhs])
        x = splu(A).solve(b)
        out = []
        ni = len(idx)
        for i in range(p):
            full = np.zeros(n1 * n2)
            full[idx] = x[i * ni:(i + 1) * ni]
            out.append(full.reshape(n1, n2))
        return out

    def solve(self, D: np.ndarray, rhs: list[np.ndarray]) -> list[np.ndarray]:
        if self.chart.kind == TORUS:
            return self._solve_torus(D, rhs)
        if self.chart.kind == DISC:
            return self._solve_disc(D, rhs)
        return self._solve_rect(D, rhs)


def _rectangle_lap_matrix(chart: DomainChart) -> csr_matrix:
    """Sparse matrix of the rectangle Laplacian (matches chart.laplacian)."""
    n1, n2 = chart.resolution
    rows, cols, vals = [], [], []
    w2x, startsx = chart._radial_w2
    w2y, startsy = chart._axial_w2
    width = w2x.shape[1]
    for k in range(n1):
        lo = startsx[k]
        for s in range(width):
            for j in range(n2):
                rows.append(k * n2 + j)
                cols.append((lo + s) * n2 + j)
                vals.append(w2x[k, s])
    for k in range(n2):
        lo = startsy[k]
        for s in range(width):
            for i in range(n1):
                rows.append(i * n2 + k)
                cols.append(i * n2 + lo + s)
                vals.append(w2y[k, s])
    return csr_matrix((vals, (rows, cols)), shape=(n1 * n2, n1 * n2))


# ----------------------------------------------------------------------
# public entry points


def _boundary_nodes(chart: DomainChart) -> np.ndarray:
    return chart.boundary_mask()


def _solve_reduced(system: _ReducedSystem, config: SolverConfig):
    chart = system.chart
    p = system.p
    periodic = config.boundary == PERIODIC

    if chart.kind == TORUS and not periodic:
        raise MissingBoundaryData("torus charts solve with periodic boundary")
    if chart.kind != TORUS:
        if periodic:
            raise MissingBoundaryData(
                f"{chart.kind} charts need Dirichlet boundary data")
        if config.boundary_values is None or len(config.boundary_values) != p:
            raise MissingBoundaryData(
                f"need {p} Dirichlet data array(s) for the independent unknowns")

    bmask = _boundary_nodes(chart)

    if config.initial_guess == "zero":
        u = [np.zeros(chart.resolution) for _ in range(p)]
    elif config.initial_guess == "provided":
        if not config.provided_guess or len(config.provided_guess) != p:
            raise MissingBoundaryData(f"provided guess needs {p} array(s)")
        u = [np.array(g, dtype=float) * np.ones(chart.resolution)
             for g in config.provided_guess]
    else:
        u = system.initial_guess()

    if not periodic:
        for i in range(p):
            data = np.asarray(config.boundary_values[i], dtype=float)
            data = data * np.ones(chart.resolution)
            u[i] = u[i].copy()
            u[i][bmask] = data[bmask]

    def residual_fields(uu):
        """Residual fields plus the rounding floor of their evaluation."""
        rhs = system.rhs(uu)
        res = []
        floor = 0.0
        for i in range(p):
            lap = chart.laplacian(uu[i]).real
            r = lap - rhs[i]
            if not periodic:
                r = r.copy()
                r[bmask] = 0.0
            res.append(r)
            floor = max(floor, float(np.max(np.abs(lap) + np.abs(rhs[i]))))
        return res, 64.0 * np.finfo(float).eps * floor

    lin = _NewtonLinearSolver(chart, p, atol=0.01 * config.residual_tolerance)
    res, noise = residual_fields(u)
    res_norm = max(float(np.max(np.abs(r))) for r in res)
    iterations = 0
    stalls = 0
    for iterations in range(1, config.max_iterations + 1):
        # the discrete residual cannot be driven below its evaluation noise
        if res_norm < max(config.residual_tolerance, noise):
            iterations -= 1
            break
        D = system.rhs_jacobian(u)
        delta = lin.solve(D, res)
        lam = config.damping
        while True:
            trial = [u[i] + lam * delta[i] for i in range(p)]
            trial_res, trial_noise = residual_fields(trial)
            trial_norm = max(float(np.max(np.abs(r))) for r in trial_res)
            if trial_norm <= res_norm or lam < 1e-4:
                break
            lam *= 0.5
        # damped Newton stalling on a residual that already dropped below
        # 1e-6 means the evaluation-noise floor of the discretization was hit
        stalls = stalls + 1 if trial_norm > 0.5 * res_norm else 0
        u, res, res_norm, noise = trial, trial_res, trial_norm, trial_noise
        if stalls >= 2 and res_norm < 1e-6:
            break
        if res_norm > 1e12:
            break
    converged = (res_norm < max(config.residual_tolerance, noise)
                 or (stalls >= 2 and res_norm < 1e-6))
    return u, res_norm, iterations, converged


def solve_hitchin(spec: HiggsBundleSpec, chart: DomainChart | None = None,
                  config: SolverConfig | None = None) -> HarmonicMetric:
    """Solve the reduced equations for the diagonal harmonic metric.

    Rank-2 inputs are gated by the stability check; tensor and symmetric
    power kinds solve their underlying rank-2 problems and assemble the
    diagonal per the product/power patterns.
    """
    if chart is None:
        chart = spec.chart
    if chart is not spec.chart:
        raise ChartMismatch("spec was built on a different chart")
    if config is None:
        config = SolverConfig(
            boundary=PERIODIC if chart.kind == TORUS else DIRICHLET)

    t0 = time.perf_counter()

    if spec.kind == SL2R:
        rep = check_stability(spec)
        if not rep.admissible:
            raise UnstableInput(f"{rep.verdict}: {'; '.join(rep.reasons)}")
        if (0, 1) not in spec.phi_entries and (1, 0) not in spec.phi_entries:
            # strictly polystable a = b = 0: any constant solves; take h = 1
            ones = np.ones(chart.resolution)
            return HarmonicMetric(chart, [ones, ones.copy()], 0.0, 0, True,
                                  config.boundary, [np.zeros(chart.resolution)],
                                  time.perf_counter() - t0)

    if spec.kind == TENSOR:
        cfg1, cfg2 = _split_tensor_config(config)
        m1 = solve_hitchin(spec.factors[0], chart, cfg1)
        m2 = solve_hitchin(spec.factors[1], chart, cfg2)
        return assemble_tensor_metric(spec, m1, m2)

    if spec.kind == SYMMETRIC_POWER:
        base_metric = solve_hitchin(spec.base, chart, config)
        return assemble_power_metric(spec, base_metric)

    system = _ReducedSystem(spec)
    u, res_norm, iterations, converged = _solve_reduced(system, config)
    if not converged:
        raise NonConvergence(iterations, res_norm)
    h = system.assemble_h(u)
    return HarmonicMetric(chart, h, res_norm, iterations, converged,
                          config.boundary, u, time.perf_counter() - t0)


def _split_tensor_config(config: SolverConfig) -> tuple[SolverConfig, SolverConfig]:
    if config.boundary == PERIODIC:
        c = SolverConfig(config.max_iterations, config.residual_tolerance,
                         config.damping, PERIODIC)
        return c, c
    if config.boundary_values is None or len(config.boundary_values) != 2:
        raise MissingBoundaryData("tensor solves need Dirichlet data per factor")
    mk = lambda bv: SolverConfig(config.max_iterations, config.residual_tolerance,
                                 config.damping, DIRICHLET, [bv],
                                 config.initial_guess)
    return mk(config.boundary_values[0]), mk(config.boundary_values[1])


def assemble_tensor_metric(spec: HiggsBundleSpec, m1: HarmonicMetric,
                           m2: HarmonicMetric) -> HarmonicMetric:
    """Product metric diag(1/(h1 h2), h2/h1, h1/h2, h1 h2) of two rank-2 solves."""
    h1 = m1.h[1]
    h2 = m2.h[1]
    h = [1.0 / (h1 * h2), h2 / h1, h1 / h2, h1 * h2]
    return HarmonicMetric(
        spec.chart, h, max(m1.residual, m2.residual),
        m1.iterations + m2.iterations, m1.converged and m2.converged,
        m1.boundary, [m1.u[0], m2.u[0]],
        m1.solve_seconds + m2.solve_seconds)


def assemble_power_metric(spec: HiggsBundleSpec,
                          base: HarmonicMetric) -> HarmonicMetric:
    """Diagonal of the induced power metric from the rank-2 solve."""
    m = spec.power
    u = base.u[0]
    h = [np.exp(spec.gauge_log_constants[k] + (2 * k - m) * u)
         for k in range(m + 1)]
    return HarmonicMetric(spec.chart, h, base.residual, base.iterations,
                          base.converged, base.boundary, [u],
                          base.solve_seconds)


def hitchin_residual(spec: HiggsBundleSpec, metric: HarmonicMetric) -> np.ndarray:
    """Independent per-node residual of the reduced equations.

    Recomputes lap u_i - rhs_i(u) from the stored diagonal entries with the
    chart calculus operators (not the solver's linearization). Boundary rows
    of Dirichlet solves are reported as zero.
    """
    if metric.chart is not spec.chart:
        raise ChartMismatch("metric lives on a different chart")
    chart = spec.chart
    if spec.kind == TENSOR:
        r1 = hitchin_residual(spec.factors[0], _factor_metric(metric, 0))
        r2 = hitchin_residual(spec.factors[1], _factor_metric(metric, 1))
        return np.maximum(r1, r2)
    if spec.kind == SYMMETRIC_POWER:
        return hitchin_residual(spec.base, _base_metric(metric))
    if spec.kind == SL2R and (0, 1) not in spec.phi_entries \
            and (1, 0) not in spec.phi_entries:
        u = np.log(metric.h[1])
        return np.abs(chart.laplacian(u).real)
    system = _ReducedSystem(spec)
    u = metric.u if metric.u else _recover_u(spec, metric)
    rhs = system.rhs(u)
    out = np.zeros(chart.resolution)
    bmask = chart.boundary_mask() if metric.boundary == DIRICHLET else None
    for i in range(system.p):
        r = np.abs(chart.laplacian(u[i]).real - rhs[i])
        if bmask is not None:
            r[bmask] = 0.0
        out = np.maximum(out, r)
    return out


def _recover_u(spec: HiggsBundleSpec, metric: HarmonicMetric) -> list[np.ndarray]:
    if spec.kind == SL2R:
        return [np.log(metric.h[1])]
    if spec.kind == CYCLIC3:
        return [np.log(metric.h[0])]
    return [np.log(metric.h[0]), np.log(metric.h[1])]


def _factor_metric(metric: HarmonicMetric, i: int) -> HarmonicMetric:
    u = metric.u[i]
    return HarmonicMetric(metric.chart, [np.exp(-u), np.exp(u)],
                          metric.residual, metric.iterations, metric.converged,
                          metric.boundary, [u])


def _base_metric(metric: HarmonicMetric) -> HarmonicMetric:
    u = metric.u[0]
    return HarmonicMetric(metric.chart, [np.exp(-u), np.exp(u)],
                          metric.residual, metric.iterations, metric.converged,
                          metric.boundary, [u])


def hitchin_bound(metric: HarmonicMetric, q2) -> float:
    """Sup over nodes of |h^-2 conj(q2)| for a rank-2 solve with b = 1."""
    q = q2.data if hasattr(q2, "data") else np.asarray(q2)
    h = metric.h[1]
    return float(np.max(np.abs(q) / h ** 2))


def poincare_log_h(chart: DomainChart) -> np.ndarray:
    """log of the curvature -1 conformal factor 1/(1-|z|^2) on the chart."""
    return -np.log(1.0 - np.abs(chart.nodes) ** 2)


def metric_to_csv(metric: HarmonicMetric, path) -> None:
    """CSV rows (index1, index2, h_1 .. h_rank)."""
    import csv as _csv
    with open(path, "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["index1", "index2"] + [f"h_{k+1}" for k in range(metric.rank)])
        n1, n2 = metric.chart.resolution
        for i in range(n1):
            for j in range(n2):
                writer.writerow([i, j] + [repr(float(hk[i, j])) for hk in metric.h])
