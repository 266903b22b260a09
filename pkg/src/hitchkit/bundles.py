"""Normal forms of the Higgs bundles treated by the library.

Five structural kinds are supported:

* rank-2 real forms  E = L + L^{-1},  phi = [[0, a], [b, 0]]
* cyclic rank 3      E = K + O + K^{-1}, companion phi with top entry q3
* cyclic rank 4      K^{3/2} + K^{1/2} + K^{-1/2} + K^{-3/2}, entries q3, q4
* tensor products of two rank-2 bundles (rank 4)
* odd symmetric powers of a rank-2 bundle (rank m+1)

All Higgs fields are stored entrywise as sampled coefficient functions in the
fixed local frame. ``weights`` lists, per summand, the exponent of the half
canonical bundle; the harmonic metric of every kind is diagonal with the first
summand carrying the *inverse* power of the scalar unknown(s) (the orientation
used consistently by the flat-connection assembly).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial

import numpy as np

from .charts import ComplexField, DomainChart, constant_spec, holomorphy_residual, sample_field
from .errors import (
    ChartMismatch,
    EvenPower,
    IncompatibleSpec,
    NonHolomorphicEntry,
    UnsupportedCoupling,
    WrongDifferentialCount,
    WrongKind,
)

SL2R = "sl2r"
CYCLIC3 = "cyclic3"
CYCLIC4 = "cyclic4"
TENSOR = "tensor_sl2xsl2"
SYMMETRIC_POWER = "symmetric_power"

ZERO_TOL = 1e-12        # zero-field test threshold for stability conditions
HOLOMORPHY_TOL = 1e-7   # validation gate for phi entries


@dataclass
class PairingData:
    """Constant bilinear pairing (Q) and volume-form (omega) matrices.

    ``Q_matrix`` is the symmetric pairing making the Higgs field Q-symmetric
    (for tensors, the Kronecker square of the rank-2 one). ``omega_matrix``
    is the volume-form datum; for tensors its Kronecker square is the
    signature-(2,2) quadratic form whose positive side is the anti-de-Sitter
    region, and ``ads_sign`` orients it so that the real locus of the
    first+last summand lies on the positive side.
    """

    Q_matrix: np.ndarray
    omega_matrix: np.ndarray | None = None
    ads_sign: float = 1.0


SL2R_Q = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
SL2R_OMEGA = (1j / np.sqrt(2.0)) * np.array([[0.0, 1.0], [-1.0, 0.0]], dtype=complex)


@dataclass
class HiggsBundleSpec:
    kind: str
    rank: int
    chart: DomainChart
    weights: tuple[Fraction, ...]
    phi_entries: dict[tuple[int, int], ComplexField]
    deg_L: tuple[int, ...] = ()
    genus: int = 2
    pairing: PairingData | None = None
    # tensor products keep their factors, symmetric powers their base bundle
    factors: tuple["HiggsBundleSpec", ...] = ()
    base: "HiggsBundleSpec | None" = None
    power: int = 1
    # additive constants of log h_k recording the basis gauge of symmetric powers
    gauge_log_constants: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def phi_array(self) -> np.ndarray:
        """Materialize phi as an (n1, n2, rank, rank) complex array."""
        n1, n2 = self.chart.resolution
        out = np.zeros((n1, n2, self.rank, self.rank), dtype=complex)
        for (i, j), f in self.phi_entries.items():
            out[:, :, i, j] = f.data
        return out

    def entry(self, i: int, j: int) -> np.ndarray:
        f = self.phi_entries.get((i, j))
        if f is None:
            return np.zeros(self.chart.resolution, dtype=complex)
        return f.data

    def digest(self) -> dict:
        return {
            "kind": self.kind,
            "rank": self.rank,
            "weights": [str(w) for w in self.weights],
            "deg_L": list(self.deg_L),
            "genus": self.genus,
            "phi_positions": sorted(list(self.phi_entries.keys())),
        }


@dataclass
class StabilityReport:
    verdict: str                      # Stable | StrictlyPolystable | Unstable | ViolatesMilnorWood
    reasons: list[str]

    @property
    def admissible(self) -> bool:
        return self.verdict in ("Stable", "StrictlyPolystable")


def _check_entry(name: str, f: ComplexField, chart: DomainChart) -> ComplexField:
    if f.chart is not chart:
        raise ChartMismatch(f"{name} lives on a different chart")
    res = holomorphy_residual(f)
    if res > HOLOMORPHY_TOL:
        raise NonHolomorphicEntry(f"{name} has holomorphy residual {res:.3e}")
    return f


def _one(chart: DomainChart, weight: int = 0) -> ComplexField:
    return sample_field(chart, constant_spec(1.0), weight)


def build_sl2r(a: ComplexField, b: ComplexField, deg_L: int, genus: int) -> HiggsBundleSpec:
    """Rank-2 bundle L + L^{-1} with phi = [[0, a], [b, 0]].

    ``deg_L`` and ``genus`` are topological metadata consumed by the
    stability check and the volume formula; the analysis itself only sees
    the sampled entries.
    """
    if a.chart is not b.chart:
        raise ChartMismatch("a and b must live on the same chart")
    chart = a.chart
    if genus < 2:
        raise IncompatibleSpec("genus must be at least 2")
    _check_entry("a", a, chart)
    _check_entry("b", b, chart)
    w = Fraction(deg_L, 2 * genus - 2)
    phi = {}
    if not a.is_zero():
        phi[(0, 1)] = a
    if not b.is_zero():
        phi[(1, 0)] = b
    return HiggsBundleSpec(
        kind=SL2R, rank=2, chart=chart, weights=(w, -w), phi_entries=phi,
        deg_L=(deg_L,), genus=genus,
        pairing=PairingData(SL2R_Q.copy(), SL2R_OMEGA.copy()),
    )


def fuchsian_spec(chart: DomainChart, q2: ComplexField | None = None,
                  genus: int = 2) -> HiggsBundleSpec:
    """The maximal-degree normal form: L = K^{1/2}, b = 1, a = q2."""
    if q2 is None:
        q2 = sample_field(chart, constant_spec(0.0), 4)
    return build_sl2r(q2, _one(chart), genus - 1, genus)


def check_stability(spec: HiggsBundleSpec) -> StabilityReport:
    """Apply the rank-2 polystability case analysis and the degree bound."""
    if spec.kind != SL2R:
        raise WrongKind("stability check applies to rank-2 specs only")
    deg = spec.deg_L[0]
    g = spec.genus
    a_zero = (0, 1) not in spec.phi_entries or spec.phi_entries[(0, 1)].is_zero(ZERO_TOL)
    b_zero = (1, 0) not in spec.phi_entries or spec.phi_entries[(1, 0)].is_zero(ZERO_TOL)
    reasons: list[str] = []
    if abs(deg) > g - 1:
        reasons.append(f"|deg(L)| = {abs(deg)} exceeds g-1 = {g - 1}")
        return StabilityReport("ViolatesMilnorWood", reasons)
    if deg > 0 and b_zero:
        reasons.append("deg(L)>0 requires b != 0")
    if deg < 0 and a_zero:
        reasons.append("deg(L)<0 requires a != 0")
    if deg == 0 and (a_zero != b_zero):
        reasons.append("deg(L)=0 requires a,b both nonzero or both zero")
    if reasons:
        return StabilityReport("Unstable", reasons)
    if deg == 0 and a_zero and b_zero:
        return StabilityReport("StrictlyPolystable", [])
    return StabilityReport("Stable", [])


def build_cyclic(n: int, differentials: list[ComplexField],
                 genus: int = 2) -> HiggsBundleSpec:
    """Cyclic rank-3/4 bundles with companion-type Higgs field.

    n=3 takes [q3]; n=4 takes [q3, q4] with at most one of them nonzero
    (the diagonal harmonic-metric ansatz covers only the two decoupled
    families).
    """
    if n == 3:
        if len(differentials) != 1:
            raise WrongDifferentialCount("rank 3 needs exactly [q3]")
        q3, = differentials
        chart = q3.chart
        _check_entry("q3", q3, chart)
        phi = {(1, 0): _one(chart), (2, 1): _one(chart)}
        if not q3.is_zero():
            phi[(0, 2)] = q3
        return HiggsBundleSpec(
            kind=CYCLIC3, rank=3, chart=chart,
            weights=(Fraction(1), Fraction(0), Fraction(-1)),
            phi_entries=phi, deg_L=(), genus=genus,
        )
    if n == 4:
        if len(differentials) != 2:
            raise WrongDifferentialCount("rank 4 needs exactly [q3, q4]")
        q3, q4 = differentials
        chart = q3.chart
        if q4.chart is not chart:
            raise ChartMismatch("q3 and q4 must live on the same chart")
        _check_entry("q3", q3, chart)
        _check_entry("q4", q4, chart)
        if not q3.is_zero(ZERO_TOL) and not q4.is_zero(ZERO_TOL):
            raise UnsupportedCoupling(
                "diagonal harmonic metrics require q3 = 0 or q4 = 0")
        phi = {(1, 0): _one(chart), (2, 1): _one(chart), (3, 2): _one(chart)}
        if not q3.is_zero():
            phi[(0, 2)] = q3
            phi[(1, 3)] = q3
        if not q4.is_zero():
            phi[(0, 3)] = q4
        return HiggsBundleSpec(
            kind=CYCLIC4, rank=4, chart=chart,
            weights=(Fraction(3, 2), Fraction(1, 2), Fraction(-1, 2), Fraction(-3, 2)),
            phi_entries=phi, deg_L=(), genus=genus,
        )
    raise WrongDifferentialCount(f"cyclic rank must be 3 or 4, got {n}")


def tensor_product(spec1: HiggsBundleSpec, spec2: HiggsBundleSpec) -> HiggsBundleSpec:
    """Tensor product of two rank-2 bundles (rank 4, pairing omega x omega)."""
    if spec1.kind != SL2R or spec2.kind != SL2R:
        raise WrongKind("tensor product takes two rank-2 specs")
    if spec1.chart is not spec2.chart:
        raise ChartMismatch("tensor factors must live on the same chart")
    chart = spec1.chart
    a1, b1 = spec1.entry(0, 1), spec1.entry(1, 0)
    a2, b2 = spec2.entry(0, 1), spec2.entry(1, 0)
    entries = {
        (0, 1): a2, (0, 2): a1,
        (1, 0): b2, (1, 3): a1,
        (2, 0): b1, (2, 3): a2,
        (3, 1): b1, (3, 2): b2,
    }
    phi = {pos: ComplexField(chart, data) for pos, data in entries.items()
           if np.max(np.abs(data)) > 0}
    w1, w2 = spec1.weights[0], spec2.weights[0]
    return HiggsBundleSpec(
        kind=TENSOR, rank=4, chart=chart,
        weights=(w1 + w2, w1 - w2, -w1 + w2, -w1 - w2),
        phi_entries=phi,
        deg_L=(spec1.deg_L[0], spec2.deg_L[0]),
        genus=spec1.genus,
        pairing=PairingData(np.kron(SL2R_Q, SL2R_Q),
                            np.kron(SL2R_OMEGA, SL2R_OMEGA),
                            ads_sign=-1.0),
        factors=(spec1, spec2),
    )


def _symmetric_gauge_log_constants(m: int) -> np.ndarray:
    """log of the diagonal metric constants of the unit-subdiagonal basis.

    In the monomial basis rescaled so that the subdiagonal of the induced
    Higgs field is identically b, the induced diagonal metric picks up the
    constants gamma_k = m! k!/(m-k)!; they are returned log'd and normalized
    to unit determinant.
    """
    gammas = np.array([factorial(m) * factorial(k) / factorial(m - k)
                       for k in range(m + 1)], dtype=float)
    logs = np.log(gammas)
    return logs - logs.mean()


def symmetric_power(spec: HiggsBundleSpec, m: int) -> HiggsBundleSpec:
    """Odd symmetric power of a rank-2 bundle, in the unit-subdiagonal basis.

    The basis is rescaled monomials chosen so that the induced Higgs field of
    [[0,0],[1,0]] has all subdiagonal entries equal to 1; the compensating
    constants are recorded in ``gauge_log_constants`` and enter the diagonal
    of the induced harmonic metric.
    """
    if spec.kind != SL2R:
        raise WrongKind("symmetric power takes a rank-2 spec")
    if m % 2 == 0:
        raise EvenPower("only odd symmetric powers produce unit-determinant bundles")
    if m == 1:
        return spec
    chart = spec.chart
    a, b = spec.entry(0, 1), spec.entry(1, 0)
    phi = {}
    for k in range(m):
        # subdiagonal: coefficient b; superdiagonal (k -> k-1): k (m-k+1) a
        if np.max(np.abs(b)) > 0:
            phi[(k + 1, k)] = ComplexField(chart, b.copy())
        ka = (k + 1) * (m - k) * a
        if np.max(np.abs(ka)) > 0:
            phi[(k, k + 1)] = ComplexField(chart, ka)
    weights = tuple(Fraction(m - 2 * k, 2) for k in range(m + 1))
    return HiggsBundleSpec(
        kind=SYMMETRIC_POWER, rank=m + 1, chart=chart,
        weights=weights, phi_entries=phi,
        deg_L=spec.deg_L, genus=spec.genus,
        base=spec, power=m,
        gauge_log_constants=_symmetric_gauge_log_constants(m),
    )


def symmetric_power_matrix(mat: np.ndarray, m: int) -> np.ndarray:
    """Induced action of a 2x2 matrix on the unit-subdiagonal power basis.

    Functorial: S(M1 M2) = S(M1) S(M2).
    """
    mat = np.asarray(mat, dtype=complex)
    out = np.zeros((m + 1, m + 1), dtype=complex)
    # column k: expand (M e1)^(m-k) (M e2)^k in monomials e1^(m-j) e2^j
    me1 = np.array([mat[0, 0], mat[1, 0]])
    me2 = np.array([mat[0, 1], mat[1, 1]])
    for k in range(m + 1):
        poly = np.array([1.0 + 0j])
        for _ in range(m - k):
            poly = np.convolve(poly, me1)
        for _ in range(k):
            poly = np.convolve(poly, me2)
        out[: m + 1, k] = poly
    alpha = np.array([factorial(m) / factorial(m - k) for k in range(m + 1)])
    return out * alpha[:, None] / alpha[None, :]


def q_symmetry_defect(spec: HiggsBundleSpec) -> float:
    """Max-norm of Q phi - phi^T Q over all nodes (zero for Q-symmetric phi)."""
    if spec.pairing is None:
        raise WrongKind("spec carries no pairing data")
    q = spec.pairing.Q_matrix
    phi = spec.phi_array()
    defect = np.einsum("ij,xyjk->xyik", q, phi) - np.einsum(
        "xyji,jk->xyik", phi, q)
    return float(np.max(np.abs(defect)))


def trace_defect(spec: HiggsBundleSpec) -> float:
    phi = spec.phi_array()
    return float(np.max(np.abs(np.trace(phi, axis1=2, axis2=3))))
