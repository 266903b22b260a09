"""Discretized conformal charts and their complex calculus.

Three chart kinds are supported, all carrying a flat local coordinate z:

* ``Torus(tau)``  -- the parallelogram {s + t*tau : s, t in [0,1)} with doubly
  periodic storage; derivatives are spectral (exact on resolved Fourier modes).
* ``Disc(R)``     -- a polar grid with radial nodes offset by half a cell so
  that no node sits on the coordinate singularity at the origin; angular
  derivatives are spectral, radial ones use 5-point stencils (centered in the
  interior, across-origin folded at the center, biased at the rim).
* ``Rectangle(w, h)`` -- a Cartesian grid centered at 0 with 5-point stencils
  in both directions.

The Laplacian convention throughout the library is the flat operator
``lap = 4 d_z d_zbar`` in the chart coordinate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    IncompatibleSpec,
    InvalidModulus,
    InvalidRadius,
    InvalidResolution,
)

TORUS = "torus"
DISC = "disc"
RECTANGLE = "rectangle"

_MIN_RESOLUTION = 8
_STENCIL = 7   # radial / Cartesian stencil width (6th order centered)
_PAD = (_STENCIL - 1) // 2


def _fornberg_weights(xs: np.ndarray, x0: float, order: int) -> np.ndarray:
    """Finite-difference weights for d^order/dx^order at x0 on nodes xs.

    Classic recursion (Fornberg 1988); returns weights for derivative
    orders 0..order, shape (order+1, len(xs)).
    """
    n = len(xs)
    w = np.zeros((order + 1, n))
    w[0, 0] = 1.0
    c1 = 1.0
    for j in range(1, n):
        c2 = 1.0
        mn = min(j, order)
        for k in range(j):
            c3 = xs[j] - xs[k]
            c2 *= c3
            for m in range(mn, 0, -1):
                w[m, j] = c1 * (m * w[m - 1, j - 1] - (xs[j - 1] - x0) * w[m, j - 1]) / c2
            w[0, j] = -c1 * (xs[j - 1] - x0) * w[0, j - 1] / c2
            for m in range(mn, 0, -1):
                w[m, k] = ((xs[j] - x0) * w[m, k] - m * w[m - 1, k]) / c3
            w[0, k] = (xs[j] - x0) * w[0, k] / c3
        c1 = c2
    return w


class DomainChart:
    """A discretized conformal coordinate patch.

    Fields are stored as (n1, n2) arrays. Axis conventions:
      torus:     axis 0 = s (period 1), axis 1 = t (period tau)
      disc:      axis 0 = radius, axis 1 = angle
      rectangle: axis 0 = x, axis 1 = y
    """

    def __init__(self, kind: str, resolution: tuple[int, int], *,
                 tau: complex | None = None,
                 radius: float | None = None,
                 width: float | None = None,
                 height: float | None = None):
        n1, n2 = int(resolution[0]), int(resolution[1])
        if n1 < _MIN_RESOLUTION or n2 < _MIN_RESOLUTION:
            raise InvalidResolution(
                f"resolution {n1}x{n2} below the minimum {_MIN_RESOLUTION}")
        self.kind = kind
        self.resolution = (n1, n2)
        self.tau = None
        self.radius = None
        self.width = None
        self.height = None

        if kind == TORUS:
            tau = complex(tau)
            if not np.isfinite(tau) or tau.imag <= 0:
                raise InvalidModulus(f"torus modulus must have Im > 0, got {tau}")
            self.tau = tau
            s = np.arange(n1) / n1
            t = np.arange(n2) / n2
            self.nodes = s[:, None] + t[None, :] * tau
        elif kind == DISC:
            radius = float(radius)
            if not (0.0 < radius < 1.0):
                raise InvalidRadius(f"disc radius must lie in (0,1), got {radius}")
            if n2 % 2 != 0:
                raise InvalidResolution(
                    "disc charts need an even angular count for the across-origin fold")
            self.radius = radius
            self.dr = radius / n1
            self.r = (np.arange(n1) + 0.5) * self.dr
            self.theta = 2.0 * np.pi * np.arange(n2) / n2
            self.nodes = self.r[:, None] * np.exp(1j * self.theta)[None, :]
        elif kind == RECTANGLE:
            width, height = float(width), float(height)
            if width <= 0 or height <= 0:
                raise InvalidRadius(f"rectangle sides must be positive, got {width}x{height}")
            self.width, self.height = width, height
            self.dx = width / (n1 - 1)
            self.dy = height / (n2 - 1)
            self.x = -width / 2 + np.arange(n1) * self.dx
            self.y = -height / 2 + np.arange(n2) * self.dy
            self.nodes = self.x[:, None] + 1j * self.y[None, :]
        else:
            raise IncompatibleSpec(f"unknown chart kind {kind!r}")

        self._build_operators()

    # ------------------------------------------------------------------
    # construction helpers

    def _build_operators(self):
        n1, n2 = self.resolution
        if self.kind == TORUS:
            m1 = np.fft.fftfreq(n1, d=1.0 / n1)
            m2 = np.fft.fftfreq(n2, d=1.0 / n2)
            if n1 % 2 == 0:
                m1[n1 // 2] = 0.0  # drop the unmatched Nyquist mode
            if n2 % 2 == 0:
                m2[n2 // 2] = 0.0
            self._ks = (2j * np.pi * m1)[:, None]
            self._kt = (2j * np.pi * m2)[None, :]
        else:
            if self.kind == DISC:
                coords = np.concatenate((-self.r[_PAD - 1::-1], self.r))
                self._radial_w1, self._radial_w2 = self._axis_stencils(coords, pad=_PAD)
                m = np.fft.fftfreq(n2, d=1.0 / n2)
                if n2 % 2 == 0:
                    m[n2 // 2] = 0.0
                self._mtheta = m
            else:
                self._radial_w1, self._radial_w2 = self._axis_stencils(self.x, pad=0)
                self._axial_w1, self._axial_w2 = self._axis_stencils(self.y, pad=0)

    @staticmethod
    def _axis_stencils(coords: np.ndarray, pad: int):
        """Per-row 5-point weights for first/second derivatives along one axis.

        Row k uses a contiguous window of the (ghost-)padded axis; for the disc
        the two leading ghost rows are the across-origin fold, on bounded axes
        the edge rows fall back to biased windows.
        """
        npad = len(coords)
        n = npad - pad
        w1 = np.zeros((n, _STENCIL))
        w2 = np.zeros((n, _STENCIL))
        starts = np.zeros(n, dtype=int)  # window start in padded coordinates
        for k in range(n):
            p = k + pad
            lo = min(max(p - _PAD, 0), npad - _STENCIL)
            starts[k] = lo
            ws = _fornberg_weights(coords[lo:lo + _STENCIL], coords[p], 2)
            w1[k] = ws[1]
            w2[k] = ws[2]
        return (w1, starts), (w2, starts)

    def _pad_radial(self, f: np.ndarray) -> np.ndarray:
        """Prepend the across-origin ghost rings (disc only)."""
        n2 = self.resolution[1]
        fold = np.roll(f[:_PAD], n2 // 2, axis=-1)
        return np.concatenate((fold[::-1], f), axis=0)

    def _apply_axis(self, f: np.ndarray, weights, axis: int) -> np.ndarray:
        w, starts = weights
        if axis == 1:
            f = np.swapaxes(f, 0, 1)
        g = self._pad_radial(f) if (self.kind == DISC and axis == 0) else f
        win = np.lib.stride_tricks.sliding_window_view(g, _STENCIL, axis=0)
        out = np.einsum("ks,k...s->k...", w, win[starts])
        if axis == 1:
            out = np.swapaxes(out, 0, 1)
        return out

    def _dtheta(self, f: np.ndarray, power: int) -> np.ndarray:
        mult = (1j * self._mtheta) ** power
        return np.fft.ifft(np.fft.fft(f, axis=1) * mult[None, :], axis=1)

    # ------------------------------------------------------------------
    # calculus

    def d_z(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=complex)
        if self.kind == TORUS:
            tb, t = np.conj(self.tau), self.tau
            fh = np.fft.fft2(f)
            ds = np.fft.ifft2(fh * self._ks)
            dt = np.fft.ifft2(fh * self._kt)
            return (tb * ds - dt) / (tb - t)
        if self.kind == DISC:
            fr = self._apply_axis(f, self._radial_w1, 0)
            ft = self._dtheta(f, 1)
            phase = np.exp(-1j * self.theta)[None, :]
            return 0.5 * phase * (fr - 1j * ft / self.r[:, None])
        fx = self._apply_axis(f, self._radial_w1, 0)
        fy = self._apply_axis(f, self._axial_w1, 1)
        return 0.5 * (fx - 1j * fy)

    def d_zbar(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f, dtype=complex)
        if self.kind == TORUS:
            tb, t = np.conj(self.tau), self.tau
            fh = np.fft.fft2(f)
            ds = np.fft.ifft2(fh * self._ks)
            dt = np.fft.ifft2(fh * self._kt)
            return (t * ds - dt) / (t - tb)
        if self.kind == DISC:
            fr = self._apply_axis(f, self._radial_w1, 0)
            ft = self._dtheta(f, 1)
            phase = np.exp(1j * self.theta)[None, :]
            return 0.5 * phase * (fr + 1j * ft / self.r[:, None])
        fx = self._apply_axis(f, self._radial_w1, 0)
        fy = self._apply_axis(f, self._axial_w1, 1)
        return 0.5 * (fx + 1j * fy)

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        """Flat Laplacian 4 d_z d_zbar of a sampled field."""
        f = np.asarray(f, dtype=complex)
        if self.kind == TORUS:
            tb, t = np.conj(self.tau), self.tau
            mz = (tb * self._ks - self._kt) / (tb - t)
            mzb = (t * self._ks - self._kt) / (t - tb)
            return np.fft.ifft2(np.fft.fft2(f) * 4.0 * mz * mzb)
        if self.kind == DISC:
            frr = self._apply_axis(f, self._radial_w2, 0)
            fr = self._apply_axis(f, self._radial_w1, 0)
            ftt = self._dtheta(f, 2)
            r = self.r[:, None]
            return frr + fr / r + ftt / r**2
        fxx = self._apply_axis(f, self._radial_w2, 0)
        fyy = self._apply_axis(f, self._axial_w2, 1)
        return fxx + fyy

    def dx_dy(self, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Real-direction derivatives (f_x, f_y) via d_z, d_zbar."""
        dz = self.d_z(f)
        dzb = self.d_zbar(f)
        return dz + dzb, 1j * (dz - dzb)

    # ------------------------------------------------------------------
    # boundary / interior structure

    @property
    def periodic(self) -> bool:
        return self.kind == TORUS

    def boundary_mask(self) -> np.ndarray:
        n1, n2 = self.resolution
        mask = np.zeros((n1, n2), dtype=bool)
        if self.kind == DISC:
            mask[-1, :] = True
        elif self.kind == RECTANGLE:
            mask[0, :] = mask[-1, :] = True
            mask[:, 0] = mask[:, -1] = True
        return mask

    def interior_mask(self, layers: int = 1) -> np.ndarray:
        """Nodes at least `layers` grid layers away from any boundary."""
        n1, n2 = self.resolution
        mask = np.ones((n1, n2), dtype=bool)
        if self.kind == DISC:
            mask[n1 - layers:, :] = False
        elif self.kind == RECTANGLE:
            mask[:layers, :] = mask[n1 - layers:, :] = False
            mask[:, :layers] = mask[:, n2 - layers:] = False
        return mask

    def min_spacing(self) -> float:
        if self.kind == TORUS:
            return min(1.0 / self.resolution[0], abs(self.tau) / self.resolution[1])
        if self.kind == DISC:
            return min(self.dr, self.r[0] * 2 * np.pi / self.resolution[1])
        return min(self.dx, self.dy)

    def local_spacing(self, z: complex) -> float:
        if self.kind == DISC:
            r = max(abs(z), self.r[0])
            return min(self.dr, r * 2 * np.pi / self.resolution[1])
        return self.min_spacing()

    def contains(self, z: complex, slack: float = 1e-9) -> bool:
        if self.kind == TORUS:
            return True
        if self.kind == DISC:
            return abs(z) <= self.radius + slack
        return (abs(z.real) <= self.width / 2 + slack
                and abs(z.imag) <= self.height / 2 + slack)

    # ------------------------------------------------------------------
    # interpolation (separable cubic in chart coordinates, used by transport)

    def _fractional_coords(self, z: np.ndarray):
        """Grid coordinates (a, b) of points z, in index units per axis."""
        z = np.asarray(z, dtype=complex)
        if self.kind == TORUS:
            tau = self.tau
            t = z.imag / tau.imag
            s = z.real - t * tau.real
            n1, n2 = self.resolution
            return np.mod(s, 1.0) * n1, np.mod(t, 1.0) * n2
        if self.kind == DISC:
            n2 = self.resolution[1]
            a = np.abs(z) / self.dr - 0.5
            b = np.mod(np.angle(z), 2 * np.pi) / (2 * np.pi) * n2
            return a, b
        a = (z.real + self.width / 2) / self.dx
        b = (z.imag + self.height / 2) / self.dy
        return a, b

    @staticmethod
    def _cubic_weights(xi: np.ndarray) -> np.ndarray:
        """Lagrange weights at offsets 0..3 for fractional position xi."""
        w = np.empty(xi.shape + (4,))
        w[..., 0] = -(xi - 1) * (xi - 2) * (xi - 3) / 6.0
        w[..., 1] = xi * (xi - 2) * (xi - 3) / 2.0
        w[..., 2] = -xi * (xi - 1) * (xi - 3) / 2.0
        w[..., 3] = xi * (xi - 1) * (xi - 2) / 6.0
        return w

    def sample_at(self, F: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Separable cubic interpolation of a field stack F at points z.

        F has shape (n1, n2, ...); periodic axes wrap, the disc radial axis
        folds across the origin, bounded axes use one-sided windows.
        """
        n1, n2 = self.resolution
        a, b = self._fractional_coords(z)
        pad = _PAD if self.kind == DISC else 0

        # axis 0 windows in padded coordinates
        if self.kind == TORUS:
            i0 = np.floor(a).astype(int)
            xi = a - i0 + 1.0
            rows = (i0[..., None] + np.arange(-1, 3)) % n1
        else:
            amax = n1 - 1 + (0.0 if self.kind == DISC else 1e-12)
            a = np.clip(a, -0.5 if self.kind == DISC else 0.0, amax)
            start = np.clip(np.floor(a).astype(int) - 1, -pad, n1 - 4)
            xi = a - start
            rows = start[..., None] + np.arange(4)
        wi = self._cubic_weights(xi)

        # axis 1 windows
        if self.kind == RECTANGLE:
            bmax = n2 - 1 + 1e-12
            b = np.clip(b, 0.0, bmax)
            startb = np.clip(np.floor(b).astype(int) - 1, 0, n2 - 4)
            eta = b - startb
            cols = startb[..., None] + np.arange(4)
        else:
            j0 = np.floor(b).astype(int)
            eta = b - j0 + 1.0
            cols = (j0[..., None] + np.arange(-1, 3)) % n2
        wj = self._cubic_weights(eta)

        ii = rows[..., :, None] * np.ones((1, 4), dtype=int)
        jj = cols[..., None, :] * np.ones((4, 1), dtype=int)
        if self.kind == DISC:
            neg = ii < 0
            jj = np.where(neg, (jj + n2 // 2) % n2, jj)
            ii = np.where(neg, -1 - ii, ii)
        vals = F[ii, jj]                       # (..., 4, 4, trailing)
        w = wi[..., :, None] * wj[..., None, :]
        w = w.reshape(w.shape + (1,) * (F.ndim - 2))
        return np.sum(vals * w, axis=(z.ndim, z.ndim + 1))

    # ------------------------------------------------------------------

    def describe(self) -> dict:
        d = {"kind": self.kind, "resolution": list(self.resolution)}
        if self.kind == TORUS:
            d["tau"] = [self.tau.real, self.tau.imag]
        elif self.kind == DISC:
            d["radius"] = self.radius
        else:
            d["width"] = self.width
            d["height"] = self.height
        return d

    def refined(self, factor: int = 2) -> "DomainChart":
        n1, n2 = self.resolution
        res = (n1 * factor, n2 * factor)
        if self.kind == TORUS:
            return DomainChart(TORUS, res, tau=self.tau)
        if self.kind == DISC:
            return DomainChart(DISC, res, radius=self.radius)
        return DomainChart(RECTANGLE, res, width=self.width, height=self.height)


def make_chart(kind: str, resolution: Sequence[int], **params) -> DomainChart:
    """Construct a chart; see DomainChart for the kind-specific parameters."""
    return DomainChart(kind, tuple(resolution), **params)


# ----------------------------------------------------------------------
# fields


@dataclass
class ComplexField:
    """One complex sample per chart node, with a frame-weight tag.

    ``weight`` is the integer w such that the sample multiplies dz^{w/2};
    it is metadata used for validation and reporting only, all arithmetic
    happens on the raw samples in the fixed local frame.
    """

    chart: DomainChart
    data: np.ndarray
    weight: int = 0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=complex)
        if self.data.shape != self.chart.resolution:
            raise IncompatibleSpec(
                f"field shape {self.data.shape} != chart resolution {self.chart.resolution}")
        if not np.all(np.isfinite(self.data)):
            raise IncompatibleSpec("field contains non-finite samples")

    def is_zero(self, tol: float = 1e-12) -> bool:
        return bool(np.max(np.abs(self.data)) < tol)


@dataclass(frozen=True)
class FieldSpec:
    """Closed-form description of a holomorphic input field.

    form:
      "constant"   value = complex
      "poly_z"     coefficients c_k of sum c_k z^k (disc/rectangle charts)
      "fourier"    terms (m1, m2, c): sum c exp(2 pi i (m1 s + m2 t))
                   in lattice coordinates (torus charts only)
    """

    form: str
    coefficients: tuple = ()
    value: complex = 0.0

    def compatible(self, chart: DomainChart) -> bool:
        if self.form == "constant":
            return True
        if self.form == "poly_z":
            return chart.kind in (DISC, RECTANGLE)
        if self.form == "fourier":
            return chart.kind == TORUS
        return False


def constant_spec(value: complex) -> FieldSpec:
    return FieldSpec("constant", value=complex(value))


def poly_spec(coefficients: Sequence[complex]) -> FieldSpec:
    return FieldSpec("poly_z", coefficients=tuple(complex(c) for c in coefficients))


def fourier_spec(terms: Sequence[tuple[int, int, complex]]) -> FieldSpec:
    return FieldSpec("fourier",
                     coefficients=tuple((int(m1), int(m2), complex(c)) for m1, m2, c in terms))


def sample_field(chart: DomainChart, spec: FieldSpec, weight: int = 0) -> ComplexField:
    """Evaluate a closed-form field specification at every chart node."""
    if not spec.compatible(chart):
        raise IncompatibleSpec(f"{spec.form} spec not valid on a {chart.kind} chart")
    n1, n2 = chart.resolution
    if spec.form == "constant":
        data = np.full((n1, n2), spec.value, dtype=complex)
    elif spec.form == "poly_z":
        data = np.zeros((n1, n2), dtype=complex)
        for c in reversed(spec.coefficients):
            data = data * chart.nodes + c
    else:
        s = (np.arange(n1) / n1)[:, None]
        t = (np.arange(n2) / n2)[None, :]
        data = np.zeros((n1, n2), dtype=complex)
        for m1, m2, c in spec.coefficients:
            data += c * np.exp(2j * np.pi * (m1 * s + m2 * t))
    return ComplexField(chart, data, weight)


def d_z(field: ComplexField) -> ComplexField:
    return ComplexField(field.chart, field.chart.d_z(field.data), field.weight + 2)


def d_zbar(field: ComplexField) -> ComplexField:
    return ComplexField(field.chart, field.chart.d_zbar(field.data), field.weight)


def laplacian(field: ComplexField) -> ComplexField:
    return ComplexField(field.chart, field.chart.laplacian(field.data), field.weight)


def holomorphy_residual(field: ComplexField) -> float:
    """Max-norm of d_zbar(field): zero iff the samples are holomorphic."""
    return float(np.max(np.abs(field.chart.d_zbar(field.data))))


def field_to_csv(field: ComplexField, path) -> None:
    """One row per node: (index1, index2, Re z, Im z, Re f, Im f)."""
    chart = field.chart
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index1", "index2", "re_z", "im_z", "re_f", "im_f"])
        n1, n2 = chart.resolution
        for i in range(n1):
            for j in range(n2):
                z = chart.nodes[i, j]
                v = field.data[i, j]
                writer.writerow([i, j, repr(z.real), repr(z.imag),
                                 repr(v.real), repr(v.imag)])
