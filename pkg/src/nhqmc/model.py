"""Time-dependent non-Hermitian Hamiltonian models and spectral scans.

A model keeps the Hermitian part, the anti-Hermitian part, and a real
shift schedule that is folded into the anti-Hermitian part's identity
term so that downstream propagators only ever see the combined
generator K(k, t) = H_r(t) + k * (H_i(t) - shift(t) * I).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .pauli import (
    DEFAULT_DENSE_CAP,
    PauliInputError,
    PauliString,
    PauliSum,
    hermitian_split,
    to_matrix,
)

GRID_POINTS_PER_UNIT_TIME = 64
POSITIVITY_TOL = 1e-9


@dataclass(frozen=True)
class Schedule:
    """Scalar coefficient schedule over time.

    kinds:
      constant            params = (value,)
      piecewise-linear    params = (t0, v0, t1, v1, ...), knots strictly increasing
      harmonic            params = (amplitude, frequency, phase); value =
                          amplitude * sin(frequency * t + phase)
    """

    kind: str
    params: tuple[float, ...]

    def __post_init__(self):
        if self.kind not in ("constant", "piecewise-linear", "harmonic"):
            raise PauliInputError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and len(self.params) != 1:
            raise PauliInputError("constant schedule takes one parameter")
        if self.kind == "harmonic" and len(self.params) != 3:
            raise PauliInputError("harmonic schedule takes (amplitude, frequency, phase)")
        if self.kind == "piecewise-linear":
            knots = self.params[0::2]
            if len(self.params) < 4 or len(self.params) % 2:
                raise PauliInputError("piecewise-linear needs (t, v) pairs")
            if any(b <= a for a, b in zip(knots, knots[1:])):
                raise PauliInputError("piecewise-linear knots must be strictly increasing")

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def value(self, t):
        """Evaluate at scalar or array t."""
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.broadcast_to(self.params[0], t.shape).copy()
        elif self.kind == "harmonic":
            a, w, ph = self.params
            out = a * np.sin(w * t + ph)
        else:
            knots = np.asarray(self.params[0::2])
            vals = np.asarray(self.params[1::2])
            out = np.interp(t, knots, vals)
        return out if out.ndim else float(out)

    def scaled(self, factor: float) -> "Schedule":
        if self.kind == "constant":
            return Schedule("constant", (self.params[0] * factor,))
        if self.kind == "harmonic":
            a, w, ph = self.params
            return Schedule("harmonic", (a * factor, w, ph))
        p = list(self.params)
        p[1::2] = [v * factor for v in p[1::2]]
        return Schedule("piecewise-linear", tuple(p))


def constant(value: float) -> Schedule:
    return Schedule("constant", (float(value),))


def tabulated(ts: Sequence[float], vs: Sequence[float]) -> Schedule:
    pairs = []
    for t, v in zip(ts, vs):
        pairs.extend((float(t), float(v)))
    return Schedule("piecewise-linear", tuple(pairs))


@dataclass
class NonHermitianModel:
    """H(t) = H_r(t) - i H_i(t) with a real shift schedule for H_i.

    hr_terms / hi_terms are (PauliString, Schedule) pairs with real-valued
    schedules; shift is the compensation schedule E_i0(t).
    """

    n_qubits: int
    hr_terms: list[tuple[PauliString, Schedule]]
    hi_terms: list[tuple[PauliString, Schedule]]
    shift: Schedule = field(default_factory=lambda: constant(0.0))

    @property
    def is_time_independent(self) -> bool:
        return all(
            s.is_constant for _, s in self.hr_terms
        ) and all(s.is_constant for _, s in self.hi_terms) and self.shift.is_constant

    def hr_sum(self, t: float) -> PauliSum:
        return PauliSum(self.n_qubits, [(p, s.value(t)) for p, s in self.hr_terms])

    def hi_sum(self, t: float, shifted: bool = False) -> PauliSum:
        terms = [(p, complex(s.value(t))) for p, s in self.hi_terms]
        if shifted:
            terms.append(
                (PauliString.identity(self.n_qubits), complex(-self.shift.value(t)))
            )
        return PauliSum(self.n_qubits, terms)

    def k_generator(self, k: float, t: float = 0.0) -> PauliSum:
        """Hermitian combination K(k, t) = H_r(t) + k * (H_i(t) - E_i0(t) I)."""
        return self.hr_sum(t) + float(k) * self.hi_sum(t, shifted=True)

    def k_generator_terms(
        self, t: float = 0.0
    ) -> tuple[list[PauliString], np.ndarray, np.ndarray]:
        """Pauli strings with (r_n, i_n) so that K(k) has coeffs r_n + k i_n.

        Shared term layout for propagators that must rebuild K(k) cheaply
        for many k values.
        """
        hr = self.hr_sum(t)
        hi = self.hi_sum(t, shifted=True)
        codes = sorted(
            {s.code for s, _ in hr.items()} | {s.code for s, _ in hi.items()}
        )
        strings = [PauliString(c, self.n_qubits) for c in codes]
        r = np.array([hr.coeff(s).real for s in strings])
        i = np.array([hi.coeff(s).real for s in strings])
        return strings, r, i

    def h_tilde_matrix(self, t: float, dense_cap: int = DEFAULT_DENSE_CAP) -> np.ndarray:
        """Dense shifted Hamiltonian H_r(t) - i (H_i(t) - E_i0(t) I)."""
        return to_matrix(self.hr_sum(t), dense_cap) - 1j * to_matrix(
            self.hi_sum(t, shifted=True), dense_cap
        )

    def check_positivity(self, T: float, grid_points: int = 0) -> None:
        if grid_points < 2:
            grid_points = max(2, int(GRID_POINTS_PER_UNIT_TIME * max(T, 1e-12)))
        for t in np.linspace(0.0, T, grid_points):
            m = to_matrix(self.hi_sum(t, shifted=True))
            lam = np.linalg.eigvalsh(m).min()
            if lam < -POSITIVITY_TOL:
                raise PauliInputError(
                    f"shifted anti-Hermitian part not PSD at t={t:g}: "
                    f"lambda_min={lam:.3e}"
                )


@dataclass
class SpectralSummary:
    """Tabulated extremes of H_i(t) and derived planner quantities."""

    times: np.ndarray
    e_i_min: np.ndarray
    e_i_max: np.ndarray
    delta_ei: float
    e_avg: float
    max_norm: float


def from_complex_sum(
    h, n_qubits: int | None = None, T: float = 0.0, grid_points: int = 0
) -> NonHermitianModel:
    """Build a model from a complex PauliSum or (coeff, string, schedule) list.

    The split is coefficient-wise per string; the shift is initialized to
    the minimal admissible value (tabulated E_i_min of H_i).
    """
    if isinstance(h, PauliSum):
        hr, hi = hermitian_split(h)
        model = NonHermitianModel(
            h.n_qubits,
            [(s, constant(c.real)) for s, c in hr.items()],
            [(s, constant(c.real)) for s, c in hi.items()],
        )
    else:
        if n_qubits is None:
            raise PauliInputError("n_qubits required for term-list input")
        hr_terms: list[tuple[PauliString, Schedule]] = []
        hi_terms: list[tuple[PauliString, Schedule]] = []
        for coeff, string, sched in h:
            c = complex(coeff)
            if abs(c.real) > 0:
                hr_terms.append((string, sched.scaled(c.real)))
            if abs(c.imag) > 0:
                hi_terms.append((string, sched.scaled(-c.imag)))
        model = NonHermitianModel(n_qubits, hr_terms, hi_terms)
    model.shift = minimal_shift(model, T, grid_points)
    return model


def _scan_times(T: float, grid_points: int) -> np.ndarray:
    if grid_points < 2:
        grid_points = max(2, int(GRID_POINTS_PER_UNIT_TIME * max(T, 1e-12)))
    return np.linspace(0.0, max(T, 0.0), grid_points)


def spectral_summary(
    model: NonHermitianModel, T: float, grid_points: int = 0
) -> SpectralSummary:
    """Dense eigensolver scan of H_i(t) extremes, bandwidth, and max norm."""
    times = _scan_times(T, grid_points)
    emin = np.empty_like(times)
    emax = np.empty_like(times)
    norms = np.empty_like(times)
    for j, t in enumerate(times):
        hi = to_matrix(model.hi_sum(t))
        lam = np.linalg.eigvalsh(hi)
        emin[j], emax[j] = lam[0], lam[-1]
        norms[j] = np.linalg.norm(model.h_tilde_matrix(t), 2)
    band = emax - emin
    span = times[-1] - times[0]
    e_avg = float(np.trapezoid(band, times) / span) if span > 0 else float(band[0])
    return SpectralSummary(
        times=times,
        e_i_min=emin,
        e_i_max=emax,
        delta_ei=float(band.max()),
        e_avg=e_avg,
        max_norm=float(norms.max()),
    )


def minimal_shift(
    model: NonHermitianModel, T: float = 0.0, grid_points: int = 0
) -> Schedule:
    """E_i0(t) = E_i_min(t), tabulated piecewise-linear on the scan grid."""
    if not model.hi_terms:
        return constant(0.0)
    if model.is_time_independent:
        lam = np.linalg.eigvalsh(to_matrix(model.hi_sum(0.0)))
        return constant(float(lam[0]))
    times = _scan_times(T, grid_points)
    vals = [
        float(np.linalg.eigvalsh(to_matrix(model.hi_sum(t))).min()) for t in times
    ]
    return tabulated(times, vals)
