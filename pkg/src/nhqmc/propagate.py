"""State-vector backend and the four realizations of U(T, k).

exact      eigendecomposition (time-independent) or classic 4th-order
           integration with step halving (time-dependent)
trotter1   first-order product formula, fixed declaration order,
           midpoint coefficients
qdrift     randomized compiler, terms drawn proportionally to |c|
continuous Poisson-process gate sequences with fixed angle tau and a
           deterministic attenuation coefficient

All stochastic paths take an explicit numpy Generator.  Identity terms
never become gates; their exact global phase is applied separately so
stochastic realizations stay cheap and unbiased.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from ._fastops import apply_rotations, build_tables
from .pauli import DenseCapError, PauliString, PauliSum, to_matrix

NORM_TOL = 1e-10


class PropagatorError(ValueError):
    pass


@dataclass(frozen=True)
class PropagatorSpec:
    """Propagation method and its discretization parameter."""

    method: str  # exact | trotter1 | qdrift | continuous
    dt: float = 0.05
    tau: float = 0.05

    def __post_init__(self):
        if self.method not in ("exact", "trotter1", "qdrift", "continuous"):
            raise PropagatorError(f"unknown method {self.method!r}")
        if self.method in ("trotter1", "qdrift") and self.dt <= 0:
            raise PropagatorError("dt must be positive")
        if self.method == "continuous" and not 0.0 < self.tau < np.pi / 2:
            raise PropagatorError("tau must lie in (0, pi/2)")


def basis_state(n_qubits: int, label: str | int) -> np.ndarray:
    state = np.zeros(1 << n_qubits, dtype=complex)
    idx = int(label, 2) if isinstance(label, str) else int(label)
    state[idx] = 1.0
    return state


class TermSet:
    """Pauli terms with time-dependent real coefficients and gate tables.

    Splits off the identity term: `coeffs(t)` returns the non-identity
    coefficient vector, `identity_coeff(t)` the exact global-phase rate.
    """

    def __init__(
        self,
        strings: Sequence[PauliString],
        coeff_fn: Callable[[float], np.ndarray],
        time_independent: bool = False,
    ):
        keep = [j for j, s in enumerate(strings) if not s.is_identity]
        iden = [j for j, s in enumerate(strings) if s.is_identity]
        self.strings = [strings[j] for j in keep]
        self._keep = np.array(keep, dtype=np.int64)
        self._iden = np.array(iden, dtype=np.int64)
        self._coeff_fn = coeff_fn
        self.time_independent = time_independent
        self.perms, self.phases = build_tables(self.strings)
        if time_independent:
            self._c0 = self._split(coeff_fn(0.0))

    def _split(self, full: np.ndarray) -> tuple[np.ndarray, float]:
        full = np.asarray(full, dtype=float)
        return full[self._keep], float(full[self._iden].sum())

    def coeffs(self, t: float) -> np.ndarray:
        if self.time_independent:
            return self._c0[0]
        return self._split(self._coeff_fn(t))[0]

    def identity_coeff(self, t: float) -> float:
        if self.time_independent:
            return self._c0[1]
        return self._split(self._coeff_fn(t))[1]

    @staticmethod
    def from_sum(k_sum: PauliSum) -> "TermSet":
        strings = [s for s, _ in k_sum.items()]
        coeffs = np.array([c.real for _, c in k_sum.items()])
        return TermSet(strings, lambda t: coeffs, time_independent=True)

    @staticmethod
    def from_model(model, k: float) -> "TermSet":
        strings, r, i = model.k_generator_terms(0.0)
        if model.is_time_independent:
            c = r + k * i
            return TermSet(strings, lambda t: c, time_independent=True)

        def coeff_fn(t: float) -> np.ndarray:
            _, rt, it = model.k_generator_terms(t)
            return rt + k * it

        return TermSet(strings, coeff_fn, time_independent=False)


def apply_pauli_rotation(state: np.ndarray, string: PauliString, angle: float) -> np.ndarray:
    """exp(-i angle sigma) |state> = cos(angle)|state> - i sin(angle) sigma|state>."""
    if state.shape[0] != 1 << string.n_qubits:
        raise PropagatorError("state dimension does not match Pauli string length")
    perm, phase = string.dense_action()
    return math.cos(angle) * state - 1j * math.sin(angle) * (phase * state[perm])


def evolve_exact(
    K: PauliSum | Callable[[float], PauliSum],
    T: float,
    state: np.ndarray,
    dense_cap: int = 10,
) -> np.ndarray:
    """Reference propagation under a Hermitian generator."""
    if isinstance(K, PauliSum):
        m = to_matrix(K, dense_cap)
        lam, v = np.linalg.eigh(m)
        return v @ (np.exp(-1j * lam * T) * (v.conj().T @ state))
    return _evolve_rk4(lambda t, psi: -1j * (to_matrix(K(t), dense_cap) @ psi), T, state)


def _evolve_rk4(rhs, T: float, y0: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Classic 4th-order fixed-step integration, steps halved to self-convergence."""
    if T == 0:
        return y0.copy()
    steps = max(8, int(abs(T) * 32))
    prev = _rk4_fixed(rhs, T, y0, steps)
    for _ in range(24):
        steps *= 2
        cur = _rk4_fixed(rhs, T, y0, steps)
        if np.linalg.norm(cur - prev) < tol:
            return cur
        prev = cur
    return prev


def _rk4_fixed(rhs, T: float, y0: np.ndarray, steps: int) -> np.ndarray:
    h = T / steps
    y = y0.astype(complex).copy()
    t = 0.0
    for _ in range(steps):
        k1 = rhs(t, y)
        k2 = rhs(t + h / 2, y + h / 2 * k1)
        k3 = rhs(t + h / 2, y + h / 2 * k2)
        k4 = rhs(t + h, y + h * k3)
        y = y + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def evolve_trotter1(
    terms: TermSet, T: float, dt: float, state: np.ndarray
) -> np.ndarray:
    """First-order product formula with midpoint coefficients.

    Terms are applied in fixed declaration order within each step so runs
    are bit-reproducible.
    """
    n_steps = max(1, int(math.ceil(T / dt - 1e-12)))
    psi = state.astype(complex).copy()
    n_terms = len(terms.strings)
    t = 0.0
    for step in range(n_steps):
        step_dt = min(dt, T - t)
        mid = t + step_dt / 2.0
        c = terms.coeffs(mid)
        angles = c * step_dt
        idx = np.arange(n_terms, dtype=np.int64)
        apply_rotations(psi, terms.perms, terms.phases, idx, angles)
        psi *= np.exp(-1j * terms.identity_coeff(mid) * step_dt)
        t += step_dt
    return psi


def evolve_qdrift(
    terms: TermSet,
    T: float,
    dt: float,
    rng: np.random.Generator,
    state: np.ndarray,
) -> np.ndarray:
    """One stochastic qDrift realization with N = ceil(T / dt) gates."""
    N = max(1, int(math.ceil(T / dt - 1e-12)))
    psi = state.astype(complex).copy()
    taus = np.linspace(T / (2 * N), T - T / (2 * N), N)  # midpoint per gate slot
    for j in range(N):
        c = terms.coeffs(taus[j])
        lam = np.abs(c).sum()
        if lam > 0:
            probs = np.abs(c) / lam
            pick = rng.choice(len(c), p=probs)
            angle = math.copysign(1.0, c[pick]) * lam * T / N
            idx = np.array([pick], dtype=np.int64)
            apply_rotations(psi, terms.perms, terms.phases, idx, np.array([angle]))
        psi *= np.exp(-1j * terms.identity_coeff(taus[j]) * T / N)
    return psi


@dataclass
class GateSequence:
    """Time-ordered Pauli-rotation events realizing one stochastic sample.

    `phase_angle` is the exact accumulated identity-term angle; the total
    attenuation satisfies log(lambda_tot) = log_attenuation <= 0.
    """

    terms: TermSet
    times: np.ndarray
    term_idx: np.ndarray
    angles: np.ndarray
    log_attenuation: float
    phase_angle: float

    def events(self):
        for t, j, a in zip(self.times, self.term_idx, self.angles):
            yield float(t), self.terms.strings[int(j)], float(a)


def _abs_coeff_integrals(terms: TermSet, T: float, grid: int = 257) -> np.ndarray:
    """Per-term integral of |c_n(s)| over [0, T]."""
    if terms.time_independent:
        return np.abs(terms.coeffs(0.0)) * T
    ts = np.linspace(0.0, T, grid)
    vals = np.stack([np.abs(terms.coeffs(t)) for t in ts])
    return np.trapezoid(vals, ts, axis=0)


def _identity_angle(terms: TermSet, T: float, grid: int = 257) -> float:
    if terms.time_independent:
        return terms.identity_coeff(0.0) * T
    ts = np.linspace(0.0, T, grid)
    return float(np.trapezoid([terms.identity_coeff(t) for t in ts], ts))


def gate_identity_parts(c: float, tau: float, dtau: float) -> tuple[float, float]:
    """Mixing probability p and attenuation lambda of the small-step identity

        (1 - p) I + p exp(-i sgn(c) tau sigma) = lam exp(-i c dtau sigma),

    the 2x2 relation underlying the Poisson-process propagator.
    """
    if not 0.0 < tau < np.pi / 2:
        raise PropagatorError("tau must lie in (0, pi/2)")
    x = math.tan(abs(c) * dtau)
    p = x / (math.sin(tau) + (1.0 - math.cos(tau)) * x)
    lam = p * math.sin(tau) / math.sin(abs(c) * dtau)
    return p, lam


def sample_continuous_sequence(
    terms: TermSet, T: float, tau: float, rng: np.random.Generator
) -> GateSequence:
    """Poisson-process gate sample: per term, count ~ Poi(int |c_n| ds / sin tau).

    Constant coefficients place event times uniformly; time-dependent ones
    use thinning against the envelope max |c_n(t)|.  Each event carries
    angle tau * sgn(c_n(t_event)).
    """
    if not 0.0 < tau < np.pi / 2:
        raise PropagatorError("tau must lie in (0, pi/2)")
    sin_tau = math.sin(tau)
    tan_half = math.tan(tau / 2.0)
    integrals = _abs_coeff_integrals(terms, T)
    all_t: list[np.ndarray] = []
    all_idx: list[np.ndarray] = []
    all_sign: list[np.ndarray] = []
    if terms.time_independent:
        c0 = terms.coeffs(0.0)
        counts = rng.poisson(integrals / sin_tau)
        for n, cnt in enumerate(counts):
            if cnt == 0:
                continue
            all_t.append(rng.random(cnt) * T)
            all_idx.append(np.full(cnt, n, dtype=np.int64))
            all_sign.append(np.full(cnt, math.copysign(1.0, c0[n])))
    else:
        grid = np.linspace(0.0, T, 257)
        envs = np.stack([np.abs(terms.coeffs(t)) for t in grid]).max(axis=0)
        counts = rng.poisson(envs * T / sin_tau)
        for n, cnt in enumerate(counts):
            if cnt == 0:
                continue
            cand = rng.random(cnt) * T
            cvals = np.array([terms.coeffs(t)[n] for t in cand])
            keep = rng.random(cnt) * envs[n] < np.abs(cvals)
            if not keep.any():
                continue
            all_t.append(cand[keep])
            all_idx.append(np.full(keep.sum(), n, dtype=np.int64))
            all_sign.append(np.sign(cvals[keep]))
    if all_t:
        times = np.concatenate(all_t)
        order = np.argsort(times, kind="stable")
        times = times[order]
        idx = np.concatenate(all_idx)[order]
        signs = np.concatenate(all_sign)[order]
    else:
        times = np.zeros(0)
        idx = np.zeros(0, dtype=np.int64)
        signs = np.zeros(0)
    return GateSequence(
        terms=terms,
        times=times,
        term_idx=idx,
        angles=tau * signs,
        log_attenuation=float(-integrals.sum() * tan_half),
        phase_angle=_identity_angle(terms, T),
    )


def apply_sequence(seq: GateSequence, state: np.ndarray) -> np.ndarray:
    """Apply the rotations in time order plus the exact identity phase."""
    psi = state.astype(complex).copy()
    if len(seq.term_idx):
        apply_rotations(
            psi, seq.terms.perms, seq.terms.phases, seq.term_idx, seq.angles
        )
    if seq.phase_angle:
        psi *= np.exp(-1j * seq.phase_angle)
    return psi


def propagate(
    model,
    k: float,
    T: float,
    spec: PropagatorSpec,
    state: np.ndarray,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Single realization of U(T, k)|state> under the chosen method."""
    if spec.method == "exact":
        if model.is_time_independent:
            return evolve_exact(model.k_generator(k, 0.0), T, state)
        return evolve_exact(lambda t: model.k_generator(k, t), T, state)
    terms = TermSet.from_model(model, k)
    if spec.method == "trotter1":
        return evolve_trotter1(terms, T, spec.dt, state)
    if rng is None:
        raise PropagatorError(f"{spec.method} requires a random generator")
    if spec.method == "qdrift":
        return evolve_qdrift(terms, T, spec.dt, rng, state)
    seq = sample_continuous_sequence(terms, T, spec.tau, rng)
    return apply_sequence(seq, state)
