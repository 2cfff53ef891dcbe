"""Whole-curve numerator evaluation over a time grid.

One stochastic trajectory over [0, T] restricted to its first events is
itself a valid trajectory for every earlier grid time, so a single pass
with inner-product checkpoints yields the entire curve per draw.  The
same trick applies to the randomized-compiler propagator (its gate angle
does not depend on the target time) and to the deterministic product
formula per quadrature node.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._fastops import apply_rotations_checkpointed, build_tables
from .estimator import block_rng
from .kernel import KernelSpec, QuadratureRule
from .lindblad import (
    LindbladModel,
    OpenSystemObservable,
    VectorizedGenerator,
    amplitude_damping,
    vectorize,
)
from .model import NonHermitianModel
from .pauli import PauliString, PauliSum, to_matrix
from .propagate import _rk4_fixed, basis_state

CURVE_BLOCK = 2048
STREAM_CURVE = 4
GRID_ALIGN_TOL = 1e-9


class ExperimentError(RuntimeError):
    pass


@dataclass
class CurveResult:
    times: np.ndarray
    values: np.ndarray  # complex means, prefactor applied
    stderr: np.ndarray
    n_samples: int
    method: str


class CurveEngine:
    """Numerator curves <<bra| U(t, k) |ket>> for a time-independent model.

    scale(t) multiplies every output (the open-system prefactor
    ||O||_F ||rho0||_F e^{c_p t}; identity for plain numerators).
    """

    def __init__(
        self,
        model: NonHermitianModel,
        bra: np.ndarray,
        ket: np.ndarray,
        times: np.ndarray,
        kern: KernelSpec,
        scale=None,
    ):
        if not model.is_time_independent:
            raise ExperimentError("curve engine requires a time-independent model")
        self.times = np.asarray(times, dtype=float)
        if np.any(np.diff(self.times) <= 0) or self.times[0] < 0:
            raise ExperimentError("times must be strictly increasing and nonnegative")
        self.T = float(self.times[-1])
        self.kern = kern
        self.bra = np.asarray(bra, dtype=complex)
        self.ket = np.asarray(ket, dtype=complex)
        strings, r, i = model.k_generator_terms(0.0)
        keep = np.array([not s.is_identity for s in strings])
        self.r = r[keep]
        self.i = i[keep]
        self.r_id = float(r[~keep].sum())
        self.i_id = float(i[~keep].sum())
        self.perms, self.phases = build_tables(
            [s for s, k in zip(strings, keep) if k]
        )
        self.scale = scale if scale is not None else (lambda t: 1.0)
        self._scale_vec = np.array([self.scale(t) for t in self.times])

    # -- helpers --------------------------------------------------------------

    def _coeffs(self, k: float) -> tuple[np.ndarray, float]:
        return self.r + k * self.i, self.r_id + k * self.i_id

    def _id_phase(self, c_id: float) -> np.ndarray:
        return np.exp(-1j * c_id * self.times)

    def _grid_steps(self, dt: float) -> np.ndarray:
        steps = self.times / dt
        rounded = np.rint(steps)
        if np.abs(steps - rounded).max() > GRID_ALIGN_TOL / dt:
            raise ExperimentError("grid times must be integer multiples of dt")
        return rounded.astype(np.int64)

    def _run_checkpointed(self, term_idx, angles, stops) -> np.ndarray:
        psi = self.ket.copy()
        out = np.empty(len(self.times), dtype=complex)
        apply_rotations_checkpointed(
            psi, self.perms, self.phases, term_idx, angles, stops, self.bra, out
        )
        return out

    def _mc_reduce(self, per_block, n_draws: int, workers: int, method: str) -> CurveResult:
        n_blocks = (n_draws + CURVE_BLOCK - 1) // CURVE_BLOCK
        sizes = [
            min(CURVE_BLOCK, n_draws - b * CURVE_BLOCK) for b in range(n_blocks)
        ]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                partials = list(pool.map(per_block, range(n_blocks), sizes))
        else:
            partials = [per_block(b, s) for b, s in zip(range(n_blocks), sizes)]
        total = np.sum([p[0] for p in partials], axis=0)
        total_sq = np.sum([p[1] for p in partials], axis=0)
        mean = total / n_draws
        var = np.maximum(total_sq / n_draws - np.abs(mean) ** 2, 0.0)
        se = np.sqrt(var / max(n_draws - 1, 1))
        return CurveResult(
            times=self.times,
            values=self._scale_vec * mean,
            stderr=self._scale_vec * se,
            n_samples=n_draws,
            method=method,
        )

    # -- deterministic curves -------------------------------------------------

    def _dense_pair(self) -> tuple[np.ndarray, np.ndarray]:
        """Dense (A, B) with K(k) = A + k B, rebuilt from the gate tables."""
        dim = self.perms.shape[1]
        A = np.zeros((dim, dim), dtype=complex)
        B = np.zeros((dim, dim), dtype=complex)
        for t_idx in range(self.perms.shape[0]):
            m = np.zeros((dim, dim), dtype=complex)
            m[np.arange(dim), self.perms[t_idx]] = self.phases[t_idx]
            A += self.r[t_idx] * m
            B += self.i[t_idx] * m
        A += self.r_id * np.eye(dim)
        B += self.i_id * np.eye(dim)
        return A, B

    def quadrature(self, rule: QuadratureRule) -> CurveResult:
        """Spectral per-node evaluation (exact propagation per node)."""
        A, B = self._dense_pair()
        dim = A.shape[0]
        vals = np.zeros(len(self.times), dtype=complex)
        chunk = max(1, (1 << 22) // (dim * dim))
        nodes = rule.nodes
        weights = np.asarray(rule.weights)
        for lo in range(0, len(nodes), chunk):
            kk = nodes[lo : lo + chunk]
            mats = A[None] + kk[:, None, None] * B[None]
            lam, v = np.linalg.eigh(mats)
            z = np.einsum("bij,i->bj", v.conj(), self.bra)
            w = np.einsum("bij,i->bj", v.conj(), self.ket)
            zw = z.conj() * w
            for j, t in enumerate(self.times):
                vals[j] += weights[lo : lo + chunk] @ np.einsum(
                    "bj,bj->b", zw, np.exp(-1j * lam * t)
                )
        return CurveResult(
            times=self.times,
            values=self._scale_vec * vals,
            stderr=np.zeros_like(self.times),
            n_samples=len(nodes),
            method="quadrature",
        )

    def trotter_quadrature(self, rule: QuadratureRule, dt: float) -> CurveResult:
        """Deterministic k sum with first-order product-formula propagation."""
        grid = self._grid_steps(dt)
        n_terms = len(self.r)
        n_steps = int(grid[-1])
        term_idx = np.tile(np.arange(n_terms, dtype=np.int64), n_steps)
        stops = grid * n_terms
        vals = np.zeros(len(self.times), dtype=complex)
        for k, c_w in zip(rule.nodes, np.asarray(rule.weights)):
            c, c_id = self._coeffs(float(k))
            angles = np.tile(c * dt, n_steps)
            out = self._run_checkpointed(term_idx, angles, stops)
            vals += c_w * out * self._id_phase(c_id)
        return CurveResult(
            times=self.times,
            values=self._scale_vec * vals,
            stderr=np.zeros_like(self.times),
            n_samples=len(rule.nodes),
            method="trotter1",
        )

    # -- stochastic curves ----------------------------------------------------

    def qdrift(
        self, dt: float, n_draws: int, master_seed: int = 0, workers: int = 1
    ) -> CurveResult:
        """Randomized-compiler curve; one trajectory serves every grid time."""
        grid = self._grid_steps(dt)
        n_steps = int(grid[-1])
        mass = self.kern.mass

        def per_block(b: int, size: int):
            rng = block_rng(master_seed, STREAM_CURVE, b)
            acc = np.zeros(len(self.times), dtype=complex)
            acc_sq = np.zeros(len(self.times))
            ks = self.kern.sample_array(rng, size)
            kph = np.asarray(self.kern.phase(ks))
            for j in range(size):
                c, c_id = self._coeffs(float(ks[j]))
                mags = np.abs(c)
                lam = mags.sum()
                if lam > 0:
                    cdf = np.cumsum(mags / lam)
                    picks = np.searchsorted(cdf, rng.random(n_steps)).astype(np.int64)
                    picks = np.minimum(picks, len(c) - 1)
                    angles = np.sign(c[picks]) * lam * dt
                else:
                    picks = np.zeros(n_steps, dtype=np.int64)
                    angles = np.zeros(n_steps)
                out = self._run_checkpointed(picks, angles, grid)
                vals = mass * kph[j] * out * self._id_phase(c_id)
                acc += vals
                acc_sq += np.abs(vals) ** 2
            return acc, acc_sq

        return self._mc_reduce(per_block, n_draws, workers, "qdrift")

    def continuous(
        self, tau: float, n_draws: int, master_seed: int = 0, workers: int = 1
    ) -> CurveResult:
        """Poisson-process curve with per-draw inverse attenuation weights."""
        if not 0.0 < tau < math.pi / 2.0:
            raise ExperimentError("tau must lie in (0, pi/2)")
        mass = self.kern.mass
        sin_tau = math.sin(tau)
        tan_half = math.tan(tau / 2.0)

        def per_block(b: int, size: int):
            rng = block_rng(master_seed, STREAM_CURVE, b)
            acc = np.zeros(len(self.times), dtype=complex)
            acc_sq = np.zeros(len(self.times))
            ks = self.kern.sample_array(rng, size)
            kph = np.asarray(self.kern.phase(ks))
            for j in range(size):
                c, c_id = self._coeffs(float(ks[j]))
                mags = np.abs(c)
                total = mags.sum()
                n_ev = rng.poisson(total / sin_tau * self.T) if total > 0 else 0
                if n_ev > 0:
                    ev_times = np.sort(rng.uniform(0.0, self.T, n_ev))
                    cdf = np.cumsum(mags / total)
                    picks = np.searchsorted(cdf, rng.random(n_ev)).astype(np.int64)
                    picks = np.minimum(picks, len(c) - 1)
                    angles = np.where(c[picks] >= 0, tau, -tau)
                    stops = np.searchsorted(ev_times, self.times, side="right")
                else:
                    picks = np.zeros(0, dtype=np.int64)
                    angles = np.zeros(0)
                    stops = np.zeros(len(self.times), dtype=np.int64)
                out = self._run_checkpointed(picks, angles, stops)
                inv_atten = np.exp(total * tan_half * self.times)
                vals = mass * kph[j] * inv_atten * out * self._id_phase(c_id)
                acc += vals
                acc_sq += np.abs(vals) ** 2
            return acc, acc_sq

        return self._mc_reduce(per_block, n_draws, workers, "continuous")

    def exact_sampled(
        self, n_draws: int, master_seed: int = 0, workers: int = 1
    ) -> CurveResult:
        """Monte Carlo over k with exact per-draw propagation.

        Each draw diagonalizes K(k) once and evaluates every grid time
        spectrally, so the only error is kernel truncation plus sampling
        noise — useful for isolating propagator bias.
        """
        A, B = self._dense_pair()
        dim = A.shape[0]
        mass = self.kern.mass

        def per_block(b: int, size: int):
            rng = block_rng(master_seed, STREAM_CURVE, b)
            acc = np.zeros(len(self.times), dtype=complex)
            acc_sq = np.zeros(len(self.times))
            ks = self.kern.sample_array(rng, size)
            kph = np.asarray(self.kern.phase(ks))
            chunk = max(1, (1 << 22) // (dim * dim))
            for lo in range(0, size, chunk):
                kk = ks[lo : lo + chunk]
                mats = A[None] + kk[:, None, None] * B[None]
                lam, v = np.linalg.eigh(mats)
                z = np.einsum("bij,i->bj", v.conj(), self.bra)
                w = np.einsum("bij,i->bj", v.conj(), self.ket)
                zw = z.conj() * w
                for j, t in enumerate(self.times):
                    vals = (
                        mass
                        * kph[lo : lo + chunk]
                        * np.einsum("bj,bj->b", zw, np.exp(-1j * lam * t))
                    )
                    acc[j] += vals.sum()
                    acc_sq[j] += (np.abs(vals) ** 2).sum()
            return acc, acc_sq

        return self._mc_reduce(per_block, n_draws, workers, "exact-sampled")


def open_system_engine(
    gen: VectorizedGenerator,
    O: PauliSum | np.ndarray,
    rho0: np.ndarray,
    times: np.ndarray,
    kern: KernelSpec,
    c_p: float | None = None,
) -> CurveEngine:
    """Curve engine for Tr(O rho(t)) on the doubled register."""
    if c_p is None:
        c_p = gen.default_cp()
    model = gen.as_nonhermitian(c_p)
    O_mat = to_matrix(O) if isinstance(O, PauliSum) else np.asarray(O)
    osys = OpenSystemObservable.build(O_mat, rho0)
    scale = lambda t, p=osys.prefactor, cp=c_p: p * math.exp(cp * t)
    return CurveEngine(model, osys.bra, osys.ket, times, kern, scale)


def exact_curve(
    lmodel: LindbladModel,
    O: PauliSum | np.ndarray,
    rho0: np.ndarray,
    times: np.ndarray,
    tol: float = 1e-10,
) -> np.ndarray:
    """Reference Tr(O rho(t)) curve in one integration pass.

    Fixed-step 4th-order integration with checkpoints on the grid, step
    count doubled until the whole curve is self-converged.
    """
    lbar = lmodel.generator_matrix()
    dim = 1 << lmodel.n_qubits
    O_mat = to_matrix(O) if isinstance(O, PauliSum) else np.asarray(O)
    o_vec = np.asarray(O_mat).conj().T.reshape(-1)
    times = np.asarray(times, dtype=float)
    rhs = lambda t, y: lbar @ y
    rho_vec = np.asarray(rho0, dtype=complex).reshape(-1)

    def curve(steps_per_unit: int) -> np.ndarray:
        out = np.empty(len(times), dtype=complex)
        y = rho_vec.copy()
        t_prev = 0.0
        for j, t in enumerate(times):
            span = t - t_prev
            if span > 0:
                steps = max(1, int(math.ceil(span * steps_per_unit)))
                y = _rk4_fixed(lambda s, v: rhs(t_prev + s, v), span, y, steps)
            out[j] = o_vec @ y
            t_prev = t
        return out

    spu = 64
    prev = curve(spu)
    for _ in range(16):
        spu *= 2
        cur = curve(spu)
        if np.abs(cur - prev).max() < tol:
            return cur
        prev = cur
    return prev


# -- the transverse-field Ising + amplitude-damping preset ---------------------


def ising_hamiltonian(n_qubits: int, J: float, h: float) -> PauliSum:
    """H = -J sum Z_i Z_{i+1} - h sum X_i with periodic coupling."""
    terms: list[tuple[PauliString, complex]] = []
    for q in range(n_qubits):
        labels = ["I"] * n_qubits
        labels[q] = "Z"
        labels[(q + 1) % n_qubits] = "Z"
        terms.append((PauliString.from_label("".join(labels)), -J))
    for q in range(n_qubits):
        labels = ["I"] * n_qubits
        labels[q] = "X"
        terms.append((PauliString.from_label("".join(labels)), -h))
    return PauliSum(n_qubits, terms)


@dataclass
class DissipativeIsingPreset:
    lmodel: LindbladModel
    gen: VectorizedGenerator
    rho0: np.ndarray
    observable: np.ndarray
    times: np.ndarray
    kern: KernelSpec
    c_p: float


def dissipative_ising_preset(
    n_qubits: int = 4,
    J: float = 1.0,
    h: float = 2.0,
    gamma: float = 1.5,
    damped_qubit: int = 0,
    initial_label: str = "1000",
    t_end: float = 2.0,
    points: int = 40,
    eps: float = 0.01,
    c_p: float | None = None,
) -> DissipativeIsingPreset:
    """4-qubit dissipative Ising benchmark: population of the initial state."""
    H = ising_hamiltonian(n_qubits, J, h)
    lmodel = LindbladModel(
        n_qubits, H, [amplitude_damping(gamma, damped_qubit, n_qubits)]
    )
    gen = vectorize(lmodel)
    psi = basis_state(n_qubits, initial_label)
    rho0 = np.outer(psi, psi.conj())
    times = np.linspace(t_end / points, t_end, points)
    return DissipativeIsingPreset(
        lmodel=lmodel,
        gen=gen,
        rho0=rho0,
        observable=rho0.copy(),
        times=times,
        kern=KernelSpec("cauchy", eps),
        c_p=gen.default_cp() if c_p is None else c_p,
    )
