"""Monte Carlo ratio estimator for non-Hermitian expectation values.

The target <O>(T) is synthesized from two Monte Carlo means: a numerator
over draws (k', k, n) and a denominator over (k', k), each weighted by
the sampled kernel phases and scaled by the truncated kernel mass.
Per-draw random streams are keyed by (master_seed, stream_id, block) so
results do not depend on worker count.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .kernel import KernelSpec, KSample, QuadratureRule
from .model import NonHermitianModel, spectral_summary
from .pauli import PauliString, PauliSum, to_matrix
from .propagate import (
    PropagatorSpec,
    TermSet,
    apply_sequence,
    evolve_exact,
    evolve_qdrift,
    evolve_trotter1,
    sample_continuous_sequence,
)

BLOCK_SIZE = 4096
SAMPLE_CEILING = 1e12
STREAM_NUMERATOR = 0
STREAM_DENOMINATOR = 1
STREAM_READOUT = 2


class EstimatorError(RuntimeError):
    pass


class DenominatorVanishedError(EstimatorError):
    """Denominator mean indistinguishable from zero at the sample budget."""


class ReadoutConsistencyError(EstimatorError):
    """Overlap magnitude exceeded the unit bound expected for Pauli terms."""


def block_rng(master_seed: int, stream_id: int, block: int) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(stream_id, block))
    return np.random.default_rng(seq)


@dataclass(frozen=True)
class ObservableSpec:
    """Observable O = sum_n o_n O_n with its term-sampling distribution."""

    terms: PauliSum
    l1: float
    probs: np.ndarray
    phases: np.ndarray
    strings: list[PauliString]

    @staticmethod
    def from_sum(O: PauliSum) -> "ObservableSpec":
        strings = [s for s, _ in O.items()]
        coeffs = np.array([c for _, c in O.items()])
        mags = np.abs(coeffs)
        l1 = float(mags.sum())
        if l1 <= 0:
            raise EstimatorError("observable has zero l1 norm")
        return ObservableSpec(
            terms=O,
            l1=l1,
            probs=mags / l1,
            phases=coeffs / mags,
            strings=strings,
        )


@dataclass(frozen=True)
class SampleDraw:
    """One (k', k, n) draw with its combined unit phase."""

    k_prime: "KSample"
    k: "KSample"
    n: int | None
    combined_phase: complex


def sample_draw(
    kern: KernelSpec, obs: ObservableSpec | None, rng: np.random.Generator
) -> SampleDraw:
    kp = kern.sample(rng)
    kk = kern.sample(rng)
    phase = np.conj(kp.phase) * kk.phase
    n = None
    if obs is not None:
        n = int(rng.choice(len(obs.strings), p=obs.probs))
        phase *= obs.phases[n]
    return SampleDraw(k_prime=kp, k=kk, n=n, combined_phase=complex(phase))


@dataclass
class SamplingPlan:
    """Hoeffding-based sample counts for a target (delta, eta)."""

    delta: float
    eta: float
    K: float
    n_N: int
    n_D: int
    D_lower: float | None = None
    D_upper: float | None = None


@dataclass
class EstimateResult:
    numerator: complex
    numerator_se: tuple[float, float]
    denominator: complex
    denominator_se: tuple[float, float]
    ratio: complex
    ratio_se: float
    n_N: int
    n_D: int
    seed: int | None
    wall_time: float = 0.0


def plan_samples(
    delta: float,
    eta: float,
    O_l1: float,
    g_l1: float,
    T: float = 0.0,
    delta_ei: float = 0.0,
    p_g: float | None = None,
) -> SamplingPlan:
    """n = 2 ln(8/delta) (2||O||+1)^2 ||g||^4 e^{4 T Delta} / eta^2.

    When p_g is given (time-independent generator), the exponential factor
    is replaced by 1 / p_g^2.
    """
    if not 0.0 < delta < 1.0 or not 0.0 < eta < 1.0:
        raise EstimatorError("delta and eta must lie in (0, 1)")
    if O_l1 <= 0:
        raise EstimatorError("observable l1 norm must be positive")
    K = 2.0 * math.log(8.0 / delta)
    base = K * (2.0 * O_l1 + 1.0) ** 2 * g_l1**4 / eta**2
    if p_g is not None:
        if not 0.0 < p_g <= 1.0:
            raise EstimatorError("p_g must lie in (0, 1]")
        n = base / p_g**2
    else:
        n = base * math.exp(4.0 * T * delta_ei)
    if n > SAMPLE_CEILING:
        warnings.warn(
            f"planned sample count {n:.3e} exceeds {SAMPLE_CEILING:.0e}; "
            "the duration is likely too long for this bandwidth",
            stacklevel=2,
        )
    count = max(1, int(math.ceil(n)))
    return SamplingPlan(delta=delta, eta=eta, K=K, n_N=count, n_D=count)


def bound_denominator(
    model: NonHermitianModel, T: float, grid_points: int = 0
) -> tuple[float, float]:
    """exp(-2 int (E_max - E_i0)) <= D <= exp(-2 int (E_min - E_i0))."""
    summary = spectral_summary(model, T, grid_points)
    shift = model.shift.value(summary.times)
    upper_int = np.trapezoid(summary.e_i_min - shift, summary.times)
    lower_int = np.trapezoid(summary.e_i_max - shift, summary.times)
    return float(np.exp(-2.0 * lower_int)), float(np.exp(-2.0 * upper_int))


def readout(
    value: complex,
    mode: str = "exact",
    shots: int = 0,
    rng: np.random.Generator | None = None,
) -> complex:
    """Exact pass-through or shot-noise emulation of the ancilla X/Y readout.

    The X mean is Re(value) and the Y mean is -Im(value); the estimate is
    reassembled as X_hat - i * Y_hat.
    """
    re, im = value.real, value.imag
    if abs(re) > 1.0 + 1e-9 or abs(im) > 1.0 + 1e-9:
        raise ReadoutConsistencyError(
            f"overlap {value} exceeds unit bound for a Pauli term"
        )
    if mode == "exact":
        return value
    if mode != "shots" or shots < 1:
        raise EstimatorError(f"bad readout mode {mode!r}")
    if rng is None:
        raise EstimatorError("shots readout requires a random generator")
    px = min(1.0, max(0.0, (1.0 + re) / 2.0))
    py = min(1.0, max(0.0, (1.0 - im) / 2.0))
    x_hat = 2.0 * rng.binomial(shots, px) / shots - 1.0
    y_hat = 2.0 * rng.binomial(shots, py) / shots - 1.0
    return complex(x_hat, -y_hat)


def _readout_array(
    values: np.ndarray, mode: str, shots: int, rng: np.random.Generator | None
) -> np.ndarray:
    bad = np.maximum(np.abs(values.real), np.abs(values.imag)).max(initial=0.0)
    if bad > 1.0 + 1e-9:
        raise ReadoutConsistencyError(
            f"overlap magnitude {bad:.6g} exceeds unit bound for a Pauli term"
        )
    if mode == "exact":
        return values
    px = np.clip((1.0 + values.real) / 2.0, 0.0, 1.0)
    py = np.clip((1.0 - values.imag) / 2.0, 0.0, 1.0)
    x_hat = 2.0 * rng.binomial(shots, px) / shots - 1.0
    y_hat = 2.0 * rng.binomial(shots, py) / shots - 1.0
    return x_hat - 1j * y_hat


def propagate_states(
    model: NonHermitianModel,
    ks: np.ndarray,
    T: float,
    spec: PropagatorSpec,
    psi: np.ndarray,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Stack of single realizations U(T, k)|psi> for an array of k values."""
    dim = psi.shape[0]
    out = np.empty((len(ks), dim), dtype=complex)
    if spec.method == "exact" and model.is_time_independent:
        A = to_matrix(model.hr_sum(0.0))
        B = to_matrix(model.hi_sum(0.0, shifted=True))
        chunk = max(1, (1 << 22) // (dim * dim))
        for lo in range(0, len(ks), chunk):
            kk = ks[lo : lo + chunk]
            mats = A[None, :, :] + kk[:, None, None] * B[None, :, :]
            lam, v = np.linalg.eigh(mats)
            proj = np.einsum("bij,i->bj", v.conj(), psi)
            out[lo : lo + chunk] = np.einsum(
                "bij,bj->bi", v, np.exp(-1j * lam * T) * proj
            )
        return out
    if spec.method == "exact":
        for j, k in enumerate(ks):
            out[j] = evolve_exact(lambda t, k=k: model.k_generator(k, t), T, psi)
        return out
    for j, k in enumerate(ks):
        terms = TermSet.from_model(model, float(k))
        if spec.method == "trotter1":
            out[j] = evolve_trotter1(terms, T, spec.dt, psi)
        elif spec.method == "qdrift":
            out[j] = evolve_qdrift(terms, T, spec.dt, rng, psi)
        else:
            seq = sample_continuous_sequence(terms, T, spec.tau, rng)
            out[j] = apply_sequence(seq, psi)
    return out


def overlap(
    model: NonHermitianModel,
    k_prime: float,
    k: float,
    o_term: PauliString | None,
    T: float,
    spec: PropagatorSpec,
    psi: np.ndarray,
    rng: np.random.Generator | None = None,
) -> complex:
    """<psi| U^dag(T, k') O_term U(T, k) |psi> from two propagated branches."""
    ket = propagate_states(model, np.array([k]), T, spec, psi, rng)[0]
    bra = propagate_states(model, np.array([k_prime]), T, spec, psi, rng)[0]
    if o_term is not None and not o_term.is_identity:
        perm, phase = o_term.dense_action()
        ket = phase * ket[perm]
    return complex(np.vdot(bra, ket))


def _mean_se(values: np.ndarray) -> tuple[complex, tuple[float, float]]:
    n = len(values)
    mean = complex(np.sum(values) / n)
    if n > 1:
        se_re = float(values.real.std(ddof=1) / math.sqrt(n))
        se_im = float(values.imag.std(ddof=1) / math.sqrt(n))
    else:
        se_re = se_im = 0.0
    return mean, (se_re, se_im)


def _mc_mean(
    model: NonHermitianModel,
    obs: ObservableSpec | None,
    psi: np.ndarray,
    T: float,
    kern: KernelSpec,
    spec: PropagatorSpec,
    n_draws: int,
    master_seed: int,
    stream_id: int,
    readout_mode: str,
    shots: int,
) -> tuple[complex, tuple[float, float], np.ndarray]:
    """One Monte Carlo loop (numerator when obs given, denominator otherwise)."""
    mass = kern.mass
    blocks = []
    for block_start in range(0, n_draws, BLOCK_SIZE):
        b = min(BLOCK_SIZE, n_draws - block_start)
        rng = block_rng(master_seed, stream_id, block_start // BLOCK_SIZE)
        kp = kern.sample_array(rng, b)
        kk = kern.sample_array(rng, b)
        comb = np.conj(np.asarray(kern.phase(kp))) * np.asarray(kern.phase(kk))
        bras = propagate_states(model, kp, T, spec, psi, rng)
        kets = propagate_states(model, kk, T, spec, psi, rng)
        if obs is not None:
            n_idx = rng.choice(len(obs.strings), size=b, p=obs.probs)
            for j in range(b):
                term = obs.strings[n_idx[j]]
                if not term.is_identity:
                    perm, phase = term.dense_action()
                    kets[j] = phase * kets[j][perm]
            comb = comb * obs.phases[n_idx]
        raw = np.einsum("bi,bi->b", bras.conj(), kets)
        vals = _readout_array(raw, readout_mode, shots, rng)
        scale = mass * mass * (obs.l1 if obs is not None else 1.0)
        blocks.append(scale * comb * vals)
    values = np.concatenate(blocks)
    mean, se = _mean_se(values)
    return mean, se, values


def estimate(
    model: NonHermitianModel,
    O: PauliSum,
    psi: np.ndarray,
    T: float,
    kern: KernelSpec,
    spec: PropagatorSpec,
    plan: SamplingPlan,
    readout_mode: str = "exact",
    shots: int = 0,
    master_seed: int = 0,
    paired: bool = False,
) -> EstimateResult:
    """Full ratio estimate <O> = N(O) / D with independent loops.

    With paired=True the denominator reuses the numerator's (k', k)
    streams as a variance-reduction option; the default follows the
    independent-loop sampling procedure.
    """
    t0 = time.perf_counter()
    obs = ObservableSpec.from_sum(O)
    num, num_se, _ = _mc_mean(
        model, obs, psi, T, kern, spec, plan.n_N, master_seed,
        STREAM_NUMERATOR, readout_mode, shots,
    )
    den_stream = STREAM_NUMERATOR if paired else STREAM_DENOMINATOR
    den, den_se, _ = _mc_mean(
        model, None, psi, T, kern, spec, plan.n_D, master_seed,
        den_stream, readout_mode, shots,
    )
    den_se_tot = math.hypot(*den_se)
    if abs(den) < 3.0 * den_se_tot:
        raise DenominatorVanishedError(
            f"|D| = {abs(den):.3e} < 3 x SE = {3*den_se_tot:.3e}; "
            "T is too large for the sample budget"
        )
    ratio = num / den
    num_se_tot = math.hypot(*num_se)
    ratio_se = math.sqrt(num_se_tot**2 + abs(ratio) ** 2 * den_se_tot**2) / abs(den)
    return EstimateResult(
        numerator=num,
        numerator_se=num_se,
        denominator=den,
        denominator_se=den_se,
        ratio=ratio,
        ratio_se=ratio_se,
        n_N=plan.n_N,
        n_D=plan.n_D,
        seed=master_seed,
        wall_time=time.perf_counter() - t0,
    )


def estimate_continuous(
    model: NonHermitianModel,
    O: PauliSum,
    psi: np.ndarray,
    T: float,
    kern: KernelSpec,
    tau: float,
    plan: SamplingPlan,
    master_seed: int = 0,
) -> EstimateResult:
    """Ratio estimate with Poisson-process propagator realizations.

    The per-draw attenuation weights carry the same factor in numerator
    and denominator and cancel in the ratio, so they are not applied.
    """
    spec = PropagatorSpec("continuous", tau=tau)
    return estimate(model, O, psi, T, kern, spec, plan, master_seed=master_seed)


def lchs_vector(
    model: NonHermitianModel,
    psi: np.ndarray,
    T: float,
    rule: QuadratureRule,
    spec: PropagatorSpec | None = None,
) -> np.ndarray:
    """Deterministic weighted sum  sum_m c_m U(T, k_m)|psi>."""
    if spec is None:
        spec = PropagatorSpec("exact")
    states = propagate_states(model, rule.nodes, T, spec, psi)
    return np.asarray(rule.weights) @ states


def estimate_quadrature(
    model: NonHermitianModel,
    O: PauliSum,
    psi: np.ndarray,
    T: float,
    rule: QuadratureRule,
    spec: PropagatorSpec | None = None,
) -> EstimateResult:
    """Deterministic kernel-quadrature estimate (high-accuracy reference)."""
    t0 = time.perf_counter()
    phi = lchs_vector(model, psi, T, rule, spec)
    den = complex(np.vdot(phi, phi))
    num = complex(np.vdot(phi, to_matrix(O) @ phi))
    if abs(den) == 0.0:
        raise DenominatorVanishedError("quadrature denominator is exactly zero")
    return EstimateResult(
        numerator=num,
        numerator_se=(0.0, 0.0),
        denominator=den,
        denominator_se=(0.0, 0.0),
        ratio=num / den,
        ratio_se=0.0,
        n_N=rule.M,
        n_D=rule.M,
        seed=None,
        wall_time=time.perf_counter() - t0,
    )


def exact_nonunitary_state(
    model: NonHermitianModel, psi: np.ndarray, T: float
) -> np.ndarray:
    """Dense reference u(T)|psi> for the unshifted generator H_r - i H_i."""
    from .propagate import _evolve_rk4

    def h_mat(t: float) -> np.ndarray:
        return to_matrix(model.hr_sum(t)) - 1j * to_matrix(model.hi_sum(t))

    if T == 0:
        return psi.astype(complex).copy()
    if model.is_time_independent:
        lam, v = np.linalg.eig(h_mat(0.0))
        vin = np.linalg.inv(v)
        return v @ (np.exp(-1j * lam * T) * (vin @ psi))
    return _evolve_rk4(lambda t, y: -1j * (h_mat(t) @ y), T, psi)


def exact_ratio(
    model: NonHermitianModel, O: PauliSum, psi: np.ndarray, T: float
) -> float:
    """Reference <O>(T) = <phi|O|phi> / <phi|phi> with phi = u(T)|psi>."""
    phi = exact_nonunitary_state(model, psi, T)
    den = float(np.vdot(phi, phi).real)
    if den == 0.0:
        raise DenominatorVanishedError("reference state fully decayed")
    O_mat = to_matrix(O) if isinstance(O, PauliSum) else np.asarray(O)
    return float((np.vdot(phi, O_mat @ phi) / den).real)


class QuadratureOverlapCache:
    """Per-node spectral cache for numerator curves <bra| U(t, k_m) |ket>.

    Only valid for time-independent models; each node's generator is
    diagonalized once and every requested time costs O(M * dim).
    """

    def __init__(
        self,
        model: NonHermitianModel,
        rule: QuadratureRule,
        bra: np.ndarray,
        ket: np.ndarray,
    ):
        if not model.is_time_independent:
            raise EstimatorError("spectral cache requires a time-independent model")
        A = to_matrix(model.hr_sum(0.0))
        B = to_matrix(model.hi_sum(0.0, shifted=True))
        dim = A.shape[0]
        M = len(rule.nodes)
        self.weights = np.asarray(rule.weights)
        self.evals = np.empty((M, dim))
        self.z = np.empty((M, dim), dtype=complex)
        self.w = np.empty((M, dim), dtype=complex)
        chunk = max(1, (1 << 22) // (dim * dim))
        for lo in range(0, M, chunk):
            kk = rule.nodes[lo : lo + chunk]
            mats = A[None] + kk[:, None, None] * B[None]
            lam, v = np.linalg.eigh(mats)
            self.evals[lo : lo + chunk] = lam
            self.z[lo : lo + chunk] = np.einsum("bij,i->bj", v.conj(), bra)
            self.w[lo : lo + chunk] = np.einsum("bij,i->bj", v.conj(), ket)

    def numerator(self, t: float) -> complex:
        per_node = np.einsum(
            "mj,mj->m", self.z.conj(), np.exp(-1j * self.evals * t) * self.w
        )
        return complex(self.weights @ per_node)
