"""Open-system dynamics through vectorization of the master equation.

The density matrix evolves as d rho/dt = -i[H, rho] + sum_g (G rho G^dag
- {G^dag G, rho}/2).  Row-stacking rho into a 2n-qubit state vector turns
this into d|rho>/dt = Lbar |rho>, and L = i Lbar is treated as a
non-Hermitian Hamiltonian on the doubled register.  Expectation values
are recovered from the numerator alone:

    <O>(t) = ||O||_F ||rho0||_F e^{c_p t}
             <<O| int g(k) U(t, k) dk |rho0>>,

where U(t, k) = exp(-i (L_r + k (L_i + c_p)) t) and c_p makes the
anti-Hermitian part positive semidefinite, so no denominator loop is
needed: trace preservation supplies the normalization for free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import (
    BLOCK_SIZE,
    QuadratureOverlapCache,
    block_rng,
    propagate_states,
)
from .kernel import KernelSpec, QuadratureRule
from .model import NonHermitianModel, constant, from_complex_sum
from .pauli import (
    PauliString,
    PauliSum,
    decompose,
    hermitian_split,
    l1_norm,
    to_matrix,
)
from .propagate import (
    PropagatorSpec,
    TermSet,
    _evolve_rk4,
    apply_sequence,
    sample_continuous_sequence,
)

TRACE_PRESERVATION_TOL = 1e-10
GROWTH_TOL = 1e-8
HERMITICITY_TOL = 1e-12
STATE_TOL = 1e-10
NORMALITY_TOL = 1e-10
CP_MARGIN = 1e-6
STREAM_LINDBLAD = 3


class LindbladError(RuntimeError):
    pass


def sigma_minus(n_qubits: int, qubit: int) -> PauliSum:
    """Lowering operator |0><1| on one qubit: (X + iY) / 2."""
    labels_x = ["I"] * n_qubits
    labels_y = ["I"] * n_qubits
    labels_x[qubit] = "X"
    labels_y[qubit] = "Y"
    return PauliSum(
        n_qubits,
        [
            (PauliString.from_label("".join(labels_x)), 0.5),
            (PauliString.from_label("".join(labels_y)), 0.5j),
        ],
    )


def amplitude_damping(gamma: float, qubit: int, n_qubits: int) -> PauliSum:
    """Jump operator sqrt(gamma) |0><1| on the given qubit."""
    return math.sqrt(gamma) * sigma_minus(n_qubits, qubit)


def dephasing(gamma: float, qubit: int, n_qubits: int) -> PauliSum:
    """Jump operator sqrt(gamma) Z on the given qubit."""
    labels = ["I"] * n_qubits
    labels[qubit] = "Z"
    return PauliSum(
        n_qubits, [(PauliString.from_label("".join(labels)), math.sqrt(gamma))]
    )


def _jump_matrix(jump: PauliSum | np.ndarray) -> np.ndarray:
    if isinstance(jump, PauliSum):
        return to_matrix(jump)
    return np.asarray(jump, dtype=complex)


def _jump_l1(jump: PauliSum | np.ndarray) -> float:
    if isinstance(jump, PauliSum):
        return l1_norm(jump)
    return l1_norm(decompose(np.asarray(jump, dtype=complex)))


@dataclass
class LindbladModel:
    """Hamiltonian plus jump operators on n qubits.

    Jump operators are accepted either as Pauli sums or as dense 2^n
    matrices (natural for |0><1|-style inputs).
    """

    n_qubits: int
    hamiltonian: PauliSum
    jumps: list[PauliSum | np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        for _, c in self.hamiltonian.items():
            if abs(c.imag) > HERMITICITY_TOL:
                raise LindbladError("Hamiltonian must be Hermitian (real coefficients)")

    def generator_matrix(self) -> np.ndarray:
        """Dense row-vectorized generator Lbar of dimension 4^n."""
        dim = 1 << self.n_qubits
        I = np.eye(dim)
        H = to_matrix(self.hamiltonian)
        L = -1j * (np.kron(H, I) - np.kron(I, H.T))
        for jump in self.jumps:
            G = _jump_matrix(jump)
            GdG = G.conj().T @ G
            L += (
                np.kron(G, G.conj())
                - 0.5 * np.kron(GdG, I)
                - 0.5 * np.kron(I, GdG.T)
            )
        return L


def vec(rho: np.ndarray) -> np.ndarray:
    """Row-stacked vector of a density matrix."""
    return np.asarray(rho, dtype=complex).reshape(-1)


@dataclass
class OpenSystemObservable:
    """Vectorized (bra, ket) pair for the numerator-only inner product."""

    prefactor: float
    bra: np.ndarray
    ket: np.ndarray

    @staticmethod
    def build(O_mat: np.ndarray, rho0: np.ndarray) -> "OpenSystemObservable":
        o_norm = float(np.linalg.norm(O_mat))
        r_norm = float(np.linalg.norm(rho0))
        if o_norm == 0 or r_norm == 0:
            raise LindbladError("observable and initial state must be nonzero")
        return OpenSystemObservable(
            prefactor=o_norm * r_norm,
            bra=vec(np.asarray(O_mat).conj().T) / o_norm,
            ket=vec(rho0) / r_norm,
        )


@dataclass
class VectorizedGenerator:
    """L = i Lbar decomposed over Pauli strings on the doubled register."""

    n_qubits: int
    l_sum: PauliSum
    l_r: PauliSum
    l_i: PauliSum
    lbar: np.ndarray
    c_p_minimal: float

    @property
    def doubled_qubits(self) -> int:
        return 2 * self.n_qubits

    def default_cp(self) -> float:
        """Minimal admissible shift plus a small positivity margin."""
        return self.c_p_minimal + CP_MARGIN

    def as_nonhermitian(self, c_p: float) -> NonHermitianModel:
        """Shifted-generator model whose K(k) = L_r + k (L_i + c_p I)."""
        if c_p < self.c_p_minimal - 1e-9:
            raise LindbladError(
                f"c_p = {c_p:.6g} below minimal admissible {self.c_p_minimal:.6g}"
            )
        model = from_complex_sum(self.l_sum)
        model.shift = constant(-float(c_p))
        return model


def minimal_cp(gen: VectorizedGenerator, source: LindbladModel | None = None) -> float:
    """Smallest shift making L_i + c_p I positive semidefinite.

    With the source model given, asserts the variance-bound inequality
    c_p <= 2 (||H||_l1 + sum ||Gamma||_l1^2).
    """
    cp = gen.c_p_minimal
    if source is not None:
        bound = 2.0 * (
            l1_norm(source.hamiltonian) + sum(_jump_l1(j) ** 2 for j in source.jumps)
        )
        if cp > bound + 1e-9:
            raise LindbladError(f"shift {cp:.6g} exceeds analytic bound {bound:.6g}")
    return cp


def vectorize(lmodel: LindbladModel) -> VectorizedGenerator:
    """Build and split L = i Lbar, checking trace preservation."""
    lbar = lmodel.generator_matrix()
    dim = 1 << lmodel.n_qubits
    trace_vec = vec(np.eye(dim))
    drift = np.abs(trace_vec @ lbar).max() if lbar.size else 0.0
    if drift > TRACE_PRESERVATION_TOL * max(1.0, np.abs(lbar).max()):
        raise LindbladError(
            f"vectorized generator does not preserve trace (residual {drift:.3e})"
        )
    l_sum = decompose(1j * lbar)
    l_r, l_i = hermitian_split(l_sum)
    lam_min = float(np.linalg.eigvalsh(to_matrix(l_i)).min())
    return VectorizedGenerator(
        n_qubits=lmodel.n_qubits,
        l_sum=l_sum,
        l_r=l_r,
        l_i=l_i,
        lbar=lbar,
        c_p_minimal=max(0.0, -lam_min),
    )


def check_normal_positivity(
    jumps: list[PauliSum | np.ndarray], n_qubits: int
) -> tuple[bool, str]:
    """Positivity of the dissipative anti-Hermitian part for normal jumps.

    Non-normal jump operators are excluded with a notice since the
    guarantee does not apply to them.
    """
    normal = []
    skipped = 0
    for jump in jumps:
        G = _jump_matrix(jump)
        comm = G @ G.conj().T - G.conj().T @ G
        if np.abs(comm).max() <= NORMALITY_TOL * max(1.0, np.abs(G).max() ** 2):
            normal.append(G)
        else:
            skipped += 1
    if not normal:
        return True, f"no normal jump operators to check ({skipped} skipped)"
    lmodel = LindbladModel(n_qubits, PauliSum(n_qubits, []), list(normal))
    gen = vectorize(lmodel)
    lam_min = float(np.linalg.eigvalsh(to_matrix(gen.l_i)).min())
    note = f" ({skipped} non-normal operator(s) skipped)" if skipped else ""
    if lam_min >= -1e-9:
        return True, f"lambda_min(L_i) = {lam_min:.3e} >= -1e-9{note}"
    return False, f"lambda_min(L_i) = {lam_min:.3e} < -1e-9 for normal jumps{note}"


def exact_reference(
    lmodel: LindbladModel, rho0: np.ndarray, times
) -> list[np.ndarray]:
    """Density matrices at the requested times from direct integration.

    Fixed-step 4th-order integration of the dense vectorized equation,
    steps halved until 1e-10 self-convergence.
    """
    lbar = lmodel.generator_matrix()
    dim = 1 << lmodel.n_qubits
    rhs = lambda t, y: lbar @ y
    out = []
    for t in np.atleast_1d(np.asarray(times, dtype=float)):
        rho_t = _evolve_rk4(rhs, float(t), vec(rho0)).reshape(dim, dim)
        out.append(rho_t)
    return out


def exact_expectation(
    lmodel: LindbladModel, O: PauliSum | np.ndarray, rho0: np.ndarray, times
) -> np.ndarray:
    """Reference curve Tr(O rho(t))."""
    O_mat = to_matrix(O) if isinstance(O, PauliSum) else np.asarray(O)
    rhos = exact_reference(lmodel, rho0, times)
    return np.array([np.trace(O_mat @ r) for r in rhos])


def steady_time(gen: VectorizedGenerator) -> float:
    """Relaxation horizon T_f = max_j (-1 / Re lambda_j) over decaying modes."""
    lam = np.linalg.eigvals(gen.lbar)
    worst = float(lam.real.max()) if lam.size else 0.0
    if worst > GROWTH_TOL:
        raise LindbladError(
            f"generator has a growing mode (Re lambda = {worst:.3e}); "
            "no relaxation horizon exists"
        )
    decaying = lam.real[lam.real < -GROWTH_TOL]
    if len(decaying) == 0:
        return math.inf
    return float((-1.0 / decaying).max())


def _validate_state(rho0: np.ndarray) -> None:
    rho0 = np.asarray(rho0)
    if abs(np.trace(rho0) - 1.0) > STATE_TOL:
        raise LindbladError("initial state must have unit trace")
    if np.abs(rho0 - rho0.conj().T).max() > STATE_TOL:
        raise LindbladError("initial state must be Hermitian")
    if np.linalg.eigvalsh(rho0).min() < -STATE_TOL:
        raise LindbladError("initial state must be positive semidefinite")


@dataclass
class NumeratorResult:
    value: complex
    stderr: float
    n_samples: int
    c_p: float
    prefactor: float


def expectation_quadrature(
    gen: VectorizedGenerator,
    O: PauliSum | np.ndarray,
    rho0: np.ndarray,
    times,
    kern: KernelSpec,
    rule: QuadratureRule,
    c_p: float | None = None,
) -> np.ndarray:
    """Deterministic numerator-only curve on the doubled register."""
    if c_p is None:
        c_p = gen.default_cp()
    model = gen.as_nonhermitian(c_p)
    O_mat = to_matrix(O) if isinstance(O, PauliSum) else np.asarray(O)
    osys = OpenSystemObservable.build(O_mat, rho0)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    cache = QuadratureOverlapCache(model, rule, osys.bra, osys.ket)
    return np.array(
        [
            osys.prefactor * math.exp(c_p * t) * cache.numerator(t)
            for t in times
        ]
    )


def expectation_mc(
    gen: VectorizedGenerator,
    O: PauliSum | np.ndarray,
    rho0: np.ndarray,
    t: float,
    kern: KernelSpec,
    spec: PropagatorSpec,
    n_draws: int,
    master_seed: int = 0,
    c_p: float | None = None,
) -> NumeratorResult:
    """Monte Carlo numerator-only estimate at a single time.

    For the Poisson-process propagator each draw carries the deterministic
    inverse attenuation exp(+sum_n int |c_n| tan(tau/2)) of its k value so
    the realization average is unbiased.
    """
    if c_p is None:
        c_p = gen.default_cp()
    model = gen.as_nonhermitian(c_p)
    O_mat = to_matrix(O) if isinstance(O, PauliSum) else np.asarray(O)
    osys = OpenSystemObservable.build(O_mat, rho0)
    pref = osys.prefactor * math.exp(c_p * t)
    mass = kern.mass
    blocks = []
    for block_start in range(0, n_draws, BLOCK_SIZE):
        b = min(BLOCK_SIZE, n_draws - block_start)
        rng = block_rng(master_seed, STREAM_LINDBLAD, block_start // BLOCK_SIZE)
        ks = kern.sample_array(rng, b)
        phases = np.asarray(kern.phase(ks))
        if spec.method == "continuous":
            vals = np.empty(b, dtype=complex)
            for j in range(b):
                terms = TermSet.from_model(model, float(ks[j]))
                seq = sample_continuous_sequence(terms, t, spec.tau, rng)
                psi = apply_sequence(seq, osys.ket)
                vals[j] = math.exp(-seq.log_attenuation) * np.vdot(osys.bra, psi)
        else:
            states = propagate_states(model, ks, t, spec, osys.ket, rng)
            vals = np.einsum("i,bi->b", osys.bra.conj(), states)
        blocks.append(mass * phases * vals)
    values = np.concatenate(blocks)
    mean = complex(np.sum(values) / n_draws)
    if n_draws > 1:
        se = math.hypot(
            values.real.std(ddof=1), values.imag.std(ddof=1)
        ) / math.sqrt(n_draws)
    else:
        se = 0.0
    return NumeratorResult(
        value=pref * mean,
        stderr=pref * se,
        n_samples=n_draws,
        c_p=c_p,
        prefactor=pref,
    )


def expectation(
    gen: VectorizedGenerator,
    O: PauliSum | np.ndarray,
    rho0: np.ndarray,
    t: float,
    kern: KernelSpec,
    spec: PropagatorSpec | None = None,
    rule: QuadratureRule | None = None,
    n_draws: int = 0,
    master_seed: int = 0,
    c_p: float | None = None,
) -> float:
    """Real open-system expectation value Tr(O rho(t)).

    Quadrature mode when a rule is given and spec is exact/None; Monte
    Carlo otherwise.  The imaginary residual is checked against the
    statistical error before being dropped.
    """
    _validate_state(rho0)
    if isinstance(O, PauliSum):
        for _, c in O.items():
            if abs(c.imag) > HERMITICITY_TOL:
                raise LindbladError("observable must be Hermitian")
    if rule is not None and (spec is None or spec.method == "exact"):
        val = complex(expectation_quadrature(gen, O, rho0, [t], kern, rule, c_p)[0])
        if abs(val.imag) > max(10.0 * kern.eps, 1e-9):
            raise LindbladError(
                f"imaginary residual {val.imag:.3e} exceeds kernel tolerance"
            )
        return val.real
    if spec is None or n_draws < 1:
        raise LindbladError("Monte Carlo mode needs a propagator spec and n_draws")
    res = expectation_mc(gen, O, rho0, t, kern, spec, n_draws, master_seed, c_p)
    if abs(res.value.imag) > 3.0 * max(res.stderr, 1e-12):
        raise LindbladError(
            f"imaginary residual {res.value.imag:.3e} exceeds 3 sigma"
        )
    return res.value.real
