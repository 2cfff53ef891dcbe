"""TOML run-configuration parsing.

A run is described by one nested key-value file (comments allowed) with
blocks: model, kernel, propagator, times, sampling, readout, output plus
top-level seed/workers.  See README for the documented grammar.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .kernel import KernelError, KernelSpec
from .model import (
    NonHermitianModel,
    Schedule,
    constant,
    from_complex_sum,
    minimal_shift,
)
from . import pauli
from .pauli import PauliInputError, PauliString, PauliSum
from .propagate import PropagatorError, PropagatorSpec, basis_state
from .lindblad import (
    LindbladError,
    LindbladModel,
    amplitude_damping,
    dephasing,
    vectorize,
)


class ConfigError(ValueError):
    pass


@dataclass
class TimesSpec:
    t_start: float
    t_end: float
    points: int

    def grid(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.points)


@dataclass
class SamplingSpec:
    n_N: int | None = None
    n_D: int | None = None
    delta: float | None = None
    eta: float | None = None

    @property
    def auto(self) -> bool:
        return self.n_N is None


@dataclass
class ReadoutSpec:
    mode: str = "exact"
    shots: int = 0


@dataclass
class OutputSpec:
    csv: str = "results.csv"
    svg: str | None = None


@dataclass
class RunConfig:
    model_type: str  # "generic" | "lindblad"
    n_qubits: int
    model: NonHermitianModel | None
    lindblad: LindbladModel | None
    c_p: float | str | None
    initial_state: np.ndarray
    observable: PauliSum | np.ndarray
    kernel: KernelSpec
    propagator: PropagatorSpec
    quad_h: float | None
    quad_q: int | None
    times: TimesSpec
    sampling: SamplingSpec
    readout: ReadoutSpec
    seed: int
    workers: int
    output: OutputSpec
    raw: dict = field(repr=False, default_factory=dict)


def _get(table: dict, key: str, kind, where: str, default=...):
    if key not in table:
        if default is not ...:
            return default
        raise ConfigError(f"missing key '{where}.{key}'")
    val = table[key]
    if kind is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if kind is not None and not isinstance(val, kind):
        raise ConfigError(
            f"'{where}.{key}' must be {getattr(kind, '__name__', kind)}, "
            f"got {type(val).__name__}"
        )
    return val


def _parse_schedule(entry: dict, where: str) -> Schedule:
    kind = _get(entry, "schedule_kind", str, where, "constant")
    params = entry.get("schedule_params", [1.0])
    if not isinstance(params, list):
        raise ConfigError(f"'{where}.schedule_params' must be a list of numbers")
    try:
        return Schedule(kind, tuple(float(v) for v in params))
    except (PauliInputError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad schedule at '{where}': {exc}") from exc


def _parse_terms(entries: list, n_qubits: int, where: str):
    out = []
    for j, entry in enumerate(entries):
        loc = f"{where}[{j}]"
        if isinstance(entry, str):
            # text form: "<complex coeff> <label string>", e.g. "-2.0+0.0i XIII"
            try:
                term_sum = pauli.parse_sum(entry)
            except PauliInputError as exc:
                raise ConfigError(f"bad term at '{loc}': {exc}") from exc
            for string, coeff in term_sum.items():
                if string.n_qubits != n_qubits:
                    raise ConfigError(f"'{loc}' must have {n_qubits} characters")
                out.append((coeff, string, constant(1.0)))
            continue
        if not isinstance(entry, dict):
            raise ConfigError(f"'{loc}' must be a table or a '<coeff> <labels>' string")
        label = _get(entry, "label", str, loc)
        if len(label) != n_qubits:
            raise ConfigError(f"'{loc}.label' must have {n_qubits} characters")
        try:
            string = PauliString.from_label(label)
        except PauliInputError as exc:
            raise ConfigError(f"bad Pauli label at '{loc}': {exc}") from exc
        re = _get(entry, "coeff_re", float, loc, 0.0)
        im = _get(entry, "coeff_im", float, loc, 0.0)
        sched = _parse_schedule(entry, loc)
        out.append((complex(re, im), string, sched))
    return out


def _parse_state(table: dict, n_qubits: int, where: str) -> np.ndarray:
    if "basis" in table:
        label = _get(table, "basis", str, where)
        if len(label) != n_qubits or any(c not in "01" for c in label):
            raise ConfigError(f"'{where}.basis' must be {n_qubits} binary digits")
        return basis_state(n_qubits, label)
    if "amplitudes" in table:
        amps = table["amplitudes"]
        vec = np.array([complex(a[0], a[1]) for a in amps])
        if vec.shape[0] != 1 << n_qubits:
            raise ConfigError(f"'{where}.amplitudes' must have 2^n entries")
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise ConfigError(f"'{where}.amplitudes' must be nonzero")
        return vec / norm
    raise ConfigError(f"'{where}' needs 'basis' or 'amplitudes'")


def _parse_observable(table: dict, n_qubits: int, where: str):
    if "projector" in table:
        label = _get(table, "projector", str, where)
        psi = _parse_state({"basis": label}, n_qubits, where)
        return np.outer(psi, psi.conj())
    if "terms" in table:
        terms = _parse_terms(table["terms"], n_qubits, f"{where}.terms")
        for c, _, s in terms:
            if not s.is_constant:
                raise ConfigError(f"'{where}' terms must not carry schedules")
        return PauliSum(n_qubits, [(st, c) for c, st, _ in terms])
    raise ConfigError(f"'{where}' needs 'projector' or 'terms'")


def _parse_jump(entry: dict, n_qubits: int, where: str):
    if "template" in entry:
        name = _get(entry, "template", str, where)
        gamma = _get(entry, "gamma", float, where)
        qubit = _get(entry, "qubit", int, where)
        if not 0 <= qubit < n_qubits:
            raise ConfigError(f"'{where}.qubit' out of range")
        if gamma < 0:
            raise ConfigError(f"'{where}.gamma' must be nonnegative")
        if name == "amplitude_damping":
            return amplitude_damping(gamma, qubit, n_qubits)
        if name == "dephasing":
            return dephasing(gamma, qubit, n_qubits)
        raise ConfigError(f"unknown jump template '{name}' at '{where}'")
    if "matrix" in entry:
        rows = entry["matrix"]
        mat = np.array([[complex(c[0], c[1]) for c in row] for row in rows])
        if mat.shape != (1 << n_qubits, 1 << n_qubits):
            raise ConfigError(f"'{where}.matrix' must be 2^n x 2^n")
        return mat
    raise ConfigError(f"'{where}' needs 'template' or 'matrix'")


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config parse error in {path}: {exc}") from exc
    return parse_config(raw)


def parse_config(raw: dict) -> RunConfig:
    seed = _get(raw, "seed", int, "top-level", 0)
    if not 0 <= seed < 1 << 64:
        raise ConfigError("'seed' must be a 64-bit value")
    workers = _get(raw, "workers", int, "top-level", 1)
    if workers < 1:
        raise ConfigError("'workers' must be >= 1")

    mtab = _get(raw, "model", dict, "top-level")
    model_type = _get(mtab, "type", str, "model", "generic")
    n_qubits = _get(mtab, "n_qubits", int, "model")
    if n_qubits < 1:
        raise ConfigError("'model.n_qubits' must be >= 1")

    model = None
    lmodel = None
    c_p = None
    if model_type == "generic":
        terms = _parse_terms(_get(mtab, "terms", list, "model"), n_qubits, "model.terms")
        try:
            model = from_complex_sum(terms, n_qubits=n_qubits)
        except PauliInputError as exc:
            raise ConfigError(f"bad model terms: {exc}") from exc
        shift = mtab.get("shift", "minimal")
        if shift == "minimal":
            pass  # from_complex_sum already installed the minimal shift
        elif isinstance(shift, (int, float)) and not isinstance(shift, bool):
            model.shift = constant(float(shift))
        else:
            raise ConfigError("'model.shift' must be 'minimal' or a number")
        state_qubits = n_qubits
    elif model_type == "lindblad":
        h_terms = _parse_terms(
            _get(mtab, "hamiltonian", list, "model"), n_qubits, "model.hamiltonian"
        )
        for c, _, s in h_terms:
            if abs(c.imag) > 1e-12:
                raise ConfigError("'model.hamiltonian' coefficients must be real")
            if not s.is_constant:
                raise ConfigError("'model.hamiltonian' must be time-independent")
        H = PauliSum(n_qubits, [(st, c) for c, st, _ in h_terms])
        jumps = [
            _parse_jump(e, n_qubits, f"model.jumps[{j}]")
            for j, e in enumerate(mtab.get("jumps", []))
        ]
        try:
            lmodel = LindbladModel(n_qubits, H, jumps)
        except LindbladError as exc:
            raise ConfigError(str(exc)) from exc
        c_p = mtab.get("c_p", "minimal")
        if c_p != "minimal" and not isinstance(c_p, (int, float)):
            raise ConfigError("'model.c_p' must be 'minimal' or a number")
        state_qubits = n_qubits
    else:
        raise ConfigError(f"unknown model type '{model_type}'")

    init = _parse_state(_get(mtab, "initial_state", dict, "model"), state_qubits, "model.initial_state")
    obs = _parse_observable(_get(mtab, "observable", dict, "model"), state_qubits, "model.observable")

    ktab = _get(raw, "kernel", dict, "top-level", {})
    try:
        kern = KernelSpec(
            _get(ktab, "family", str, "kernel", "cauchy"),
            _get(ktab, "eps", float, "kernel", 0.01),
            ktab.get("beta"),
        )
    except KernelError as exc:
        raise ConfigError(f"bad kernel block: {exc}") from exc

    ptab = _get(raw, "propagator", dict, "top-level", {})
    try:
        prop = PropagatorSpec(
            _get(ptab, "method", str, "propagator", "exact"),
            dt=_get(ptab, "dt", float, "propagator", 0.05),
            tau=_get(ptab, "tau", float, "propagator", 0.05),
        )
    except PropagatorError as exc:
        raise ConfigError(f"bad propagator block: {exc}") from exc
    quad_h = ptab.get("quad_h")
    quad_q = ptab.get("quad_q")

    ttab = _get(raw, "times", dict, "top-level")
    times = TimesSpec(
        t_start=_get(ttab, "t_start", float, "times"),
        t_end=_get(ttab, "t_end", float, "times"),
        points=_get(ttab, "points", int, "times"),
    )
    if not (times.t_end >= times.t_start >= 0.0):
        raise ConfigError("'times' must satisfy t_end >= t_start >= 0")
    if times.points < 1:
        raise ConfigError("'times.points' must be >= 1")

    stab = _get(raw, "sampling", dict, "top-level", {})
    sampling = SamplingSpec(
        n_N=stab.get("n_N"),
        n_D=stab.get("n_D", stab.get("n_N")),
        delta=stab.get("delta"),
        eta=stab.get("eta"),
    )
    if sampling.auto and (sampling.delta is None or sampling.eta is None):
        sampling = SamplingSpec(n_N=100_000, n_D=100_000)

    rtab = _get(raw, "readout", dict, "top-level", {})
    readout = ReadoutSpec(
        mode=_get(rtab, "mode", str, "readout", "exact"),
        shots=_get(rtab, "shots", int, "readout", 0),
    )
    if readout.mode not in ("exact", "shots"):
        raise ConfigError("'readout.mode' must be 'exact' or 'shots'")
    if readout.mode == "shots" and readout.shots < 1:
        raise ConfigError("'readout.shots' must be >= 1")

    otab = _get(raw, "output", dict, "top-level", {})
    output = OutputSpec(
        csv=_get(otab, "csv", str, "output", "results.csv"),
        svg=otab.get("svg"),
    )

    return RunConfig(
        model_type=model_type,
        n_qubits=n_qubits,
        model=model,
        lindblad=lmodel,
        c_p=c_p,
        initial_state=init,
        observable=obs,
        kernel=kern,
        propagator=prop,
        quad_h=quad_h,
        quad_q=quad_q,
        times=times,
        sampling=sampling,
        readout=readout,
        seed=seed,
        workers=workers,
        output=output,
        raw=raw,
    )
