"""Command-line experiment runner.

Commands: plan (sample-count and kernel tables), run (config-driven time
sweep to CSV/SVG), validate (desk-scale invariant suite), and
reproduce-fig3 (the dissipative Ising benchmark preset).

Exit codes: 0 success, 2 config error, 3 validation failure, 4 numerical
guard tripped.
"""
from __future__ import annotations

import argparse
import csv
import math
import sys
from pathlib import Path

import numpy as np

from . import pauli
from .config import ConfigError, RunConfig, load_config
from .estimator import (
    DenominatorVanishedError,
    SamplingPlan,
    bound_denominator,
    estimate,
    estimate_quadrature,
    exact_ratio,
    plan_samples,
)
from .experiments import CurveEngine, open_system_engine, exact_curve
from .kernel import KernelSpec
from .model import NonHermitianModel, spectral_summary
from .pauli import PauliSum, decompose, l1_norm
from .propagate import PropagatorSpec

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_GUARD = 4

CSV_HEADER = ["t", "method", "estimate", "stderr", "exact", "abs_error", "n_samples", "seed"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float) and math.isnan(x):
        return "nan"
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


def _observable_sum(cfg: RunConfig) -> PauliSum:
    if isinstance(cfg.observable, PauliSum):
        return cfg.observable
    return decompose(np.asarray(cfg.observable))


def _effective_model(cfg: RunConfig) -> NonHermitianModel:
    """Generic model directly; Lindblad via the vectorized doubled register."""
    if cfg.model_type == "generic":
        return cfg.model
    from .lindblad import vectorize

    gen = vectorize(cfg.lindblad)
    c_p = gen.default_cp() if cfg.c_p == "minimal" else float(cfg.c_p)
    return gen.as_nonhermitian(c_p)


def _resolve_plan(cfg: RunConfig, model: NonHermitianModel) -> SamplingPlan:
    s = cfg.sampling
    if not s.auto:
        return SamplingPlan(
            delta=s.delta or 0.0, eta=s.eta or 0.0, K=0.0, n_N=s.n_N, n_D=s.n_D
        )
    summary = spectral_summary(model, cfg.times.t_end)
    obs = _observable_sum(cfg)
    return plan_samples(
        s.delta,
        s.eta,
        l1_norm(obs),
        cfg.kernel.l1_full,
        T=cfg.times.t_end,
        delta_ei=summary.delta_ei,
    )


def cmd_plan(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    model = _effective_model(cfg)
    summary = spectral_summary(model, cfg.times.t_end)
    plan = _resolve_plan(cfg, model)
    rule = cfg.kernel.quadrature_rule(
        max(cfg.times.t_end, 1e-9), max(summary.max_norm, 1e-12),
        h=cfg.quad_h, Q=cfg.quad_q,
    )
    lower, upper = bound_denominator(model, cfg.times.t_end)
    print("sampling plan")
    print(f"  delta = {_fmt(plan.delta)}  eta = {_fmt(plan.eta)}")
    print(f"  K = {_fmt(plan.K)}")
    print(f"  n_N = {plan.n_N}")
    print(f"  n_D = {plan.n_D}")
    print("kernel")
    print(f"  family = {cfg.kernel.family}  eps = {_fmt(cfg.kernel.eps)}")
    print(f"  k_c = {_fmt(cfg.kernel.k_c)}")
    print(f"  l1 = {_fmt(cfg.kernel.l1_full)}")
    print(f"  mass = {_fmt(cfg.kernel.mass)}")
    print("quadrature")
    print(f"  h = {_fmt(rule.h)}  Q = {rule.Q}  M = {rule.M}")
    print("spectral")
    print(f"  delta_Ei = {_fmt(summary.delta_ei)}  max_norm = {_fmt(summary.max_norm)}")
    print("denominator bounds")
    print(f"  lower = {_fmt(lower)}  upper = {_fmt(upper)}")
    return EXIT_OK


def _write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for row in rows:
            writer.writerow([_fmt(row.get(k)) for k in CSV_HEADER])


def _plot_svg(csv_path: Path, svg_path: Path) -> None:
    """Line chart built purely from the CSV contents."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series: dict[str, list[tuple[float, float, float | None]]] = {}
    with open(csv_path, newline="") as fh:
        for row in csv.DictReader(fh):
            try:
                t = float(row["t"])
                est = float(row["estimate"])
            except ValueError:
                continue
            exact = None
            if row["exact"]:
                try:
                    exact = float(row["exact"])
                except ValueError:
                    exact = None
            series.setdefault(row["method"], []).append((t, est, exact))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    exact_drawn = False
    for method, pts in series.items():
        pts.sort()
        ts = [p[0] for p in pts]
        ax1.plot(ts, [p[1] for p in pts], marker=".", label=method)
        errs = [
            (t, abs(est - ex))
            for t, est, ex in pts
            if ex is not None and abs(est - ex) > 0
        ]
        if errs:
            ax2.semilogy([e[0] for e in errs], [e[1] for e in errs], marker=".", label=method)
        if not exact_drawn and all(p[2] is not None for p in pts):
            ax1.plot(ts, [p[2] for p in pts], "k--", label="exact")
            exact_drawn = True
    ax1.set_xlabel("t")
    ax1.set_ylabel("estimate")
    ax1.legend()
    ax2.set_xlabel("t")
    ax2.set_ylabel("|error|")
    if any(ax2.get_lines()):
        ax2.legend()
    fig.tight_layout()
    fig.savefig(svg_path, format="svg")
    plt.close(fig)


def _run_generic(cfg: RunConfig, method: str) -> tuple[list[dict], bool]:
    model = cfg.model
    obs = _observable_sum(cfg)
    psi = cfg.initial_state
    plan = _resolve_plan(cfg, model)
    spec = PropagatorSpec(method, dt=cfg.propagator.dt, tau=cfg.propagator.tau)
    rows = []
    guard = False
    for t in cfg.times.grid():
        try:
            ex = exact_ratio(model, obs, psi, float(t))
        except DenominatorVanishedError:
            ex = None
        try:
            if method == "exact" and cfg.readout.mode == "exact":
                summary = spectral_summary(model, max(float(t), 1e-9))
                rule = cfg.kernel.quadrature_rule(
                    max(float(t), 1e-9), max(summary.max_norm, 1e-12),
                    h=cfg.quad_h, Q=cfg.quad_q,
                )
                res = estimate_quadrature(model, obs, psi, float(t), rule)
            else:
                res = estimate(
                    model, obs, psi, float(t), cfg.kernel, spec, plan,
                    readout_mode=cfg.readout.mode, shots=cfg.readout.shots,
                    master_seed=cfg.seed,
                )
            est = float(res.ratio.real)
            se = float(res.ratio_se)
            n = res.n_N
        except DenominatorVanishedError:
            guard = True
            est, se, n = math.nan, math.nan, plan.n_N
        rows.append(
            {
                "t": float(t),
                "method": method,
                "estimate": est,
                "stderr": se,
                "exact": ex,
                "abs_error": None if (ex is None or math.isnan(est)) else abs(est - ex),
                "n_samples": n,
                "seed": cfg.seed,
            }
        )
    return rows, guard


def _run_lindblad(cfg: RunConfig, method: str, workers: int) -> tuple[list[dict], bool]:
    from .lindblad import vectorize

    gen = vectorize(cfg.lindblad)
    c_p = gen.default_cp() if cfg.c_p == "minimal" else float(cfg.c_p)
    times = cfg.times.grid()
    if times[0] == 0.0:  # the engine checkpoints need strictly positive times
        times = times.copy()
        times[0] = min(1e-9, times[-1] / 1e6) if times[-1] > 0 else 1e-9
    eng = open_system_engine(
        gen, cfg.observable, _density(cfg), times, cfg.kernel, c_p=c_p
    )
    ex = exact_curve(cfg.lindblad, cfg.observable, _density(cfg), times)
    summary = spectral_summary(gen.as_nonhermitian(c_p), cfg.times.t_end)
    n = cfg.sampling.n_N or 100_000
    if method == "exact":
        rule = cfg.kernel.quadrature_rule(
            max(cfg.times.t_end, 1e-9), max(summary.max_norm, 1e-12),
            h=cfg.quad_h, Q=cfg.quad_q,
        )
        res = eng.quadrature(rule)
    elif method == "trotter1":
        rule = cfg.kernel.quadrature_rule(
            max(cfg.times.t_end, 1e-9), max(summary.max_norm, 1e-12),
            h=cfg.quad_h, Q=cfg.quad_q,
        )
        res = eng.trotter_quadrature(rule, cfg.propagator.dt)
    elif method == "qdrift":
        res = eng.qdrift(cfg.propagator.dt, n, master_seed=cfg.seed, workers=workers)
    else:
        res = eng.continuous(cfg.propagator.tau, n, master_seed=cfg.seed, workers=workers)
    rows = []
    for j, t in enumerate(cfg.times.grid()):
        est = float(res.values[j].real)
        rows.append(
            {
                "t": float(t),
                "method": method,
                "estimate": est,
                "stderr": float(res.stderr[j]),
                "exact": float(ex[j].real),
                "abs_error": abs(est - float(ex[j].real)),
                "n_samples": res.n_samples,
                "seed": cfg.seed,
            }
        )
    return rows, False


def _density(cfg: RunConfig) -> np.ndarray:
    psi = cfg.initial_state
    return np.outer(psi, psi.conj())


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.shots is not None:
        cfg.readout.mode = "shots"
        cfg.readout.shots = args.shots
    method = args.method or cfg.propagator.method
    if cfg.model_type == "generic":
        rows, guard = _run_generic(cfg, method)
    else:
        rows, guard = _run_lindblad(cfg, method, cfg.workers)
    out_dir = Path(args.output) if args.output else Path.cwd()
    csv_path = out_dir / cfg.output.csv
    _write_csv(csv_path, rows)
    print(f"wrote {csv_path}")
    svg_name = cfg.output.svg if cfg.output.svg else (
        Path(cfg.output.csv).with_suffix(".svg").name if args.svg else None
    )
    if args.svg and svg_name:
        svg_path = out_dir / svg_name
        _plot_svg(csv_path, svg_path)
        print(f"wrote {svg_path}")
    if guard:
        print("warning: denominator indistinguishable from zero at some times", file=sys.stderr)
        return EXIT_GUARD
    return EXIT_OK


def cmd_reproduce_fig3(args) -> int:
    from .experiments import dissipative_ising_preset

    seed = args.seed if args.seed is not None else 0
    workers = args.workers if args.workers is not None else 1
    preset = dissipative_ising_preset()
    eng = open_system_engine(
        preset.gen, preset.observable, preset.rho0, preset.times,
        preset.kern, c_p=preset.c_p,
    )
    ex = exact_curve(preset.lmodel, preset.observable, preset.rho0, preset.times)
    methods = (
        [args.method]
        if args.method
        else ["continuous", "trotter1", "qdrift"]
    )
    n_draws = 100_000
    rows = []
    for method in methods:
        if method == "continuous":
            res = eng.continuous(0.05, n_draws, master_seed=seed, workers=workers)
        elif method == "qdrift":
            res = eng.qdrift(0.05, n_draws, master_seed=seed, workers=workers)
        elif method == "trotter1":
            rule = preset.kern.quadrature_rule(2.0, 1.0, h=2.0, Q=12)
            res = eng.trotter_quadrature(rule, 0.05)
        else:
            rule = preset.kern.quadrature_rule(2.0, 1.0, h=2.0, Q=12)
            res = eng.quadrature(rule)
        for j, t in enumerate(preset.times):
            est = float(res.values[j].real)
            rows.append(
                {
                    "t": float(t),
                    "method": method,
                    "estimate": est,
                    "stderr": float(res.stderr[j]),
                    "exact": float(ex[j].real),
                    "abs_error": abs(est - float(ex[j].real)),
                    "n_samples": res.n_samples,
                    "seed": seed,
                }
            )
        errs = [r["abs_error"] for r in rows if r["method"] == method]
        print(f"{method}: mean |error| = {np.mean(errs):.4f}, max = {np.max(errs):.4f}")
    out_dir = Path(args.output) if args.output else Path.cwd()
    csv_path = out_dir / "fig3.csv"
    _write_csv(csv_path, rows)
    print(f"wrote {csv_path}")
    if args.svg:
        svg_path = out_dir / "fig3.svg"
        _plot_svg(csv_path, svg_path)
        print(f"wrote {svg_path}")
    return EXIT_OK


# -- validation suite ---------------------------------------------------------


def _validation_checks():
    """Desk-scale invariant checks, one (name, fn) per module property.

    Each fn returns (ok, detail).  These double as mutation canaries: a
    sign flip in the k generator breaks the reconstruction check, and a
    (1+p) error in the gate identity breaks the 2x2 identity check.
    """
    import numpy as np

    from .estimator import estimate as _estimate
    from .kernel import c_beta
    from .lindblad import (
        LindbladModel,
        amplitude_damping,
        check_normal_positivity,
        vectorize,
    )
    from .model import from_complex_sum
    from .pauli import PauliString, PauliSum, to_matrix
    from .propagate import (
        TermSet,
        apply_pauli_rotation,
        basis_state,
        gate_identity_parts,
        sample_continuous_sequence,
    )

    def pauli_algebra():
        rng = np.random.default_rng(11)
        for _ in range(20):
            a = PauliString.from_label("".join(rng.choice(list("IXYZ"), 3)))
            b = PauliString.from_label("".join(rng.choice(list("IXYZ"), 3)))
            phase, c = pauli.multiply(a, b)
            lhs = to_matrix(PauliSum(3, [(a, 1.0)])) @ to_matrix(PauliSum(3, [(b, 1.0)]))
            rhs = phase * to_matrix(PauliSum(3, [(c, 1.0)]))
            if np.abs(lhs - rhs).max() > 1e-12:
                return False, f"{a.label} * {b.label}"
        return True, "20 random products match dense algebra"

    def decompose_roundtrip():
        rng = np.random.default_rng(5)
        m = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        err = np.abs(to_matrix(pauli.decompose(m)) - m).max()
        return err < 1e-10, f"round-trip residual {err:.2e}"

    def kernel_closed_forms():
        kc = KernelSpec("cauchy", 0.01).k_c
        ok1 = abs(kc - 63.65674116) < 1e-5
        kc2 = KernelSpec("cauchy", 0.1).k_c
        ok2 = abs(kc2 - 6.313751515) < 1e-6
        return ok1 and ok2, f"k_c(0.01)={kc:.5f}, k_c(0.1)={kc2:.5f}"

    def lchs_reconstruction():
        rng = np.random.default_rng(3)
        b = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        hr = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        hr = (hr + hr.conj().T) / 2
        hi = b.conj().T @ b
        model = from_complex_sum(pauli.decompose(hr - 1j * hi))
        psi = rng.normal(size=4) + 1j * rng.normal(size=4)
        psi /= np.linalg.norm(psi)
        kern = KernelSpec("cauchy", 1e-3)
        summary = spectral_summary(model, 1.0)
        rule = kern.quadrature_rule(1.0, summary.max_norm)
        from .estimator import exact_nonunitary_state, lchs_vector

        shift = model.shift.value(0.0)
        phi = lchs_vector(model, psi, 1.0, rule) * math.exp(-shift * 1.0)
        target = exact_nonunitary_state(model, psi, 1.0)
        err = float(np.linalg.norm(phi - target))
        return err <= 2e-3, f"reconstruction error {err:.2e}"

    def gate_identity():
        rng = np.random.default_rng(7)
        eye = np.eye(2)
        z = np.array([[1.0, 0.0], [0.0, -1.0]])
        worst = 0.0
        for _ in range(100):
            c = rng.uniform(-3, 3)
            if abs(c) < 1e-3:
                continue
            tau = rng.uniform(0.01, 1.4)
            dtau = rng.uniform(1e-5, min(0.3, tau / (2 * abs(c))))
            p, lam = gate_identity_parts(c, tau, dtau)
            lhs = (1 - p) * eye + p * (
                math.cos(tau) * eye - 1j * math.sin(tau) * math.copysign(1, c) * z
            )
            rhs = lam * (math.cos(c * dtau) * eye - 1j * math.sin(c * dtau) * z)
            worst = max(worst, float(np.abs(lhs - rhs).max()))
        return worst < 1e-12, f"worst residual {worst:.2e}"

    def attenuation_plugin():
        terms = TermSet.from_sum(PauliSum(1, [(PauliString.from_label("X"), 2.0)]))
        rng = np.random.default_rng(0)
        seq = sample_continuous_sequence(terms, 2.0, 0.05, rng)
        target = -4.0 * math.tan(0.025)
        return (
            abs(seq.log_attenuation - target) < 1e-9,
            f"log lambda_tot = {seq.log_attenuation:.9f}",
        )

    def poisson_counts():
        terms = TermSet.from_sum(PauliSum(1, [(PauliString.from_label("X"), 0.5)]))
        rng = np.random.default_rng(1)
        mean_target = 0.5 * 2.0 / math.sin(0.05)
        counts = [
            len(sample_continuous_sequence(terms, 2.0, 0.05, rng).times)
            for _ in range(4000)
        ]
        mean = float(np.mean(counts))
        sigma = math.sqrt(mean_target / 4000)
        ok = abs(mean - mean_target) < 3 * sigma
        return ok, f"mean {mean:.3f} vs {mean_target:.3f}"

    def rotation_norms():
        rng = np.random.default_rng(2)
        psi = rng.normal(size=8) + 1j * rng.normal(size=8)
        psi /= np.linalg.norm(psi)
        s = PauliString.from_label("XYZ")
        out = apply_pauli_rotation(psi, s, 0.37)
        drift = abs(np.linalg.norm(out) - 1.0)
        return drift < 1e-12, f"norm drift {drift:.2e}"

    def qite_quadrature():
        model = from_complex_sum(PauliSum(1, [(PauliString.from_label("Z"), -1j)]))
        psi = np.array([1.0, 1.0]) / math.sqrt(2.0)
        kern = KernelSpec("cauchy", 1e-3)
        rule = kern.quadrature_rule(0.5, spectral_summary(model, 0.5).max_norm)
        O = PauliSum(1, [(PauliString.from_label("X"), 1.0)])
        res = estimate_quadrature(model, O, psi, 0.5, rule)
        err = abs(res.ratio.real - 1.0 / math.cosh(1.0))
        return err < 2e-3, f"imaginary-time value error {err:.2e}"

    def vectorization_property():
        rng = np.random.default_rng(9)
        A = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        B = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        rho = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
        lhs = np.kron(A, B.T) @ rho.reshape(-1)
        rhs = (A @ rho @ B).reshape(-1)
        err = np.abs(lhs - rhs).max()
        return err < 1e-12, f"A (x) B^T residual {err:.2e}"

    def open_system_checks():
        lm = LindbladModel(1, PauliSum(1, []), [amplitude_damping(1.5, 0, 1)])
        gen = vectorize(lm)
        cp_err = abs(gen.c_p_minimal - 0.75 * (math.sqrt(2.0) - 1.0))
        ok_norm, _ = check_normal_positivity(
            [PauliSum(1, [(PauliString.from_label("Z"), 1.0)])], 1
        )
        return cp_err < 1e-9 and ok_norm, f"c_p residual {cp_err:.2e}"

    def planner_plugins():
        p = plan_samples(0.05, 0.1, 1.0, 1.0)
        ok = abs(p.K - 10.150347630) < 1e-6 and p.n_N == 9136
        return ok, f"K={p.K:.6f}, n={p.n_N}"

    def determinism():
        model = from_complex_sum(PauliSum(1, [(PauliString.from_label("Z"), -1j)]))
        psi = np.array([1.0, 1.0]) / math.sqrt(2.0)
        kern = KernelSpec("cauchy", 0.01)
        O = PauliSum(1, [(PauliString.from_label("X"), 1.0)])
        plan = SamplingPlan(delta=0.05, eta=0.1, K=0.0, n_N=2000, n_D=2000)
        a = _estimate(model, O, psi, 0.5, kern, PropagatorSpec("exact"), plan, master_seed=42)
        b = _estimate(model, O, psi, 0.5, kern, PropagatorSpec("exact"), plan, master_seed=42)
        return a.ratio == b.ratio, "repeat runs bit-identical"

    return [
        ("pauli product algebra", pauli_algebra),
        ("dense decompose round-trip", decompose_roundtrip),
        ("kernel truncation closed forms", kernel_closed_forms),
        ("unitary-integral reconstruction", lchs_reconstruction),
        ("continuous gate identity (1-p)", gate_identity),
        ("attenuation coefficient plug-in", attenuation_plugin),
        ("Poisson event counts", poisson_counts),
        ("rotation norm preservation", rotation_norms),
        ("imaginary-time quadrature value", qite_quadrature),
        ("vectorization row convention", vectorization_property),
        ("open-system shift and positivity", open_system_checks),
        ("planner plug-in values", planner_plugins),
        ("seeded determinism", determinism),
    ]


def cmd_validate(args) -> int:
    failures = 0
    for name, fn in _validation_checks():
        try:
            ok, detail = fn()
        except Exception as exc:  # a crashed check is a failed check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name}: {detail}")
        if not ok:
            failures += 1
    if failures:
        print(f"{failures} check(s) failed")
        return EXIT_VALIDATION
    print("all checks passed")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nhqmc",
        description="Monte Carlo simulator for non-Hermitian and open-system dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="64-bit master seed")
        p.add_argument("--workers", type=int, default=None, help="worker threads")
        p.add_argument("--output", default=None, help="output directory")
        p.add_argument("--svg", action="store_true", help="also emit an SVG plot")
        p.add_argument("--shots", type=int, default=None, help="shot-noise readout")
        p.add_argument(
            "--method",
            choices=["exact", "trotter1", "qdrift", "continuous"],
            default=None,
        )

    p_plan = sub.add_parser("plan", help="print sampling plan and kernel tables")
    common(p_plan)
    p_plan.set_defaults(fn=cmd_plan)

    p_run = sub.add_parser("run", help="run the configured time sweep")
    common(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_val = sub.add_parser("validate", help="run the invariant suite")
    p_val.set_defaults(fn=cmd_validate)

    p_fig = sub.add_parser("reproduce-fig3", help="dissipative Ising benchmark")
    common(p_fig, config_required=False)
    p_fig.set_defaults(fn=cmd_reproduce_fig3)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DenominatorVanishedError as exc:
        print(f"numerical guard: {exc}", file=sys.stderr)
        return EXIT_GUARD


if __name__ == "__main__":
    sys.exit(main())
