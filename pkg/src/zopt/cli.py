"""Command-line experiment runner.

``zo run <spec.cfg> --out <report.csv>`` executes one experiment described
by a flat ``key = value`` config and writes a CSV report;
``zo verify [--seed N]`` runs the seeded Monte Carlo invariant suite.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 runtime
error (solver failure, divergence, non-finite evaluation).
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import analysis, estimator, objectives, optimizer, perturb
from .objectives import EvaluationError, InvalidMeshError, SolverError
from .optimizer import DivergenceError
from .perturb import PerturbationScheme, RngStream, derive_seed

__all__ = [
    "ConfigError",
    "ExperimentSpec",
    "Row",
    "ExperimentReport",
    "CheckResult",
    "parse_config",
    "run_spec",
    "run",
    "verify",
    "main",
]

CSV_HEADER = "experiment,scheme,d,delta,mu,batch,seed,step,metric,value"


class ConfigError(ValueError):
    """The experiment config is malformed or references unknown names."""


@dataclass
class ExperimentSpec:
    """Parsed experiment description."""

    name: str
    kind: str
    schemes: list[str] = field(default_factory=list)
    objective: str = ""
    d: int = 16
    delta: float = 1.0
    mu: float = 1e-4
    eta: float = 0.0
    tau: float | None = None
    batch: int = 1
    batches: list[int] = field(default_factory=list)
    steps: int = 1
    seeds: list[int] = field(default_factory=list)
    reps: int = 100
    n: int = 100_000
    matrix_seed: int = 7
    point_seed: int = 11
    zero_coords: list[int] = field(default_factory=list)
    weights: list[float] | None = None
    x1: list[float] | None = None
    x1_fill: float | None = None
    coarse_n: int = 10
    fine_n: int = 20
    record_every: int = 1


_KINDS = ("variance_bench", "tau_mse_sweep", "optimize", "mesh")
_OBJECTIVES = ("affine", "quadratic", "product", "squared_norm", "mesh")

_INT_KEYS = {"d", "batch", "steps", "n", "reps", "matrix_seed", "point_seed", "coarse_n", "fine_n", "record_every"}
_FLOAT_KEYS = {"delta", "mu", "eta", "tau", "x1_fill"}
_INT_LIST_KEYS = {"batches", "seeds", "zero_coords"}
_FLOAT_LIST_KEYS = {"weights", "x1"}
_STR_KEYS = {"name", "kind", "objective"}


def parse_config(path: str | Path) -> ExperimentSpec:
    """Parse a flat ``key = value`` config file into an ExperimentSpec."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    spec = ExperimentSpec(name=path.stem, kind="")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        try:
            if key in _STR_KEYS:
                setattr(spec, key, value)
            elif key in _INT_KEYS:
                setattr(spec, key, int(value))
            elif key in _FLOAT_KEYS:
                setattr(spec, key, float(value))
            elif key in _INT_LIST_KEYS:
                setattr(spec, key, [int(v) for v in value.split(",") if v.strip() != ""])
            elif key in _FLOAT_LIST_KEYS:
                setattr(spec, key, [float(v) for v in value.split(",") if v.strip() != ""])
            elif key == "schemes":
                spec.schemes = [v.strip() for v in value.split(",") if v.strip() != ""]
            else:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {value!r}") from exc
    if not getattr(spec, "schemes", None):
        raise ConfigError(f"{path}: missing 'schemes'")
    if spec.kind not in _KINDS:
        raise ConfigError(f"{path}: kind must be one of {_KINDS}, got {spec.kind!r}")
    if spec.kind == "mesh":
        spec.objective = "mesh"
    if spec.objective not in _OBJECTIVES:
        raise ConfigError(f"{path}: objective must be one of {_OBJECTIVES}, got {spec.objective!r}")
    if not spec.seeds:
        raise ConfigError(f"{path}: at least one seed is required")
    for scheme_name in spec.schemes:
        try:
            PerturbationScheme.from_name(scheme_name, delta=spec.delta)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    return spec


@dataclass(frozen=True)
class Row:
    experiment: str
    scheme: str
    d: int
    delta: float
    mu: float
    batch: int
    seed: int
    step: int
    metric: str
    value: float

    def render(self) -> str:
        return ",".join(
            [
                self.experiment,
                self.scheme,
                str(self.d),
                repr(float(self.delta)),
                repr(float(self.mu)),
                str(self.batch),
                str(self.seed),
                str(self.step),
                self.metric,
                repr(float(self.value)),
            ]
        )


@dataclass
class ExperimentReport:
    rows: list[Row] = field(default_factory=list)

    def sort(self) -> None:
        self.rows.sort(key=lambda r: (r.experiment, r.scheme, r.seed, r.step, r.batch, r.metric))

    def to_csv(self, path: str | Path) -> None:
        self.sort()
        lines = [CSV_HEADER] + [row.render() for row in self.rows]
        Path(path).write_text("\n".join(lines) + "\n")


def _threads() -> int:
    raw = os.environ.get("ZO_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _map_cells(fn, cells):
    workers = _threads()
    if workers == 1:
        return [fn(cell) for cell in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, cells))


def _query_point(spec: ExperimentSpec, d: int) -> np.ndarray:
    """Benchmark query point: entries uniform on [0.5, 1.5), listed coords zeroed."""
    rng = RngStream(derive_seed(spec.point_seed, 0xC0FFEE))
    x = 0.5 + rng.uniforms(d)
    x[[i for i in spec.zero_coords if 0 <= i < d]] = 0.0
    return x


def _build_objective(spec: ExperimentSpec):
    if spec.objective == "quadratic":
        qspec = objectives.QuadraticSpec(
            matrix_seed=spec.matrix_seed, dim=spec.d, sparsity_mask=tuple(spec.zero_coords)
        )
        return objectives.quadratic(qspec)
    if spec.objective == "product":
        return objectives.product(spec.d)
    if spec.objective == "squared_norm":
        return objectives.squared_norm(spec.d)
    if spec.objective == "affine":
        if spec.weights is not None:
            w = np.asarray(spec.weights, dtype=float)
            if w.shape[0] != spec.d:
                raise ConfigError(f"weights must have length d={spec.d}")
        else:
            w = np.zeros(spec.d)
            w[0] = 1.0
        return objectives.affine(w)
    if spec.objective == "mesh":
        problem = objectives.MeshProblem(coarse_n=spec.coarse_n, fine_n=spec.fine_n)
        return objectives.mesh_objective(problem)
    raise ConfigError(f"unknown objective {spec.objective!r}")


def _estimate(obj, x, scheme: PerturbationScheme, b: int, mu: float, rng: RngStream):
    if scheme.name == "dap_estimated":
        return estimator.dap_pipeline(obj, x, b, mu, scheme.delta, rng)
    return estimator.batched(obj, x, scheme, b, mu, rng)


def _run_tau_sweep(spec: ExperimentSpec) -> list[Row]:
    if not spec.batches:
        raise ConfigError("tau_mse_sweep requires 'batches'")
    tau = 1e-4 if spec.tau is None else spec.tau
    obj = _build_objective(spec)
    x = _query_point(spec, spec.d)
    reference = obj.grad_oracle(x)

    if spec.reps < 1:
        raise ConfigError("reps must be >= 1")

    def one(cell) -> Row:
        scheme_name, b, seed = cell
        scheme = PerturbationScheme.from_name(scheme_name, delta=spec.delta)
        # One stream per (seed, batch), shared across schemes so scheme
        # comparisons start from common draws.  Each cell reports the mean
        # tau-MSE over `reps` independent batched estimates.
        rng = RngStream(derive_seed(seed, b))
        total = 0.0
        for _ in range(spec.reps):
            est = _estimate(obj, x, scheme, b, spec.mu, rng)
            total += analysis.tau_mse(est.gradient, reference, tau)
        return Row(
            spec.name, scheme.name, spec.d, spec.delta, spec.mu, b, seed, 0, "tau_mse", total / spec.reps
        )

    cells = [(s, b, seed) for s in spec.schemes for b in spec.batches for seed in spec.seeds]
    return _map_cells(one, cells)


def _run_variance_bench(spec: ExperimentSpec) -> list[Row]:
    obj = _build_objective(spec)
    if spec.objective == "affine":
        x = np.zeros(spec.d)
    else:
        x = _query_point(spec, spec.d)

    def one(cell) -> list[Row]:
        scheme_name, seed = cell
        scheme = PerturbationScheme.from_name(scheme_name, delta=spec.delta)
        rng = RngStream(derive_seed(seed, 1))
        summary = analysis.empirical_estimator_mse(obj, x, scheme, spec.mu, spec.n, rng, tau=spec.tau)
        rows = [
            Row(spec.name, scheme.name, spec.d, spec.delta, spec.mu, 1, seed, 0, "mse_mean", summary.mean_mse),
            Row(spec.name, scheme.name, spec.d, spec.delta, spec.mu, 1, seed, 0, "mse_se", summary.se_mse),
        ]
        if summary.mean_tau_mse is not None:
            rows.append(
                Row(spec.name, scheme.name, spec.d, spec.delta, spec.mu, 1, seed, 0, "tau_mse_mean", summary.mean_tau_mse)
            )
            rows.append(
                Row(spec.name, scheme.name, spec.d, spec.delta, spec.mu, 1, seed, 0, "tau_mse_se", summary.se_tau_mse)
            )
        return rows

    cells = [(s, seed) for s in spec.schemes for seed in spec.seeds]
    return [row for rows in _map_cells(one, cells) for row in rows]


def _initial_point(spec: ExperimentSpec, obj) -> np.ndarray:
    if spec.objective == "mesh":
        problem = objectives.MeshProblem(coarse_n=spec.coarse_n, fine_n=spec.fine_n)
        return problem.uniform_point()
    if spec.x1 is not None:
        x1 = np.asarray(spec.x1, dtype=float)
        if x1.shape[0] != obj.dim:
            raise ConfigError(f"x1 must have length {obj.dim}")
        return x1
    if spec.x1_fill is not None:
        return np.full(obj.dim, spec.x1_fill)
    return np.ones(obj.dim)


def _run_optimize(spec: ExperimentSpec) -> list[Row]:
    obj = _build_objective(spec)
    x1 = _initial_point(spec, obj)

    def one(cell) -> list[Row]:
        scheme_name, seed = cell
        scheme = PerturbationScheme.from_name(scheme_name, delta=spec.delta)
        cfg = optimizer.SgdConfig(
            eta=spec.eta,
            mu=spec.mu,
            steps=spec.steps,
            batch=spec.batch,
            scheme=scheme,
            seed=derive_seed(seed, 2),
            record_every=spec.record_every,
        )
        trace = optimizer.zo_sgd(obj, x1, cfg)
        rows = []
        for rec in trace.records:
            rows.append(
                Row(spec.name, scheme.name, obj.dim, spec.delta, spec.mu, spec.batch, seed, rec.step, "loss", rec.value)
            )
            if rec.grad_norm_sq is not None:
                rows.append(
                    Row(
                        spec.name, scheme.name, obj.dim, spec.delta, spec.mu, spec.batch,
                        seed, rec.step, "grad_norm_sq", rec.grad_norm_sq,
                    )
                )
        return rows

    cells = [(s, seed) for s in spec.schemes for seed in spec.seeds]
    return [row for rows in _map_cells(one, cells) for row in rows]


def run_spec(spec: ExperimentSpec) -> ExperimentReport:
    """Execute an experiment spec and return its (sorted) report."""
    if spec.kind == "mesh":
        spec.objective = "mesh"
    if spec.kind == "tau_mse_sweep":
        rows = _run_tau_sweep(spec)
    elif spec.kind == "variance_bench":
        rows = _run_variance_bench(spec)
    elif spec.kind in ("optimize", "mesh"):
        rows = _run_optimize(spec)
    else:
        raise ConfigError(f"unknown experiment kind {spec.kind!r}")
    report = ExperimentReport(rows=rows)
    report.sort()
    return report


def run(spec_path: str | Path, out_path: str | Path) -> ExperimentReport:
    """Parse, execute, and write a report; the CLI entry for ``zo run``."""
    spec = parse_config(spec_path)
    report = run_spec(spec)
    report.to_csv(out_path)
    return report


# ---------------------------------------------------------------------------
# Verification suite
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.detail}"


_VERIFY_N_COV = 100_000
_VERIFY_N_MSE = 200_000


def _dap_anchor(d: int) -> np.ndarray:
    anchor = np.zeros(d)
    anchor[0] = 0.2
    anchor[min(1, d - 1)] = 2.0
    return anchor


def _all_schemes(delta: float) -> list[PerturbationScheme]:
    return [PerturbationScheme.from_name(n, delta) for n in ("uniform", "rademacher", "coordinate", "gaussian", "dap_exact")]


def _check_covariance(seed: int) -> CheckResult:
    worst = 0.0
    worst_tag = ""
    k = 0
    for d in (2, 8, 16):
        for delta in (1.0, 1.0 / d):
            for scheme in _all_schemes(delta):
                rng = RngStream(derive_seed(seed, 10, k))
                k += 1
                anchor = _dap_anchor(d) if scheme.kind is perturb.SchemeKind.DAP else None
                vs = perturb.draw(scheme, d, rng, size=_VERIFY_N_COV, anchor=anchor)
                cov = vs.T @ vs / vs.shape[0]
                dist = float(np.linalg.norm(cov / delta - np.eye(d)))
                if dist > worst:
                    worst, worst_tag = dist, f"{scheme.name} d={d} delta={delta:g}"
    return CheckResult(
        "covariance_unbiasedness",
        worst <= 0.1,
        f"max Frobenius distance {worst:.4f} ({worst_tag}), tolerance 0.1",
    )


def _check_constant_magnitude(seed: int) -> CheckResult:
    worst = 0.0
    for d in (2, 8, 16):
        for delta in (1.0, 1.0 / d):
            for j, name in enumerate(("uniform", "rademacher", "coordinate")):
                scheme = PerturbationScheme.from_name(name, delta)
                rng = RngStream(derive_seed(seed, 20, d, j))
                vs = perturb.draw(scheme, d, rng, size=10_000)
                norm_sq = np.einsum("ij,ij->i", vs, vs)
                worst = max(worst, float(np.max(np.abs(norm_sq / (d * delta) - 1.0))))
    return CheckResult(
        "constant_magnitude",
        worst <= 1e-12,
        f"max relative norm error {worst:.2e}, tolerance 1e-12",
    )


def _check_dap_alignment(seed: int) -> CheckResult:
    anchors = [
        np.array([1.0, 0.0]),
        np.array([1.0, 1.0]) / math.sqrt(2.0),
        np.array([0.2, 2.0]),
        np.eye(16)[0],
        _dap_anchor(16),
    ]
    worst = 0.0
    for k, anchor in enumerate(anchors):
        d = anchor.shape[0]
        rng = RngStream(derive_seed(seed, 30, k))
        vs = perturb.sample_dap(anchor, d, 1.0, rng, size=_VERIFY_N_COV)
        target = float(anchor @ anchor)
        align = (vs @ anchor) ** 2
        worst = max(worst, float(np.max(np.abs(align / target - 1.0))))
    return CheckResult(
        "dap_alignment",
        worst <= 1e-9,
        f"max relative alignment error {worst:.2e}, tolerance 1e-9",
    )


def _check_moment_lower_bound(seed: int) -> CheckResult:
    d, delta = 16, 1.0
    ok = True
    details = []
    for k, scheme in enumerate(_all_schemes(delta)):
        rng = RngStream(derive_seed(seed, 40, k))
        anchor = _dap_anchor(d) if scheme.kind is perturb.SchemeKind.DAP else None
        vs = perturb.draw(scheme, d, rng, size=_VERIFY_N_MSE, anchor=anchor)
        norm4 = np.einsum("ij,ij->i", vs, vs) ** 2
        m4 = float(np.mean(norm4))
        se = float(np.std(norm4, ddof=1) / math.sqrt(norm4.shape[0]))
        base = delta * delta * d * d
        bound = base * (1.0 - 3.0 * se / max(m4, 1e-300)) - 1e-9 * base
        if m4 < bound:
            ok = False
            details.append(f"{scheme.name}: m4={m4:.3f} < bound={bound:.3f}")
    detail = "; ".join(details) if details else f"all schemes have E|v|^4 >= {d * d}.0 within 3 se"
    return CheckResult("moment_lower_bound", ok, detail)


def _check_rademacher_trace(seed: int) -> CheckResult:
    d = 16
    scheme = PerturbationScheme.from_name("rademacher", 1.0)
    rng = RngStream(derive_seed(seed, 50))
    vs = perturb.draw(scheme, d, rng, size=_VERIFY_N_COV)
    trace = np.einsum("ij,ij->i", vs, vs) ** 2
    mean = float(np.mean(trace))
    expected = float(d * d)
    rel = abs(mean - expected) / expected
    return CheckResult(
        "rademacher_trace_identity",
        rel <= 0.02,
        f"mean Tr((vv^T)^2)={mean:.3f} vs {expected:g}, relative error {rel:.2e}",
    )


def _check_gaussian_kurtosis(seed: int) -> CheckResult:
    d = 16
    scheme = PerturbationScheme.from_name("gaussian", 1.0)
    rng = RngStream(derive_seed(seed, 60))
    vs = perturb.draw(scheme, d, rng, size=1_000_000)
    norm4 = np.einsum("ij,ij->i", vs, vs) ** 2
    m4 = float(np.mean(norm4))
    se = float(np.std(norm4, ddof=1) / math.sqrt(norm4.shape[0]))
    expected = float(d * d + 2 * d)
    within = abs(m4 - expected) / expected <= 0.02
    exceeds = (m4 - d * d) > 3.0 * se
    return CheckResult(
        "gaussian_kurtosis",
        within and exceeds,
        f"E|v|^4={m4:.2f} (target {expected:g} +/- 2%), exceeds {d * d} by {(m4 - d * d) / se:.1f} se",
    )


def _unit_direction(d: int) -> np.ndarray:
    w = np.arange(1.0, d + 1.0)
    return w / np.linalg.norm(w)


def _floor_gap(scheme: PerturbationScheme, seed: int, tag: int, d: int = 16) -> tuple[float, float, float, float]:
    """Mean single-draw MSE on an affine objective vs the analytic floor.

    Returns (gap, se, mean, floor).  Affine objectives make the small-step
    limit exact at any mu, so the floor comparison is sharp.
    """
    w = _unit_direction(d)
    obj = objectives.affine(w)
    rng = RngStream(derive_seed(seed, tag))
    summary = analysis.empirical_estimator_mse(obj, np.zeros(d), scheme, 1e-3, _VERIFY_N_MSE, rng)
    floor = analysis.min_variance_mse(1.0, scheme.delta, d)
    return summary.mean_mse - floor, summary.se_mse, summary.mean_mse, floor


def _attains_floor(scheme: PerturbationScheme, seed: int, tag: int, expect_floor: bool) -> tuple[bool, str]:
    gap, se, mean, floor = _floor_gap(scheme, seed, tag)
    if expect_floor:
        return abs(gap) <= 3.0 * se, f"{scheme.name}: mse={mean:.4f} floor={floor:.4f} gap={gap / se:+.1f} se"
    return gap > 3.0 * se, f"{scheme.name}: mse={mean:.4f} floor={floor:.4f} excess={gap / se:+.1f} se"


def _check_min_variance_floor(seed: int) -> CheckResult:
    ok = True
    details = []
    for k, name in enumerate(("uniform", "rademacher", "coordinate", "dap_exact")):
        scheme = PerturbationScheme.from_name(name, 1.0)
        good, detail = _attains_floor(scheme, seed, 70 + k, expect_floor=True)
        ok = ok and good
        details.append(detail)
    return CheckResult("min_variance_schemes_attain_floor", ok, "; ".join(details))


def _check_gaussian_exceeds(seed: int) -> CheckResult:
    scheme = PerturbationScheme.from_name("gaussian", 1.0)
    good, detail = _attains_floor(scheme, seed, 80, expect_floor=False)
    return CheckResult("gaussian_exceeds_min_variance", good, detail)


def _check_mse_sandwich(seed: int) -> CheckResult:
    d = 16
    w = _unit_direction(d)
    obj = objectives.affine(w)
    ok = True
    details = []
    for k, scheme in enumerate(_all_schemes(1.0)):
        rng = RngStream(derive_seed(seed, 90, k))
        summary = analysis.empirical_estimator_mse(obj, np.zeros(d), scheme, 1e-3, _VERIFY_N_MSE, rng)
        profile = perturb.moment_profile(scheme, d)
        if profile.rho is None:
            emp = perturb.empirical_moment_profile(scheme, d, _VERIFY_N_MSE, RngStream(derive_seed(seed, 91, k)), anchor=w)
            rho = max(emp.rho, 0.0)
        else:
            rho = profile.rho
        lower = analysis.min_variance_mse(1.0, 1.0, d)
        upper = analysis.variance_upper_bound(w, 1.0, d, rho) + (1.0 - 2.0 * 1.0) * 1.0
        lo_ok = summary.mean_mse >= lower - 3.0 * summary.se_mse
        hi_ok = summary.mean_mse <= upper + 3.0 * summary.se_mse
        if not (lo_ok and hi_ok):
            ok = False
            details.append(f"{scheme.name}: mse={summary.mean_mse:.3f} outside [{lower:.3f}, {upper:.3f}]")
    detail = "; ".join(details) if details else "all schemes inside [floor, upper] within 3 se"
    return CheckResult("mse_sandwich", ok, detail)


def verify(seed: int = 0) -> list[CheckResult]:
    """Run the Monte Carlo invariant checks with the documented seed."""
    return [
        _check_covariance(seed),
        _check_constant_magnitude(seed),
        _check_dap_alignment(seed),
        _check_moment_lower_bound(seed),
        _check_rademacher_trace(seed),
        _check_gaussian_kurtosis(seed),
        _check_min_variance_floor(seed),
        _check_gaussian_exceeds(seed),
        _check_mse_sandwich(seed),
    ]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="zo", description="Zeroth-order optimization benchmark harness")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment config and write a CSV report")
    p_run.add_argument("spec", help="path to the experiment config file")
    p_run.add_argument("--out", required=True, help="output CSV path")
    p_verify = sub.add_parser("verify", help="run the seeded Monte Carlo invariant suite")
    p_verify.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if args.command == "run":
        try:
            spec = parse_config(args.spec)
            report = run_spec(spec)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 2
        except (SolverError, InvalidMeshError, DivergenceError, EvaluationError) as exc:
            print(f"runtime error: {exc}", file=sys.stderr)
            return 3
        report.to_csv(args.out)
        print(f"wrote {len(report.rows)} rows to {args.out}")
        return 0

    if args.command == "verify":
        results = verify(seed=args.seed)
        for res in results:
            print(res.line())
        failed = [r for r in results if not r.passed]
        print(f"{len(results) - len(failed)}/{len(results)} checks passed (seed={args.seed})")
        return 1 if failed else 0

    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
