"""Command-line front end.

    smolmosaic [run|verify|bench] --kernel baikal --M 4096 --t-end 1 --out out/

``--verify`` and ``--benchmark-ops`` are aliases for the ``verify`` and
``bench`` commands.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import statistics
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .integrate import IntegratorConfig, Mode, integrate
from .kernels import get_kernel, registry_list
from .metrics import m1_error, m1_norm, moments
from .mosaic import DEFAULT_LEAF, Strategy, build_mosaic, build_partition, load_mosaic, save_mosaic
from .operators import apply_f1, apply_f2
from .oracles import MAX_DIRECT_M, analytic_constant_solution, direct_f1, direct_f2, matrix_f1, matrix_f2

logger = logging.getLogger("smolmosaic")

EXIT_USAGE = 2


class InitialConditionError(ValueError):
    pass


def make_initial_condition(kind: str, M: int) -> np.ndarray:
    """``monodisperse``, ``wide`` (``n_k = 1/(k+1)``) or ``file:PATH``.

    A file holds two whitespace- or comma-separated columns: size and
    concentration.  ``#`` starts a comment.
    """
    if kind == "monodisperse":
        n = np.zeros(M)
        n[0] = 1.0
        return n
    if kind == "wide":
        return 1.0 / (np.arange(1, M + 1) + 1.0)
    if kind.startswith("file:"):
        return _read_table(Path(kind[5:]), M)
    raise InitialConditionError(f"unknown initial condition {kind!r} (monodisperse, wide, file:PATH)")


def _read_table(path: Path, M: int) -> np.ndarray:
    n = np.zeros(M)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InitialConditionError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].replace(",", " ").strip()
        if not line:
            continue
        parts = line.split()
        try:
            if len(parts) != 2:
                raise ValueError
            size, conc = int(parts[0]), float(parts[1])
        except ValueError:
            raise InitialConditionError(f"{path}:{lineno}: expected 'size concentration'") from None
        if not 1 <= size <= M:
            raise InitialConditionError(f"{path}:{lineno}: size {size} outside 1..{M}")
        if not math.isfinite(conc) or conc < 0:
            raise InitialConditionError(f"{path}:{lineno}: bad concentration {parts[1]!r}")
        n[size - 1] = conc
    return n


def _next_pow2(k: int) -> int:
    return 1 << max(0, k - 1).bit_length()


@dataclass
class RunConfig:
    kernel: str = "constant"
    kernel_params: dict = field(default_factory=dict)
    M: int = 1024
    eps: float = 1e-6
    partition: Strategy = Strategy.TRIDIAG
    leaf: int = DEFAULT_LEAF
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    init: str = "monodisperse"
    checkpoints: tuple = ()
    out: Path = Path("out")
    deterministic: bool = False
    threads: int = 1
    reps: int = 10
    seed: int = 0
    mosaic_cache: Optional[Path] = None

    def echo(self) -> dict:
        ic = self.integrator
        return {
            "kernel": self.kernel,
            "kernel_params": self.kernel_params,
            "M": self.M,
            "eps": self.eps,
            "partition": self.partition.value,
            "leaf": self.leaf,
            "integrator": {
                "mode": ic.mode.value, "dt": ic.dt, "t_end": ic.t_end,
                "rtol": ic.rtol, "atol": ic.atol,
            },
            "init": self.init,
            "checkpoints": list(self.checkpoints),
            "deterministic": self.deterministic,
        }


def _padded_size(M: int) -> int:
    return max(2, _next_pow2(M))


def _mosaic_for(cfg: RunConfig):
    spec = get_kernel(cfg.kernel, **cfg.kernel_params)
    Mp = _padded_size(cfg.M)
    leaf = min(cfg.leaf, Mp)
    cache = cfg.mosaic_cache
    if cache is not None and cache.exists():
        mk = load_mosaic(cache)
        same = (mk.M, mk.partition.strategy, mk.partition.leaf_side, mk.tol, mk.kernel, mk.params) == (
            Mp, cfg.partition, leaf, cfg.eps, spec.name, dict(spec.params))
        if same:
            logger.info("loaded mosaic from %s", cache)
            return spec, mk, 0.0
        logger.info("cached mosaic %s does not match the configuration; rebuilding", cache)
    t0 = time.perf_counter()
    mk = build_mosaic(spec, build_partition(Mp, cfg.partition, leaf), cfg.eps)
    elapsed = time.perf_counter() - t0
    if cache is not None:
        save_mosaic(mk, cache)
    return spec, mk, elapsed


def _fmt(x: float) -> str:
    return repr(float(x))


def write_concentrations(path: Path, n: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write("size,concentration\n")
        for k, v in enumerate(n, 1):
            fh.write(f"{k},{_fmt(v)}\n")


def read_concentrations(path: Path) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data[:, 1]


def run(cfg: RunConfig) -> int:
    """Build, integrate, and write checkpoint CSVs plus ``summary.json``."""
    t_start = time.perf_counter()
    spec, mk, t_build = _mosaic_for(cfg)
    M, Mp = cfg.M, mk.M
    n0 = np.zeros(Mp)
    n0[:M] = make_initial_condition(cfg.init, M)
    clock = {"f1": 0.0, "f2": 0.0}
    workers = cfg.threads

    def rhs(n):
        t0 = time.perf_counter()
        f1 = apply_f1(mk, n, workers=workers)
        t1 = time.perf_counter()
        f2 = apply_f2(mk, n, workers=workers)
        clock["f1"] += t1 - t0
        clock["f2"] += time.perf_counter() - t1
        out = f1 - f2
        out[M:] = 0.0  # padding sizes stay empty
        return out

    traj = integrate(rhs, n0, cfg.integrator, cfg.checkpoints)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)
    m_init = moments(n0[:M]).M1
    records = []
    for k, cp in enumerate(traj.checkpoints):
        n = cp.n[:M]
        name = f"checkpoint_{k:03d}.csv"
        write_concentrations(out / name, n)
        rep = moments(n, m_init)
        entry = {"t": cp.t, "file": name, **rep.as_dict()}
        if cfg.kernel == "constant" and spec.params["value"] == 2.0 and cfg.init == "monodisperse" and cp.t > 0:
            entry["m1_error_vs_analytic"] = m1_error(n, analytic_constant_solution(np.arange(1, M + 1), cp.t))
        records.append(entry)
    final = records[-1]
    summary = {
        "version": __version__,
        "config": cfg.echo(),
        "padded_M": Mp,
        "build": mk.stats(),
        "integrator": {
            "steps": traj.steps, "rejected": traj.rejected, "rhs_evals": traj.rhs_evals,
            "mass_violations": traj.mass_violations, "negative_flags": traj.negative_flags,
        },
        "checkpoints": records,
        "mass_leak": final["mass_leak"],
        "timings": None if cfg.deterministic else {
            "build": t_build, "f1": clock["f1"], "f2": clock["f2"],
            "total": time.perf_counter() - t_start,
        },
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"t={final['t']:g}  M1={final['M1']:.12g}  mass_leak={final['mass_leak']:.3e}  "
          f"max_rank={mk.max_block_rank}  mrank={mk.mrank:.2f}  -> {out}")
    return 0


def benchmark(cfg: RunConfig) -> int:
    """Median wall time of ``f1`` and ``f2`` over ``cfg.reps`` repetitions."""
    spec, mk, t_build = _mosaic_for(cfg)
    n = np.random.default_rng(cfg.seed).uniform(0.0, 1.0, mk.M)
    apply_f1(mk, n, workers=cfg.threads)
    apply_f2(mk, n, workers=cfg.threads)
    times = {"f1": [], "f2": []}
    for _ in range(cfg.reps):
        t0 = time.perf_counter()
        apply_f1(mk, n, workers=cfg.threads)
        t1 = time.perf_counter()
        apply_f2(mk, n, workers=cfg.threads)
        t2 = time.perf_counter()
        times["f1"].append(t1 - t0)
        times["f2"].append(t2 - t1)
    result = {
        "config": cfg.echo(),
        "build": mk.stats(),
        "build_seconds": t_build,
        "reps": cfg.reps,
        "f1_median_s": statistics.median(times["f1"]),
        "f2_median_s": statistics.median(times["f2"]),
    }
    cfg.out.mkdir(parents=True, exist_ok=True)
    (cfg.out / "bench.json").write_text(json.dumps(result, indent=2) + "\n")
    print(f"M={mk.M} kernel={spec.name} partition={mk.partition.strategy.value} "
          f"max_rank={mk.max_block_rank} build={t_build:.3f}s "
          f"f1={result['f1_median_s']:.4g}s f2={result['f2_median_s'] * 1e3:.4g}ms")
    return 0


def verify(cfg: RunConfig) -> int:
    """Compare the fast operators with the O(M^2) oracles and print a report."""
    if cfg.M > MAX_DIRECT_M:
        print(f"verify: M={cfg.M} exceeds oracle limit {MAX_DIRECT_M}", file=sys.stderr)
        return EXIT_USAGE
    spec, mk, _ = _mosaic_for(cfg)
    M = mk.M
    n = np.random.default_rng(cfg.seed).uniform(0.0, 1.0, M)
    f1, f2 = apply_f1(mk, n), apply_f2(mk, n)
    checks = []

    def rel(a, b):
        d = m1_norm(b)
        return m1_error(a, b) / d if d else m1_error(a, b)

    limit = 10 * cfg.eps
    checks.append(("f1 vs exact kernel", rel(f1, direct_f1(spec, n)), limit))
    checks.append(("f2 vs exact kernel", rel(f2, direct_f2(spec, n)), limit))
    if M <= 1 << 12:
        K = mk.materialize()
        checks.append(("f1 vs densified mosaic", rel(f1, matrix_f1(K, n)), 1e-13))
        checks.append(("f2 vs densified mosaic", rel(f2, matrix_f2(K, n)), 1e-13))
    if M <= 1 << 10:
        s = np.arange(1, 2 * M + 1)
        gain = math.fsum(s * apply_f1(mk, n, full=True))
        loss = math.fsum(s[:M] * f2)
        checks.append(("mass transfer identity", abs(gain - loss) / abs(loss), 1e-12))
    ok = True
    report = []
    for name, value, lim in checks:
        passed = value <= lim
        ok &= passed
        report.append({"check": name, "value": value, "limit": lim, "pass": passed})
        print(f"{'PASS' if passed else 'FAIL'}  {name:<26} {value:.3e}  (limit {lim:.1e})")
    if cfg.out is not None:
        cfg.out.mkdir(parents=True, exist_ok=True)
        (cfg.out / "verify.json").write_text(json.dumps(
            {"config": cfg.echo(), "build": mk.stats(), "checks": report}, indent=2) + "\n")
    return 0 if ok else 1


def _parse_params(items: Sequence[str]) -> dict:
    params = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"--kernel-param expects key=value, got {item!r}")
        params[key.strip()] = float(value)
    return params


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smolmosaic", description=__doc__.split("\n")[0])
    p.add_argument("command", nargs="?", choices=("run", "verify", "bench"), default="run")
    p.add_argument("--kernel", default="constant")
    p.add_argument("--kernel-param", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--M", type=int, default=1024, help="number of sizes")
    p.add_argument("--eps", type=float, default=1e-6, help="ACA relative tolerance")
    p.add_argument("--partition", choices=[s.value for s in Strategy], default=Strategy.TRIDIAG.value)
    p.add_argument("--leaf", type=int, default=DEFAULT_LEAF, help="dense leaf block side")
    p.add_argument("--t-end", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=0.1, help="fixed step, or initial step with --adaptive")
    p.add_argument("--adaptive", action="store_true", help="Runge-Kutta-Fehlberg 4(5) step control")
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--atol", type=float, default=1e-30)
    p.add_argument("--dt-max", type=float, default=math.inf)
    p.add_argument("--init", default="monodisperse", help="monodisperse | wide | file:PATH")
    p.add_argument("--checkpoints", default="", help="comma-separated output times")
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--mosaic-cache", type=Path, default=None, help="binary mosaic dump to reuse")
    p.add_argument("--benchmark-ops", action="store_true", help="same as the bench command")
    p.add_argument("--verify", action="store_true", help="same as the verify command")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--deterministic", action="store_true", help="omit timings so outputs are reproducible")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.kernel not in registry_list():
        print(f"smolmosaic: unknown kernel {args.kernel!r}; available: {', '.join(registry_list())}",
              file=sys.stderr)
        return EXIT_USAGE
    try:
        params = _parse_params(args.kernel_param)
        get_kernel(args.kernel, **params)
        if args.M < 2:
            raise ValueError("--M must be at least 2")
        if args.threads < 1:
            raise ValueError("--threads must be at least 1")
        checkpoints = tuple(float(x) for x in args.checkpoints.split(",") if x.strip())
        dt_max = max(args.dt_max, args.dt)
        integ = IntegratorConfig(
            mode=Mode.RKF45 if args.adaptive else Mode.RK4, dt=args.dt, t_end=args.t_end,
            rtol=args.rtol, atol=args.atol, dt_max=dt_max, dt_min=min(1e-12, args.dt),
        )
    except (KeyError, ValueError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) else str(exc)
        print(f"smolmosaic: {msg}", file=sys.stderr)
        return EXIT_USAGE
    cfg = RunConfig(
        kernel=args.kernel, kernel_params=params, M=args.M, eps=args.eps,
        partition=Strategy(args.partition), leaf=args.leaf, integrator=integ,
        init=args.init, checkpoints=checkpoints, out=args.out,
        deterministic=args.deterministic,
        threads=args.threads, reps=args.reps, seed=args.seed, mosaic_cache=args.mosaic_cache,
    )
    command = "verify" if args.verify else "bench" if args.benchmark_ops else args.command
    try:
        return {"run": run, "verify": verify, "bench": benchmark}[command](cfg)
    except Exception as exc:  # any module error -> diagnostic and nonzero exit
        logger.debug("failure", exc_info=True)
        print(f"smolmosaic: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
