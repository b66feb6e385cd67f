"""Benchmark harness: parameter sweeps, CSV emission and the ``bench`` CLI.

Experiments are described by plain-text key/value config files (one per
reproduced table, under ``configs/``). A sweep is the Cartesian product of
the lambda, degree and grid lists crossed with the method list; every cell
yields exactly one CSV row. Cell failures are recorded in the row, never
aborting the sweep.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from .extrapolation import Diverged
from .history import IterationHistory
from .nonlinear import BratuProblem, MongeAmpereProblem, OuterConfig, run_outer

CSV_HEADER = [
    "problem", "method", "lambda", "p", "h", "iter", "relative_residual",
    "l2_err", "cpu_s", "rhs_time_s", "mg_time_s", "extrapol_time_s", "converged",
]

_METHOD_RE = re.compile(r"^(picard|picard_slu)$|^(mpe|rre|aa)\((\d+)\)$")


@dataclass
class ExperimentConfig:
    problem: str
    lambdas: list[float] = field(default_factory=lambda: [0.0])
    degrees: list[int] = field(default_factory=lambda: [2])
    grids: list[int] = field(default_factory=lambda: [16])
    methods: list[str] = field(default_factory=lambda: ["picard"])
    tol: float = 1e-12
    maxiter: int = 1000
    inner: str = "one_vcycle"
    inner_tol: float = 1e-2
    inner_tol_overrides: dict[tuple[int, int], float] = field(default_factory=dict)
    wave_number: int = 1
    seed: int = 0  # reserved; the solvers are deterministic

    def cells(self):
        for lam in self.lambdas:
            for p in self.degrees:
                for n in self.grids:
                    for method in self.methods:
                        yield (lam, p, n, method)

    def linear_tol_for(self, p: int, n: int) -> float:
        return self.inner_tol_overrides.get((p, n), self.inner_tol)


@dataclass
class ResultRow:
    problem: str
    method: str
    lam: float
    p: int
    n: int
    iter: int
    relative_residual: float
    l2_err: float
    cpu_s: float
    rhs_time_s: float
    mg_time_s: float
    extrapol_time_s: float
    converged: bool
    note: str = ""

    @property
    def h(self) -> float:
        return 1.0 / self.n


def parse_method(token: str) -> tuple[str, int]:
    m = _METHOD_RE.match(token.strip())
    if not m:
        raise ValueError(f"bad method {token!r}")
    if m.group(1):
        return m.group(1), 0
    return m.group(2), int(m.group(3))


def parse_config(path) -> ExperimentConfig:
    """Read a key = value config file; comma-separated values form lists."""
    kv: dict[str, str] = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"bad config line: {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        kv[key.lower()] = val

    problem = kv.pop("problem")
    if problem not in ("bratu1d", "bratu2d", "monge_ampere"):
        raise ValueError(f"unknown problem {problem!r}")
    cfg = ExperimentConfig(problem=problem)

    def floats(s):
        return [float(x) for x in s.split(",") if x.strip()]

    def ints(s):
        return [int(x) for x in s.split(",") if x.strip()]

    for key, val in kv.items():
        if key == "lambda":
            cfg.lambdas = floats(val)
        elif key == "p":
            cfg.degrees = ints(val)
        elif key == "grid":
            cfg.grids = ints(val)
        elif key == "method":
            cfg.methods = [t.strip() for t in val.split(",") if t.strip()]
            for t in cfg.methods:
                parse_method(t)
        elif key == "tol":
            cfg.tol = float(val)
        elif key == "maxiter":
            cfg.maxiter = int(val)
        elif key == "inner":
            cfg.inner = val
        elif key == "inner_tol":
            cfg.inner_tol = float(val)
        elif key == "k":
            cfg.wave_number = int(val)
        elif key == "seed":
            cfg.seed = int(val)
        else:
            m = re.match(r"^inner_tol\.p(\d+)\.g(\d+)$", key)
            if not m:
                raise ValueError(f"unknown config key {key!r}")
            cfg.inner_tol_overrides[(int(m.group(1)), int(m.group(2)))] = float(val)
    if not (cfg.lambdas and cfg.degrees and cfg.grids and cfg.methods):
        raise ValueError("lambda, p, grid and method lists must be non-empty")
    return cfg


def _build_problem(cfg: ExperimentConfig, lam: float, p: int, n: int):
    if cfg.problem == "bratu1d":
        return BratuProblem.manufactured_1d(lam, p, n, k=cfg.wave_number)
    if cfg.problem == "bratu2d":
        return BratuProblem.manufactured_2d(lam, p, n)
    return MongeAmpereProblem.manufactured(p, n)


def _outer_config(cfg: ExperimentConfig, lam: float, p: int, n: int, method: str) -> OuterConfig:
    kind, window = parse_method(method)
    acc = {"picard": "none", "picard_slu": "none", "aa": "anderson"}.get(kind, kind)
    inner = cfg.inner
    if cfg.problem == "monge_ampere":
        inner = "vcycle_to_tol"
    if kind == "picard_slu":
        inner = "direct"
    return OuterConfig(accelerator=acc, window=window, tol=cfg.tol,
                       maxiter=cfg.maxiter, inner=inner,
                       linear_tol=cfg.linear_tol_for(p, n))


def run_cell(cfg: ExperimentConfig, cell) -> tuple[ResultRow, IterationHistory]:
    """Run one (lambda, p, grid, method) cell; failures land in the row."""
    lam, p, n, method = cell
    t0 = time.perf_counter()
    hist = IterationHistory()
    note = ""
    try:
        problem = _build_problem(cfg, lam, p, n)
        field_, hist = run_outer(problem, _outer_config(cfg, lam, p, n, method))
    except Diverged as exc:
        note = f"diverged: {exc}"
        if exc.history is not None:
            hist = exc.history
    except Exception as exc:  # noqa: BLE001 - sweep must survive any cell
        note = f"error: {exc}"
    cpu = time.perf_counter() - t0
    last = hist.records[-1] if hist.records else None
    row = ResultRow(
        problem=cfg.problem, method=method, lam=lam, p=p, n=n,
        iter=hist.iterations,
        relative_residual=last.relative_residual if last else float("nan"),
        l2_err=last.l2_error if last else float("nan"),
        cpu_s=cpu,
        rhs_time_s=last.rhs_s if last else 0.0,
        mg_time_s=last.mg_s if last else 0.0,
        extrapol_time_s=last.extrapol_s if last else 0.0,
        converged=hist.converged,
        note=note,
    )
    return row, hist


def _run_cell_tuple(args):
    cfg, cell = args
    return run_cell(cfg, cell)[0]


def run_experiment(cfg: ExperimentConfig, parallel: int = 1) -> list[ResultRow]:
    """Execute the sweep; rows come back in declaration order."""
    cells = list(cfg.cells())
    if parallel > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=parallel) as pool:
            rows = list(pool.map(_run_cell_tuple, [(cfg, c) for c in cells]))
    else:
        rows = [run_cell(cfg, c)[0] for c in cells]
    return rows


def _fmt(x: float) -> str:
    return f"{float(x):.5e}"


def emit_csv(rows, path) -> None:
    """Write rows as RFC-4180 CSV with the pinned header."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_HEADER)
            for r in rows:
                writer.writerow([
                    r.problem, r.method, _fmt(r.lam), r.p, _fmt(r.h), r.iter,
                    _fmt(r.relative_residual), _fmt(r.l2_err), _fmt(r.cpu_s),
                    _fmt(r.rhs_time_s), _fmt(r.mg_time_s), _fmt(r.extrapol_time_s),
                    "true" if r.converged else "false",
                ])
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def emit_history(history: IterationHistory, path) -> None:
    """Write the per-iteration convergence history behind the semilog plots."""
    path = Path(path)
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter", "relative_residual", "l2_err"])
            for rec in history.records:
                writer.writerow([rec.iteration, _fmt(rec.relative_residual),
                                 _fmt(rec.l2_error)])
    except OSError as exc:
        raise OSError(f"cannot write history to {path}: {exc}") from exc


def find_table_config(n: int) -> Path:
    """Locate configs/table<n>.cfg relative to cwd or the repo checkout."""
    name = f"table{n}.cfg"
    candidates = [
        Path.cwd() / "configs" / name,
        Path(__file__).resolve().parents[2] / "configs" / name,
    ]
    for c in candidates:
        if c.is_file():
            return c
    raise FileNotFoundError(f"no {name} in " + " or ".join(str(c.parent) for c in candidates))


def _render(rows) -> str:
    lines = ["problem      method         lambda   p  grid  iter       rel_res       l2_err  conv"]
    for r in rows:
        mark = "" if r.converged else "^a"
        lines.append(
            f"{r.problem:<12} {r.method:<14} {r.lam:<8g} {r.p:<2d} {r.n:<5d} "
            f"{r.iter:<5d}{mark:<2} {r.relative_residual:>11.2e} {r.l2_err:>11.2e}  "
            f"{'yes' if r.converged else 'NO'}{('  [' + r.note + ']') if r.note else ''}"
        )
    return "\n".join(lines)


def _cmd_run(cfg_path: Path, out_dir: Path, parallel: int) -> int:
    cfg = parse_config(cfg_path)
    rows = run_experiment(cfg, parallel=parallel)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_csv = out_dir / (Path(cfg_path).stem + ".csv")
    emit_csv(rows, out_csv)
    print(_render(rows))
    print(f"wrote {out_csv}")
    return 0


def parse_cell_selector(sel: str):
    """Parse 'method=rre(5),lambda=7,p=5,grid=64' into a cell filter."""
    want: dict[str, str] = {}
    for part in sel.split(","):
        part = part.strip()
        if not part:
            continue
        # method tokens contain parentheses, e.g. rre(5); only split on the first '='
        key, val = (s.strip() for s in part.split("=", 1))
        want[key.lower()] = val
    return want


def _match_cell(cell, want) -> bool:
    lam, p, n, method = cell
    if "method" in want and want["method"] != method:
        return False
    if "lambda" in want and float(want["lambda"]) != lam:
        return False
    if "p" in want and int(want["p"]) != p:
        return False
    if "grid" in want and int(want["grid"]) != n:
        return False
    return True


def _cmd_history(cfg_path: Path, selector: str, out_path: Path | None) -> int:
    cfg = parse_config(cfg_path)
    want = parse_cell_selector(selector)
    matches = [c for c in cfg.cells() if _match_cell(c, want)]
    if len(matches) != 1:
        print(f"selector matches {len(matches)} cells, need exactly 1", file=sys.stderr)
        return 2
    row, hist = run_cell(cfg, matches[0])
    lam, p, n, method = matches[0]
    if out_path is None:
        safe = re.sub(r"[^A-Za-z0-9_.-]", "_", f"{cfg.problem}_{method}_l{lam}_p{p}_g{n}")
        out_path = Path(f"history_{safe}.csv")
    emit_history(hist, out_path)
    print(_render([row]))
    print(f"wrote {out_path}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="bench",
                                     description="Reproduce the solver benchmark tables")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a sweep from a config file")
    p_run.add_argument("--config", required=True, type=Path)
    p_run.add_argument("--out", type=Path, default=Path("."))
    p_run.add_argument("--parallel", type=int, default=1)

    p_table = sub.add_parser("table", help="run a checked-in table config")
    p_table.add_argument("number", type=int, choices=[1, 2, 3, 4, 5])
    p_table.add_argument("--out", type=Path, default=Path("."))
    p_table.add_argument("--parallel", type=int, default=1)

    p_hist = sub.add_parser("history", help="emit one cell's convergence history")
    p_hist.add_argument("--config", required=True, type=Path)
    p_hist.add_argument("--cell", required=True)
    p_hist.add_argument("--out", type=Path, default=None)

    args = parser.parse_args(argv)
    if args.command == "run":
        return _cmd_run(args.config, args.out, args.parallel)
    if args.command == "table":
        return _cmd_run(find_table_config(args.number), args.out, args.parallel)
    return _cmd_history(args.config, args.cell, args.out)


if __name__ == "__main__":
    sys.exit(main())
