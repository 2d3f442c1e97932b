"""Command line entry point and output writers.

    twoscale {cell|run|micro|validate} --config PATH [--out DIR] [--strict-a4]
             [--dt X] [--t-end X] [--eps-list 4,8,16]

Exit codes: 0 success, 2 configuration or validation failure, 3 solver failure.
TWOSCALE_THREADS caps the worker threads used for the cell problems; BLAS is
pinned to one thread so every CSV is byte-identical whatever that cap is.
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (ConfigError, GeometryError, MeshFailure, MismatchedConfigs, MissingInterface,
                     NegativeInitialData, NegativeRate, ResolutionTooCoarse, SolverError)

logger = logging.getLogger("twoscale")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3


def fmt(x) -> str:
    return "%.17g" % float(x)


def _csv(header: list[str], rows) -> bytes:
    buf = io.StringIO(newline="")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    return buf.getvalue().encode("ascii")


@dataclass
class ResultBundle:
    out_dir: Path
    files: dict = field(default_factory=dict)  # name -> (sha256, bytes)
    metadata: dict = field(default_factory=dict)

    def add(self, name: str, payload: bytes) -> Path:
        path = self.out_dir / name
        path.write_bytes(payload)
        self.files[name] = (hashlib.sha256(payload).hexdigest(), len(payload))
        return path

    def write_manifest(self) -> Path:
        doc = {"metadata": self.metadata,
               "files": {k: {"sha256": h, "bytes": n} for k, (h, n) in sorted(self.files.items())}}
        path = self.out_dir / "manifest.json"
        path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
        return path


def open_bundle(out_dir, config=None, command: str = "") -> ResultBundle:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    import scipy

    meta = {"command": command, "twoscale": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__}
    if config is not None:
        meta["config_sha256"] = config.digest()
    return ResultBundle(out, metadata=meta)


def effective_csv(tensors: dict, rates=None) -> bytes:
    rows = []
    for s in sorted(tensors):
        d = tensors[s]
        M = d.matrix if hasattr(d, "matrix") else np.atleast_2d(d)
        for i in range(M.shape[0]):
            for j in range(M.shape[1]):
                rows.append((f"d{s}", str(i), str(j), M[i, j]))
    if rates is not None:
        for name, v in rates.as_dict().items():
            rows.append((name, "", "", v))
    return _csv(["species", "i", "j", "value"], rows)


SERIES_HEADER = (["t"] + [f"u{s}_{k}" for s in range(1, 6) for k in ("min", "mean", "max")]
                 + ["S_total", "gypsum_total"])


def series_csv(diagnostics) -> bytes:
    rows = []
    for d in diagnostics:
        row = [d.t]
        for s in range(1, 6):
            row += [d.minimum[s], d.mean[s], d.maximum[s]]
        rows.append(row + [d.S_total, d.gypsum_total])
    return _csv(SERIES_HEADER, rows)


def fields_csv(state, grid, model) -> bytes:
    nx, ny = grid.n_cells[0], (grid.n_cells[1] if grid.dim > 1 else 1)
    ix, iy = np.divmod(np.arange(grid.size), ny)
    w = model.sw_quad.weights
    u5 = state.u5 @ w / w.sum()
    rows = ((str(a), str(b), *state.u[:, k], u5[k]) for k, (a, b) in enumerate(zip(ix, iy)))
    return _csv(["ix", "iy", "u1", "u2", "u3", "u4", "u5_mean"], rows)


def convergence_csv(table) -> bytes:
    return _csv(["eps", "species", "error"], ((e, str(s), v) for e, s, v in table.rows))


def write_outputs(out_dir, *, trajectory=None, model=None, effective=None, errors=None,
                  config=None, command: str = "", snapshot_every: int = 0) -> ResultBundle:
    """Write every contracted CSV present among the arguments plus manifest.json."""
    start = time.perf_counter()
    bundle = open_bundle(out_dir, config, command)
    if effective is not None:
        tensors, rates = effective
        bundle.add("effective.csv", effective_csv(tensors, rates))
    if trajectory is not None:
        bundle.add("series.csv", series_csv(trajectory.diagnostics))
        if snapshot_every > 0:
            for k, st in enumerate(trajectory.states):
                if k % snapshot_every == 0 or k == len(trajectory.states) - 1:
                    bundle.add(f"fields_t{st.t:.6g}.csv", fields_csv(st, trajectory.grid, model))
    if errors is not None:
        bundle.add("convergence.csv", convergence_csv(errors))
    bundle.metadata["write_seconds"] = round(time.perf_counter() - start, 6)
    bundle.write_manifest()
    return bundle


# --------------------------------------------------------------------- CLI

def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="twoscale", description="Two-scale sulfate corrosion model.")
    p.add_argument("command", choices=["cell", "run", "micro", "validate"])
    p.add_argument("--config", required=True, help="run configuration file")
    p.add_argument("--out", help="output directory (overrides [output] directory)")
    p.add_argument("--strict-a4", action="store_true", help="treat (A4) violations as failures")
    p.add_argument("--dt", type=float, help="time step override")
    p.add_argument("--t-end", type=float, help="final time override")
    p.add_argument("--eps-list", help="comma separated eps denominators, e.g. 4,8,16")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _threads() -> int:
    raw = os.environ.get("TWOSCALE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"TWOSCALE_THREADS must be an integer, got {raw!r}") from None


def _apply_overrides(config, args):
    if args.strict_a4:
        config = config.with_values("kinetics", strict_a4=True)
    section = "micro" if args.command == "micro" else "macro"
    if args.dt is not None:
        config = config.with_values(section, dt=args.dt)
    if args.t_end is not None:
        config = config.with_values(section, t_end=args.t_end)
    if args.eps_list:
        try:
            eps = [int(x) for x in args.eps_list.split(",") if x.strip()]
        except ValueError:
            raise ConfigError(f"--eps-list expects integers, got {args.eps_list!r}") from None
        config = config.with_values("micro", eps_list=eps)
    if args.out:
        config = config.with_values("output", directory=args.out)
    return config


def _run_command(args) -> int:
    from . import config as cfg
    from .corrector import validate_effective
    from .kinetics import validate_assumptions
    from .macro_sim import homogenize_config, run

    config = _apply_overrides(cfg.load_config(args.config), args)
    config.require(args.command)
    workers = _threads()
    out = config.get("output", "directory")

    report = validate_assumptions(config)
    if args.command == "validate":
        print(report.render())
        return EXIT_OK if report.ok else EXIT_CONFIG
    for code, _, msg in report.warnings():
        logger.warning("%s: %s", code, msg)
    if not report.ok:
        print(report.render(), file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "cell":
        cell = homogenize_config(config, workers)
        for s, t in sorted(cell.tensors.items()):
            v = validate_effective(t, cfg.diffusion_tensor(config, s), t.phase_fraction)
            flags = ",".join(sorted(v.flags)) or "ok"
            print(f"d{s}: eig={np.array2string(v.eigenvalues, precision=6)} {flags}")
        write_outputs(out, effective=(cell.tensors, cell.rates), config=config, command="cell")
    elif args.command == "run":
        cell = homogenize_config(config, workers)
        traj, model = run(config, workers, cell=cell)
        write_outputs(out, trajectory=traj, model=model, effective=(cell.tensors, cell.rates),
                      config=config, command="run",
                      snapshot_every=config.get("output", "snapshot_every"))
        logger.info("run finished: %d steps, %d rejected", traj.steps, traj.rejected)
    else:
        from .micro_ref import convergence_study

        eps = [1.0 / n for n in config.get("micro", "eps_list")]
        table = convergence_study(eps, config)
        write_outputs(out, errors=table, config=config, command="micro")
        for s in range(1, 6):
            errs = " ".join(f"{v:.4e}" for _, v in table.errors(s))
            print(f"u{s}: {errs}")
    print(f"wrote {out}")
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=1):
            return _run_command(args)
    except (ConfigError, GeometryError, NegativeRate, NegativeInitialData, MismatchedConfigs,
            ResolutionTooCoarse, MissingInterface) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, MeshFailure) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
