"""Command-line harness: single runs, sweeps and result/mesh/adjoint dumps.

Sweep file (JSON): any of ``scenario, chain, h, q_s, q_v, mfp_mult`` may be a
list and the Cartesian product is run; ``shots`` and ``seed`` are scalars.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .analytics import RESULT_COLUMNS, EstimateRecord, run_batch
from .chains import CHAINS, ChainConfig
from .radiosity import build_sai_tables, surface_adjoint
from .scenarios import load_scenario

log = logging.getLogger("saimc")

SWEEP_KEYS = ("scenario", "chain", "h", "q_s", "q_v", "mfp_mult")


@dataclass
class RunSpec:
    scenario: list = field(default_factory=lambda: ["cos3"])
    chain: list = field(default_factory=lambda: ["sai"])
    h: list = field(default_factory=lambda: [0.05])
    q_s: list = field(default_factory=lambda: [0.9])
    q_v: list = field(default_factory=lambda: [0.5])
    mfp_mult: list = field(default_factory=lambda: [None])
    shots: int = 100_000
    seed: int = 0
    rotation: str = "identity"
    jacobian: str = "exact"

    @classmethod
    def from_dict(cls, d: dict) -> "RunSpec":
        unknown = set(d) - set(SWEEP_KEYS) - {"shots", "seed", "rotation", "jacobian"}
        if unknown:
            raise ValueError(f"unknown sweep keys: {sorted(unknown)}")
        kw = {}
        for k in SWEEP_KEYS:
            if k in d:
                v = d[k]
                kw[k] = list(v) if isinstance(v, (list, tuple)) else [v]
        for k in ("shots", "seed", "rotation", "jacobian"):
            if k in d:
                kw[k] = d[k]
        return cls(**kw)

    def rows(self):
        return itertools.product(*(getattr(self, k) for k in SWEEP_KEYS))


def run_sweep(spec: RunSpec) -> tuple[list[EstimateRecord], list[dict]]:
    """Run every swept tuple; returns (records, failures).

    The surface adjoint is solved once per (scenario, h) and reused for all
    volume settings.
    """
    records, failures = [], []
    solves = {}
    for scen, chain, h, q_s, q_v, mult in spec.rows():
        key = dict(zip(SWEEP_KEYS, (scen, chain, h, q_s, q_v, mult)))
        try:
            scene = load_scenario(scen, h, None if mult is None else float(mult))
            tables = None
            if chain == "sai":
                sk = (scen, h)
                if sk not in solves:
                    fld = surface_adjoint(scene, spec.jacobian)
                    solves[sk] = build_sai_tables(fld, spec.rotation)
                    log.info("adjoint solve for %s h=%g: %.3fs", scen, h, fld.seconds)
                tables = solves[sk]
            rec = run_batch(scene, ChainConfig(chain, q_v=q_v, q_s=q_s), spec.shots, spec.seed, tables)
            records.append(rec)
        except Exception as exc:  # a failed row is recorded and the sweep goes on
            log.error("row %s failed: %s", key, exc)
            failures.append({**key, "error": str(exc)})
    return records, failures


def emit_results(records: list[EstimateRecord], path, fmt: str = "csv") -> None:
    if not records:
        raise ValueError("no results to write")
    rows = [r.row() for r in records]
    if fmt == "json":
        with open(path, "w") as fh:
            json.dump(rows, fh, indent=1)
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RESULT_COLUMNS)
            for r in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in (r[c] for c in RESULT_COLUMNS)])
    else:
        raise ValueError(f"unknown format {fmt!r}")


def read_results(path) -> list[dict]:
    """Parse a results file written by :func:`emit_results`."""
    path = Path(path)
    text = path.read_text()
    if text.lstrip().startswith("["):
        return json.loads(text)
    ints = {"N", "seed"}
    strs = {"scenario", "chain"}
    out = []
    for row in csv.DictReader(text.splitlines()):
        out.append({k: (v if k in strs else int(v) if k in ints else float(v)) for k, v in row.items()})
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="saimc", description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="cos3", help="flat | cos3 | cos3-lambert | circle | path to a JSON scenario")
    p.add_argument("--chain", default="sai", choices=CHAINS)
    p.add_argument("--h", type=float, default=0.05, help="boundary mesh size")
    p.add_argument("--qs", type=float, default=0.9, help="SAI mixture weight of the heuristic branch")
    p.add_argument("--qv", type=float, default=0.5, help="heuristic weight of the phase function")
    p.add_argument("--mfp-mult", type=float, default=None, help="mean free path in domain diameters (inf: void)")
    p.add_argument("--shots", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sweep", type=Path, default=None, help="JSON sweep file")
    p.add_argument("--out", type=Path, default=None)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--emit-adjoint", type=Path, default=None, help="write (j,x,y,phi)")
    p.add_argument("--emit-mesh", type=Path, default=None, help="write (j,x,y,nx,ny,length,material)")
    p.add_argument("--rotation", choices=("identity", "exact"), default="identity")
    p.add_argument("--jacobian", choices=("exact", "observer"), default="exact")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.sweep is not None:
        with open(args.sweep) as fh:
            spec = RunSpec.from_dict(json.load(fh))
    else:
        spec = RunSpec([args.scenario], [args.chain], [args.h], [args.qs], [args.qv], [args.mfp_mult], args.shots,
                       args.seed)
    spec.rotation = args.rotation
    spec.jacobian = args.jacobian
    if args.emit_mesh or args.emit_adjoint:
        scene = load_scenario(spec.scenario[0], spec.h[0])
        if args.emit_mesh:
            scene.mesh.to_csv(args.emit_mesh)
        if args.emit_adjoint:
            surface_adjoint(scene, spec.jacobian).to_csv(args.emit_adjoint)
    records, failures = run_sweep(spec)
    if records:
        if args.out is not None:
            emit_results(records, args.out, args.format)
        else:
            w = csv.writer(sys.stdout)
            w.writerow(RESULT_COLUMNS)
            for r in records:
                w.writerow([r.row()[c] for c in RESULT_COLUMNS])
    for f in failures:
        print(f"failed: {f}", file=sys.stderr)
    shots = sum(r.N for r in records)
    capped = sum(r.capped for r in records)
    if capped and shots and capped / shots >= 1e-6:
        print(f"collision cap hit on {capped} of {shots} shots", file=sys.stderr)
        return 1
    return 0 if records and not failures else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
