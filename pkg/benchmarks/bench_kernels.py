"""Shots per second of each chain with the numba kernels and with the pure-Python fallback.

Each backend runs in its own interpreter because the flag is read at import time.

    python3 benchmarks/bench_kernels.py --shots 20000 --fallback-shots 2000
"""
import argparse
import json
import os
import subprocess
import sys

CHILD = r"""
import json, sys, time
from saimc.chains import ChainConfig, run_chain
from saimc.radiosity import build_sai_tables, surface_adjoint
from saimc.scenarios import preset
scen, h, n = sys.argv[1], float(sys.argv[2]), int(sys.argv[3])
sc = preset(scen, h)
tb = build_sai_tables(surface_adjoint(sc))
out = {}
for name, cfg in [("analog", ChainConfig("analog")), ("sb", ChainConfig("sb")),
                  ("heu", ChainConfig("heu", q_v=0.5)), ("sai", ChainConfig("sai", q_v=0.5, q_s=0.9))]:
    run_chain(sc, cfg, 64, 0, tb)  # compile or warm caches
    t = time.perf_counter()
    run_chain(sc, cfg, n, 1, tb)
    out[name] = n / (time.perf_counter() - t)
print(json.dumps(out))
"""


def measure(disable: bool, scenario: str, h: float, shots: int) -> dict:
    env = dict(os.environ, SAIMC_DISABLE_NUMBA="1" if disable else "0")
    res = subprocess.run([sys.executable, "-c", CHILD, scenario, str(h), str(shots)], env=env, check=True,
                         capture_output=True, text=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--scenario", default="cos3")
    p.add_argument("--h", type=float, default=0.05)
    p.add_argument("--shots", type=int, default=20_000)
    p.add_argument("--fallback-shots", type=int, default=2_000)
    args = p.parse_args(argv)
    fast = measure(False, args.scenario, args.h, args.shots)
    slow = measure(True, args.scenario, args.h, args.fallback_shots)
    print(f"{'chain':8s} {'numba shots/s':>14s} {'python shots/s':>15s} {'speedup':>8s}")
    for k in fast:
        print(f"{k:8s} {fast[k]:14.0f} {slow[k]:15.0f} {fast[k] / slow[k]:8.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
