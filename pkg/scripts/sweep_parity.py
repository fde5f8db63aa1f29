#!/usr/bin/env python3
"""Seed sweep: distributed-vs-oracle ATE deltas and consistency times.

Usage: python scripts/sweep_parity.py [n_seeds]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from meshslam.config import TopologySpec
from meshslam.policy import Role
from meshslam.runner import run_centralized, run_distributed
from meshslam.scenarios import TrajectoryKind, default_scenario


def main() -> int:
    n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 10
    topo = TopologySpec(roles=[Role.TRACKING, Role.MAPPING, Role.LOOP])
    print(f"{'scenario':<14}{'seed':>5}{'oracle':>10}{'3-node':>10}"
          f"{'delta':>10}{'cons_s':>8}")
    worst = 0.0
    for kind in (TrajectoryKind.LOOP, TrajectoryKind.LAWNMOWER):
        for seed in range(1, n_seeds + 1):
            spec = default_scenario(kind, seed=seed)
            oracle = run_centralized(spec)
            dist = run_distributed(spec, topo)
            delta = abs(dist.metrics.rms_ate - oracle.metrics.rms_ate)
            worst = max(worst, delta)
            cons = dist.metrics.consistency_s
            print(f"{kind.value:<14}{seed:>5}"
                  f"{oracle.metrics.rms_ate:>10.4f}"
                  f"{dist.metrics.rms_ate:>10.4f}{delta:>10.4f}"
                  f"{cons if cons is not None else float('nan'):>8.3f}")
    print(f"worst delta: {worst:.4f} m")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
