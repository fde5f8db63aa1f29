#!/usr/bin/env python3
"""Side-by-side demo: centralized oracle vs a 3-node simulated run.

Usage: python scripts/run_demo.py [loop|lawnmower|figure_eight|two_segment] [seed]
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from meshslam.config import TopologySpec
from meshslam.policy import Role
from meshslam.runner import report, run_centralized, run_distributed
from meshslam.scenarios import TrajectoryKind, default_scenario


def main() -> int:
    kind = TrajectoryKind(sys.argv[1]) if len(sys.argv) > 1 else TrajectoryKind.LOOP
    seed = int(sys.argv[2]) if len(sys.argv) > 2 else 1
    spec = default_scenario(kind, seed=seed)
    topo = TopologySpec(roles=[Role.TRACKING, Role.MAPPING, Role.LOOP])

    oracle = run_centralized(spec)
    print("== centralized oracle ==")
    print(report(oracle.metrics, "text"))

    dist = run_distributed(spec, topo)
    print("== 3-node simulated run ==")
    print(report(dist.metrics, "text"))

    if oracle.metrics.rms_ate and dist.metrics.rms_ate:
        delta = abs(dist.metrics.rms_ate - oracle.metrics.rms_ate)
        print(f"ate difference: {delta:.6f} m")
    updates = [d for _, _, n, d in dist.events if n == "global_update"]
    print(f"global updates: {[u['kind'] for u in updates] or 'none'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
