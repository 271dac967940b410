"""Solve a random 14-customer instance to optimality.

Writes the instance in CVRPLIB format, reads it back, runs the
branch-price-and-cut solver and prints the routes with their expected costs.
Set SBPC_LOG=INFO to watch the search.
"""

import logging
import os
import sys
import tempfile

import numpy as np

from sbpc import build_instance, load_instance, route_cost_or
from sbpc.bnb import SolverConfig, solve
from sbpc.instance import write_instance

logging.basicConfig(level=os.environ.get("SBPC_LOG", "WARNING").upper())

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
rng = np.random.default_rng(seed)
n = 14
coords = rng.integers(0, 101, (n + 1, 2)).astype(float)
demands = rng.integers(3, 25, n).astype(float)
inst = build_instance(list(demands), 60, coords=coords, name=f"rand-n{n + 1}-s{seed}")

with tempfile.NamedTemporaryFile("w", suffix=".vrp", delete=False) as fh:
    fh.write(write_instance(inst))
inst = load_instance(fh.name)
os.unlink(fh.name)

res = solve(inst, SolverConfig(time_limit=600))
print(f"{inst.name}: {res.status}, objective {res.objective:.3f}, {res.stats['nodes']} nodes, {res.runtime:.1f}s")
print(f"root bound {res.stats['root_lb']:.3f}, {res.stats['rccs']} capacity cuts, {res.stats['srcs']} subset-row cuts")
for r in res.incumbent.routes:
    load = inst.route_load(r)
    print(f"  {r}  load {load:.0f}/{inst.max_load:.0f}  cost {route_cost_or(inst, r):.3f}")
