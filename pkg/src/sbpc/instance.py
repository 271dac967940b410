"""Problem data: CVRPLIB parsing, demand distributions and the arc-cost table.

Node 0 is always the depot and customers are numbered 1..n in file order.
Every instance carries, for each node, a finite demand pmf and a *nominal*
expected demand.  The nominal value is what load accounting uses (route
feasibility, rounded capacity cuts, label resources); for parsed files it is
the integer demand of the file, which is also the Poisson rate.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

__all__ = [
    "InstanceError",
    "DemandDistribution",
    "StochasticInstance",
    "build_poisson",
    "build_instance",
    "euclidean_cost",
    "parse_instance",
    "load_instance",
    "write_instance",
    "feasibility_report",
]

DEFAULT_EPS = 1e-5


class InstanceError(ValueError):
    """Raised for malformed or infeasible instance data."""


@dataclass(frozen=True, eq=False)
class DemandDistribution:
    """Finite pmf over nonnegative integers."""

    support: np.ndarray
    probs: np.ndarray
    mean: float = field(init=False)

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.int64).ravel()
        probs = np.asarray(self.probs, dtype=np.float64).ravel()
        if support.size == 0 or support.size != probs.size:
            raise InstanceError("support and probs must be nonempty and of equal length")
        if np.any(support < 0) or np.any(np.diff(support) <= 0):
            raise InstanceError("support must be strictly increasing nonnegative integers")
        if np.any(probs <= 0.0):
            raise InstanceError("zero-mass points must be removed from the support")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise InstanceError(f"probabilities sum to {probs.sum()!r}, not 1")
        support.setflags(write=False)
        probs.setflags(write=False)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "mean", float(np.dot(support, probs)))

    @classmethod
    def point_mass(cls, value: int) -> "DemandDistribution":
        return cls(np.array([value]), np.array([1.0]))

    @classmethod
    def from_pmf(cls, values: Iterable[int], weights: Iterable[float]) -> "DemandDistribution":
        """Build from unnormalised weights; zero weights are dropped and duplicates merged."""
        acc: dict[int, float] = {}
        for v, w in zip(values, weights):
            if w > 0:
                acc[int(v)] = acc.get(int(v), 0.0) + float(w)
        if not acc:
            raise InstanceError("pmf has no positive mass")
        keys = sorted(acc)
        w = np.array([acc[k] for k in keys])
        return cls(np.array(keys), _renormalize(w))

    @property
    def max_value(self) -> int:
        return int(self.support[-1])

    @property
    def variance(self) -> float:
        return float(np.dot((self.support - self.mean) ** 2, self.probs))

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(self.support, size=size, p=self.probs)

    def __repr__(self):
        return f"DemandDistribution(mean={self.mean:.6g}, support=[{self.support[0]}..{self.support[-1]}], points={self.support.size})"


def _renormalize(w: np.ndarray) -> np.ndarray:
    p = w / w.sum()
    # push the residual rounding error into the largest mass so the sum is 1 to ~1 ulp
    k = int(np.argmax(p))
    p[k] += 1.0 - p.sum()
    return p


def build_poisson(rate: float, eps: float = DEFAULT_EPS) -> DemandDistribution:
    """Poisson(rate) with all masses below ``eps`` removed and the rest renormalised.

    If no mass reaches ``eps`` the modal point(s) are kept, so the result is
    always a valid pmf.
    """
    if not rate > 0:
        raise InstanceError(f"Poisson rate must be positive, got {rate!r}")
    if not 0.0 < eps < 1.0:
        raise InstanceError(f"eps must lie in (0, 1), got {eps!r}")
    hi = int(math.ceil(rate + 12.0 * math.sqrt(rate) + 40.0))
    ks = np.arange(hi + 1)
    pmf = stats.poisson.pmf(ks, rate)
    keep = pmf >= eps
    if not keep.any():
        keep = pmf >= pmf.max() * (1.0 - 1e-12)
    idx = np.flatnonzero(keep)
    # the Poisson pmf is unimodal so the retained set is an interval
    lo, up = idx[0], idx[-1]
    return DemandDistribution(ks[lo : up + 1], _renormalize(pmf[lo : up + 1]))


def euclidean_cost(a: Sequence[float], b: Sequence[float]) -> float:
    return math.hypot(float(a[0]) - float(b[0]), float(a[1]) - float(b[1]))


@dataclass(frozen=True, eq=False)
class StochasticInstance:
    """Immutable VRPSD instance.

    ``demands[0]`` and ``expected[0]`` belong to the depot (point mass at 0).
    ``fleet`` is ``None`` for an unlimited fleet.
    """

    name: str
    coords: np.ndarray | None
    cost: np.ndarray
    capacity: int
    fleet: int | None
    load_factor: float
    demands: tuple
    expected: np.ndarray

    def __post_init__(self):
        cost = np.array(self.cost, dtype=np.float64)
        n1 = cost.shape[0]
        if cost.shape != (n1, n1) or n1 < 2:
            raise InstanceError("cost table must be square with at least one customer")
        if not np.all(np.isfinite(cost)) or np.any(cost < 0):
            raise InstanceError("arc costs must be finite and nonnegative")
        if np.any(np.diag(cost) != 0.0):
            raise InstanceError("cost[i][i] must be zero")
        if int(self.capacity) != self.capacity or self.capacity < 1:
            raise InstanceError("capacity must be a positive integer")
        if self.fleet is not None and self.fleet < 1:
            raise InstanceError("fleet must be positive or None")
        if not self.load_factor >= 1.0:
            raise InstanceError("load factor must be >= 1")
        if len(self.demands) != n1:
            raise InstanceError("one demand distribution per node is required")
        expected = np.array(self.expected, dtype=np.float64)
        if expected.shape != (n1,) or np.any(expected < 0):
            raise InstanceError("expected demands must be nonnegative, one per node")
        limit = self.load_factor * self.capacity
        bad = [i for i in range(1, n1) if expected[i] > limit + 1e-9]
        if bad:
            raise InstanceError(
                f"customers {bad} have expected demand above f*Q = {limit:g}; instance infeasible"
            )
        cost.setflags(write=False)
        expected.setflags(write=False)
        object.__setattr__(self, "cost", cost)
        object.__setattr__(self, "expected", expected)
        object.__setattr__(self, "capacity", int(self.capacity))
        object.__setattr__(self, "demands", tuple(self.demands))
        if self.coords is not None:
            coords = np.array(self.coords, dtype=np.float64)
            coords.setflags(write=False)
            object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return self.cost.shape[0] - 1

    @property
    def customers(self) -> range:
        return range(1, self.n + 1)

    @property
    def max_load(self) -> float:
        """f*Q, the bound on a route's total expected demand."""
        return self.load_factor * self.capacity

    def route_load(self, route: Iterable[int]) -> float:
        return float(sum(self.expected[i] for i in route))

    def is_load_feasible(self, route: Iterable[int]) -> bool:
        return self.route_load(route) <= self.max_load + 1e-9

    def min_vehicles(self) -> int:
        return int(math.ceil(self.expected[1:].sum() / self.max_load - 1e-9))


def build_instance(
    demands: Sequence,
    capacity: int,
    *,
    coords=None,
    cost=None,
    load_factor: float = 1.0,
    fleet: int | None = None,
    expected=None,
    eps: float = DEFAULT_EPS,
    name: str = "synthetic",
) -> StochasticInstance:
    """Assemble an instance from customer data (customers only, depot excluded).

    ``demands`` entries may be DemandDistribution objects or Poisson rates.
    Supply either ``coords`` (depot first) or a full ``cost`` table.
    """
    dists = [DemandDistribution.point_mass(0)]
    for d in demands:
        dists.append(d if isinstance(d, DemandDistribution) else build_poisson(float(d), eps))
    if cost is None:
        if coords is None:
            raise InstanceError("either coords or cost is required")
        cost = distance_matrix(coords)
    if expected is None:
        expected = [0.0] + [
            float(d) if not isinstance(d, DemandDistribution) else d.mean for d in demands
        ]
    else:
        expected = [0.0] + [float(e) for e in expected]
    return StochasticInstance(
        name=name,
        coords=coords,
        cost=cost,
        capacity=capacity,
        fleet=fleet,
        load_factor=load_factor,
        demands=tuple(dists),
        expected=np.asarray(expected),
    )


def distance_matrix(coords) -> np.ndarray:
    xy = np.asarray(coords, dtype=np.float64)
    diff = xy[:, None, :] - xy[None, :, :]
    return np.hypot(diff[..., 0], diff[..., 1])


_KEY_RE = re.compile(r"^\s*([A-Z_]+)\s*:\s*(.*?)\s*$")
_SECTIONS = {"NODE_COORD_SECTION", "DEMAND_SECTION", "DEPOT_SECTION"}


def _tokenize(text: str):
    header: dict[str, str] = {}
    sections: dict[str, list[list[str]]] = {}
    current = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line == "EOF":
            break
        word = line.split()[0].rstrip(":")
        if word in _SECTIONS:
            current = word
            sections[current] = []
            continue
        m = _KEY_RE.match(line)
        if m and not line[0].isdigit() and not line[0] == "-":
            header[m.group(1)] = m.group(2)
            current = None
            continue
        if current is None:
            raise InstanceError(f"unexpected line outside any section: {line!r}")
        sections[current].append(line.split())
    return header, sections


def _fleet_from_header(header: dict[str, str]) -> int | None:
    for key in ("VEHICLES", "NUM_VEHICLES"):
        if key in header:
            return int(header[key])
    m = re.search(r"-k(\d+)", header.get("NAME", ""))
    if m:
        return int(m.group(1))
    m = re.search(r"trucks\s*:?\s*(\d+)", header.get("COMMENT", ""), re.IGNORECASE)
    if m:
        return int(m.group(1))
    return None


def parse_instance(
    text: str,
    f: float = 1.0,
    fleet_mode: str = "unlimited",
    eps: float = DEFAULT_EPS,
    *,
    scale_capacity: bool = False,
    fleet: int | None = None,
) -> StochasticInstance:
    """Parse a CVRPLIB/TSPLIB ``EUC_2D`` instance into a VRPSD instance.

    Deterministic demands become Poisson rates (truncated at ``eps``).  With
    ``scale_capacity`` the capacity is reduced to ``round(Q/f)``, which keeps
    the customers-per-vehicle ratio when the load factor is raised.
    ``fleet_mode='fixed'`` takes the vehicle count from ``fleet`` or, failing
    that, from the file (``-k<m>`` name suffix, ``VEHICLES`` or comment).
    """
    if fleet_mode not in ("fixed", "unlimited"):
        raise InstanceError(f"fleet_mode must be 'fixed' or 'unlimited', got {fleet_mode!r}")
    header, sections = _tokenize(text)
    ewt = header.get("EDGE_WEIGHT_TYPE", "EUC_2D").upper()
    if ewt != "EUC_2D":
        raise InstanceError(f"unsupported EDGE_WEIGHT_TYPE {ewt}")
    try:
        capacity = int(float(header["CAPACITY"]))
    except (KeyError, ValueError) as exc:
        raise InstanceError("missing or malformed CAPACITY") from exc
    for sec in ("NODE_COORD_SECTION", "DEMAND_SECTION"):
        if sec not in sections:
            raise InstanceError(f"missing {sec}")
    try:
        coords = {int(r[0]): (float(r[1]), float(r[2])) for r in sections["NODE_COORD_SECTION"]}
        dem = {int(r[0]): float(r[1]) for r in sections["DEMAND_SECTION"]}
    except (IndexError, ValueError) as exc:
        raise InstanceError("malformed coordinate or demand line") from exc
    if "DIMENSION" in header and int(header["DIMENSION"]) != len(coords):
        raise InstanceError("DIMENSION does not match NODE_COORD_SECTION")
    if set(coords) != set(dem):
        raise InstanceError("coordinate and demand sections list different nodes")
    depots = [int(r[0]) for r in sections.get("DEPOT_SECTION", []) if int(r[0]) != -1]
    if not depots:
        raise InstanceError("missing depot (empty or absent DEPOT_SECTION)")
    depot = depots[0]
    if depot not in coords:
        raise InstanceError(f"depot {depot} has no coordinates")
    order = [depot] + [k for k in sorted(coords) if k != depot]
    if len(order) < 2:
        raise InstanceError("instance has no customers")

    q = capacity
    if scale_capacity:
        q = int(round(capacity / f))
    demands = []
    for k in order[1:]:
        d = dem[k]
        if d < 0 or d != int(d):
            raise InstanceError(f"node {k}: demand must be a nonnegative integer")
        demands.append(DemandDistribution.point_mass(0) if d == 0 else build_poisson(d, eps))
    m = None
    if fleet_mode == "fixed":
        m = fleet if fleet is not None else _fleet_from_header(header)
        if m is None:
            raise InstanceError("fixed fleet requested but the file gives no vehicle count")
    xy = np.array([coords[k] for k in order])
    return build_instance(
        demands,
        q,
        coords=xy,
        load_factor=f,
        fleet=m,
        expected=[dem[k] for k in order[1:]],
        name=header.get("NAME", "unnamed"),
    )


def load_instance(path, f: float = 1.0, fleet_mode: str = "unlimited", eps: float = DEFAULT_EPS, **kw):
    with open(path) as fh:
        return parse_instance(fh.read(), f, fleet_mode, eps, **kw)


def write_instance(inst: StochasticInstance) -> str:
    """Serialise back to CVRPLIB text (coordinates, nominal demands, capacity)."""
    if inst.coords is None:
        raise InstanceError("only coordinate-based instances can be written")
    lines = [
        f"NAME : {inst.name}",
        "TYPE : CVRP",
        f"DIMENSION : {inst.n + 1}",
        "EDGE_WEIGHT_TYPE : EUC_2D",
        f"CAPACITY : {inst.capacity}",
    ]
    if inst.fleet is not None:
        lines.append(f"VEHICLES : {inst.fleet}")
    lines.append("NODE_COORD_SECTION")
    for i, (x, y) in enumerate(inst.coords):
        lines.append(f"{i + 1} {float(x)!r} {float(y)!r}")
    lines.append("DEMAND_SECTION")
    for i, e in enumerate(inst.expected):
        lines.append(f"{i + 1} {int(e) if float(e).is_integer() else float(e)!r}")
    lines += ["DEPOT_SECTION", "1", "-1", "EOF"]
    return "\n".join(lines) + "\n"


def feasibility_report(inst: StochasticInstance) -> dict:
    """Summary of load feasibility, JSON-serialisable."""
    limit = inst.max_load
    over = [i for i in inst.customers if inst.expected[i] > limit + 1e-9]
    heavy = [i for i in inst.customers if inst.demands[i].max_value > inst.capacity]
    min_veh = inst.min_vehicles()
    return {
        "name": inst.name,
        "n": inst.n,
        "capacity": inst.capacity,
        "load_factor": inst.load_factor,
        "fleet": inst.fleet,
        "total_expected_demand": float(inst.expected[1:].sum()),
        "min_vehicles": min_veh,
        "customers_over_limit": over,
        "customers_with_support_above_capacity": heavy,
        "fleet_sufficient": inst.fleet is None or inst.fleet >= min_veh,
        "feasible": not over and (inst.fleet is None or inst.fleet >= min_veh),
    }


def feasibility_json(inst: StochasticInstance) -> str:
    return json.dumps(feasibility_report(inst), indent=2)
