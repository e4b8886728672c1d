"""Forwarding-graph construction and per-class property checking.

Each equivalence class induces one forwarding graph: a device's action
in the class vector becomes its out-edges (one per ECMP port), an edge
to the delivery endpoint, or a terminal drop marker.  Checks run per
class; a failed check always carries a concrete witness (a cycle, a
stuck node with the path to it, or an offending path).

Checking semantics, all deliberate choices of this artifact:
  * reachability is universal over ECMP branches by default (every
    maximal path must end at the destination); mode="existential"
    relaxes it to path existence
  * a device forwarding to itself is a loop
  * drops are legal terminals for the blackhole check unless the check
    sets strict_drops, in which case any dropped-at device reachable
    from the sources is reported
  * waypoint checks pass vacuously when the destination is unreachable
  * a check may carry a header-space scope; classes that do not
    intersect the scope are skipped for that check
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .action import Deliver, Drop, Forward, NOUPDATE, OutputVector, format_action
from .engine import ChangeSummary
from .model import InverseModel
from .predicate import Predicate, PredicateStore


@dataclass
class Topology:
    """Devices, external endpoints, links, and delivery points."""

    device_names: list[str]
    endpoints: list[str]
    links: list[tuple[str, str]]
    delivery: dict[str, str] = field(default_factory=dict)
    num_bits: int = 32

    def __post_init__(self):
        self.device_index = {name: i for i, name in enumerate(self.device_names)}
        overlap = set(self.device_names) & set(self.endpoints)
        if overlap:
            raise ValueError(f"names used as both device and endpoint: {sorted(overlap)}")
        self.ports: dict[str, dict[str, str]] = {name: {} for name in self.device_names}
        for a, b in self.links:
            ends = ((a, b),) if a == b else ((a, b), (b, a))
            for x, y in ends:
                if x not in self.device_index:
                    raise ValueError(f"link endpoint {x!r} is not a device")
                if y in self.ports[x]:
                    raise ValueError(f"duplicate port {y!r} on device {x!r}")
                self.ports[x][y] = y
        for endpoint in self.endpoints:
            self.delivery.setdefault(endpoint, endpoint)

    @property
    def n(self) -> int:
        return len(self.device_names)

    def neighbors(self, device: str) -> list[str]:
        return sorted(self.ports[device])

    def to_json(self) -> str:
        return json.dumps(
            {
                "bits": self.num_bits,
                "devices": self.device_names,
                "endpoints": self.endpoints,
                "links": [list(l) for l in self.links],
            },
            indent=2,
        )

    @staticmethod
    def from_json(text: str) -> Topology:
        raw = json.loads(text)
        return Topology(
            device_names=list(raw["devices"]),
            endpoints=list(raw.get("endpoints", [])),
            links=[tuple(l) for l in raw.get("links", [])],
            num_bits=int(raw.get("bits", 32)),
        )


@dataclass
class ForwardingGraph:
    """Edges induced by one class vector over the topology."""

    class_predicate: Predicate
    vector: OutputVector
    out: dict[str, tuple[tuple[str, str], ...]]  # device -> ((port, node), ...)
    drops: frozenset[str]
    devices: tuple[str, ...]


def build_graph(
    class_predicate: Predicate, vector: OutputVector, topo: Topology
) -> ForwardingGraph:
    if vector.n != topo.n:
        raise ValueError("vector width differs from the device count")
    out: dict[str, tuple[tuple[str, str], ...]] = {}
    drops = set()
    for device, action in zip(topo.device_names, vector.components()):
        if action is NOUPDATE:
            raise ValueError(f"device {device} has no concrete action in this class")
        if isinstance(action, Drop):
            drops.add(device)
            out[device] = ()
        elif isinstance(action, Deliver):
            target = topo.delivery.get(action.target)
            if target is None:
                raise ValueError(f"device {device} delivers to unknown endpoint {action.target!r}")
            out[device] = ((action.target, target),)
        elif isinstance(action, Forward):
            edges = []
            for port in action.ports:
                dest = topo.ports[device].get(port)
                if dest is None:
                    raise ValueError(f"device {device} forwards out unknown port {port!r}")
                edges.append((port, dest))
            out[device] = tuple(edges)
        else:
            raise TypeError(f"cannot interpret action {action!r}")
    return ForwardingGraph(
        class_predicate, vector, out, frozenset(drops), tuple(topo.device_names)
    )


def _successors(g: ForwardingGraph, node: str) -> list[str]:
    return [dest for _, dest in g.out.get(node, ())]


def check_loop_free(g: ForwardingGraph) -> tuple[str, dict | None]:
    """No directed cycle among device nodes."""
    WHITE, GRAY, BLACK = 0, 1, 2
    color = {d: WHITE for d in g.devices}
    stack_path: list[str] = []

    def visit(node: str) -> list[str] | None:
        color[node] = GRAY
        stack_path.append(node)
        for succ in _successors(g, node):
            if succ not in color:
                continue  # endpoint
            if color[succ] == GRAY:
                return stack_path[stack_path.index(succ):]
            if color[succ] == WHITE:
                cycle = visit(succ)
                if cycle is not None:
                    return cycle
        stack_path.pop()
        color[node] = BLACK
        return None

    for device in g.devices:
        if color[device] == WHITE:
            cycle = visit(device)
            if cycle is not None:
                return "FAIL", {"cycle": list(cycle)}
    return "PASS", None


def _bfs_tree(g: ForwardingGraph, sources: list[str]) -> dict[str, str | None]:
    parent: dict[str, str | None] = {}
    frontier = []
    for s in sources:
        if s not in parent:
            parent[s] = None
            frontier.append(s)
    while frontier:
        nxt = []
        for node in frontier:
            for succ in _successors(g, node):
                if succ not in parent:
                    parent[succ] = node
                    nxt.append(succ)
        frontier = nxt
    return parent


def _path_to(parent: dict[str, str | None], node: str) -> list[str]:
    path = [node]
    while parent[path[-1]] is not None:
        path.append(parent[path[-1]])
    return path[::-1]


def check_blackhole_free(
    g: ForwardingGraph, topo: Topology, sources: list[str] | None = None, strict_drops: bool = False
) -> tuple[str, dict | None]:
    """No reachable device strands traffic.

    Without strict_drops an explicit drop is a legal terminal; with it,
    any reachable device that drops (or otherwise lacks an out-edge) is
    reported with the path leading there.
    """
    sources = sorted(sources) if sources else list(g.devices)
    parent = _bfs_tree(g, sources)
    for node in sorted(parent):
        if node not in topo.device_index:
            continue
        if g.out.get(node):
            continue
        if node in g.drops and not strict_drops:
            continue
        return "FAIL", {"stuck": node, "path": _path_to(parent, node)}
    return "PASS", None


def check_reachability(
    g: ForwardingGraph,
    topo: Topology,
    sources: list[str] | None,
    dst: str,
    mode: str = "universal",
) -> tuple[str, dict | None]:
    """All (or some, in existential mode) maximal paths end at dst."""
    sources = sorted(sources) if sources else list(g.devices)
    if mode not in ("universal", "existential"):
        raise ValueError(f"unknown reachability mode {mode!r}")
    for src in sources:
        if src not in topo.device_index and src != dst:
            raise ValueError(f"unknown source node {src!r}")
    if mode == "existential":
        for src in sources:
            parent = _bfs_tree(g, [src])
            if dst not in parent:
                return "FAIL", {"src": src, "reachable": sorted(parent)}
        return "PASS", None
    for src in sources:
        parent = _bfs_tree(g, [src])
        for node in sorted(parent):
            if node == dst:
                continue
            succs = _successors(g, node)
            if not succs:
                return "FAIL", {"path": _path_to(parent, node), "terminal": node}
        # Any cycle reachable from src means some walk never terminates.
        verdict, witness = check_loop_free(
            ForwardingGraph(
                g.class_predicate,
                g.vector,
                {d: g.out.get(d, ()) for d in parent if d in topo.device_index},
                g.drops,
                tuple(d for d in g.devices if d in parent),
            )
        )
        if verdict == "FAIL":
            cycle = witness["cycle"]
            return "FAIL", {"path": _path_to(parent, cycle[0]), "cycle": cycle}
    return "PASS", None


def check_waypoint(
    g: ForwardingGraph,
    topo: Topology,
    sources: list[str] | None,
    dst: str,
    via: str,
) -> tuple[str, dict | None]:
    """Every path from the sources to dst passes through via."""
    sources = sorted(sources) if sources else list(g.devices)
    sources = [s for s in sources if s != via]
    pruned = {
        node: tuple((p, d) for p, d in edges if d != via)
        for node, edges in g.out.items()
        if node != via
    }
    bypass = ForwardingGraph(g.class_predicate, g.vector, pruned, g.drops, g.devices)
    parent = _bfs_tree(bypass, sources)
    if dst in parent:
        return "FAIL", {"path": _path_to(parent, dst)}
    return "PASS", None


@dataclass(frozen=True)
class CheckSpec:
    """One property to check per class."""

    kind: str  # loop_free | blackhole_free | reachability | waypoint
    check_id: str
    sources: tuple[str, ...] | None = None
    dst: str | None = None
    via: str | None = None
    mode: str = "universal"
    strict_drops: bool = False
    scope: Predicate | None = None


def load_props(text: str, store: PredicateStore, topo: Topology) -> list[CheckSpec]:
    """Parse the property-spec file (a JSON list of check records)."""
    from .rules import parse_prefix

    raw = json.loads(text)
    if not isinstance(raw, list):
        raise ValueError("property spec must be a JSON list")
    checks = []
    for idx, record in enumerate(raw):
        kind = record.get("type")
        if kind not in ("loop_free", "blackhole_free", "reachability", "waypoint"):
            raise ValueError(f"check {idx}: unknown type {kind!r}")
        scope = None
        if "scope_prefixes" in record:
            scope = store.false
            for text_prefix in record["scope_prefixes"]:
                value, plen = parse_prefix(text_prefix, store.num_bits)
                scope = scope | store.from_prefix(value, plen)
        sources = tuple(record["src"]) if "src" in record else None
        label = record.get("id") or f"{idx}:{kind}" + (f"[{record.get('dst')}]" if record.get("dst") else "")
        if kind in ("reachability", "waypoint") and not record.get("dst"):
            raise ValueError(f"check {idx}: {kind} needs a dst")
        if kind == "waypoint" and not record.get("via"):
            raise ValueError(f"check {idx}: waypoint needs a via")
        checks.append(
            CheckSpec(
                kind=kind,
                check_id=label,
                sources=sources,
                dst=record.get("dst"),
                via=record.get("via"),
                mode=record.get("mode", "universal"),
                strict_drops=bool(record.get("strict_drops", False)),
                scope=scope,
            )
        )
    return checks


@dataclass(frozen=True)
class ReportRow:
    verdict: str
    witness: dict | None


class VerificationReport:
    """Per (class, check) verdicts with witnesses."""

    def __init__(self):
        self.rows: dict[tuple[str, str], ReportRow] = {}
        self.rechecked: set[str] = set()

    def add(self, class_id: str, check_id: str, verdict: str, witness: dict | None) -> None:
        self.rows[(class_id, check_id)] = ReportRow(verdict, witness)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VerificationReport):
            return NotImplemented
        return self.rows == other.rows

    def failures(self) -> list[tuple[str, str, ReportRow]]:
        return [(c, k, row) for (c, k), row in sorted(self.rows.items()) if row.verdict == "FAIL"]

    def to_json_lines(self) -> str:
        lines = []
        for (class_id, check_id), row in sorted(self.rows.items()):
            lines.append(
                json.dumps(
                    {
                        "class_id": class_id,
                        "check": check_id,
                        "verdict": row.verdict,
                        "witness": row.witness,
                    }
                )
            )
        return "\n".join(lines)

    def summary(self) -> str:
        per_check: dict[str, list[int]] = {}
        for (_, check_id), row in self.rows.items():
            bucket = per_check.setdefault(check_id, [0, 0])
            bucket[1] += 1
            if row.verdict == "PASS":
                bucket[0] += 1
        width = max((len(c) for c in per_check), default=5)
        lines = [f"{'check'.ljust(width)}  pass/classes"]
        for check_id in sorted(per_check):
            passed, total = per_check[check_id]
            lines.append(f"{check_id.ljust(width)}  {passed}/{total}")
        return "\n".join(lines)


class Verifier:
    """Runs the configured checks over a model, full or incrementally."""

    def __init__(self, topo: Topology, checks: list[CheckSpec]):
        self.topo = topo
        self.checks = checks

    def _run_one(self, check: CheckSpec, graph: ForwardingGraph) -> tuple[str, dict | None]:
        if check.kind == "loop_free":
            return check_loop_free(graph)
        if check.kind == "blackhole_free":
            return check_blackhole_free(
                graph, self.topo, list(check.sources) if check.sources else None, check.strict_drops
            )
        if check.kind == "reachability":
            return check_reachability(
                graph,
                self.topo,
                list(check.sources) if check.sources else None,
                check.dst,
                check.mode,
            )
        return check_waypoint(
            graph,
            self.topo,
            list(check.sources) if check.sources else None,
            check.dst,
            check.via,
        )

    def _check_class(self, report: VerificationReport, vector: OutputVector, pred: Predicate) -> None:
        class_id = vector.digest().hex()
        graph = None
        for check in self.checks:
            if check.scope is not None and (pred & check.scope).is_empty():
                continue
            if graph is None:
                graph = build_graph(pred, vector, self.topo)
            verdict, witness = self._run_one(check, graph)
            report.add(class_id, check.check_id, verdict, witness)

    def verify_model(self, model: InverseModel) -> VerificationReport:
        report = VerificationReport()
        for vector, pred in model.items():
            self._check_class(report, vector, pred)
            report.rechecked.add(vector.digest().hex())
        return report

    def recheck(
        self,
        previous: VerificationReport,
        model: InverseModel,
        summary: ChangeSummary,
    ) -> VerificationReport:
        """Recheck only classes intersecting the touched regions.

        Untouched classes keep their previous verdicts; the merged
        report equals a full recheck.
        """
        touched = None
        for pred, _, _ in summary.touched:
            touched = pred if touched is None else touched | pred
        report = VerificationReport()
        prior: dict[str, list[tuple[str, ReportRow]]] = {}
        for (class_id, check_id), row in previous.rows.items():
            prior.setdefault(class_id, []).append((check_id, row))
        for vector, pred in model.items():
            class_id = vector.digest().hex()
            unchanged = touched is None or (pred & touched).is_empty()
            if unchanged and class_id in prior:
                for check_id, row in prior[class_id]:
                    report.rows[(class_id, check_id)] = row
            else:
                self._check_class(report, vector, pred)
                report.rechecked.add(class_id)
        return report
