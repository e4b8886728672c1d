"""Synthetic datasets: a three-router example and fat-tree fabrics.

Rules are synthesized per destination by multi-source BFS: the owning
device delivers (or drops, for aggregate prefixes with no endpoint),
every other device forwards along all shortest paths (one ECMP action
holding the sorted next-hop ports).  Link-failure traces re-run the
synthesis without the failed link and emit the rule diff grouped as
one batch per device.

Fat-tree with pod parameter k (k even): (k/2)^2 core switches, k pods
of k/2 aggregation plus k/2 edge switches, so 5k^2/4 switches total;
each edge switch is a rack.  Counting both directions, the switch
fabric has k^3 links (k^3/4 edge-aggregation pairs and k^3/4
aggregation-core pairs).  Pods own one prefix each and racks a longer
prefix inside it; at 32-bit headers these are the conventional /16 and
/24.  Scaled header widths remap the prefixes proportionally so
exhaustive oracles stay feasible.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

from .action import Action, Deliver, Drop, format_action, forward
from .predicate import PredicateStore
from .rules import BatchUpdate, RuleTable, load_rules, load_trace
from .verify import Topology


@dataclass(frozen=True)
class Destination:
    prefix: int
    plen: int
    endpoint: str | None      # None: aggregate prefix, dropped at owners
    owners: tuple[str, ...]


@dataclass
class GeneratedDataset:
    topology: Topology
    rules_text: str
    props_text: str
    metadata: dict = field(default_factory=dict)
    trace_text: str | None = None
    destinations: list[Destination] = field(default_factory=list)

    @property
    def num_bits(self) -> int:
        return self.topology.num_bits

    def load(self, store: PredicateStore) -> tuple[list[RuleTable], int]:
        return load_rules(self.rules_text, store, self.topology.device_names)

    def load_trace(self, store: PredicateStore, next_id: int) -> tuple[list[BatchUpdate], int]:
        if self.trace_text is None:
            raise ValueError("dataset has no trace")
        return load_trace(self.trace_text, store, self.topology.device_names, next_id)

    def write(self, directory) -> dict[str, str]:
        from pathlib import Path

        base = Path(directory)
        base.mkdir(parents=True, exist_ok=True)
        paths = {
            "topology": base / "topology.json",
            "rules": base / "rules.txt",
            "props": base / "props.json",
            "metadata": base / "metadata.json",
        }
        paths["topology"].write_text(self.topology.to_json() + "\n")
        paths["rules"].write_text(self.rules_text)
        paths["props"].write_text(self.props_text)
        paths["metadata"].write_text(json.dumps(self.metadata, indent=2) + "\n")
        if self.trace_text is not None:
            paths["trace"] = base / "trace.txt"
            paths["trace"].write_text(self.trace_text)
        return {k: str(v) for k, v in paths.items()}


def _format_prefix(prefix: int, plen: int, num_bits: int) -> str:
    from .rules import format_prefix

    return format_prefix(prefix, plen, num_bits)


def _synth_rules(
    topo: Topology,
    destinations: list[Destination],
    adjacency: dict[str, set[str]] | None = None,
) -> tuple[list[tuple[str, int, int, int, Action]], int]:
    """Shortest-path ECMP rules per (device, destination).

    Returns (rule tuples, count of disconnected device/destination
    pairs that fell back to drop).
    """
    if adjacency is None:
        adjacency = {d: set(topo.neighbors(d)) for d in topo.device_names}
    out: list[tuple[str, int, int, int, Action]] = []
    disconnected = 0
    for dest in destinations:
        dist: dict[str, int] = {}
        frontier = deque()
        for owner in dest.owners:
            dist[owner] = 0
            frontier.append(owner)
        while frontier:
            node = frontier.popleft()
            for peer in adjacency[node]:
                if peer not in dist:
                    dist[peer] = dist[node] + 1
                    frontier.append(peer)
        for device in topo.device_names:
            if device in dest.owners:
                action: Action = Deliver(dest.endpoint) if dest.endpoint else Drop()
            elif device in dist:
                hops = [p for p in adjacency[device] if dist.get(p) == dist[device] - 1]
                action = forward(*sorted(hops))
            else:
                action = Drop()
                disconnected += 1
            out.append((device, dest.prefix, dest.plen, dest.plen, action))
    return out, disconnected


def _rules_text(rows, num_bits: int) -> str:
    lines = ["# <device> <prefix>/<len> <priority> <action>"]
    for device, prefix, plen, priority, action in rows:
        lines.append(
            f"{device} {_format_prefix(prefix, plen, num_bits)} {priority} {format_action(action)}"
        )
    return "\n".join(lines) + "\n"


def _scaled_site_prefix(site: int, index: int, num_bits: int) -> tuple[int, int]:
    """Prefix for site (2 bits) and index, scaled to the header width."""
    if num_bits == 32:
        # The conventional layout: 10.<site>.<index>.0/24.
        return (10 << 24) | (site << 16) | (index << 8), 24
    if num_bits == 16:
        if index >= 64:
            raise ValueError("at most 64 prefixes per site at 16 bits")
        return (site << 14) | (index << 8), 8
    if num_bits == 8:
        if index >= 8:
            raise ValueError("at most 8 prefixes per site at 8 bits")
        return (site << 6) | (index << 3), 5
    raise ValueError("supported header widths are 8, 16 and 32")


def gen_example(num_bits: int = 32, n_prefixes: int = 10) -> GeneratedDataset:
    """Three routers in a triangle: a gateway plus two subnet attachments.

    Router A owns the default route to the internet; subnet X behind B
    and subnet Y behind C each announce n_prefixes prefixes.  The
    resulting model has exactly three classes at any width.
    """
    topo = Topology(
        device_names=["A", "B", "C"],
        endpoints=["internet", "subnet-x", "subnet-y"],
        links=[("A", "B"), ("A", "C"), ("B", "C")],
        num_bits=num_bits,
    )
    destinations = [Destination(0, 0, "internet", ("A",))]
    for j in range(n_prefixes):
        px, lx = _scaled_site_prefix(0, j, num_bits)
        py, ly = _scaled_site_prefix(1, j, num_bits)
        destinations.append(Destination(px, lx, "subnet-x", ("B",)))
        destinations.append(Destination(py, ly, "subnet-y", ("C",)))
    rows, _ = _synth_rules(topo, destinations)
    props = [
        {"type": "loop_free"},
        {"type": "blackhole_free"},
        {
            "type": "reachability",
            "dst": "subnet-x",
            "scope_prefixes": [
                _format_prefix(d.prefix, d.plen, num_bits)
                for d in destinations
                if d.endpoint == "subnet-x"
            ],
        },
        {
            "type": "reachability",
            "dst": "subnet-y",
            "scope_prefixes": [
                _format_prefix(d.prefix, d.plen, num_bits)
                for d in destinations
                if d.endpoint == "subnet-y"
            ],
        },
    ]
    return GeneratedDataset(
        topology=topo,
        rules_text=_rules_text(rows, num_bits),
        props_text=json.dumps(props, indent=2) + "\n",
        metadata={
            "kind": "example",
            "bits": num_bits,
            "devices": 3,
            "links": 3,
            "prefixes_per_subnet": n_prefixes,
            "rules": len(rows),
        },
        destinations=destinations,
    )


def _fat_tree_prefix(pod: int, rack: int | None, k: int, num_bits: int) -> tuple[int, int]:
    if num_bits == 32:
        if k > 256:
            raise ValueError("pod parameter too large for 32-bit prefixes")
        base = (10 << 24) | (pod << 16)
        return (base, 16) if rack is None else (base | (rack << 8), 24)
    pod_bits = max(1, (k - 1).bit_length())
    rack_bits = max(1, (k // 2 - 1).bit_length())
    host_bits = num_bits - pod_bits - rack_bits
    if host_bits < 1:
        raise ValueError(f"header width {num_bits} too small for k={k}")
    if rack is None:
        return pod << (num_bits - pod_bits), pod_bits
    return ((pod << rack_bits) | rack) << host_bits, pod_bits + rack_bits


def fat_tree_counts(k: int) -> dict[str, int]:
    """Closed-form size of a k-ary fat tree (k even).

    switches: (k/2)^2 cores plus k pods of k aggregation/edge switches;
    fabric_links_directed counts both directions of every switch-switch
    link (k^3/4 edge-aggregation pairs plus k^3/4 aggregation-core
    pairs); rack attachment links are not included.
    """
    if k < 2 or k % 2:
        raise ValueError("pod parameter k must be even and >= 2")
    return {
        "switches": 5 * k * k // 4,
        "racks": k * k // 2,
        "fabric_links_directed": k**3,
    }


def gen_fat_tree(k: int, num_bits: int = 16) -> GeneratedDataset:
    """k-ary fat tree with one rack (and rack prefix) per edge switch."""
    counts = fat_tree_counts(k)
    half = k // 2
    cores = [f"core{c}" for c in range(half * half)]
    aggs = {(p, a): f"agg{p}-{a}" for p in range(k) for a in range(half)}
    edges = {(p, e): f"edge{p}-{e}" for p in range(k) for e in range(half)}
    racks = {(p, e): f"rack{p}-{e}" for p in range(k) for e in range(half)}
    links = []
    for p in range(k):
        for e in range(half):
            for a in range(half):
                links.append((edges[p, e], aggs[p, a]))
    for p in range(k):
        for a in range(half):
            for j in range(half):
                links.append((aggs[p, a], cores[a * half + j]))
    topo = Topology(
        device_names=cores + [aggs[p, a] for p in range(k) for a in range(half)]
        + [edges[p, e] for p in range(k) for e in range(half)],
        endpoints=[racks[p, e] for p in range(k) for e in range(half)],
        links=links,
        num_bits=num_bits,
    )
    destinations = [Destination(0, 0, None, tuple(topo.device_names))]
    for p in range(k):
        prefix, plen = _fat_tree_prefix(p, None, k, num_bits)
        destinations.append(
            Destination(prefix, plen, None, tuple(edges[p, e] for e in range(half)))
        )
        for e in range(half):
            prefix, plen = _fat_tree_prefix(p, e, k, num_bits)
            destinations.append(Destination(prefix, plen, racks[p, e], (edges[p, e],)))
    rows, _ = _synth_rules(topo, destinations)
    props = [{"type": "loop_free"}, {"type": "blackhole_free"}]
    for p in range(k):
        for e in range(half):
            prefix, plen = _fat_tree_prefix(p, e, k, num_bits)
            props.append(
                {
                    "type": "reachability",
                    "dst": racks[p, e],
                    "scope_prefixes": [_format_prefix(prefix, plen, num_bits)],
                }
            )
    return GeneratedDataset(
        topology=topo,
        rules_text=_rules_text(rows, num_bits),
        props_text=json.dumps(props, indent=2) + "\n",
        metadata={"kind": "fat-tree", "bits": num_bits, "k": k, "rules": len(rows), **counts},
        destinations=destinations,
    )


def _indexed_rules(dataset: GeneratedDataset) -> dict[tuple[str, int, int, int], tuple[int, Action]]:
    """Map (device, prefix, plen, priority) to (loader rule id, action)."""
    from .action import parse_action
    from .rules import parse_prefix

    out = {}
    rule_id = 0
    for raw in dataset.rules_text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        rule_id += 1
        device, prefix_text, priority, action_text = line.split()
        prefix, plen = parse_prefix(prefix_text, dataset.num_bits)
        out[(device, prefix, plen, int(priority))] = (rule_id, parse_action(action_text))
    return out


def gen_failure_trace(dataset: GeneratedDataset, a: str, b: str) -> tuple[str, bool]:
    """Trace for failing link (a, b): the rule diff, one batch per device.

    Returns the trace text and whether the failure disconnected any
    destination (those rules fall back to drop and are so flagged).
    """
    topo = dataset.topology
    if b not in topo.ports.get(a, {}):
        raise ValueError(f"no link between {a!r} and {b!r}")
    adjacency = {d: set(topo.neighbors(d)) for d in topo.device_names}
    adjacency[a].discard(b)
    adjacency[b].discard(a)
    new_rows, disconnected = _synth_rules(topo, dataset.destinations, adjacency)
    old_index = _indexed_rules(dataset)
    per_device: dict[str, list[str]] = {}
    for device, prefix, plen, priority, action in new_rows:
        key = (device, prefix, plen, priority)
        old_id, old_action = old_index[key]
        if old_action == action:
            continue
        per_device.setdefault(device, []).append(f"- {device} {old_id}")
        per_device.setdefault(device, []).append(
            f"+ {device} {_format_prefix(prefix, plen, dataset.num_bits)} {priority} {format_action(action)}"
        )
    batches = []
    for device in topo.device_names:
        if device in per_device:
            batches.append("\n".join(per_device[device]))
    return "\n\n".join(batches) + ("\n" if batches else ""), disconnected > 0


def install_workload(dataset: GeneratedDataset) -> tuple[str, str]:
    """Baseline rules (defaults only) plus a per-device install trace.

    Mirrors feeding a fresh verifier one device's worth of rules at a
    time: the baseline keeps every table total via its priority-0 rule,
    and each batch inserts one device's remaining rules.
    """
    baseline: list[str] = []
    per_device: dict[str, list[str]] = {}
    for raw in dataset.rules_text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        device, prefix_text, priority, action_text = line.split()
        if int(priority) == 0:
            baseline.append(line)
        else:
            per_device.setdefault(device, []).append(f"+ {line}")
    batches = [
        "\n".join(per_device[d]) for d in dataset.topology.device_names if d in per_device
    ]
    return "\n".join(baseline) + "\n", "\n\n".join(batches) + "\n"
