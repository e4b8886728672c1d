"""Per-device rule tables with priorities and maintained effective matches.

A rule matches a destination prefix and carries an action and a numeric
priority (larger wins; longest-prefix tables use priority = prefix
length).  A table is well-behaved when every header has exactly one
highest-priority matching rule; rules sharing a priority level must
have pairwise-disjoint matches and a priority-0 default must complete
the coverage.

Each table caches every rule's effective match (its match minus all
strictly-higher-priority matches).  The cache is updated incrementally
on insert/delete; `recompute_inverses` re-derives it from scratch for
cross-checking.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from typing import Iterable, Sequence

from .action import Action, NOUPDATE, OutputVector, VectorFactory, format_action, parse_action
from .model import InverseModel
from .predicate import Predicate, PredicateStore


class IllBehavedError(Exception):
    """A rule set leaves some header with zero or multiple winners."""


@dataclass(frozen=True)
class Rule:
    rule_id: int
    device: int
    prefix: int          # full-width address value, bits past plen zeroed
    plen: int
    priority: int
    action: Action
    match: Predicate

    def matches_header(self, header: int, num_bits: int) -> bool:
        if self.plen == 0:
            return True
        return (header ^ self.prefix) >> (num_bits - self.plen) == 0

    def same_matcher(self, other: Rule) -> bool:
        """Same device, match and priority (the action may differ)."""
        return (
            self.device == other.device
            and self.priority == other.priority
            and self.match == other.match
        )


def make_rule(
    store: PredicateStore,
    rule_id: int,
    device: int,
    prefix: int,
    plen: int,
    priority: int,
    action: Action,
) -> Rule:
    if action is NOUPDATE:
        raise ValueError("NOUPDATE is reserved and not a legal rule action")
    bits = store.num_bits
    if plen:
        prefix &= ((1 << plen) - 1) << (bits - plen)
    else:
        prefix = 0
    return Rule(rule_id, device, prefix, plen, priority, action, store.from_prefix(prefix, plen))


class RuleTable:
    """Priority-ordered rules of one device, with cached effective matches."""

    def __init__(self, store: PredicateStore, device: int):
        self.store = store
        self.device = device
        self._rules: dict[int, Rule] = {}
        self._order: list[tuple[int, int]] = []  # (-priority, rule_id), ascending
        self._inv: dict[int, Predicate] = {}

    def __len__(self) -> int:
        return len(self._rules)

    def __contains__(self, rule_id: int) -> bool:
        return rule_id in self._rules

    def rule(self, rule_id: int) -> Rule:
        return self._rules[rule_id]

    def rules(self) -> list[Rule]:
        """Rules in descending priority order (ties by id)."""
        return [self._rules[rid] for _, rid in self._order]

    def clone(self) -> RuleTable:
        dup = RuleTable(self.store, self.device)
        dup._rules = dict(self._rules)
        dup._order = list(self._order)
        dup._inv = dict(self._inv)
        return dup

    def insert(self, rule: Rule, unchecked: bool = False) -> None:
        if rule.device != self.device:
            raise ValueError(f"rule for device {rule.device} inserted into table {self.device}")
        if rule.rule_id in self._rules:
            raise ValueError(f"duplicate rule id {rule.rule_id}")
        if not unchecked:
            for other in self._rules.values():
                if other.priority == rule.priority and not (other.match & rule.match).is_empty():
                    raise IllBehavedError(
                        f"device {self.device}: rules {other.rule_id} and {rule.rule_id} "
                        f"share priority {rule.priority} with overlapping matches"
                    )
        key = (-rule.priority, rule.rule_id)
        bisect.insort(self._order, key)
        self._rules[rule.rule_id] = rule
        # Shadow lower-priority effective matches, then derive the newcomer's.
        cover = self.store.false
        for _, rid in self._order:
            other = self._rules[rid]
            if other.priority > rule.priority:
                cover = cover | other.match
            elif other.priority < rule.priority:
                self._inv[rid] = self._inv[rid] - rule.match
        self._inv[rule.rule_id] = rule.match - cover

    def delete(self, rule_id: int) -> Rule:
        rule = self._rules.pop(rule_id, None)
        if rule is None:
            raise ValueError(f"no rule with id {rule_id} on device {self.device}")
        self._order.remove((-rule.priority, rule_id))
        del self._inv[rule_id]
        # Lower-priority rules overlapping the removed match regain headers;
        # re-derive them from the priority-sorted prefix scan.
        cover = self.store.false
        for _, rid in self._order:
            other = self._rules[rid]
            if other.priority < rule.priority and not (other.match & rule.match).is_empty():
                self._inv[rid] = other.match - cover
            cover = cover | other.match
        return rule

    def inverse(self, rule_id: int) -> Predicate:
        """Cached effective match; the false predicate for unknown ids."""
        return self._inv.get(rule_id, self.store.false)

    def recompute_inverses(self) -> dict[int, Predicate]:
        """Fresh effective matches straight from the definition."""
        out: dict[int, Predicate] = {}
        cover = self.store.false
        run: list[Rule] = []
        last_priority = None
        for _, rid in self._order:
            rule = self._rules[rid]
            if last_priority is not None and rule.priority != last_priority:
                for r in run:
                    cover = cover | r.match
                run = []
            out[rid] = rule.match - cover
            run.append(rule)
            last_priority = rule.priority
        return out

    def check_well_behaved(self) -> tuple[bool, Predicate | None]:
        """True, or False plus a witness region with zero or two winners."""
        union = self.store.false
        for rule in self._rules.values():
            union = union | rule.match
        if not union.is_true():
            return False, ~union
        by_priority: dict[int, list[Rule]] = {}
        for rule in self._rules.values():
            by_priority.setdefault(rule.priority, []).append(rule)
        for priority, peers in by_priority.items():
            if len(peers) < 2:
                continue
            higher = self.store.false
            for rule in self._rules.values():
                if rule.priority > priority:
                    higher = higher | rule.match
            for i, a in enumerate(peers):
                for b in peers[i + 1:]:
                    clash = (a.match & b.match) - higher
                    if not clash.is_empty():
                        return False, clash
        return True, None

    def eval(self, header: int) -> Action:
        """Action of the highest-priority matching rule (raw prefix test)."""
        bits = self.store.num_bits
        for _, rid in self._order:
            rule = self._rules[rid]
            if rule.matches_header(header, bits):
                return rule.action
        raise IllBehavedError(f"device {self.device}: no rule matches header {header:#x}")


def well_behaved(tables: Sequence[RuleTable]) -> tuple[bool, int | None, Predicate | None]:
    for table in tables:
        ok, witness = table.check_well_behaved()
        if not ok:
            return False, table.device, witness
    return True, None, None


def eval_control(tables: Sequence[RuleTable], header: int, vectors: VectorFactory) -> OutputVector:
    """The network-wide output vector for one header."""
    return vectors.make(table.eval(header) for table in tables)


def rule_inverse(rule: Rule, table: RuleTable) -> Predicate:
    return table.inverse(rule.rule_id)


@dataclass(frozen=True)
class BatchUpdate:
    """A set of rule insertions and deletions applied atomically."""

    inserts: tuple[Rule, ...]
    deletes: frozenset[int]

    @staticmethod
    def of(inserts: Iterable[Rule] = (), deletes: Iterable[int] = ()) -> BatchUpdate:
        return BatchUpdate(tuple(inserts), frozenset(deletes))

    def normalized(self) -> BatchUpdate:
        """Drop inserts that the same batch also deletes."""
        if not self.deletes:
            return self
        kept = tuple(r for r in self.inserts if r.rule_id not in self.deletes)
        dropped = {r.rule_id for r in self.inserts} & self.deletes
        return BatchUpdate(kept, self.deletes - dropped)

    def is_empty(self) -> bool:
        return not self.inserts and not self.deletes


def apply_to_tables(tables: Sequence[RuleTable], batch: BatchUpdate) -> list[RuleTable]:
    """New tables with the batch applied; the inputs are left untouched.

    Raises IllBehavedError when the result would be ill-behaved, in
    which case nothing is committed.
    """
    batch = batch.normalized()
    out = list(tables)
    touched: set[int] = set()
    by_device: dict[int, RuleTable] = {}

    def writable(device: int) -> RuleTable:
        table = by_device.get(device)
        if table is None:
            table = out[device].clone()
            out[device] = by_device[device] = table
            touched.add(device)
        return table

    for rule_id in sorted(batch.deletes):
        for table in tables:
            if rule_id in table:
                writable(table.device).delete(rule_id)
                break
        else:
            raise ValueError(f"cannot delete unknown rule id {rule_id}")
    for rule in batch.inserts:
        if not 0 <= rule.device < len(out):
            raise ValueError(f"rule {rule.rule_id} names unknown device {rule.device}")
        writable(rule.device).insert(rule)
    for device in sorted(touched):
        ok, witness = out[device].check_well_behaved()
        if not ok:
            raise IllBehavedError(
                f"batch leaves device {device} ill-behaved "
                f"(witness covers {witness.sat_count()} headers)"
            )
    return out


def upperbound(tables: Sequence[RuleTable], batch: BatchUpdate) -> list[Rule]:
    """Cheap superset of the rules whose effective match can grow.

    Inserted rules, plus surviving rules that had some deleted rule of
    strictly higher priority on the same device.
    """
    batch = batch.normalized()
    out = list(batch.inserts)
    if batch.deletes:
        for table in tables:
            deleted_ps = [
                table.rule(rid).priority for rid in batch.deletes if rid in table
            ]
            if not deleted_ps:
                continue
            top = max(deleted_ps)
            for rule in table.rules():
                if rule.rule_id not in batch.deletes and rule.priority < top:
                    out.append(rule)
    return out


def expanding_rules(
    old_tables: Sequence[RuleTable],
    new_tables: Sequence[RuleTable],
    candidates: Iterable[Rule],
) -> list[Rule]:
    """The candidates whose effective match gained headers.

    A candidate re-inserted as an identical (match, action, priority)
    triplet under a fresh id inherits the old triplet's effective match,
    so pure re-installs validate out.
    """
    out = []
    for rule in sorted(candidates, key=lambda r: (r.device, r.rule_id)):
        new_inv = new_tables[rule.device].inverse(rule.rule_id)
        if new_inv.is_empty():
            continue
        old_table = old_tables[rule.device]
        if rule.rule_id in old_table:
            old_inv = old_table.inverse(rule.rule_id)
        else:
            old_inv = old_table.store.false
            for prior in old_table.rules():
                if prior.same_matcher(rule) and prior.action == rule.action:
                    old_inv = old_table.inverse(prior.rule_id)
                    break
        if not (new_inv - old_inv).is_empty():
            out.append(rule)
    return out


def delta_model(rule: Rule, new_table: RuleTable, vectors: VectorFactory) -> InverseModel:
    """Two-entry update model for one expanding rule."""
    inv = new_table.inverse(rule.rule_id)
    if inv.is_empty():
        raise ValueError(f"rule {rule.rule_id} has an empty effective match")
    entries = {vectors.vectorize(rule.device, rule.action): inv}
    rest = ~inv
    if not rest.is_empty():
        entries[vectors.zero()] = rest
    return InverseModel(new_table.store, vectors.n, entries)


def base_sequence(
    old_tables: Sequence[RuleTable],
    new_tables: Sequence[RuleTable],
    vectors: VectorFactory,
) -> list[InverseModel]:
    """Per-rule update models that transform the old model into the new.

    Considers every rule of the new tables, so it needs no batch
    bookkeeping; deltas are ordered by device then rule id (any order
    gives the same result since the deltas are pairwise disjoint).
    """
    all_rules = [rule for table in new_tables for rule in table.rules()]
    grown = expanding_rules(old_tables, new_tables, all_rules)
    return [delta_model(rule, new_tables[rule.device], vectors) for rule in grown]


# ---------------------------------------------------------------------------
# Text formats: rule files and update traces.

def parse_prefix(text: str, num_bits: int) -> tuple[int, int]:
    """Parse `<addr>/<len>`; dotted quads require 32-bit headers."""
    addr, _, plen_text = text.partition("/")
    if not _:
        raise ValueError(f"prefix {text!r} is missing '/<len>'")
    plen = int(plen_text)
    if "." in addr:
        if num_bits != 32:
            raise ValueError("dotted-quad prefixes need 32-bit headers")
        parts = [int(p) for p in addr.split(".")]
        if len(parts) != 4 or any(not 0 <= p <= 255 for p in parts):
            raise ValueError(f"bad dotted quad {addr!r}")
        value = (parts[0] << 24) | (parts[1] << 16) | (parts[2] << 8) | parts[3]
    else:
        value = int(addr, 0)
    if not 0 <= plen <= num_bits:
        raise ValueError(f"prefix length {plen} out of range")
    return value, plen


def format_prefix(prefix: int, plen: int, num_bits: int) -> str:
    if num_bits == 32:
        quad = ".".join(str((prefix >> s) & 0xFF) for s in (24, 16, 8, 0))
        return f"{quad}/{plen}"
    width = (num_bits + 3) // 4
    return f"0x{prefix:0{width}x}/{plen}"


def format_rule_line(rule: Rule, device_names: Sequence[str], num_bits: int) -> str:
    return (
        f"{device_names[rule.device]} "
        f"{format_prefix(rule.prefix, rule.plen, num_bits)} "
        f"{rule.priority} {format_action(rule.action)}"
    )


def _parse_rule_line(
    line: str,
    lineno: int,
    store: PredicateStore,
    device_index: dict[str, int],
    rule_id: int,
) -> Rule:
    parts = line.split()
    if len(parts) != 4:
        raise ValueError(f"line {lineno}: expected '<device> <prefix>/<len> <priority> <action>'")
    device_name, prefix_text, priority_text, action_text = parts
    if device_name not in device_index:
        raise ValueError(f"line {lineno}: unknown device {device_name!r}")
    prefix, plen = parse_prefix(prefix_text, store.num_bits)
    action = parse_action(action_text)
    if action is NOUPDATE:
        raise ValueError(f"line {lineno}: '-' is only legal inside delta dumps")
    return make_rule(
        store, rule_id, device_index[device_name], prefix, plen, int(priority_text), action
    )


def load_rules(
    text: str,
    store: PredicateStore,
    device_names: Sequence[str],
) -> tuple[list[RuleTable], int]:
    """Build tables from a rule file; ids are assigned 1.. in file order.

    Returns the tables and the next free rule id (traces continue the
    same sequence).
    """
    device_index = {name: i for i, name in enumerate(device_names)}
    tables = [RuleTable(store, i) for i in range(len(device_names))]
    next_id = 1
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        rule = _parse_rule_line(line, lineno, store, device_index, next_id)
        next_id += 1
        tables[rule.device].insert(rule)
    return tables, next_id


def load_trace(
    text: str,
    store: PredicateStore,
    device_names: Sequence[str],
    next_id: int,
) -> tuple[list[BatchUpdate], int]:
    """Parse an update trace: batches separated by blank lines.

    Lines are `+ <device> <prefix>/<len> <priority> <action>` or
    `- <device> <rule-id>`.  Inserted rules continue the id sequence
    started by the rule file loader.
    """
    device_index = {name: i for i, name in enumerate(device_names)}
    batches: list[BatchUpdate] = []
    inserts: list[Rule] = []
    deletes: set[int] = set()

    def flush() -> None:
        nonlocal inserts, deletes
        if inserts or deletes:
            batches.append(BatchUpdate.of(inserts, deletes))
            inserts, deletes = [], set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            flush()
            continue
        op, _, rest = line.partition(" ")
        rest = rest.strip()
        if op == "+":
            rule = _parse_rule_line(rest, lineno, store, device_index, next_id)
            next_id += 1
            inserts.append(rule)
        elif op == "-":
            parts = rest.split()
            if len(parts) != 2 or parts[0] not in device_index:
                raise ValueError(f"line {lineno}: expected '- <device> <rule-id>'")
            deletes.add(int(parts[1]))
        else:
            raise ValueError(f"line {lineno}: trace lines start with '+' or '-'")
    flush()
    return batches, next_id
