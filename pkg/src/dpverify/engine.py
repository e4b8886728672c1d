"""Model manager: keeps the equivalence-class model current under updates.

Four interchangeable strategies produce the same model:

  ap        full recompute; per device, effective matches aggregated by
            action and folded into the identity model
  per-rule  one rule change at a time; each change contributes small
            affected-region deltas applied immediately
  mr2       per batch; expanding rules are validated from a cheap
            upperbound, aggregated by action per device, then deltas
            with identical predicate sets are merged before applying
  base      per batch; one delta per expanding rule, applied in
            (device, rule id) order with no aggregation

The manager can also keep the model split across disjoint header
subspaces; each subspace applies restricted deltas independently and
their merge equals the unpartitioned model.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .action import OutputVector, VectorFactory, format_action
from .model import (
    InverseModel,
    SubspaceModel,
    identity_model,
    merge_subspaces,
    model_diff,
    model_equals,
    model_overwrite,
    subspace_overwrite,
)
from .predicate import Predicate, PredicateStore
from .rules import (
    BatchUpdate,
    IllBehavedError,
    Rule,
    RuleTable,
    apply_to_tables,
    delta_model,
    expanding_rules,
    upperbound,
    well_behaved,
)


class InvariantError(Exception):
    """The maintained model diverged from a full recompute (debug mode)."""


class Strategy(str, Enum):
    AP_FULL = "ap"
    PER_RULE = "per-rule"
    MR2 = "mr2"
    BASE_SEQ = "base"


@dataclass
class ChangeSummary:
    """What a batch changed: disjoint touched regions plus phase timings."""

    touched: list[tuple[Predicate, OutputVector, OutputVector]]
    timing: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "touched": [
                    {
                        "cubes": pred.cubes(),
                        "old": [format_action(c) for c in old.components()],
                        "new": [format_action(c) for c in new.components()],
                    }
                    for pred, old, new in self.touched
                ],
                "timing": self.timing,
            }
        )


def rebuild_full(
    tables: Sequence[RuleTable], store: PredicateStore, vectors: VectorFactory
) -> InverseModel:
    """Recompute the model from scratch.

    Per device, the effective matches of rules sharing an action are
    unioned into one region; each (region, action) pair becomes a
    two-entry delta folded into the identity model.
    """
    model = identity_model(store, vectors)
    for table in tables:
        grouped: dict = {}
        for rule in table.rules():
            inv = table.inverse(rule.rule_id)
            if inv.is_empty():
                continue
            held = grouped.get(rule.action)
            grouped[rule.action] = inv if held is None else held | inv
        for action in sorted(grouped, key=format_action):
            region = grouped[action]
            entries = {vectors.vectorize(table.device, action): region}
            rest = ~region
            if not rest.is_empty():
                entries[vectors.zero()] = rest
            model = model_overwrite(model, InverseModel(store, vectors.n, entries))
    return model


def partition_space(store: PredicateStore, k: int) -> list[Predicate]:
    """k disjoint subspaces covering everything, split on the top bits.

    When k is not a power of two the tail cells are merged into the
    last subspace.
    """
    if k < 1:
        raise ValueError("subspace count must be >= 1")
    if k == 1:
        return [store.true]
    bits = (k - 1).bit_length()
    if bits > store.num_bits:
        raise ValueError(f"cannot split {store.num_bits}-bit headers {k} ways")
    cells = [
        store.from_prefix(j << (store.num_bits - bits), bits) for j in range(1 << bits)
    ]
    if len(cells) > k:
        tail = cells[k - 1]
        for extra in cells[k:]:
            tail = tail | extra
        cells = cells[: k - 1] + [tail]
    return cells


class ModelManager:
    """Owns the tables and their model; applies one batch at a time."""

    def __init__(
        self,
        store: PredicateStore,
        vectors: VectorFactory,
        tables: Sequence[RuleTable],
        strategy: Strategy = Strategy.MR2,
        subspaces: int = 1,
        check_invariants: bool = False,
    ):
        if len(tables) != vectors.n:
            raise ValueError("vector width must equal the device count")
        ok, device, witness = well_behaved(tables)
        if not ok:
            raise IllBehavedError(
                f"device {device} is ill-behaved "
                f"(witness covers {witness.sat_count()} headers)"
            )
        self.store = store
        self.vectors = vectors
        self.strategy = Strategy(strategy)
        self.check_invariants = check_invariants
        self.tables: list[RuleTable] = list(tables)
        self.model: InverseModel = rebuild_full(tables, store, vectors)
        self._partitions = partition_space(store, subspaces)
        self.subspace_models: list[SubspaceModel] | None = None
        if subspaces > 1:
            self.subspace_models = [self.model.restrict(p) for p in self._partitions]

    # -- batch application ---------------------------------------------------

    def apply_batch(self, batch: BatchUpdate) -> ChangeSummary:
        t0 = time.perf_counter()
        batch = batch.normalized()
        old_tables = self.tables
        old_model = self.model
        new_tables = apply_to_tables(old_tables, batch)
        if self.strategy is Strategy.AP_FULL:
            new_model, parts, timing = self._run_full(new_tables)
        elif self.strategy is Strategy.PER_RULE:
            new_model, parts, timing = self._run_per_rule(old_tables, batch)
        elif self.strategy is Strategy.MR2:
            deltas, timing = self._mr2_deltas(old_tables, new_tables, batch)
            new_model, parts = self._apply_deltas(deltas, timing)
        else:
            deltas, timing = self._base_deltas(old_tables, new_tables, batch)
            new_model, parts = self._apply_deltas(deltas, timing)
        touched = model_diff(old_model, new_model)
        self.tables = new_tables
        self.model = new_model
        self.subspace_models = parts
        timing["total"] = time.perf_counter() - t0
        self._debug_check()
        return ChangeSummary(touched, timing)

    def insert_rule(self, rule: Rule) -> ChangeSummary:
        """One-rule insertion along the per-rule (affected domain) path."""
        return self._apply_primitives([("insert", rule)])

    def delete_rule(self, rule_id: int) -> ChangeSummary:
        """One-rule deletion along the per-rule (affected domain) path."""
        return self._apply_primitives([("delete", rule_id)])

    # -- strategy bodies -----------------------------------------------------

    def _run_full(self, new_tables):
        t0 = time.perf_counter()
        new_model = rebuild_full(new_tables, self.store, self.vectors)
        parts = None
        if self.subspace_models is not None:
            parts = [new_model.restrict(p) for p in self._partitions]
        timing = {"mr1": 0.0, "r2": 0.0, "apply": time.perf_counter() - t0}
        return new_model, parts, timing

    def _run_per_rule(self, old_tables, batch: BatchUpdate):
        """Decompose a batch into single-rule steps and apply each in turn.

        A delete and an insert sharing (device, match, priority) fuse
        into an atomic replacement so intermediate states stay
        well-behaved; remaining inserts run next, deletes last.
        """
        deletes = {}
        for rid in batch.deletes:
            for table in old_tables:
                if rid in table:
                    deletes[rid] = table.rule(rid)
                    break
            else:
                raise ValueError(f"cannot delete unknown rule id {rid}")
        prims: list[tuple] = []
        unmatched_inserts = []
        spent: set[int] = set()
        for rule in batch.inserts:
            partner = next(
                (
                    rid
                    for rid, old in deletes.items()
                    if rid not in spent and old.same_matcher(rule)
                ),
                None,
            )
            if partner is None:
                unmatched_inserts.append(rule)
            else:
                spent.add(partner)
                prims.append(("modify", partner, rule))
        prims.sort(key=lambda p: (p[2].device, p[2].rule_id))
        prims += [("insert", r) for r in sorted(unmatched_inserts, key=lambda r: (r.device, r.rule_id))]
        prims += [("delete", rid) for rid in sorted(set(deletes) - spent)]
        return self._per_rule_over(old_tables, self.model, prims)

    def _apply_primitives(self, prims: list[tuple]) -> ChangeSummary:
        t0 = time.perf_counter()
        old_model = self.model
        new_model, parts, timing = self._per_rule_over(self.tables, self.model, prims)
        new_tables = self._materialize(self.tables, prims)
        touched = model_diff(old_model, new_model)
        self.tables = new_tables
        self.model = new_model
        self.subspace_models = parts
        timing["total"] = time.perf_counter() - t0
        self._debug_check()
        return ChangeSummary(touched, timing)

    @staticmethod
    def _materialize(tables, prims):
        out = [t.clone() for t in tables]
        for prim in prims:
            if prim[0] == "insert":
                out[prim[1].device].insert(prim[1])
            elif prim[0] == "delete":
                for table in out:
                    if prim[1] in table:
                        table.delete(prim[1])
                        break
            else:
                _, old_id, new_rule = prim
                out[new_rule.device].delete(old_id)
                out[new_rule.device].insert(new_rule)
        return out

    def _per_rule_over(self, tables, model, prims):
        timing = {"mr1": 0.0, "r2": 0.0, "apply": 0.0}
        work = [t.clone() for t in tables]
        parts = self.subspace_models
        for prim in prims:
            t0 = time.perf_counter()
            deltas = self._primitive_deltas(work, prim)
            timing["mr1"] += time.perf_counter() - t0
            t0 = time.perf_counter()
            model, parts = self._fold(model, parts, deltas)
            timing["apply"] += time.perf_counter() - t0
        return model, parts, timing

    def _primitive_deltas(self, work, prim) -> list[InverseModel]:
        """Affected-region deltas for one insert/delete/replace.

        Mutates `work` in place to the post-step tables and checks that
        the step leaves them well-behaved.
        """
        vectors = self.vectors
        deltas: list[InverseModel] = []
        if prim[0] == "insert":
            rule = prim[1]
            table = work[rule.device]
            before_inv = {r.rule_id: table.inverse(r.rule_id) for r in table.rules()}
            table.insert(rule)
            for rid, old_inv in before_inv.items():
                loser = table.rule(rid)
                if loser.priority >= rule.priority or loser.action == rule.action:
                    continue
                shifted = old_inv & rule.match
                if shifted.is_empty():
                    continue
                deltas.append(self._two_entry(shifted, rule.device, rule.action))
        elif prim[0] == "delete":
            rid = prim[1]
            table = next(t for t in work if rid in t)
            gone = table.rule(rid)
            table.delete(rid)
            ok, witness = table.check_well_behaved()
            if not ok:
                raise IllBehavedError(
                    f"deleting rule {rid} leaves device {table.device} ill-behaved"
                )
            for survivor in table.rules():
                if survivor.priority >= gone.priority or survivor.action == gone.action:
                    continue
                regained = table.inverse(survivor.rule_id) & gone.match
                if regained.is_empty():
                    continue
                deltas.append(self._two_entry(regained, table.device, survivor.action))
        else:
            _, old_id, rule = prim
            table = work[rule.device]
            old = table.rule(old_id)
            table.delete(old_id)
            table.insert(rule)
            if old.action != rule.action:
                inv = table.inverse(rule.rule_id)
                if not inv.is_empty():
                    deltas.append(self._two_entry(inv, rule.device, rule.action))
        return deltas

    def _two_entry(self, region: Predicate, device: int, action) -> InverseModel:
        entries = {self.vectors.vectorize(device, action): region}
        rest = ~region
        if not rest.is_empty():
            entries[self.vectors.zero()] = rest
        return InverseModel(self.store, self.vectors.n, entries)

    def _base_deltas(self, old_tables, new_tables, batch):
        t0 = time.perf_counter()
        candidates = upperbound(old_tables, batch)
        grown = expanding_rules(old_tables, new_tables, candidates)
        deltas = [
            delta_model(rule, new_tables[rule.device], self.vectors) for rule in grown
        ]
        timing = {"mr1": time.perf_counter() - t0, "r2": 0.0, "apply": 0.0}
        return deltas, timing

    def _mr2_deltas(self, old_tables, new_tables, batch):
        t0 = time.perf_counter()
        candidates = upperbound(old_tables, batch)
        grown = expanding_rules(old_tables, new_tables, candidates)
        per_device: dict[int, dict] = {}
        for rule in grown:
            grouped = per_device.setdefault(rule.device, {})
            inv = new_tables[rule.device].inverse(rule.rule_id)
            held = grouped.get(rule.action)
            grouped[rule.action] = inv if held is None else held | inv
        aggregated: list[InverseModel] = []
        for device in sorted(per_device):
            entries: dict[OutputVector, Predicate] = {}
            support = self.store.false
            for action in sorted(per_device[device], key=format_action):
                region = per_device[device][action]
                entries[self.vectors.vectorize(device, action)] = region
                support = support | region
            rest = ~support
            if not rest.is_empty():
                entries[self.vectors.zero()] = rest
            aggregated.append(InverseModel(self.store, self.vectors.n, entries))
        mr1 = time.perf_counter() - t0
        t0 = time.perf_counter()
        merged = self._merge_equal_predicate_sets(aggregated)
        r2 = time.perf_counter() - t0
        return merged, {"mr1": mr1, "r2": r2, "apply": 0.0}

    @staticmethod
    def _merge_equal_predicate_sets(deltas: list[InverseModel]) -> list[InverseModel]:
        """Merge deltas whose atomic-predicate sets coincide exactly.

        Same-set deltas touch different devices (they came one per
        device), so their vectors at a shared predicate combine by
        overwrite; merging cannot cascade because the merged delta
        keeps the same predicate set.
        """
        groups: dict[frozenset[int], list[InverseModel]] = {}
        order: list[frozenset[int]] = []
        for delta in deltas:
            key = frozenset(pred.node for _, pred in delta.items())
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(delta)
        out = []
        for key in order:
            members = groups[key]
            if len(members) == 1:
                out.append(members[0])
                continue
            first = members[0]
            merged: dict[OutputVector, Predicate] = {}
            for _, pred in first.items():
                vector = None
                for member in members:
                    for v, p in member.items():
                        if p == pred:
                            vector = v if vector is None else vector.overwrite(v)
                            break
                merged[vector] = pred
            out.append(InverseModel(first.store, first.n, merged))
        return out

    def _apply_deltas(self, deltas, timing):
        t0 = time.perf_counter()
        model = self.model
        parts = self.subspace_models
        model, parts = self._fold(model, parts, deltas)
        timing["apply"] = time.perf_counter() - t0
        return model, parts

    def _fold(self, model, parts, deltas):
        if parts is None:
            for delta in deltas:
                model = model_overwrite(model, delta)
            return model, None
        new_parts = []
        for part in parts:
            for delta in deltas:
                cut = delta.restrict(part.subspace)
                if len(cut) == 1 and next(iter(cut.items()))[0].is_zero():
                    continue
                part = subspace_overwrite(part, cut)
            new_parts.append(part)
        return merge_subspaces(new_parts), new_parts

    def _debug_check(self) -> None:
        if not self.check_invariants:
            return
        fresh = rebuild_full(self.tables, self.store, self.vectors)
        if not model_equals(self.model, fresh):
            raise InvariantError("maintained model differs from a full recompute")
        if self.subspace_models is not None:
            for part, pred in zip(self.subspace_models, self._partitions):
                if part != self.model.restrict(pred):
                    raise InvariantError("subspace model differs from a restriction")
