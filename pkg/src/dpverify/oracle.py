"""Brute-force ground truth for small header widths.

Everything here works on explicit header enumerations and raw integer
prefix tests, deliberately avoiding the predicate engine, so it can
serve as an independent check of the symbolic pipeline.  Enumeration is
capped at 16-bit headers (65536 values).

Also hosts the seeded random-instance generators used by the
differential and algebraic-law suites.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .action import (
    Action,
    Deliver,
    Drop,
    NOUPDATE,
    OutputVector,
    VectorFactory,
    forward,
)
from .model import InverseModel
from .predicate import Predicate, PredicateStore
from .rules import BatchUpdate, Rule, RuleTable, make_rule

MAX_ENUM_BITS = 16


def _check_bits(num_bits: int) -> None:
    if num_bits > MAX_ENUM_BITS:
        raise ValueError(f"exhaustive enumeration is capped at {MAX_ENUM_BITS} bits")


def _top_rule(table: RuleTable, header: int) -> Rule:
    best: Rule | None = None
    bits = table.store.num_bits
    for rule in table.rules():
        if rule.matches_header(header, bits):
            if best is None or rule.priority > best.priority:
                best = rule
    if best is None:
        raise ValueError(f"device {table.device}: header {header:#x} matches nothing")
    return best


def oracle_eval(tables: Sequence[RuleTable], header: int) -> tuple[Action, ...]:
    """Per-device winning actions for one header, by direct rule scan."""
    return tuple(_top_rule(table, header).action for table in tables)


@dataclass
class ReferenceModel:
    """Explicit header groups per output vector."""

    num_bits: int
    groups: dict[OutputVector, np.ndarray]

    def vector_of(self, header: int) -> OutputVector:
        for vector, headers in self.groups.items():
            idx = np.searchsorted(headers, header)
            if idx < len(headers) and headers[idx] == header:
                return vector
        raise AssertionError("reference groups do not cover the header space")

    def __len__(self) -> int:
        return len(self.groups)


def reference_model(tables: Sequence[RuleTable], vectors: VectorFactory) -> ReferenceModel:
    """Group all 2^L headers by their evaluated output vector."""
    num_bits = tables[0].store.num_bits
    _check_bits(num_bits)
    headers = np.arange(1 << num_bits, dtype=np.int64)
    columns = np.empty((len(tables), len(headers)), dtype=np.int64)
    palettes: list[list[Action]] = []
    for t, table in enumerate(tables):
        palette: list[Action] = []
        slots: dict[Action, int] = {}
        column = np.full(len(headers), -1, dtype=np.int64)
        # Ascending priority, so later (higher-priority) writes win; rules
        # sharing a priority have disjoint matches, making their order moot.
        for rule in sorted(table.rules(), key=lambda r: (r.priority, r.rule_id)):
            slot = slots.get(rule.action)
            if slot is None:
                slot = slots[rule.action] = len(palette)
                palette.append(rule.action)
            if rule.plen == 0:
                column[:] = slot
            else:
                column[((headers ^ rule.prefix) >> (num_bits - rule.plen)) == 0] = slot
        if (column < 0).any():
            raise ValueError(f"device {table.device}: some headers match no rule")
        columns[t] = column
        palettes.append(palette)
    rows, inverse = np.unique(columns.T, axis=0, return_inverse=True)
    groups: dict[OutputVector, np.ndarray] = {}
    for j, row in enumerate(rows):
        vector = vectors.make(palettes[t][slot] for t, slot in enumerate(row))
        groups[vector] = headers[inverse == j]
    return ReferenceModel(num_bits, groups)


def compare(model: InverseModel, ref: ReferenceModel) -> tuple[bool, list[dict]]:
    """Exact per-header agreement between a model and the reference.

    Returns (True, []) on agreement, else (False, diff records) where
    each record names a vector or a few mismatched headers.
    """
    diff: list[dict] = []
    model_vectors = {v: p for v, p in model.items()}
    ref_vectors = set(ref.groups.keys())
    for vector in model_vectors:
        if vector not in ref_vectors:
            diff.append({"kind": "extra-vector", "vector": repr(vector)})
    for vector in ref_vectors:
        if vector not in model_vectors:
            diff.append({"kind": "missing-vector", "vector": repr(vector)})
    if diff:
        return False, diff
    for vector, headers in ref.groups.items():
        pred = model_vectors[vector]
        if pred.sat_count() != len(headers):
            diff.append(
                {
                    "kind": "size-mismatch",
                    "vector": repr(vector),
                    "model": pred.sat_count(),
                    "reference": int(len(headers)),
                }
            )
        bad = [int(h) for h in headers if not pred.contains(int(h))]
        if bad:
            diff.append({"kind": "headers", "vector": repr(vector), "headers": bad[:10]})
    return not diff, diff


def rule_inverse_oracle(rule: Rule, table: RuleTable) -> set[int]:
    """Headers matched by the rule and by nothing of higher priority."""
    num_bits = table.store.num_bits
    _check_bits(num_bits)
    if rule.rule_id not in table:
        return set()
    out = set()
    for header in range(1 << num_bits):
        if rule.matches_header(header, num_bits) and _top_rule(table, header).priority <= rule.priority:
            out.add(header)
    return out


def predicate_from_headers(store: PredicateStore, headers) -> Predicate:
    pred = store.false
    for h in headers:
        pred = pred | store.from_header(int(h))
    return pred


# ---------------------------------------------------------------------------
# Seeded random instances.

def action_alphabet(ports: Sequence[str] = ("q0", "q1", "q2")) -> list[Action]:
    acts: list[Action] = [Drop(), Deliver("s0"), Deliver("s1")]
    acts += [forward(p) for p in ports]
    if len(ports) >= 2:
        acts.append(forward(ports[0], ports[1]))
    return acts


def _pool_fn(actions_for, n_devices):
    if actions_for is not None:
        return actions_for
    base = action_alphabet()
    return lambda device: base


def random_tables(
    rng: random.Random,
    store: PredicateStore,
    n_devices: int,
    min_rules: int = 3,
    max_rules: int = 6,
    actions_for=None,
) -> tuple[list[RuleTable], int]:
    """Well-behaved tables: one default plus random prefix rules per device.

    actions_for, when given, maps a device index to its legal actions
    (used to keep generated forwards on real topology ports).
    """
    bits = store.num_bits
    pool = _pool_fn(actions_for, n_devices)
    tables = [RuleTable(store, d) for d in range(n_devices)]
    next_id = 1
    for d in range(n_devices):
        tables[d].insert(make_rule(store, next_id, d, 0, 0, 0, rng.choice(pool(d))))
        next_id += 1
        used: set[tuple[int, int]] = set()
        for _ in range(rng.randint(min_rules, max_rules) - 1):
            plen = rng.randint(1, bits)
            value = rng.getrandbits(plen) << (bits - plen)
            if (plen, value) in used:
                continue
            used.add((plen, value))
            tables[d].insert(make_rule(store, next_id, d, value, plen, plen, rng.choice(pool(d))))
            next_id += 1
    return tables, next_id


def random_batch(
    rng: random.Random,
    store: PredicateStore,
    tables: Sequence[RuleTable],
    next_id: int,
    max_deletes: int = 2,
    max_inserts: int = 3,
    actions_for=None,
) -> tuple[BatchUpdate, int]:
    """A batch that keeps the tables well-behaved (defaults stay put)."""
    bits = store.num_bits
    pool = _pool_fn(actions_for, len(tables))
    deletes: set[int] = set()
    for table in tables:
        removable = [r.rule_id for r in table.rules() if r.priority > 0]
        rng.shuffle(removable)
        deletes.update(removable[: rng.randint(0, min(max_deletes, len(removable)))])
    inserts: list[Rule] = []
    for table in tables:
        survivors = {
            (r.plen, r.prefix) for r in table.rules() if r.rule_id not in deletes
        }
        for _ in range(rng.randint(0, max_inserts)):
            plen = rng.randint(1, bits)
            value = rng.getrandbits(plen) << (bits - plen)
            if (plen, value) in survivors:
                continue
            survivors.add((plen, value))
            inserts.append(
                make_rule(
                    store, next_id, table.device, value, plen, plen, rng.choice(pool(table.device))
                )
            )
            next_id += 1
    return BatchUpdate.of(inserts, deletes), next_id


def random_model(
    rng: random.Random,
    store: PredicateStore,
    vectors: VectorFactory,
    max_classes: int = 4,
    allow_noupdate: bool = True,
) -> InverseModel:
    """A random valid model built by bucketing every header."""
    _check_bits(store.num_bits)
    n = vectors.n
    acts = action_alphabet()
    pool = acts + [NOUPDATE] if allow_noupdate else acts
    wanted = rng.randint(1, max_classes)
    candidates: list[tuple[Action, ...]] = []
    seen: set[tuple] = set()
    for _ in range(wanted * 3):
        comps = tuple(rng.choice(pool) for _ in range(n))
        if comps not in seen:
            seen.add(comps)
            candidates.append(comps)
        if len(candidates) == wanted:
            break
    count = 1 << store.num_bits
    assignment = [rng.randrange(len(candidates)) for _ in range(count)]
    entries: dict[OutputVector, Predicate] = {}
    for j, comps in enumerate(candidates):
        members = [h for h in range(count) if assignment[h] == j]
        if not members:
            continue
        entries[vectors.make(comps)] = predicate_from_headers(store, members)
    return InverseModel(store, n, entries)


def random_disjoint_models(
    rng: random.Random,
    store: PredicateStore,
    vectors: VectorFactory,
    k: int,
) -> list[InverseModel]:
    """Pairwise predicate-disjoint models with disjoint non-zero supports."""
    count = 1 << store.num_bits
    n = vectors.n
    acts = action_alphabet()
    owner = [rng.randrange(k + 1) for _ in range(count)]  # slot k = nobody
    out: list[InverseModel] = []
    for j in range(k):
        members = [h for h in range(count) if owner[h] == j]
        entries: dict[OutputVector, Predicate] = {}
        support = store.false
        if members:
            parts = rng.randint(1, min(3, len(members)))
            buckets: dict[int, list[int]] = {}
            for h in members:
                buckets.setdefault(rng.randrange(parts), []).append(h)
            seen_vecs: set[tuple] = set()
            for headers in buckets.values():
                for _ in range(10):
                    comps = tuple(
                        rng.choice(acts) if rng.random() < 0.7 else NOUPDATE
                        for _ in range(n)
                    )
                    if comps not in seen_vecs and any(c is not NOUPDATE for c in comps):
                        break
                else:
                    continue
                seen_vecs.add(comps)
                pred = predicate_from_headers(store, headers)
                entries[vectors.make(comps)] = pred
                support = support | pred
        rest = ~support
        if not rest.is_empty():
            entries[vectors.zero()] = rest
        out.append(InverseModel(store, n, entries))
    return out


def random_projection(
    rng: random.Random, store: PredicateStore, vectors: VectorFactory, base: InverseModel
) -> InverseModel:
    """A random model that projects onto base (overwrite leaves base fixed)."""
    entries: dict[OutputVector, Predicate] = {}
    support = store.false
    for vector, pred in base.items():
        if rng.random() < 0.5:
            continue
        plen = rng.randint(0, store.num_bits)
        window = store.from_prefix(rng.getrandbits(plen) << (store.num_bits - plen), plen)
        cut = pred & window
        if cut.is_empty():
            continue
        comps = tuple(
            c if rng.random() < 0.5 else NOUPDATE for c in vector.components()
        )
        masked = vectors.make(comps)
        held = entries.get(masked)
        entries[masked] = cut if held is None else held | cut
        support = support | cut
    rest = ~support
    if not rest.is_empty():
        zero = vectors.zero()
        held = entries.get(zero)
        entries[zero] = rest if held is None else held | rest
    return InverseModel(store, vectors.n, entries)
