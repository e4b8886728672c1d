"""Equivalence-class models and the overwrite algebra over them.

An inverse model is a set of (predicate, output vector) entries that
partitions the header space: entry predicates are nonempty, pairwise
disjoint, union to the full space, and no two entries share a vector.
The same structure represents both a network's equivalence classes and
an incremental update (where vectors may contain NOUPDATE components).

Models combine with `model_overwrite`: intersect entries pairwise and
bucket by the overwritten vector.  The operation is associative, has
the single-entry all-NOUPDATE model as two-sided identity, and is
commutative for disjoint operands, which is what justifies reordering
and aggregating update sequences.
"""

from __future__ import annotations

from dataclasses import dataclass

from .action import NOUPDATE, OutputVector, VectorFactory, format_action
from .predicate import Predicate, PredicateStore

__all__ = [
    "InverseModel",
    "SubspaceModel",
    "identity_model",
    "model_overwrite",
    "model_equals",
    "model_diff",
    "is_projection",
    "disjointness",
    "absorb",
    "subspace_overwrite",
    "merge_subspaces",
]


class InverseModel:
    """Partition of the header space into classes with distinct vectors."""

    __slots__ = ("store", "n", "_entries")

    def __init__(self, store: PredicateStore, n: int, entries: dict[OutputVector, Predicate]):
        self.store = store
        self.n = n
        self._entries = entries

    def items(self) -> list[tuple[OutputVector, Predicate]]:
        return list(self._entries.items())

    def vectors(self) -> list[OutputVector]:
        return list(self._entries.keys())

    def predicate_of(self, vector: OutputVector) -> Predicate | None:
        return self._entries.get(vector)

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, InverseModel):
            return NotImplemented
        return self.n == other.n and self._entries == other._entries

    def __hash__(self):
        raise TypeError("inverse models are not hashable")

    def evaluate(self, header: int) -> OutputVector:
        """Vector of the unique entry containing the header."""
        for vector, pred in self._entries.items():
            if pred.contains(header):
                return vector
        raise AssertionError("model does not cover the header space")

    def restrict(self, subspace: Predicate) -> SubspaceModel:
        """The model's entries conjoined with a nonempty subspace."""
        if subspace.is_empty():
            raise ValueError("cannot restrict to an empty subspace")
        entries: dict[OutputVector, Predicate] = {}
        for vector, pred in self._entries.items():
            cut = pred & subspace
            if not cut.is_empty():
                entries[vector] = cut
        return SubspaceModel(self.store, self.n, subspace, entries)

    def validate(self) -> None:
        """Raise if the partition conditions do not hold."""
        if not self._entries:
            raise ValueError("model has no entries")
        seen: list[tuple[OutputVector, Predicate]] = []
        union = self.store.false
        for vector, pred in self._entries.items():
            if vector.n != self.n:
                raise ValueError("vector width differs from model width")
            if pred.is_empty():
                raise ValueError("entry predicate is empty")
            for prev_vec, prev_pred in seen:
                if prev_vec.components() == vector.components():
                    raise ValueError("duplicate vector across entries")
                if not (prev_pred & pred).is_empty():
                    raise ValueError("entry predicates overlap")
            seen.append((vector, pred))
            union = union | pred
        if not union.is_true():
            raise ValueError("entries do not cover the header space")

    def dump(self) -> str:
        """One line per entry, sorted by vector digest for diffability."""
        lines = []
        for vector, pred in self._entries.items():
            key = vector.digest().hex()
            cubes = " ".join(pred.cubes())
            actions = ",".join(format_action(c) for c in vector.components())
            lines.append((key, f"{cubes} :: {actions}"))
        lines.sort()
        return "\n".join(line for _, line in lines)


@dataclass
class SubspaceModel:
    """An inverse model restricted to (and complete within) a subspace."""

    store: PredicateStore
    n: int
    subspace: Predicate
    _entries: dict[OutputVector, Predicate]

    def items(self) -> list[tuple[OutputVector, Predicate]]:
        return list(self._entries.items())

    def __len__(self) -> int:
        return len(self._entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SubspaceModel):
            return NotImplemented
        return (
            self.n == other.n
            and self.subspace == other.subspace
            and self._entries == other._entries
        )

    def validate(self) -> None:
        union = self.store.false
        for vector, pred in self._entries.items():
            if pred.is_empty():
                raise ValueError("entry predicate is empty")
            union = union | pred
        if union != self.subspace:
            raise ValueError("entries do not cover the subspace")
        entries = list(self._entries.values())
        for i, a in enumerate(entries):
            for b in entries[i + 1:]:
                if not (a & b).is_empty():
                    raise ValueError("entry predicates overlap")


def identity_model(store: PredicateStore, vectors: VectorFactory) -> InverseModel:
    """The single-entry model mapping every header to all-NOUPDATE."""
    return InverseModel(store, vectors.n, {vectors.zero(): store.true})


def _is_identity(model: InverseModel) -> bool:
    if len(model._entries) != 1:
        return False
    vector, pred = next(iter(model._entries.items()))
    return pred.is_true() and vector.is_zero()


def model_overwrite(a: InverseModel, b: InverseModel) -> InverseModel:
    """Apply b on top of a: pairwise intersect, bucket by combined vector."""
    if a.n != b.n:
        raise ValueError(f"model width mismatch: {a.n} vs {b.n}")
    if a.store is not b.store:
        raise ValueError("models belong to different predicate stores")
    if _is_identity(b):
        return a
    if _is_identity(a):
        return b
    # Iterating the smaller operand on the outside; no semantic effect.
    outer, inner, flipped = (a, b, False) if len(a) <= len(b) else (b, a, True)
    buckets: dict[OutputVector, Predicate] = {}
    for vo, po in outer._entries.items():
        for vi, pi in inner._entries.items():
            cut = po & pi
            if cut.is_empty():
                continue
            combined = vo.overwrite(vi) if not flipped else vi.overwrite(vo)
            held = buckets.get(combined)
            buckets[combined] = cut if held is None else held | cut
    return InverseModel(a.store, a.n, buckets)


def model_equals(a: InverseModel, b: InverseModel) -> bool:
    return a == b


def model_diff(
    old: InverseModel, new: InverseModel
) -> list[tuple[Predicate, OutputVector, OutputVector]]:
    """Disjoint regions whose vector changed, with old and new vectors."""
    out = []
    for vn, pn in new._entries.items():
        for vo, po in old._entries.items():
            if vn == vo:
                continue
            cut = pn & po
            if not cut.is_empty():
                out.append((cut, vo, vn))
    return out


def is_projection(candidate: InverseModel, base: InverseModel) -> bool:
    """True iff overwriting base with candidate can never change base.

    Holds when every overlapping entry pair agrees component-wise up to
    NOUPDATE in the candidate's vector.
    """
    if candidate.n != base.n:
        raise ValueError(f"model width mismatch: {candidate.n} vs {base.n}")
    for vp, pp in candidate._entries.items():
        comps_p = vp.components()
        for v, p in base._entries.items():
            if (pp & p).is_empty():
                continue
            comps = v.components()
            if any(cp is not NOUPDATE and cp != c for cp, c in zip(comps_p, comps)):
                return False
    return True


def disjointness(a: InverseModel, b: InverseModel, kind: str = "either") -> bool:
    """Check entry-level disjointness between two models.

    kind="predicate": all non-zero entry pairs have disjoint predicates.
    kind="component": overlapping non-zero pairs have disjoint supports
    (at each position at least one side is NOUPDATE).
    kind="either": each pair satisfies one of the two.
    """
    if kind not in ("predicate", "component", "either"):
        raise ValueError(f"unknown disjointness kind {kind!r}")
    if a.n != b.n:
        raise ValueError(f"model width mismatch: {a.n} vs {b.n}")
    for va, pa in a._entries.items():
        if va.is_zero():
            continue
        for vb, pb in b._entries.items():
            if vb.is_zero():
                continue
            preds_disjoint = (pa & pb).is_empty()
            if kind == "predicate":
                if not preds_disjoint:
                    return False
                continue
            if preds_disjoint:
                if kind == "component":
                    continue
                continue
            supports_disjoint = all(
                x is NOUPDATE or y is NOUPDATE
                for x, y in zip(va.components(), vb.components())
            )
            if not supports_disjoint:
                return False
    return True


def absorb(models: list[InverseModel]) -> InverseModel:
    """Collapse pairwise predicate-disjoint models into one model.

    Equals the chained overwrite of the inputs in any order.
    """
    if not models:
        raise ValueError("nothing to absorb")
    store, n = models[0].store, models[0].n
    for i, m in enumerate(models):
        if m.n != n or m.store is not store:
            raise ValueError("absorb inputs must share width and store")
        for other in models[i + 1:]:
            if not disjointness(m, other, "predicate"):
                raise ValueError("absorb inputs must be pairwise predicate-disjoint")
    buckets: dict[OutputVector, Predicate] = {}
    support = store.false
    for m in models:
        for vector, pred in m._entries.items():
            if vector.is_zero():
                continue
            held = buckets.get(vector)
            buckets[vector] = pred if held is None else held | pred
            support = support | pred
    rest = ~support
    if not rest.is_empty():
        zero = next(
            (v for m in models for v in m._entries if v.is_zero()), None
        )
        if zero is None:
            raise ValueError("absorb inputs leave uncovered space but no zero vector")
        buckets[zero] = rest
    return InverseModel(store, n, buckets)


def subspace_overwrite(a: SubspaceModel, b: SubspaceModel) -> SubspaceModel:
    """Overwrite within a shared subspace."""
    if a.n != b.n:
        raise ValueError(f"model width mismatch: {a.n} vs {b.n}")
    if a.subspace != b.subspace:
        raise ValueError("subspace mismatch")
    buckets: dict[OutputVector, Predicate] = {}
    for va, pa in a._entries.items():
        for vb, pb in b._entries.items():
            cut = pa & pb
            if cut.is_empty():
                continue
            combined = va.overwrite(vb)
            held = buckets.get(combined)
            buckets[combined] = cut if held is None else held | cut
    return SubspaceModel(a.store, a.n, a.subspace, buckets)


def merge_subspaces(parts: list[SubspaceModel]) -> InverseModel:
    """Reassemble a full model from a disjoint, complete subspace family."""
    if not parts:
        raise ValueError("nothing to merge")
    store, n = parts[0].store, parts[0].n
    union = store.false
    for part in parts:
        if part.n != n or part.store is not store:
            raise ValueError("merge inputs must share width and store")
        if not (union & part.subspace).is_empty():
            raise ValueError("subspaces overlap")
        union = union | part.subspace
    if not union.is_true():
        raise ValueError("subspaces do not cover the header space")
    buckets: dict[OutputVector, Predicate] = {}
    for part in parts:
        for vector, pred in part._entries.items():
            held = buckets.get(vector)
            buckets[vector] = pred if held is None else held | pred
    return InverseModel(store, n, buckets)
