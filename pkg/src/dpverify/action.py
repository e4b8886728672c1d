"""Output values and output vectors.

An output vector holds one action per control component (device).  The
reserved NOUPDATE value means "keep whatever was there"; overwriting a
component replaces it unless the incoming value is NOUPDATE.

Two vector backings are provided with identical observable behavior:
a plain tuple, and a persistent hash-consed binary tree that stores
values only in leaves and shares unchanged subtrees across overwrites.
Both compute the same content digest (values hashed leaf-wise over a
complete binary tree padded to the next power of two), so digests are
interchangeable between backings.  Digest equality is treated as
content equality; the 128-bit hash makes accidental collisions a
non-concern, and the test suite double-checks structurally.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Iterable, Sequence, Union


class _NoUpdate:
    """The reserved keep-as-is action; a singleton."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "NOUPDATE"


NOUPDATE = _NoUpdate()


@dataclass(frozen=True)
class Drop:
    """Discard matching traffic."""


@dataclass(frozen=True)
class Deliver:
    """Hand traffic off to an attached endpoint (subnet, internet)."""

    target: str


@dataclass(frozen=True)
class Forward:
    """Send traffic out one or more ports (several ports = ECMP)."""

    ports: tuple[str, ...]


Action = Union[_NoUpdate, Drop, Deliver, Forward]


def forward(*ports: str) -> Forward:
    """Forward action with a canonical (sorted, deduplicated) port set."""
    if not ports:
        raise ValueError("forward action needs at least one port")
    return Forward(tuple(sorted(set(ports))))


def format_action(action: Action) -> str:
    if action is NOUPDATE:
        return "-"
    if isinstance(action, Drop):
        return "drop"
    if isinstance(action, Deliver):
        return f"deliver:{action.target}"
    if isinstance(action, Forward):
        return "fwd:" + ",".join(action.ports)
    raise TypeError(f"not an action: {action!r}")


def parse_action(text: str) -> Action:
    if text == "-":
        return NOUPDATE
    if text == "drop":
        return Drop()
    if text.startswith("deliver:"):
        name = text[len("deliver:"):]
        if not name:
            raise ValueError("deliver action needs a target")
        return Deliver(name)
    if text.startswith("fwd:"):
        ports = [p for p in text[len("fwd:"):].split(",") if p]
        if not ports:
            raise ValueError("fwd action needs at least one port")
        return forward(*ports)
    raise ValueError(f"unknown action {text!r}")


def overwrite_action(a: Action, b: Action) -> Action:
    """Component-wise overwrite: keep a when b is NOUPDATE, else take b."""
    return a if b is NOUPDATE else b


_leaf_digests: dict[Action, bytes] = {}


def _leaf_digest(action: Action) -> bytes:
    d = _leaf_digests.get(action)
    if d is None:
        d = hashlib.blake2b(b"L" + format_action(action).encode(), digest_size=16).digest()
        _leaf_digests[action] = d
    return d


def _pair_digest(left: bytes, right: bytes) -> bytes:
    return hashlib.blake2b(b"I" + left + right, digest_size=16).digest()


def _pow2at_least(n: int) -> int:
    return 1 << (n - 1).bit_length() if n > 1 else 1


class _VectorBase:
    """Shared behavior of the two vector backings."""

    n: int

    def components(self) -> tuple[Action, ...]:
        raise NotImplementedError

    def digest(self) -> bytes:
        raise NotImplementedError

    def is_zero(self) -> bool:
        return all(c is NOUPDATE for c in self.components())

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> Action:
        return self.components()[i]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, _VectorBase):
            return NotImplemented
        return self.digest() == other.digest()

    def __hash__(self) -> int:
        return int.from_bytes(self.digest()[:8], "big")

    def __repr__(self) -> str:
        return "(" + ",".join(format_action(c) for c in self.components()) + ")"


class Vector(_VectorBase):
    """Plain tuple-backed output vector."""

    __slots__ = ("n", "_components", "_digest")

    def __init__(self, components: tuple[Action, ...]):
        self.n = len(components)
        self._components = components
        self._digest: bytes | None = None

    def components(self) -> tuple[Action, ...]:
        return self._components

    def digest(self) -> bytes:
        if self._digest is None:
            comps = self._components

            def tree(lo: int, size: int) -> bytes:
                if size == 1:
                    return _leaf_digest(comps[lo] if lo < len(comps) else NOUPDATE)
                half = size // 2
                return _pair_digest(tree(lo, half), tree(lo + half, half))

            self._digest = tree(0, _pow2at_least(self.n))
        return self._digest

    def overwrite(self, other: _VectorBase) -> Vector:
        if other.n != self.n:
            raise ValueError(f"vector length mismatch: {self.n} vs {other.n}")
        theirs = other.components()
        return Vector(
            tuple(a if b is NOUPDATE else b for a, b in zip(self._components, theirs))
        )


class PlainVectors:
    """Factory for tuple-backed vectors of a fixed width."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("vector width must be >= 1")
        self.n = n
        self._zero = Vector((NOUPDATE,) * n)

    def zero(self) -> Vector:
        return self._zero

    def make(self, components: Iterable[Action]) -> Vector:
        comps = tuple(components)
        if len(comps) != self.n:
            raise ValueError(f"expected {self.n} components, got {len(comps)}")
        return Vector(comps)

    def vectorize(self, i: int, action: Action) -> Vector:
        """Vector with action at component i and NOUPDATE elsewhere."""
        if not 0 <= i < self.n:
            raise ValueError(f"component index {i} out of range for width {self.n}")
        return Vector((NOUPDATE,) * i + (action,) + (NOUPDATE,) * (self.n - i - 1))


class MerkleVectors:
    """Factory for persistent tree-backed vectors of a fixed width.

    Leaves hold actions; an inner node's digest is the hash of its
    children's digests.  Nodes are hash-consed, so equal subtrees are
    shared, and an overwrite rebuilds only the paths that change.
    Single-writer, like the predicate store.
    """

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("vector width must be >= 1")
        self.n = n
        self._size = _pow2at_least(n)
        self._levels = self._size.bit_length() - 1
        self._value: list[Action | None] = []
        self._kids: list[tuple[int, int] | None] = []
        self._dig: list[bytes] = []
        self._leaf_ids: dict[Action, int] = {}
        self._inner_ids: dict[tuple[int, int], int] = {}
        self._ow_memo: dict[tuple[int, int], int] = {}
        self._zeros = [self._leaf(NOUPDATE)]
        for _ in range(self._levels):
            z = self._zeros[-1]
            self._zeros.append(self._inner(z, z))
        self._zero_vec = MerkleVector(self, self._zeros[-1])

    def _leaf(self, action: Action) -> int:
        node = self._leaf_ids.get(action)
        if node is None:
            node = len(self._dig)
            self._value.append(action)
            self._kids.append(None)
            self._dig.append(_leaf_digest(action))
            self._leaf_ids[action] = node
        return node

    def _inner(self, left: int, right: int) -> int:
        key = (left, right)
        node = self._inner_ids.get(key)
        if node is None:
            node = len(self._dig)
            self._value.append(None)
            self._kids.append(key)
            self._dig.append(_pair_digest(self._dig[left], self._dig[right]))
            self._inner_ids[key] = node
        return node

    def zero(self) -> MerkleVector:
        return self._zero_vec

    def make(self, components: Iterable[Action]) -> MerkleVector:
        comps = tuple(components)
        if len(comps) != self.n:
            raise ValueError(f"expected {self.n} components, got {len(comps)}")

        def build(lo: int, size: int) -> int:
            if size == 1:
                return self._leaf(comps[lo] if lo < len(comps) else NOUPDATE)
            half = size // 2
            return self._inner(build(lo, half), build(lo + half, half))

        return MerkleVector(self, build(0, self._size))

    def vectorize(self, i: int, action: Action) -> MerkleVector:
        if not 0 <= i < self.n:
            raise ValueError(f"component index {i} out of range for width {self.n}")

        def build(lo: int, size: int, level: int) -> int:
            if not lo <= i < lo + size:
                return self._zeros[level]
            if size == 1:
                return self._leaf(action)
            half = size // 2
            return self._inner(
                build(lo, half, level - 1), build(lo + half, half, level - 1)
            )

        return MerkleVector(self, build(0, self._size, self._levels))

    def _overwrite(self, a: int, b: int, level: int) -> int:
        if a == b or b == self._zeros[level]:
            return a
        if a == self._zeros[level]:
            return b
        if level == 0:
            vb = self._value[b]
            return a if vb is NOUPDATE else b
        key = (a, b)
        node = self._ow_memo.get(key)
        if node is None:
            al, ar = self._kids[a]
            bl, br = self._kids[b]
            left = self._overwrite(al, bl, level - 1)
            right = self._overwrite(ar, br, level - 1)
            node = a if (left, right) == (al, ar) else self._inner(left, right)
            self._ow_memo[key] = node
        return node


class MerkleVector(_VectorBase):
    """Tree-backed output vector; immutable and cheap to compare."""

    __slots__ = ("n", "_store", "_node", "_components")

    def __init__(self, store: MerkleVectors, node: int):
        self.n = store.n
        self._store = store
        self._node = node
        self._components: tuple[Action, ...] | None = None

    def components(self) -> tuple[Action, ...]:
        if self._components is None:
            store = self._store
            leaves: list[Action] = []

            def walk(node: int) -> None:
                kids = store._kids[node]
                if kids is None:
                    leaves.append(store._value[node])
                else:
                    walk(kids[0])
                    walk(kids[1])

            walk(self._node)
            self._components = tuple(leaves[: self.n])
        return self._components

    def digest(self) -> bytes:
        return self._store._dig[self._node]

    def is_zero(self) -> bool:
        return self._node == self._store._zeros[-1]

    def overwrite(self, other: _VectorBase) -> MerkleVector:
        if not isinstance(other, MerkleVector) or other._store is not self._store:
            raise TypeError("can only overwrite with a vector from the same tree store")
        store = self._store
        return MerkleVector(
            store, store._overwrite(self._node, other._node, store._levels)
        )


OutputVector = _VectorBase
VectorFactory = Union[PlainVectors, MerkleVectors]


def overwrite_vector(a: OutputVector, b: OutputVector) -> OutputVector:
    return a.overwrite(b)


def difference_ratio(a: OutputVector, b: OutputVector) -> Fraction:
    """Fraction of component positions where the two vectors agree.

    This is the literal indicator-sum metric (1 when identical, 0 when
    every component differs); reports label it as an agreement ratio
    so the direction cannot be misread.
    """
    if a.n != b.n:
        raise ValueError(f"vector length mismatch: {a.n} vs {b.n}")
    agree = sum(1 for x, y in zip(a.components(), b.components()) if x == y)
    return Fraction(agree, a.n)


def mean_pairwise_agreement(vectors: Sequence[OutputVector]) -> Fraction:
    """Average of difference_ratio over all unordered distinct pairs."""
    if len(vectors) < 2:
        raise ValueError("need at least two vectors")
    total = Fraction(0)
    count = 0
    for a, b in combinations(vectors, 2):
        total += difference_ratio(a, b)
        count += 1
    return total / count
