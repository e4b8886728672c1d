"""Canonical set representation for packet headers.

A header is an L-bit value.  Sets of headers are stored as reduced
ordered binary decision diagrams in a shared, hash-consed node store,
so two predicates denote the same set iff they hold the same node
handle.  Variable order is most-significant bit first, which keeps
prefix predicates linear in the prefix length.

The store is single-writer: all predicate-creating calls must be
serialized by the caller.  Read-only queries on existing handles are
safe to run concurrently with each other.
"""

from __future__ import annotations

FALSE = 0
TRUE = 1


class PredicateStore:
    """Append-only, hash-consed BDD node store over {0,1}^L."""

    def __init__(self, num_bits: int):
        if num_bits < 1:
            raise ValueError("num_bits must be >= 1")
        self.num_bits = num_bits
        # Nodes 0 and 1 are the terminals, kept at the leaf level L.
        self._var = [num_bits, num_bits]
        self._lo = [0, 1]
        self._hi = [0, 1]
        self._unique: dict[tuple[int, int, int], int] = {}
        self._memo: dict[tuple, int] = {}
        self._count_memo: dict[int, int] = {}
        self.false = Predicate(self, FALSE)
        self.true = Predicate(self, TRUE)

    def __len__(self) -> int:
        return len(self._var)

    def _mk(self, var: int, lo: int, hi: int) -> int:
        if lo == hi:
            return lo
        key = (var, lo, hi)
        node = self._unique.get(key)
        if node is None:
            node = len(self._var)
            self._var.append(var)
            self._lo.append(lo)
            self._hi.append(hi)
            self._unique[key] = node
        return node

    def _apply(self, op: str, a: int, b: int) -> int:
        if op == "and":
            if a == FALSE or b == FALSE:
                return FALSE
            if a == TRUE:
                return b
            if b == TRUE or a == b:
                return a
            if b < a:
                a, b = b, a
        elif op == "or":
            if a == TRUE or b == TRUE:
                return TRUE
            if a == FALSE:
                return b
            if b == FALSE or a == b:
                return a
            if b < a:
                a, b = b, a
        else:  # diff
            if a == FALSE or b == TRUE or a == b:
                return FALSE
            if b == FALSE:
                return a
        key = (op, a, b)
        node = self._memo.get(key)
        if node is not None:
            return node
        va, vb = self._var[a], self._var[b]
        v = va if va < vb else vb
        a0, a1 = (self._lo[a], self._hi[a]) if va == v else (a, a)
        b0, b1 = (self._lo[b], self._hi[b]) if vb == v else (b, b)
        node = self._mk(v, self._apply(op, a0, b0), self._apply(op, a1, b1))
        self._memo[key] = node
        return node

    def _not(self, a: int) -> int:
        if a == FALSE:
            return TRUE
        if a == TRUE:
            return FALSE
        key = ("not", a)
        node = self._memo.get(key)
        if node is not None:
            return node
        node = self._mk(self._var[a], self._not(self._lo[a]), self._not(self._hi[a]))
        self._memo[key] = node
        return node

    def _count(self, n: int) -> int:
        """Satisfying suffixes of n over variables var(n)..L-1."""
        if n == FALSE:
            return 0
        if n == TRUE:
            return 1
        c = self._count_memo.get(n)
        if c is None:
            lo, hi = self._lo[n], self._hi[n]
            v = self._var[n]
            c = (self._count(lo) << (self._var[lo] - v - 1)) + (
                self._count(hi) << (self._var[hi] - v - 1)
            )
            self._count_memo[n] = c
        return c

    def from_prefix(self, addr: bytes | int, plen: int) -> Predicate:
        """Predicate matching headers whose first plen bits equal addr's.

        addr may be an int holding the full L-bit address, or a byte
        string of at least ceil(plen/8) bytes read most significant
        byte first.
        """
        bits = self.num_bits
        if not 0 <= plen <= bits:
            raise ValueError(f"prefix length {plen} out of range for {bits} bits")
        if isinstance(addr, (bytes, bytearray)):
            if len(addr) * 8 < plen:
                raise ValueError("address has fewer bits than the prefix length")
            value = int.from_bytes(addr, "big")
            value = value >> (len(addr) * 8 - bits) if len(addr) * 8 >= bits else value << (bits - len(addr) * 8)
        else:
            value = addr
        node = TRUE
        for i in range(plen - 1, -1, -1):
            if (value >> (bits - 1 - i)) & 1:
                node = self._mk(i, FALSE, node)
            else:
                node = self._mk(i, node, FALSE)
        return Predicate(self, node)

    def from_header(self, header: int) -> Predicate:
        """Predicate holding exactly one header value."""
        return self.from_prefix(header, self.num_bits)


class Predicate:
    """Handle into a PredicateStore; equal handles mean equal sets."""

    __slots__ = ("store", "node")

    def __init__(self, store: PredicateStore, node: int):
        self.store = store
        self.node = node

    def _peer(self, other: Predicate) -> int:
        if not isinstance(other, Predicate):
            raise TypeError(f"expected Predicate, got {type(other).__name__}")
        if other.store is not self.store:
            raise ValueError("predicates belong to different stores")
        return other.node

    def __and__(self, other: Predicate) -> Predicate:
        return Predicate(self.store, self.store._apply("and", self.node, self._peer(other)))

    def __or__(self, other: Predicate) -> Predicate:
        return Predicate(self.store, self.store._apply("or", self.node, self._peer(other)))

    def __sub__(self, other: Predicate) -> Predicate:
        return Predicate(self.store, self.store._apply("diff", self.node, self._peer(other)))

    def __invert__(self) -> Predicate:
        return Predicate(self.store, self.store._not(self.node))

    def __eq__(self, other: object) -> bool:
        return (
            isinstance(other, Predicate)
            and other.store is self.store
            and other.node == self.node
        )

    def __hash__(self) -> int:
        return hash((id(self.store), self.node))

    def __bool__(self) -> bool:
        raise TypeError("use is_empty() rather than truth-testing a predicate")

    def is_empty(self) -> bool:
        return self.node == FALSE

    def is_true(self) -> bool:
        return self.node == TRUE

    def sat_count(self) -> int:
        """Exact number of headers in the set (arbitrary precision)."""
        store = self.store
        return store._count(self.node) << store._var[self.node]

    def contains(self, header: int) -> bool:
        store = self.store
        bits = store.num_bits
        n = self.node
        while n > TRUE:
            if (header >> (bits - 1 - store._var[n])) & 1:
                n = store._hi[n]
            else:
                n = store._lo[n]
        return n == TRUE

    def sample(self) -> int:
        """Some header in the set; raises on the empty predicate."""
        if self.node == FALSE:
            raise ValueError("empty predicate has no members")
        store = self.store
        bits = store.num_bits
        n, value = self.node, 0
        while n > TRUE:
            if store._lo[n] != FALSE:
                n = store._lo[n]
            else:
                value |= 1 << (bits - 1 - store._var[n])
                n = store._hi[n]
        return value

    def cubes(self) -> list[str]:
        """The set as sorted disjoint ternary cubes over {0,1,*}."""
        store = self.store
        bits = store.num_bits
        out: list[str] = []
        path: list[str] = []

        def walk(n: int, depth: int) -> None:
            if n == FALSE:
                return
            level = store._var[n]
            pad = "*" * (level - depth)
            if n == TRUE:
                out.append("".join(path) + pad)
                return
            path.append(pad + "0")
            walk(store._lo[n], level + 1)
            path.pop()
            path.append(pad + "1")
            walk(store._hi[n], level + 1)
            path.pop()

        walk(self.node, 0)
        out.sort()
        return out

    def dump(self) -> str:
        """One cube per line; the debug serialization used by golden tests."""
        return "\n".join(self.cubes())

    def __repr__(self) -> str:
        if self.node == TRUE:
            return "<pred true>"
        if self.node == FALSE:
            return "<pred false>"
        return f"<pred #{self.node} |{self.sat_count()}|>"
