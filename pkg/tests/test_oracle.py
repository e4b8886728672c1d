"""The brute-force reference: grouping, comparison, inverse enumeration."""

import numpy as np
import pytest

from dpverify.action import Deliver, Drop, PlainVectors, forward
from dpverify.engine import rebuild_full
from dpverify.model import identity_model
from dpverify.oracle import (
    compare,
    oracle_eval,
    random_tables,
    reference_model,
    rule_inverse_oracle,
)
from dpverify.predicate import PredicateStore
from dpverify.rules import RuleTable, eval_control, make_rule
from tests.test_rules import triangle_tables


class TestReferenceModel:
    def test_triangle_has_three_groups(self, store8, vec3):
        tables, _ = triangle_tables(store8)
        ref = reference_model(tables, vec3)
        assert len(ref) == 3
        sizes = sorted(int(len(h)) for h in ref.groups.values())
        assert sizes == [32, 32, 192]

    def test_defaults_only_network_has_one_group(self, store8, vec3):
        tables = []
        for d in range(3):
            t = RuleTable(store8, d)
            t.insert(make_rule(store8, d + 1, d, 0, 0, 0, Drop()))
            tables.append(t)
        ref = reference_model(tables, vec3)
        assert len(ref) == 1
        assert len(next(iter(ref.groups.values()))) == 256

    def test_groups_partition_the_space(self, store8, rng):
        for _ in range(10):
            n = rng.choice([2, 3])
            pv = PlainVectors(n)
            tables, _ = random_tables(rng, store8, n)
            ref = reference_model(tables, pv)
            seen = np.concatenate(sorted([g for g in ref.groups.values()], key=lambda a: a[0]))
            assert sorted(seen.tolist()) == list(range(256))

    def test_group_count_matches_model_entry_count(self, store8, rng):
        for _ in range(25):
            n = rng.choice([2, 3, 4])
            pv = PlainVectors(n)
            tables, _ = random_tables(rng, store8, n)
            assert len(reference_model(tables, pv)) == len(rebuild_full(tables, store8, pv))

    def test_vector_of_header(self, store8, vec3):
        tables, _ = triangle_tables(store8)
        ref = reference_model(tables, vec3)
        assert ref.vector_of(0) == vec3.make([forward("B"), Deliver("subnet-x"), forward("B")])

    def test_wide_headers_rejected(self, vec3):
        store = PredicateStore(20)
        t = RuleTable(store, 0)
        t.insert(make_rule(store, 1, 0, 0, 0, 0, Drop()))
        with pytest.raises(ValueError):
            reference_model([t, t, t], vec3)


class TestCompare:
    def test_rebuild_matches_reference(self, store8, rng):
        for _ in range(20):
            n = rng.choice([2, 3, 4])
            pv = PlainVectors(n)
            tables, _ = random_tables(rng, store8, n)
            ok, diff = compare(rebuild_full(tables, store8, pv), reference_model(tables, pv))
            assert ok, diff

    def test_identity_model_fails_against_a_real_network(self, store8, vec3):
        tables, _ = triangle_tables(store8)
        ok, diff = compare(identity_model(store8, vec3), reference_model(tables, vec3))
        assert not ok
        assert any(d["kind"] in ("extra-vector", "missing-vector") for d in diff)

    def test_shifted_model_reports_header_mismatches(self, store8, vec3):
        tables, _ = triangle_tables(store8)
        model = rebuild_full(tables, store8, vec3)
        # Swap two entry predicates to poison membership but not the vectors.
        (v1, p1), (v2, p2), (v3, p3) = model.items()
        from dpverify.model import InverseModel

        poisoned = InverseModel(store8, 3, {v1: p2, v2: p1, v3: p3})
        ok, diff = compare(poisoned, reference_model(tables, vec3))
        assert not ok
        kinds = {d["kind"] for d in diff}
        assert "headers" in kinds or "size-mismatch" in kinds


class TestRuleInverseOracle:
    def test_top_priority_rule_keeps_full_match(self, store8):
        t = RuleTable(store8, 0)
        t.insert(make_rule(store8, 1, 0, 0, 0, 0, Drop()))
        t.insert(make_rule(store8, 2, 0, 0b1100_0000, 2, 9, forward("a")))
        assert rule_inverse_oracle(t.rule(2), t) == set(range(0b1100_0000, 0b1100_0000 + 64))

    def test_fully_shadowed_rule_is_empty(self, store8):
        t = RuleTable(store8, 0)
        t.insert(make_rule(store8, 1, 0, 0, 0, 0, Drop()))
        t.insert(make_rule(store8, 2, 0, 0b1000_0000, 1, 9, forward("a")))
        t.insert(make_rule(store8, 3, 0, 0b1000_0000, 2, 2, forward("b")))
        assert rule_inverse_oracle(t.rule(3), t) == set()

    def test_absent_rule_is_empty(self, store8):
        t = RuleTable(store8, 0)
        t.insert(make_rule(store8, 1, 0, 0, 0, 0, Drop()))
        ghost = make_rule(store8, 99, 0, 0, 0, 0, Drop())
        assert rule_inverse_oracle(ghost, t) == set()

    def test_agrees_with_symbolic_inverse_on_random_pairs(self, store8, rng):
        checked = 0
        while checked < 300:
            tables, _ = random_tables(rng, store8, 2)
            for table in tables:
                for rule in table.rules():
                    enumerated = rule_inverse_oracle(rule, table)
                    symbolic = table.inverse(rule.rule_id)
                    assert symbolic.sat_count() == len(enumerated)
                    assert all(symbolic.contains(h) for h in enumerated)
                    checked += 1


class TestEvalAgreement:
    def test_oracle_eval_equals_table_eval(self, store8, rng):
        pv3 = PlainVectors(3)
        for _ in range(10):
            tables, _ = random_tables(rng, store8, 3)
            for x in range(0, 256, 7):
                assert oracle_eval(tables, x) == tuple(eval_control(tables, x, pv3).components())
