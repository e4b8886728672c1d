"""Rule tables: priorities, effective matches, batches, update deltas."""

import random

import pytest

from dpverify.action import Deliver, Drop, PlainVectors, forward
from dpverify.model import model_equals, model_overwrite
from dpverify.oracle import (
    oracle_eval,
    random_batch,
    random_tables,
    rule_inverse_oracle,
)
from dpverify.predicate import PredicateStore
from dpverify.rules import (
    BatchUpdate,
    IllBehavedError,
    RuleTable,
    apply_to_tables,
    base_sequence,
    delta_model,
    eval_control,
    expanding_rules,
    format_prefix,
    load_rules,
    load_trace,
    make_rule,
    parse_prefix,
    rule_inverse,
    upperbound,
    well_behaved,
)
from dpverify.engine import rebuild_full


def triangle_tables(store, n_prefixes=4):
    """Scaled triangle tables over 8-bit headers: A gateway, X at B, Y at C."""
    tables = [RuleTable(store, d) for d in range(3)]
    rid = 1

    def add(device, prefix, plen, action):
        nonlocal rid
        tables[device].insert(make_rule(store, rid, device, prefix, plen, plen, action))
        rid += 1

    add(0, 0, 0, Deliver("internet"))
    add(1, 0, 0, forward("A"))
    add(2, 0, 0, forward("A"))
    for j in range(n_prefixes):
        px, py = (0 << 6) | (j << 3), (1 << 6) | (j << 3)
        add(0, px, 5, forward("B"))
        add(0, py, 5, forward("C"))
        add(1, px, 5, Deliver("subnet-x"))
        add(1, py, 5, forward("C"))
        add(2, px, 5, forward("B"))
        add(2, py, 5, Deliver("subnet-y"))
    return tables, rid


class TestWellBehaved:
    def test_default_only_table(self, store8):
        t = RuleTable(store8, 0)
        t.insert(make_rule(store8, 1, 0, 0, 0, 0, Drop()))
        ok, witness = t.check_well_behaved()
        assert ok and witness is None

    def test_equal_priority_overlap_is_flagged(self, store8):
        t = RuleTable(store8, 0)
        t.insert(make_rule(store8, 1, 0, 0, 0, 0, Drop()))
        t.insert(make_rule(store8, 2, 0, 0b1010_0000, 4, 7, forward("a")))
        t.insert(make_rule(store8, 3, 0, 0b1010_0000, 4, 7, forward("b")), unchecked=True)
        ok, witness = t.check_well_behaved()
        assert not ok
        assert witness == (t.rule(2).match & t.rule(3).match)

    def test_strict_insert_rejects_the_overlap(self, store8):
        t = RuleTable(store8, 0)
        t.insert(make_rule(store8, 1, 0, 0b1010_0000, 4, 7, forward("a")))
        with pytest.raises(IllBehavedError):
            t.insert(make_rule(store8, 2, 0, 0b1010_0000, 4, 7, forward("b")))

    def test_shadowed_overlap_is_still_well_behaved(self, store8):
        t = RuleTable(store8, 0)
        t.insert(make_rule(store8, 1, 0, 0, 0, 0, Drop()))
        t.insert(make_rule(store8, 2, 0, 0b1000_0000, 1, 9, forward("a")))
        # Two equal-priority rules overlap only where the /1 wins anyway.
        t.insert(make_rule(store8, 3, 0, 0b1000_0000, 2, 5, forward("b")), unchecked=True)
        t.insert(make_rule(store8, 4, 0, 0b1010_0000, 3, 5, forward("c")), unchecked=True)
        ok, witness = t.check_well_behaved()
        assert ok

    def test_coverage_gap_yields_witness(self, store8):
        t = RuleTable(store8, 0)
        t.insert(make_rule(store8, 1, 0, 0b1000_0000, 1, 1, Drop()))
        ok, witness = t.check_well_behaved()
        assert not ok
        assert witness == ~t.rule(1).match

    def test_triangle_tables_are_well_behaved(self, store8):
        tables, _ = triangle_tables(store8)
        ok, device, witness = well_behaved(tables)
        assert ok


class TestEvalControl:
    def test_subnet_header_gets_expected_vector(self, store8, vec3):
        tables, _ = triangle_tables(store8)
        header = (0 << 6) | (2 << 3) | 5
        assert eval_control(tables, header, vec3) == vec3.make(
            [forward("B"), Deliver("subnet-x"), forward("B")]
        )

    def test_default_header_gets_default_actions(self, store8, vec3):
        tables, _ = triangle_tables(store8)
        header = 0b1100_0000
        assert eval_control(tables, header, vec3) == vec3.make(
            [Deliver("internet"), forward("A"), forward("A")]
        )

    def test_matches_model_evaluation_everywhere(self, store8, vec3):
        tables, _ = triangle_tables(store8)
        model = rebuild_full(tables, store8, vec3)
        for x in range(256):
            assert model.evaluate(x) == eval_control(tables, x, vec3)

    def test_matches_oracle_on_random_tables(self, store8, rng):
        for _ in range(20):
            n = rng.choice([2, 3, 4])
            pv = PlainVectors(n)
            tables, _ = random_tables(rng, store8, n)
            for _ in range(32):
                x = rng.randrange(256)
                assert tuple(eval_control(tables, x, pv).components()) == oracle_eval(tables, x)


class TestRuleInverses:
    def test_default_inverse_excludes_covered_prefixes(self, store8):
        tables, _ = triangle_tables(store8, n_prefixes=3)
        default = tables[0].rule(1)
        inv = rule_inverse(default, tables[0])
        covered = store8.false
        for rule in tables[0].rules():
            if rule.priority > 0:
                covered = covered | rule.match
        assert inv == store8.true - covered

    def test_unknown_rule_has_false_inverse(self, store8):
        tables, rid = triangle_tables(store8)
        ghost = make_rule(store8, rid, 0, 0, 0, 0, Drop())
        assert rule_inverse(ghost, tables[0]).is_empty()

    def test_top_priority_rule_keeps_its_match(self, store8):
        t = RuleTable(store8, 0)
        t.insert(make_rule(store8, 1, 0, 0, 0, 0, Drop()))
        t.insert(make_rule(store8, 2, 0, 0b1110_0000, 3, 3, forward("a")))
        t.insert(make_rule(store8, 3, 0, 0b1110_0000, 4, 4, forward("b")))
        assert t.inverse(3) == t.rule(3).match

    def test_incremental_cache_matches_recompute_and_oracle(self, store8, rng):
        for _ in range(30):
            tables, next_id = random_tables(rng, store8, 2)
            table = tables[rng.randrange(2)]
            # Mutate: one insert, one delete when possible.
            plen = rng.randint(1, 8)
            value = rng.getrandbits(plen) << (8 - plen)
            if all(
                (r.plen, r.prefix) != (plen, value) for r in table.rules()
            ):
                table.insert(make_rule(store8, next_id, table.device, value, plen, plen, Drop()))
            removable = [r.rule_id for r in table.rules() if r.priority > 0]
            if removable:
                table.delete(rng.choice(removable))
            fresh = table.recompute_inverses()
            for rule in table.rules():
                assert table.inverse(rule.rule_id) == fresh[rule.rule_id]
                enumerated = rule_inverse_oracle(rule, table)
                assert table.inverse(rule.rule_id).sat_count() == len(enumerated)
                assert all(table.inverse(rule.rule_id).contains(h) for h in enumerated)


class TestBatchesAndUpperbound:
    def failover_batch(self, store8, tables, rid, n_prefixes=4):
        inserts, deletes = [], set()
        for rule in tables[0].rules():
            if rule.priority > 0 and rule.action == forward("C"):
                deletes.add(rule.rule_id)
                inserts.append(
                    make_rule(store8, rid, 0, rule.prefix, rule.plen, rule.priority, forward("B"))
                )
                rid += 1
        return BatchUpdate.of(inserts, deletes), rid

    def test_upperbound_is_inserts_plus_shadowed_default(self, store8):
        tables, rid = triangle_tables(store8)
        batch, _ = self.failover_batch(store8, tables, rid)
        bound = upperbound(tables, batch)
        assert set(batch.inserts) <= set(bound)
        extras = [r for r in bound if r not in batch.inserts]
        assert [r.rule_id for r in extras] == [1]  # device A's default route

    def test_validation_reduces_bound_to_the_inserts(self, store8, vec3):
        tables, rid = triangle_tables(store8)
        batch, _ = self.failover_batch(store8, tables, rid)
        new_tables = apply_to_tables(tables, batch)
        grown = expanding_rules(tables, new_tables, upperbound(tables, batch))
        assert sorted(r.rule_id for r in grown) == sorted(r.rule_id for r in batch.inserts)

    def test_empty_batch_has_empty_upperbound(self, store8):
        tables, _ = triangle_tables(store8)
        assert upperbound(tables, BatchUpdate.of()) == []

    def test_pure_insertions_bound_is_exactly_the_inserts(self, store8):
        tables, rid = triangle_tables(store8)
        rule = make_rule(store8, rid, 1, 0b1110_0000, 6, 6, Drop())
        batch = BatchUpdate.of([rule])
        assert upperbound(tables, batch) == [rule]

    def test_insert_then_delete_same_rule_is_a_noop(self, store8):
        tables, rid = triangle_tables(store8)
        rule = make_rule(store8, rid, 1, 0b1110_0000, 6, 6, Drop())
        batch = BatchUpdate.of([rule], [rule.rule_id])
        assert batch.normalized().is_empty()
        new_tables = apply_to_tables(tables, batch)
        assert expanding_rules(tables, new_tables, upperbound(tables, batch)) == []

    def test_reinstalled_triplet_validates_out(self, store8):
        tables, rid = triangle_tables(store8)
        victim = next(r for r in tables[1].rules() if r.priority > 0)
        clone = make_rule(
            store8, rid, 1, victim.prefix, victim.plen, victim.priority, victim.action
        )
        batch = BatchUpdate.of([clone], [victim.rule_id])
        new_tables = apply_to_tables(tables, batch)
        grown = expanding_rules(tables, new_tables, upperbound(tables, batch))
        assert grown == []

    def test_candidate_sets_agree(self, store8, rng):
        for _ in range(25):
            n = rng.choice([2, 3])
            tables, next_id = random_tables(rng, store8, n)
            batch, next_id = random_batch(rng, store8, tables, next_id)
            new_tables = apply_to_tables(tables, batch)
            everything = [r for t in new_tables for r in t.rules()]
            via_bound = expanding_rules(tables, new_tables, upperbound(tables, batch))
            via_all = expanding_rules(tables, new_tables, everything)
            assert {r.rule_id for r in via_bound} == {r.rule_id for r in via_all}

    def test_bound_containments(self, store8, rng):
        for _ in range(25):
            n = rng.choice([2, 3])
            tables, next_id = random_tables(rng, store8, n)
            batch, next_id = random_batch(rng, store8, tables, next_id)
            new_tables = apply_to_tables(tables, batch)
            bound = {r.rule_id for r in upperbound(tables, batch)}
            grown = {
                r.rule_id for r in expanding_rules(tables, new_tables, upperbound(tables, batch))
            }
            new_ids = {r.rule_id for t in new_tables for r in t.rules()}
            assert grown <= bound <= new_ids

    def test_rejected_batch_leaves_tables_alone(self, store8):
        tables, rid = triangle_tables(store8)
        before = [t.rules() for t in tables]
        clash = make_rule(store8, rid, 0, 0, 0, 0, Drop())  # second default on A
        with pytest.raises(IllBehavedError):
            apply_to_tables(tables, BatchUpdate.of([clash]))
        assert [t.rules() for t in tables] == before


class TestDeltasAndBaseSequence:
    def test_delta_of_expanding_rule(self, store8, vec3):
        tables, rid = triangle_tables(store8)
        rule = make_rule(store8, rid, 0, 0b0110_0000, 5, 6, forward("B"))
        new_tables = apply_to_tables(tables, BatchUpdate.of([rule]))
        delta = delta_model(rule, new_tables[0], vec3)
        delta.validate()
        assert dict(delta.items())[vec3.vectorize(0, forward("B"))] == new_tables[0].inverse(
            rule.rule_id
        )

    def test_delta_with_full_space_inverse_has_one_entry(self, store8):
        pv = PlainVectors(1)
        t = RuleTable(store8, 0)
        t.insert(make_rule(store8, 1, 0, 0, 0, 0, Drop()))
        delta = delta_model(t.rule(1), t, pv)
        assert len(delta) == 1

    def test_fully_shadowed_rule_has_no_delta(self, store8, vec3):
        t = RuleTable(store8, 0)
        t.insert(make_rule(store8, 1, 0, 0, 0, 0, Drop()))
        t.insert(make_rule(store8, 2, 0, 0b1000_0000, 1, 9, forward("a")))
        t.insert(make_rule(store8, 3, 0, 0b1000_0000, 2, 2, forward("b")))
        with pytest.raises(ValueError):
            delta_model(t.rule(3), t, vec3)

    def test_base_sequence_deltas_are_pairwise_disjoint(self, store8, rng):
        from dpverify.model import disjointness

        for _ in range(20):
            n = rng.choice([2, 3])
            pv = PlainVectors(n)
            tables, next_id = random_tables(rng, store8, n)
            batch, next_id = random_batch(rng, store8, tables, next_id)
            new_tables = apply_to_tables(tables, batch)
            deltas = base_sequence(tables, new_tables, pv)
            for i, a in enumerate(deltas):
                for b in deltas[i + 1:]:
                    assert disjointness(a, b, "either")

    def test_base_sequence_rebuilds_the_new_model(self, store8, rng):
        for _ in range(30):
            n = rng.choice([2, 3, 4])
            pv = PlainVectors(n)
            tables, next_id = random_tables(rng, store8, n)
            batch, next_id = random_batch(rng, store8, tables, next_id)
            new_tables = apply_to_tables(tables, batch)
            model = rebuild_full(tables, store8, pv)
            for delta in base_sequence(tables, new_tables, pv):
                model = model_overwrite(model, delta)
            assert model_equals(model, rebuild_full(new_tables, store8, pv))

    def test_shuffled_base_sequence_gives_the_same_model(self, store8, rng):
        for _ in range(15):
            n = rng.choice([2, 3])
            pv = PlainVectors(n)
            tables, next_id = random_tables(rng, store8, n)
            batch, next_id = random_batch(rng, store8, tables, next_id)
            new_tables = apply_to_tables(tables, batch)
            deltas = base_sequence(tables, new_tables, pv)
            base = rebuild_full(tables, store8, pv)
            reference = None
            for _ in range(3):
                rng.shuffle(deltas)
                model = base
                for delta in deltas:
                    model = model_overwrite(model, delta)
                if reference is None:
                    reference = model
                else:
                    assert model_equals(model, reference)

    def test_no_change_means_empty_sequence(self, store8, vec3):
        tables, _ = triangle_tables(store8)
        assert base_sequence(tables, tables, vec3) == []


class TestTextFormats:
    def test_prefix_round_trip_32(self):
        value, plen = parse_prefix("10.1.3.0/24", 32)
        assert (value, plen) == ((10 << 24) | (1 << 16) | (3 << 8), 24)
        assert format_prefix(value, plen, 32) == "10.1.3.0/24"

    def test_prefix_round_trip_narrow(self):
        value, plen = parse_prefix("0x68/5", 8)
        assert (value, plen) == (0x68, 5)
        assert format_prefix(value, plen, 8) == "0x68/5"

    def test_dotted_quad_needs_32_bits(self):
        with pytest.raises(ValueError):
            parse_prefix("10.0.0.0/8", 16)

    def test_rule_file_round_trip(self, store8, vec3):
        text = "\n".join(
            [
                "# demo tables",
                "A 0x00/0 0 deliver:internet",
                "B 0x00/0 0 fwd:A",
                "C 0x00/0 0 fwd:A",
                "A 0x40/2 2 fwd:C",
                "",
                "B 0x40/2 2 fwd:C",
                "C 0x40/2 2 deliver:subnet-y",
            ]
        )
        tables, next_id = load_rules(text, store8, ["A", "B", "C"])
        assert next_id == 7
        assert len(tables[0]) == 2
        ok, _, _ = well_behaved(tables)
        assert ok

    def test_noupdate_action_rejected_in_rule_files(self, store8):
        with pytest.raises(ValueError):
            load_rules("A 0x00/0 0 -", store8, ["A"])

    def test_unknown_device_rejected(self, store8):
        with pytest.raises(ValueError):
            load_rules("Z 0x00/0 0 drop", store8, ["A"])

    def test_trace_round_trip(self, store8):
        rules = "A 0x00/0 0 drop\nB 0x00/0 0 drop"
        tables, next_id = load_rules(rules, store8, ["A", "B"])
        trace = "\n".join(
            [
                "+ A 0x80/1 1 fwd:B",
                "- B 2",
                "+ B 0x00/0 0 fwd:A",
                "",
                "- A 1",
                "+ A 0x00/0 0 fwd:B",
            ]
        )
        batches, next_id = load_trace(trace, store8, ["A", "B"], next_id)
        assert len(batches) == 2
        assert len(batches[0].inserts) == 2 and batches[0].deletes == {2}
        assert len(batches[1].inserts) == 1 and batches[1].deletes == {1}
        assert next_id == 6

    def test_bad_trace_line(self, store8):
        with pytest.raises(ValueError):
            load_trace("* A 1", store8, ["A"], 1)
