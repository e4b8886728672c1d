"""Dataset generators: the triangle example, fat trees, failure traces."""

import pytest

from dpverify.action import Deliver, PlainVectors, forward
from dpverify.engine import ModelManager, Strategy
from dpverify.oracle import compare, reference_model
from dpverify.predicate import PredicateStore
from dpverify.rules import well_behaved
from dpverify.topogen import (
    fat_tree_counts,
    gen_example,
    gen_failure_trace,
    gen_fat_tree,
    install_workload,
)
from dpverify.verify import Verifier, load_props


def build(dataset, strategy=Strategy.MR2, **kwargs):
    store = PredicateStore(dataset.num_bits)
    tables, next_id = dataset.load(store)
    vectors = PlainVectors(dataset.topology.n)
    manager = ModelManager(store, vectors, tables, strategy=strategy, **kwargs)
    return store, vectors, manager, next_id


class TestExample:
    def test_three_classes_at_full_width(self):
        ds = gen_example()
        store, vectors, mgr, _ = build(ds)
        assert len(mgr.model) == 3
        expected = {
            (forward("B"), Deliver("subnet-x"), forward("B")),
            (forward("C"), forward("C"), Deliver("subnet-y")),
            (Deliver("internet"), forward("A"), forward("A")),
        }
        assert {tuple(v.components()) for v in mgr.model.vectors()} == expected

    @pytest.mark.parametrize("bits,n", [(8, 4), (8, 8), (16, 10), (32, 11), (32, 10)])
    def test_class_count_is_prefix_count_independent(self, bits, n):
        ds = gen_example(num_bits=bits, n_prefixes=n)
        _, _, mgr, _ = build(ds)
        assert len(mgr.model) == 3

    def test_too_many_prefixes_for_narrow_headers(self):
        with pytest.raises(ValueError):
            gen_example(num_bits=8, n_prefixes=9)

    def test_scaled_replica_matches_oracle(self):
        ds = gen_example(num_bits=8, n_prefixes=6)
        store, vectors, mgr, _ = build(ds)
        ok, diff = compare(mgr.model, reference_model(mgr.tables, vectors))
        assert ok, diff

    def test_tables_are_well_behaved(self):
        ds = gen_example()
        store = PredicateStore(32)
        tables, _ = ds.load(store)
        ok, _, _ = well_behaved(tables)
        assert ok

    def test_metadata_counts(self):
        ds = gen_example(n_prefixes=7)
        assert ds.metadata["devices"] == 3
        assert ds.metadata["rules"] == 3 + 2 * 7 * 3


class TestExampleFailureTrace:
    def test_failure_changes_gateway_and_far_default(self):
        ds = gen_example()
        trace, disconnected = gen_failure_trace(ds, "A", "C")
        assert not disconnected
        batches = trace.split("\n\n")
        assert len(batches) == 2
        # One batch rewrites the subnet-y prefixes on A, the other C's default.
        assert all(line.split()[1] == "A" for line in batches[0].splitlines())
        assert "fwd:B" in batches[0]
        assert batches[1].splitlines()[-1] == "+ C 0.0.0.0/0 0 fwd:B"

    def test_applying_the_trace_keeps_three_classes(self):
        ds = gen_example()
        trace, _ = gen_failure_trace(ds, "A", "C")
        ds.trace_text = trace
        store, vectors, mgr, next_id = build(ds, check_invariants=True)
        batches, _ = ds.load_trace(store, next_id)
        for batch in batches:
            mgr.apply_batch(batch)
        assert len(mgr.model) == 3
        assert (forward("B"), forward("C"), Deliver("subnet-y")) in {
            tuple(v.components()) for v in mgr.model.vectors()
        }

    def test_failing_an_unknown_link_is_rejected(self):
        ds = gen_example()
        with pytest.raises(ValueError):
            gen_failure_trace(ds, "A", "Z")

    def test_scaled_failure_matches_oracle(self):
        ds = gen_example(num_bits=8, n_prefixes=5)
        trace, _ = gen_failure_trace(ds, "A", "C")
        ds.trace_text = trace
        store, vectors, mgr, next_id = build(ds, check_invariants=True)
        batches, _ = ds.load_trace(store, next_id)
        for batch in batches:
            mgr.apply_batch(batch)
        ok, diff = compare(mgr.model, reference_model(mgr.tables, vectors))
        assert ok, diff


class TestFatTree:
    def test_count_formulas(self):
        assert fat_tree_counts(2) == {"switches": 5, "racks": 2, "fabric_links_directed": 8}
        assert fat_tree_counts(48)["switches"] == 2880
        assert fat_tree_counts(48)["fabric_links_directed"] == 110592

    @pytest.mark.parametrize("k", [2, 4, 6])
    def test_formulas_match_generated_topologies(self, k):
        ds = gen_fat_tree(k)
        counts = fat_tree_counts(k)
        assert len(ds.topology.device_names) == counts["switches"]
        assert len(ds.topology.endpoints) == counts["racks"]
        assert 2 * len(ds.topology.links) == counts["fabric_links_directed"]
        assert ds.metadata["switches"] == counts["switches"]

    def test_odd_k_rejected(self):
        with pytest.raises(ValueError):
            gen_fat_tree(3)

    def test_tables_are_well_behaved(self):
        ds = gen_fat_tree(4)
        store = PredicateStore(ds.num_bits)
        tables, _ = ds.load(store)
        ok, _, _ = well_behaved(tables)
        assert ok

    def test_model_matches_oracle_and_all_racks_reachable(self):
        ds = gen_fat_tree(4, num_bits=16)
        store, vectors, mgr, _ = build(ds)
        ref = reference_model(mgr.tables, vectors)
        ok, diff = compare(mgr.model, ref)
        assert ok, diff
        assert len(mgr.model) == ds.metadata["racks"]  # racks saturate the pod space here
        checks = load_props(ds.props_text, store, ds.topology)
        report = Verifier(ds.topology, checks).verify_model(mgr.model)
        assert not report.failures()

    def test_core_link_failure_preserves_rack_reachability(self):
        ds = gen_fat_tree(4, num_bits=16)
        trace, disconnected = gen_failure_trace(ds, "agg0-0", "core0")
        assert not disconnected
        ds.trace_text = trace
        store, vectors, mgr, next_id = build(ds)
        checks = load_props(ds.props_text, store, ds.topology)
        verifier = Verifier(ds.topology, checks)
        report = verifier.verify_model(mgr.model)
        batches, _ = ds.load_trace(store, next_id)
        assert batches
        for batch in batches:
            summary = mgr.apply_batch(batch)
            report = verifier.recheck(report, mgr.model, summary)
        assert not report.failures()
        ok, diff = compare(mgr.model, reference_model(mgr.tables, vectors))
        assert ok, diff

    def test_edge_isolation_is_flagged_as_disconnection(self):
        ds = gen_fat_tree(2, num_bits=8)
        # k=2 gives each edge switch a single aggregation uplink.
        trace, disconnected = gen_failure_trace(ds, "edge0-0", "agg0-0")
        assert disconnected
        assert "drop" in trace


class TestInstallWorkload:
    def test_baseline_plus_trace_reaches_the_full_model(self):
        ds = gen_example(num_bits=8, n_prefixes=4)
        baseline, trace = install_workload(ds)
        store = PredicateStore(8)
        from dpverify.rules import load_rules, load_trace

        tables, next_id = load_rules(baseline, store, ds.topology.device_names)
        vectors = PlainVectors(3)
        mgr = ModelManager(store, vectors, tables, strategy=Strategy.MR2)
        assert len(mgr.model) == 1
        batches, _ = load_trace(trace, store, ds.topology.device_names, next_id)
        assert len(batches) == 3  # one install batch per device
        for batch in batches:
            mgr.apply_batch(batch)
        full_tables, _ = ds.load(PredicateStore(8))
        expected = {tuple(v.components()) for v in mgr.model.vectors()}
        direct = build(ds)[2]
        assert expected == {tuple(v.components()) for v in direct.model.vectors()}
