import json
import struct

import numpy as np
import pytest

from ard.data import (
    DataError,
    Dataset,
    Instance,
    SyntheticSpec,
    VariantSpec,
    gen_synthetic,
    hash_featurize,
    load_jsonl,
    make_imbalanced_variant,
    make_noisy_variant,
    read_embeddings_bin,
    split_novel,
    write_embeddings_bin,
    write_jsonl,
)


def inst(id, head, tail, rel=None):
    return Instance(
        id=id, tokens=("a", "b", "c", "d"), head_span=(0, 1), tail_span=(2, 3),
        head_vec=head, tail_vec=tail, gold_relation=rel,
    )


def write_lines(path, objs):
    with open(path, "w") as fh:
        for obj in objs:
            fh.write(json.dumps(obj) + "\n")


def obj(id, head, tail, **kw):
    return {
        "id": id, "tokens": ["a", "b", "c", "d"],
        "head_span": [0, 1], "tail_span": [2, 3],
        "head_vec": head, "tail_vec": tail, **kw,
    }


class TestInstanceInvariants:
    def test_span_out_of_bounds(self):
        with pytest.raises(DataError, match="head_span"):
            Instance("x", ("a",), (0, 2), (0, 1), [1.0], [1.0])

    def test_overlapping_spans(self):
        with pytest.raises(DataError, match="overlap"):
            Instance("x", ("a", "b", "c"), (0, 2), (1, 3), [1.0], [1.0])

    def test_vector_length_mismatch(self):
        with pytest.raises(DataError, match="length"):
            inst("x", [1.0, 2.0, 3.0], [1.0, 2.0])

    def test_non_finite(self):
        with pytest.raises(DataError, match="finite"):
            inst("x", [np.nan, 1.0], [1.0, 2.0])

    def test_vectors_read_only(self):
        i = inst("x", [1.0, 2.0], [3.0, 4.0])
        with pytest.raises(ValueError):
            i.head_vec[0] = 9.0


class TestLoadJsonl:
    def test_three_line_file(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [obj(f"x{i}", [1, 0, 0, 0], [0, 1, 0, 0]) for i in range(3)])
        ds = load_jsonl(p)
        assert len(ds) == 3 and ds.dim == 4

    def test_dimension_mismatch(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [obj("x1", [1, 2, 3], [1, 2, 3, 4])])
        with pytest.raises(DataError, match="length"):
            load_jsonl(p)

    def test_duplicate_id(self, tmp_path):
        p = tmp_path / "d.jsonl"
        write_lines(p, [obj("x1", [1, 0], [0, 1]), obj("x1", [1, 0], [0, 1])])
        with pytest.raises(DataError, match="duplicate id"):
            load_jsonl(p)

    def test_malformed_line_reports_number(self, tmp_path):
        p = tmp_path / "d.jsonl"
        p.write_text(json.dumps(obj("x1", [1, 0], [0, 1])) + "\n{nope\n")
        with pytest.raises(DataError, match="line 2"):
            load_jsonl(p)

    def test_sidecar_round_trip(self, tmp_path):
        ds = Dataset(tuple(inst(f"x{i}", [i, 0.5], [1, i], rel="r") for i in range(4)))
        write_jsonl(ds, tmp_path / "d.jsonl", sidecar="d.arde")
        back = load_jsonl(tmp_path / "d.jsonl")
        assert back.ids() == ds.ids()
        for a, b in zip(ds, back):
            np.testing.assert_array_equal(a.head_vec, b.head_vec)
            np.testing.assert_array_equal(a.tail_vec, b.tail_vec)
            assert a.gold_relation == b.gold_relation

    def test_file_order_preserved(self, tmp_path):
        p = tmp_path / "d.jsonl"
        ids = [f"z{i}" for i in (3, 1, 2)]
        write_lines(p, [obj(i, [1, 0], [0, 1]) for i in ids])
        assert load_jsonl(p).ids() == ids


class TestEmbeddingsBin:
    def test_header_and_payload_size(self, tmp_path):
        ds = Dataset((inst("x", [1.0, 0.0], [0.0, 1.0]),))
        p = tmp_path / "e.arde"
        write_embeddings_bin(ds, p)
        raw = p.read_bytes()
        assert len(raw) == 16 + 16
        magic, version, n, cols = struct.unpack("<4sIII", raw[:16])
        assert (magic, version, n, cols) == (b"ARDE", 1, 1, 4)

    def test_round_trip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(7)
        insts = tuple(
            inst(f"x{i}", rng.normal(size=5).astype(np.float32),
                 rng.normal(size=5).astype(np.float32))
            for i in range(17)
        )
        ds = Dataset(insts)
        p = tmp_path / "e.arde"
        write_embeddings_bin(ds, p)
        mat = read_embeddings_bin(p)
        expected = np.vstack([np.concatenate([i.head_vec, i.tail_vec]) for i in insts])
        assert mat.dtype == np.float32
        assert np.array_equal(mat.view(np.uint32), expected.view(np.uint32))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "e.arde"
        p.write_bytes(b"XXXX" + b"\0" * 12)
        with pytest.raises(DataError, match="bad magic"):
            read_embeddings_bin(p)

    def test_truncated_payload(self, tmp_path):
        ds = Dataset((inst("x", [1.0, 0.0], [0.0, 1.0]),))
        p = tmp_path / "e.arde"
        write_embeddings_bin(ds, p)
        p.write_bytes(p.read_bytes()[:-4])
        with pytest.raises(DataError, match="payload"):
            read_embeddings_bin(p)

    def test_unsupported_version(self, tmp_path):
        p = tmp_path / "e.arde"
        p.write_bytes(struct.pack("<4sIII", b"ARDE", 9, 0, 0))
        with pytest.raises(DataError, match="version"):
            read_embeddings_bin(p)


def mini_dataset(prefix, n, rel):
    return Dataset(tuple(inst(f"{prefix}{i}", [1.0, 0.0], [0.0, 1.0], rel=rel) for i in range(n)))


class TestNoisyVariant:
    def test_paper_counts_at_ten_percent(self):
        # Table 1, FR row: 44,800 train becomes 40,320 kept and 4,480 moved.
        train = mini_dataset("tr", 44800, "known")
        test = mini_dataset("te", 10, "novel")
        spec = VariantSpec(kind="noisy", noise_fraction=0.10, seed=1)
        kept, aug = make_noisy_variant(train, test, spec)
        assert len(kept) == 40320
        assert len(aug) == 10 + 4480

    def test_formula_at_forty_percent(self):
        train = mini_dataset("tr", 1000, "known")
        test = mini_dataset("te", 10, "novel")
        kept, aug = make_noisy_variant(train, test, VariantSpec(kind="noisy", seed=1))
        assert len(kept) == 1000 - 400 and len(aug) == 410

    def test_zero_fraction_identity(self):
        train = mini_dataset("tr", 20, "known")
        test = mini_dataset("te", 5, "novel")
        kept, aug = make_noisy_variant(
            train, test, VariantSpec(kind="noisy", noise_fraction=0.0, seed=3)
        )
        assert kept.ids() == train.ids() and aug.ids() == test.ids()

    def test_seeded_determinism(self):
        train = mini_dataset("tr", 10, "known")
        test = mini_dataset("te", 2, "novel")
        spec = VariantSpec(kind="noisy", noise_fraction=0.5, seed=42)
        k1, a1 = make_noisy_variant(train, test, spec)
        k2, a2 = make_noisy_variant(train, test, spec)
        assert len(train) - len(k1) == 5
        assert k1.ids() == k2.ids() and a1.ids() == a2.ids()

    def test_moved_ids_conserved(self):
        train = mini_dataset("tr", 30, "known")
        test = mini_dataset("te", 5, "novel")
        kept, aug = make_noisy_variant(train, test, VariantSpec(kind="noisy", seed=0))
        moved = set(aug.ids()) - set(test.ids())
        assert moved == set(train.ids()) - set(kept.ids())
        assert set(aug.ids()) | set(kept.ids()) == set(train.ids()) | set(test.ids())

    def test_inputs_unmodified(self):
        train = mini_dataset("tr", 10, "known")
        ids_before = train.ids()
        make_noisy_variant(train, mini_dataset("te", 2, "novel"),
                           VariantSpec(kind="noisy", seed=0))
        assert train.ids() == ids_before

    def test_overlapping_labels_rejected(self):
        train = mini_dataset("tr", 5, "r")
        test = mini_dataset("te", 5, "r")
        with pytest.raises(DataError, match="overlap"):
            make_noisy_variant(train, test, VariantSpec(kind="noisy", seed=0))


class TestImbalancedVariant:
    def test_all_zero_identity(self):
        test = mini_dataset("te", 50, "novel")
        out = make_imbalanced_variant(test, VariantSpec(kind="imbalanced", seed=0))
        assert out.ids() == test.ids()

    def test_binomial_oracle(self):
        # Survivors of p=0.5 over 1000 instances, 30 seeds: mean within 3
        # binomial standard errors of 500.
        test = mini_dataset("te", 1000, "novel")
        survivors = []
        for seed in range(30):
            spec = VariantSpec(kind="imbalanced", discard_table={"novel": 0.5}, seed=seed)
            survivors.append(len(make_imbalanced_variant(test, spec)))
        se = np.sqrt(1000 * 0.25 / 30)
        assert abs(np.mean(survivors) - 500.0) < 3 * se

    def test_paper_expectation(self):
        # Table 2 probabilities over 16 FewRel-like novel classes of 700:
        # expectation 4,620 survivors; the paper's realized 4,560 sits within
        # 3 sigma of it.
        expected = 8 * 700 * 0.6 + 4 * 700 * 0.3 + 4 * 700 * 0.15
        assert expected == 4620
        sigma = np.sqrt(8 * 700 * 0.4 * 0.6 + 4 * 700 * 0.7 * 0.3 + 4 * 700 * 0.85 * 0.15)
        assert abs(4560 - expected) < 3 * sigma
        insts = []
        table = {}
        for c in range(16):
            name = f"rel{66 + c}"
            table[name] = 0.4 if c < 8 else (0.7 if c < 12 else 0.85)
            for i in range(700):
                insts.append(inst(f"c{c}i{i}", [1.0, 0.0], [0.0, 1.0], rel=name))
        test = Dataset(tuple(insts))
        spec = VariantSpec(kind="imbalanced", discard_table=table, seed=11)
        out = make_imbalanced_variant(test, spec)
        assert abs(len(out) - expected) < 3 * sigma

    def test_known_untouched(self):
        mixed = Dataset(
            tuple(inst(f"k{i}", [1.0, 0], [0, 1], rel="known") for i in range(10))
            + tuple(inst(f"n{i}", [1.0, 0], [0, 1], rel="novel") for i in range(200))
        )
        spec = VariantSpec(kind="imbalanced", discard_table={"novel": 0.9}, seed=1)
        out = make_imbalanced_variant(mixed, spec)
        assert sum(1 for i in out if i.gold_relation == "known") == 10

    def test_probability_range_enforced(self):
        with pytest.raises(DataError, match="outside"):
            VariantSpec(kind="imbalanced", discard_table={"r": 1.0})


class TestSplitNovel:
    def test_forty_sixty_per_class(self):
        insts = tuple(
            inst(f"c{c}i{i}", [1.0, 0], [0, 1], rel=f"rel{c}")
            for c in range(10) for i in range(100)
        )
        tr, te = split_novel(Dataset(insts), 0.4, seed=3)
        assert len(tr) == 400 and len(te) == 600
        for c in range(10):
            assert sum(1 for i in tr if i.gold_relation == f"rel{c}") == 40

    def test_partition(self):
        ds = Dataset(tuple(inst(f"x{i}", [1.0, 0], [0, 1], rel=f"r{i % 3}") for i in range(30)))
        tr, te = split_novel(ds, 0.4, seed=0)
        assert set(tr.ids()) | set(te.ids()) == set(ds.ids())
        assert not set(tr.ids()) & set(te.ids())

    def test_single_instance_class_warns_into_train(self):
        ds = Dataset(
            tuple(inst(f"x{i}", [1.0, 0], [0, 1], rel="big") for i in range(10))
            + (inst("solo", [1.0, 0], [0, 1], rel="tiny"),)
        )
        with pytest.warns(UserWarning, match="tiny"):
            tr, _ = split_novel(ds, 0.4, seed=0)
        assert "solo" in tr.ids()

    def test_per_class_within_one(self):
        ds = Dataset(tuple(inst(f"x{i}", [1.0, 0], [0, 1], rel="r") for i in range(7)))
        tr, _ = split_novel(ds, 0.4, seed=5)
        assert abs(len(tr) - 0.4 * 7) <= 1

    def test_uniform_flag(self):
        ds = Dataset(tuple(inst(f"x{i}", [1.0, 0], [0, 1], rel=f"r{i % 2}") for i in range(100)))
        tr, te = split_novel(ds, 0.4, seed=1, stratified=False)
        assert len(tr) == 40 and len(te) == 60

    def test_bad_fraction(self):
        ds = mini_dataset("x", 4, "r")
        with pytest.raises(DataError):
            split_novel(ds, 1.0, seed=0)


class TestGenSynthetic:
    def test_counts(self):
        train, test = gen_synthetic(SyntheticSpec(seed=0))
        assert len(train) == 8 * 50 and len(test) == 12 * 50
        assert train.dim == 16
        assert train.label_space == {f"known_{i}" for i in range(8)}
        assert test.label_space == train.label_space | {f"novel_{i}" for i in range(4)}

    def test_determinism(self):
        a = gen_synthetic(SyntheticSpec(seed=9))
        b = gen_synthetic(SyntheticSpec(seed=9))
        for da, db in zip(a, b):
            assert da.ids() == db.ids()
            for ia, ib in zip(da, db):
                np.testing.assert_array_equal(ia.head_vec, ib.head_vec)

    def test_zero_spread_collapses(self):
        train, _ = gen_synthetic(SyntheticSpec(cluster_spread=0.0, seed=2))
        by_rel = {}
        for i in train:
            by_rel.setdefault(i.gold_relation, []).append(np.concatenate([i.head_vec, i.tail_vec]))
        for vecs in by_rel.values():
            for v in vecs[1:]:
                np.testing.assert_array_equal(v, vecs[0])

    def test_separation_enforced(self):
        train, test = gen_synthetic(SyntheticSpec(cluster_spread=0.0, seed=4))
        centers = {}
        for i in list(train) + list(test):
            centers[i.gold_relation] = np.concatenate([i.head_vec, i.tail_vec]).astype(np.float64)
        names = sorted(centers)
        for a in range(len(names)):
            for b in range(a + 1, len(names)):
                d = np.linalg.norm(centers[names[a]] - centers[names[b]])
                assert d >= 6.0 - 1e-3

    def test_infeasible_separation_raises(self):
        with pytest.raises(DataError, match="could not place"):
            gen_synthetic(SyntheticSpec(n_known=200, n_novel=200, dim=1,
                                        class_separation=50.0, cluster_spread=0.1, seed=0))

    def test_invariant_checks(self):
        with pytest.raises(DataError):
            SyntheticSpec(cluster_spread=7.0, class_separation=6.0)


class TestHashFeaturize:
    def test_determinism(self):
        tokens = "the cat sat on the mat".split()
        a = hash_featurize(tokens, (1, 2), (5, 6), 16)
        b = hash_featurize(tokens, (1, 2), (5, 6), 16)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_unit_norm(self):
        h, t = hash_featurize("a b c d e".split(), (0, 1), (3, 4), 32)
        assert abs(np.linalg.norm(h) - 1.0) < 1e-6
        assert abs(np.linalg.norm(t) - 1.0) < 1e-6

    def test_change_outside_windows_is_invisible(self):
        # Windows cover span start +-1; position 3 is outside both here.
        base = "t0 t1 t2 t3 t4 t5 t6".split()
        changed = list(base)
        changed[3] = "ZZZ"
        a = hash_featurize(base, (0, 2), (5, 6), 16)
        b = hash_featurize(changed, (0, 2), (5, 6), 16)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_change_inside_window_visible(self):
        base = "t0 t1 t2 t3 t4 t5 t6".split()
        changed = list(base)
        changed[4] = "ZZZ"
        a = hash_featurize(base, (0, 2), (5, 6), 64)
        b = hash_featurize(changed, (0, 2), (5, 6), 64)
        assert not np.array_equal(a[1], b[1])

    def test_small_dim_rejected(self):
        with pytest.raises(DataError, match=">= 8"):
            hash_featurize("a b c".split(), (0, 1), (2, 3), 4)
