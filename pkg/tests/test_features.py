"""Feature records, the binary file format, fusion pooling, and attention."""

import numpy as np
import numpy.testing as npt
import pytest

from sitrec import numeric as nm
from sitrec.features import (
    FeatureDims,
    FeatureError,
    FeatureRecord,
    FeatureSet,
    attention_context,
    fusion_verb_logits,
    init_attention_params,
    init_fusion_params,
    read_feature_file,
    write_feature_file,
)
from sitrec.numeric import ParameterStore, Tensor


def make_record(rng, dims, n_regions, with_grid=False):
    return FeatureRecord(
        global_vec=rng.normal(size=dims.dg),
        regions=rng.normal(size=(n_regions, dims.dr)),
        grid=rng.normal(size=(dims.grid, dims.grid, dims.dc)) if with_grid else None,
    )


@pytest.fixture
def dims():
    return FeatureDims(dg=6, dr=4, dc=3, grid=2)


@pytest.fixture
def fusion(dims):
    store = ParameterStore(seed=0)
    return init_fusion_params(store, "fusion", n_verbs=4, dims=dims)


class TestFeatureFile:
    def test_roundtrip(self, tmp_path, dims):
        rng = np.random.default_rng(0)
        records = [
            make_record(rng, dims, n_regions=rng.integers(0, 3), with_grid=bool(i % 2))
            for i in range(5)
        ]
        path = tmp_path / "x.features"
        write_feature_file(path, FeatureSet(dims, records))
        loaded = read_feature_file(path)
        assert loaded.dims == dims
        assert len(loaded) == 5
        for a, b in zip(records, loaded.records):
            npt.assert_allclose(a.global_vec, b.global_vec, atol=1e-6)
            npt.assert_allclose(a.regions, b.regions, atol=1e-6)
            assert (a.grid is None) == (b.grid is None)
            if a.grid is not None:
                npt.assert_allclose(a.grid, b.grid, atol=1e-6)

    def test_truncated_file_names_offending_example(self, tmp_path, dims):
        rng = np.random.default_rng(1)
        records = [make_record(rng, dims, 1) for _ in range(3)]
        path = tmp_path / "x.features"
        write_feature_file(path, FeatureSet(dims, records))
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 10])
        with pytest.raises(FeatureError, match="example 2"):
            read_feature_file(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "x.features"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(FeatureError, match="magic"):
            read_feature_file(path)

    def test_out_of_range_index_rejected(self, dims):
        fs = FeatureSet(dims, [])
        with pytest.raises(FeatureError):
            fs[0]


class TestFusion:
    def test_no_regions_defaults_to_global_path(self, fusion, dims):
        rng = np.random.default_rng(2)
        rec = make_record(rng, dims, n_regions=0)
        got = fusion_verb_logits(fusion, rec).data
        expect = fusion.global_weight.data @ rec.global_vec + fusion.global_bias.data
        npt.assert_array_equal(got, expect)

    def test_single_region_is_box_path(self, fusion, dims):
        rng = np.random.default_rng(3)
        rec = make_record(rng, dims, n_regions=1)
        got = fusion_verb_logits(fusion, rec).data
        x = np.concatenate([rec.regions[0], rec.global_vec])
        expect = fusion.box_weight.data @ x + fusion.box_bias.data
        npt.assert_allclose(got, expect, atol=1e-12)

    def test_two_regions_match_bruteforce_max(self, fusion, dims):
        """Max pooling over regions equals a per-coordinate loop oracle."""
        rng = np.random.default_rng(4)
        rec = make_record(rng, dims, n_regions=2)
        got = fusion_verb_logits(fusion, rec).data
        per_region = []
        for r in rec.regions:
            x = np.concatenate([r, rec.global_vec])
            per_region.append(fusion.box_weight.data @ x + fusion.box_bias.data)
        expect = np.array([
            max(p[k] for p in per_region) for k in range(len(per_region[0]))
        ])
        npt.assert_allclose(got, expect, atol=1e-12)

    def test_permutation_invariance(self, fusion, dims):
        rng = np.random.default_rng(5)
        for _ in range(25):
            rec = make_record(rng, dims, n_regions=3)
            base = fusion_verb_logits(fusion, rec).data
            perm = FeatureRecord(rec.global_vec, rec.regions[[2, 0, 1]], None)
            npt.assert_array_equal(fusion_verb_logits(fusion, perm).data, base)

    def test_dominated_region_changes_nothing(self, fusion, dims):
        rng = np.random.default_rng(6)
        rec = make_record(rng, dims, n_regions=2)
        base = fusion_verb_logits(fusion, rec).data
        # A region whose box-path logits are pushed far down everywhere.
        bad = rec.regions[0] - 1e3 * np.sign(
            fusion.box_weight.data[:, : dims.dr].sum(axis=0) + 1e-9
        )
        extended = FeatureRecord(rec.global_vec, np.vstack([rec.regions, bad]), None)
        got = fusion_verb_logits(fusion, extended).data
        assert (got >= base - 1e-12).all()
        box = fusion.box_weight.data @ np.concatenate([bad, rec.global_vec]) + fusion.box_bias.data
        if (box <= base).all():
            npt.assert_array_equal(got, base)


class TestAttention:
    def make(self, dims, seed=0):
        store = ParameterStore(seed)
        return store, init_attention_params(store, "attn", hidden_size=4, dims=dims)

    def test_identical_cells_give_uniform_weights(self, dims):
        store, attn = self.make(dims)
        rng = np.random.default_rng(7)
        cell = rng.normal(size=dims.dc)
        grid = np.tile(cell, (dims.grid, dims.grid, 1))
        ctx, weights = attention_context(attn, Tensor(rng.normal(size=(1, 4))), grid)
        n = dims.grid ** 2
        npt.assert_allclose(weights.data, np.full((dims.grid, dims.grid), 1.0 / n), atol=1e-12)
        npt.assert_allclose(ctx.data, cell, atol=1e-12)

    def test_dominant_cell_saturates(self, dims):
        """One cell's score pushed +50 above the rest wins all the mass."""
        store, attn = self.make(dims, seed=1)
        rng = np.random.default_rng(8)
        grid = np.zeros((dims.grid, dims.grid, dims.dc))
        target = rng.normal(size=dims.dc)
        grid[1, 0] = target
        # Align the probe so the nonzero cell scores ~tanh-saturated high.
        attn.grid_weight.data[:] = 0.0
        attn.hidden_weight.data[:] = 0.0
        attn.bias.data[:] = 0.0
        attn.grid_weight.data[0, :] = 50.0 * np.sign(target + 1e-9)
        attn.probe.data[:] = 0.0
        attn.probe.data[0, 0] = 50.0
        ctx, weights = attention_context(attn, Tensor(np.zeros((1, 4))), grid)
        flat = weights.data.reshape(-1)
        hot = flat.argmax()
        assert flat[hot] > 1 - 1e-9
        npt.assert_allclose(ctx.data, grid.reshape(-1, dims.dc)[hot], atol=1e-9)

    def test_weights_are_probability_distribution(self, dims):
        store, attn = self.make(dims, seed=2)
        rng = np.random.default_rng(9)
        for _ in range(20):
            grid = rng.normal(size=(dims.grid, dims.grid, dims.dc))
            _, weights = attention_context(attn, Tensor(rng.normal(size=(1, 4))), grid)
            assert (weights.data >= 0).all()
            npt.assert_allclose(weights.data.sum(), 1.0, atol=1e-9)

    def test_missing_grid_rejected(self, dims):
        store, attn = self.make(dims, seed=3)
        with pytest.raises(FeatureError):
            attention_context(attn, Tensor(np.zeros((1, 4))), None)

    def test_gradients(self):
        from sitrec.gradchecks import check_features

        for seed in range(3):
            report = check_features(seed)
            assert max(report.values()) < 1e-4, report


class TestRecordValidation:
    def test_shape_and_finiteness_checks(self, dims):
        rng = np.random.default_rng(10)
        rec = make_record(rng, dims, 1, with_grid=True)
        rec.validate(dims)
        bad = FeatureRecord(global_vec=np.zeros(dims.dg + 1), regions=np.zeros((0, dims.dr)))
        with pytest.raises(FeatureError):
            bad.validate(dims)
        nan = make_record(rng, dims, 1)
        nan.global_vec[0] = np.nan
        with pytest.raises(FeatureError):
            nan.validate(dims)
