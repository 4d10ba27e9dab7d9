import numpy as np
import pytest

from demul.introspect import (
    IntrospectError,
    dump_filters,
    export_report,
    feature_maps,
    filter_stats,
)
from demul.synthgen import Gather, GatherGeometry
from demul.tensor import Tensor
from demul.unet import UNetConfig, build, parse_schedule


def small_model(base=4, seed=0):
    return build(UNetConfig(n_blocks=5, base_channels=base,
                            kernel_schedule=parse_schedule("12 22")), seed=seed)


class TestFilterStats:
    def test_constant_block_degenerates(self):
        model = small_model()
        blk = model.blocks()[0]
        blk.conv1.weight.data[:] = 0.5
        blk.conv2.weight.data[:] = 0.5
        stats = filter_stats(model, 0)
        assert stats.std == 0.0
        assert stats.counts.sum() == stats.n_weights
        assert stats.counts.max() == stats.n_weights  # single occupied bin

    def test_he_uniform_std_matches_theory(self):
        # U(-b, b) with b = sqrt(6/fan_in) has std b/sqrt(3) = sqrt(2/fan_in)
        model = build(UNetConfig(n_blocks=5, base_channels=48), seed=3)
        blk = model.blocks()[1]  # conv 48->96 and 96->96: plenty of samples
        for conv, fan_in in ((blk.conv1, 48 * 9), (blk.conv2, 96 * 9)):
            std = conv.weight.data.std()
            assert abs(std - np.sqrt(2.0 / fan_in)) <= 0.1 * np.sqrt(2.0 / fan_in)

    def test_counts_cover_all_weights(self):
        stats = filter_stats(small_model(), 2)
        assert stats.counts.sum() == stats.n_weights
        assert stats.bin_edges[0] <= stats.bin_edges[-1]

    def test_permutation_invariance(self):
        model = small_model()
        before = filter_stats(model, 0)
        blk = model.blocks()[0]
        w = blk.conv1.weight.data
        blk.conv1.weight.data = w[::-1].copy()  # permute filters
        after = filter_stats(model, 0)
        assert before.mean == after.mean
        assert before.std == after.std

    def test_bad_block_id(self):
        with pytest.raises(IntrospectError, match="out of range"):
            filter_stats(small_model(), 99)


class TestDumpFilters:
    def test_returns_k_normalized_images(self):
        images, stats = dump_filters(small_model(), 1, k=3, seed=0)
        assert len(images) == 3
        for img in images:
            assert img.shape == (3, 3)
            assert img.min() >= 0.0 and img.max() <= 1.0
        assert stats.block_id == 1

    def test_k_too_large(self):
        with pytest.raises(IntrospectError, match="filters"):
            dump_filters(small_model(), 0, k=1000, seed=0)

    def test_seeded_choice_is_deterministic(self):
        a, _ = dump_filters(small_model(), 1, k=2, seed=5)
        b, _ = dump_filters(small_model(), 1, k=2, seed=5)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x, y)


class TestFeatureMaps:
    GEO = GatherGeometry(n_traces=16, n_samples=32)

    def gather(self):
        rng = np.random.default_rng(0)
        return Gather(rng.standard_normal((16, 32)).astype(np.float32), self.GEO)

    def test_shapes_follow_schedule(self):
        model = small_model()
        maps = feature_maps(model, self.gather(), 2, k=2, seed=0)  # bottleneck
        # schedule 12,22: bottleneck sees (16/2, 32/(2*2))
        assert all(m.shape == (8, 8) for m in maps)

    def test_channel_budget(self):
        model = small_model()
        act_channels = model.blocks()[2].out_channels
        maps = feature_maps(model, self.gather(), 2, k=act_channels, seed=0)
        assert len(maps) == act_channels
        with pytest.raises(IntrospectError, match="channels"):
            feature_maps(model, self.gather(), 2, k=act_channels + 1, seed=0)

    def test_zero_input_zero_maps(self):
        model = small_model()
        g = Gather(np.zeros((16, 32), dtype=np.float32), self.GEO)
        for img in feature_maps(model, g, 0, k=2, seed=0):
            assert not img.any()

    def test_capture_does_not_change_forward(self):
        model = small_model()
        x = Tensor(np.random.default_rng(1).standard_normal((1, 1, 16, 32)).astype(np.float32))
        plain = model.forward(x).data
        feature_maps(model, self.gather(), 0, k=1, seed=0)
        np.testing.assert_array_equal(model.forward(x).data, plain)


def test_export_report_writes_artifacts(tmp_path):
    model = small_model()
    geo = GatherGeometry(n_traces=16, n_samples=32)
    g = Gather(np.random.default_rng(2).standard_normal((16, 32)).astype(np.float32), geo)
    created = export_report(model, g, tmp_path, k_filters=2, k_maps=2, seed=1)
    names = {p.name for p in created}
    assert "filter_stats.csv" in names
    assert any(n.startswith("block00_filter") for n in names)
    assert any(n.startswith("block04_fmap") for n in names)
    stats_lines = (tmp_path / "filter_stats.csv").read_text().strip().splitlines()
    assert len(stats_lines) == 1 + model.n_blocks
