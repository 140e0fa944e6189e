import numpy as np
import pytest

from bncover import formats
from bncover.fixtures import concolic_fixture, digits_conv_model, uniform_dataset
from bncover.model import Dataset


class TestModelContainer:
    def test_conv_fixture_parameter_counts(self, tmp_path, conv_model):
        """The dense digit network: conv 80, flatten 0, dense 227178, dense 430."""
        path = tmp_path / "m.bnm"
        formats.save_model(conv_model, path)
        loaded = formats.load_model(path)
        assert [l.kind for l in loaded.layers] == ["conv2d", "flatten", "dense", "dense"]
        assert [l.parameter_count for l in loaded.layers] == [80, 0, 227178, 430]
        assert loaded.layers[0].output_shape == (26, 26, 8)
        assert loaded.layers[1].output_shape == (5408,)

    def test_maxpool_fixture_parameter_counts(self, tmp_path, conv_model_maxp):
        path = tmp_path / "m.bnm"
        formats.save_model(conv_model_maxp, path)
        loaded = formats.load_model(path)
        kinds = [l.kind for l in loaded.layers]
        assert kinds == ["conv2d", "maxpool2d", "flatten", "dense", "dense"]
        assert loaded.layers[1].output_shape == (13, 13, 8)
        assert [l.parameter_count for l in loaded.layers] == [80, 0, 0, 56826, 430]

    def test_weights_bit_exact(self, tmp_path, conv_model):
        path = tmp_path / "m.bnm"
        formats.save_model(conv_model, path)
        loaded = formats.load_model(path)
        for a, b in zip(conv_model.layers, loaded.layers):
            if a.weights is not None:
                np.testing.assert_array_equal(a.weights, b.weights)
                np.testing.assert_array_equal(a.bias, b.bias)

    def test_float32_storage_upcasts(self, tmp_path):
        model, _ = concolic_fixture(seed=1)
        path = tmp_path / "m.bnm"
        formats.save_model(model, path, dtype="float32")
        loaded = formats.load_model(path)
        assert loaded.layers[0].weights.dtype == np.float64
        np.testing.assert_allclose(loaded.layers[0].weights,
                                   model.layers[0].weights, atol=1e-7)

    def test_shape_mismatch_reports_layer_index(self, tmp_path):
        """A 10x5 dense weight block following a 42-wide layer must fail."""
        model, _ = concolic_fixture(seed=0)
        path = tmp_path / "m.bnm"
        formats.save_model(model, path)
        raw = path.read_bytes()
        # corrupt the declared input width of layer 1
        bad = raw.replace(b"layer=dense activation=relu input=10",
                          b"layer=dense activation=relu input=42", 1)
        assert bad != raw
        bad_path = tmp_path / "bad.bnm"
        bad_path.write_bytes(bad)
        with pytest.raises(formats.FormatError, match="layer 1"):
            formats.load_model(bad_path)

    def test_unsupported_layer_kind(self, tmp_path):
        model, _ = concolic_fixture(seed=0)
        path = tmp_path / "m.bnm"
        formats.save_model(model, path)
        bad = path.read_bytes().replace(b"layer=dense", b"layer=recurrent", 1)
        bad_path = tmp_path / "bad.bnm"
        bad_path.write_bytes(bad)
        with pytest.raises(formats.FormatError, match="unsupported layer kind"):
            formats.load_model(bad_path)

    def test_malformed_header(self, tmp_path):
        path = tmp_path / "junk.bnm"
        path.write_bytes(b"NOTAMODEL 1\nend\n")
        with pytest.raises(formats.FormatError, match="magic"):
            formats.load_model(path)
        path.write_bytes(b"no end marker at all")
        with pytest.raises(formats.FormatError, match="header"):
            formats.load_model(path)

    def test_deterministic_bytes(self, tmp_path, conv_model):
        p1, p2 = tmp_path / "a.bnm", tmp_path / "b.bnm"
        formats.save_model(conv_model, p1)
        formats.save_model(conv_model, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestDatasetContainer:
    def test_roundtrip_with_labels(self, tmp_path):
        rng = np.random.default_rng(0)
        ds = Dataset(inputs=rng.random((10, 4, 4, 1)),
                     labels=rng.integers(0, 10, 10))
        path = tmp_path / "d.bnd"
        formats.save_dataset(ds, path)
        loaded = formats.load_dataset(path)
        np.testing.assert_array_equal(loaded.inputs, ds.inputs)
        np.testing.assert_array_equal(loaded.labels, ds.labels)

    def test_roundtrip_unlabelled(self, tmp_path):
        ds = Dataset(inputs=np.zeros((3, 2)))
        path = tmp_path / "d.bnd"
        formats.save_dataset(ds, path)
        assert formats.load_dataset(path).labels is None

    def test_truncated_payload(self, tmp_path):
        ds = Dataset(inputs=np.ones((4, 3)), labels=np.array([1, 2, 3, 4]))
        path = tmp_path / "d.bnd"
        formats.save_dataset(ds, path)
        raw = path.read_bytes()
        (tmp_path / "t.bnd").write_bytes(raw[:-16])
        with pytest.raises(formats.FormatError):
            formats.load_dataset(tmp_path / "t.bnd")


class TestAbstractionContainer:
    def test_roundtrip_bit_exact(self, tmp_path, small_pipeline):
        from bncover.bayesnet import marginals
        _, _, bn = small_pipeline
        path = tmp_path / "a.bna"
        formats.save_abstraction(bn, path)
        loaded = formats.load_abstraction(path)
        for a, b in zip(bn.tables.layer_combo_counts, loaded.tables.layer_combo_counts):
            np.testing.assert_array_equal(a, b)
        for pa, pb in zip(bn.tables.pair_counts, loaded.tables.pair_counts):
            for a, b in zip(pa, pb):
                np.testing.assert_array_equal(a, b)
        for fa, fb in zip(bn.feature_maps, loaded.feature_maps):
            np.testing.assert_array_equal(fa.W, fb.W)
            np.testing.assert_array_equal(fa.B, fb.B)
        for la, lb in zip(bn.structure.partitions, loaded.structure.partitions):
            for a, b in zip(la, lb):
                assert a.boundaries == b.boundaries
        ma, mb = marginals(bn), marginals(loaded)
        for node in ma:
            np.testing.assert_array_equal(ma[node], mb[node])
        assert loaded.provenance == bn.provenance

    def test_feature_map_container(self, tmp_path, small_pipeline):
        _, _, bn = small_pipeline
        fm = bn.feature_maps[0]
        path = tmp_path / "f.bnf"
        formats.save_feature_map(fm, path)
        loaded = formats.load_feature_map(path)
        np.testing.assert_array_equal(loaded.W, fm.W)
        np.testing.assert_array_equal(loaded.B, fm.B)
        assert loaded.technique == fm.technique
        assert loaded.layer == fm.layer
        assert loaded.seed == fm.seed
