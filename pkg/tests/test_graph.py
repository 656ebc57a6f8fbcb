import json

import numpy as np
import pytest

from nullcollide.container import WeightContainer
from nullcollide.errors import GraphSchemaError, ShapeError, UnsupportedLayerError
from nullcollide.graph import (
    LayerSpec,
    as_analysis_matrix,
    build_graph,
    graph_to_dict,
    load_graph,
    save_graph,
    validate_weights,
)


def _write(tmp_path, obj):
    path = tmp_path / "g.json"
    path.write_text(json.dumps(obj))
    return str(path)


def _dense_graph():
    return {
        "name": "d",
        "input_shape": [4],
        "layers": [{"kind": "dense", "in": 4, "out": 3, "weight": "w"}],
    }


class TestLoadGraph:
    def test_dense_shapes(self, tmp_path):
        g = load_graph(_write(tmp_path, _dense_graph()))
        assert g.layer_shapes == ((3,),)

    def test_conv_shapes(self, tmp_path):
        obj = {
            "name": "c",
            "input_shape": [1, 4, 4],
            "layers": [
                {
                    "kind": "conv2d", "c_in": 1, "c_out": 3, "kh": 2, "kw": 2,
                    "stride": [2, 2], "padding": [0, 0], "weight": "w",
                }
            ],
        }
        g = load_graph(_write(tmp_path, obj))
        assert g.layer_shapes == ((3, 2, 2),)

    def test_conv_after_dense_mismatch(self, tmp_path):
        obj = {
            "name": "bad",
            "input_shape": [4],
            "layers": [
                {"kind": "dense", "in": 4, "out": 3, "weight": "w"},
                {
                    "kind": "conv2d", "c_in": 3, "c_out": 1, "kh": 1, "kw": 1,
                    "stride": 1, "padding": 0, "weight": "v",
                },
            ],
        }
        with pytest.raises(ShapeError, match="layer 1"):
            load_graph(_write(tmp_path, obj))

    def test_unknown_top_level_key(self, tmp_path):
        obj = {**_dense_graph(), "extra": 1}
        with pytest.raises(GraphSchemaError, match="unknown top-level"):
            load_graph(_write(tmp_path, obj))

    def test_unknown_layer_key(self, tmp_path):
        obj = _dense_graph()
        obj["layers"][0]["rate"] = 0.5
        with pytest.raises(GraphSchemaError, match="unknown keys"):
            load_graph(_write(tmp_path, obj))

    def test_unknown_kind(self, tmp_path):
        obj = {"name": "x", "input_shape": [4], "layers": [{"kind": "attention"}]}
        with pytest.raises(GraphSchemaError, match="unknown kind"):
            load_graph(_write(tmp_path, obj))

    def test_missing_required_key(self, tmp_path):
        obj = {"name": "x", "input_shape": [4], "layers": [{"kind": "dense", "in": 4, "out": 3}]}
        with pytest.raises(GraphSchemaError, match="missing keys"):
            load_graph(_write(tmp_path, obj))

    def test_bad_activation(self, tmp_path):
        obj = {"name": "x", "input_shape": [4], "layers": [{"kind": "activation", "fn": "swish"}]}
        with pytest.raises(GraphSchemaError, match="unknown activation"):
            load_graph(_write(tmp_path, obj))

    def test_round_trip(self, tmp_path):
        obj = {
            "name": "rt",
            "input_shape": [2, 6, 6],
            "layers": [
                {
                    "kind": "conv2d", "c_in": 2, "c_out": 4, "kh": 3, "kw": 3,
                    "stride": [1, 1], "padding": [1, 1], "weight": "w", "bias": "b",
                },
                {"kind": "activation", "fn": "gelu"},
                {"kind": "maxpool2d", "kh": 2, "kw": 2, "stride": [2, 2]},
                {"kind": "flatten"},
                {"kind": "dense", "in": 36, "out": 5, "weight": "h"},
            ],
        }
        g = load_graph(_write(tmp_path, obj))
        out = tmp_path / "out.json"
        save_graph(g, str(out))
        g2 = load_graph(str(out))
        assert g2 == g
        assert graph_to_dict(g2) == graph_to_dict(g)


class TestShapeInference:
    def test_pooling(self):
        g = build_graph(
            "p", [2, 5, 5], [LayerSpec("maxpool2d", kh=2, kw=2, stride=(2, 2))]
        )
        assert g.layer_shapes == ((2, 2, 2),)

    def test_flatten(self):
        g = build_graph("f", [2, 3, 3], [LayerSpec("flatten")])
        assert g.layer_shapes == ((18,),)

    def test_dense_on_image_fails(self):
        with pytest.raises(ShapeError, match="flat input"):
            build_graph(
                "x", [1, 2, 2], [LayerSpec("dense", in_dim=4, out_dim=2, weight="w")]
            )

    def test_kernel_larger_than_input(self):
        with pytest.raises(ShapeError, match="larger than"):
            build_graph(
                "x",
                [1, 2, 2],
                [LayerSpec("conv2d", c_in=1, c_out=1, kh=3, kw=3, stride=(1, 1), padding=(0, 0), weight="w")],
            )


class TestAnalysisMatrix:
    def test_dense_orientation(self):
        c = WeightContainer()
        c.add("w", np.arange(40, dtype=np.float64).reshape(4, 10))  # (out, in)
        layer = LayerSpec("dense", in_dim=10, out_dim=4, weight="w")
        a = as_analysis_matrix(layer, c)
        assert a.shape == (10, 4)
        np.testing.assert_array_equal(a, c.array("w").T)

    def test_conv_resnet_first_layer_shape(self):
        c = WeightContainer()
        c.add("w", np.zeros((64, 3, 7, 7)))
        layer = LayerSpec(
            "conv2d", c_in=3, c_out=64, kh=7, kw=7, stride=(2, 2), padding=(3, 3), weight="w"
        )
        assert as_analysis_matrix(layer, c).shape == (147, 64)

    def test_conv_tiny(self):
        c = WeightContainer()
        c.add("w", np.arange(4, dtype=np.float64).reshape(1, 1, 2, 2))
        layer = LayerSpec("conv2d", c_in=1, c_out=1, kh=2, kw=2, stride=(2, 2), padding=(0, 0), weight="w")
        a = as_analysis_matrix(layer, c)
        assert a.shape == (4, 1)
        np.testing.assert_array_equal(a[:, 0], [0, 1, 2, 3])  # (c_in, kh, kw) row-major

    def test_flattening_order_is_cin_kh_kw(self):
        rng = np.random.default_rng(0)
        w = rng.normal(size=(5, 2, 3, 3))
        c = WeightContainer()
        c.add("w", w)
        layer = LayerSpec("conv2d", c_in=2, c_out=5, kh=3, kw=3, stride=(1, 1), padding=(0, 0), weight="w")
        a = as_analysis_matrix(layer, c)
        for ci in range(2):
            for i in range(3):
                for j in range(3):
                    row = ci * 9 + i * 3 + j
                    np.testing.assert_array_equal(a[row], w[:, ci, i, j])

    def test_unsupported_kind(self):
        with pytest.raises(UnsupportedLayerError):
            as_analysis_matrix(LayerSpec("flatten"), WeightContainer())


class TestValidateWeights:
    def test_missing_weight(self):
        g = build_graph("x", [4], [LayerSpec("dense", in_dim=4, out_dim=2, weight="w")])
        with pytest.raises(ShapeError, match="not in container"):
            validate_weights(g, WeightContainer())

    def test_wrong_shape(self):
        g = build_graph("x", [4], [LayerSpec("dense", in_dim=4, out_dim=2, weight="w")])
        c = WeightContainer()
        c.add("w", np.zeros((4, 2)))  # transposed
        with pytest.raises(ShapeError, match="expected"):
            validate_weights(g, c)

    def test_bias_shape(self):
        g = build_graph(
            "x", [4], [LayerSpec("dense", in_dim=4, out_dim=2, weight="w", bias="b")]
        )
        c = WeightContainer()
        c.add("w", np.zeros((2, 4)))
        c.add("b", np.zeros(4))
        with pytest.raises(ShapeError, match="bias"):
            validate_weights(g, c)
