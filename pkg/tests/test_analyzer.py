"""Nullity-metric tests; toy-model expectations are exact by construction."""

import json

import numpy as np
import pytest

from nullcollide.analyzer import (
    ModelNullityReport,
    analyze_layer,
    analyze_model,
    render_report,
    report_from_dict,
    report_to_dict,
)
from nullcollide.errors import NoTrainableLayersError
from nullcollide.graph import LayerSpec, build_graph
from nullcollide.linalg import min_gram_eigenvalue
from nullcollide.toys import (
    build_toy_mlp,
    container_from_arrays,
    random_dense_net,
    random_patchify_cnn,
)


class TestAnalyzeLayer:
    def test_dense_10x4(self):
        rng = np.random.default_rng(0)
        c = container_from_arrays({"w": rng.normal(size=(4, 10))})
        r = analyze_layer(LayerSpec("dense", in_dim=10, out_dim=4, weight="w"), c)
        assert (r.q, r.p, r.rank, r.nullity) == (10, 4, 4, 6)
        assert r.has_kernel and r.narrowing

    def test_orthogonal_square(self):
        qmat, _ = np.linalg.qr(np.random.default_rng(1).normal(size=(4, 4)))
        c = container_from_arrays({"w": qmat})
        r = analyze_layer(LayerSpec("dense", in_dim=4, out_dim=4, weight="w"), c)
        assert r.nullity == 0
        assert not r.has_kernel and not r.narrowing

    def test_rank_plus_nullity(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            out_d, in_d = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            c = container_from_arrays({"w": rng.normal(size=(out_d, in_d))})
            r = analyze_layer(LayerSpec("dense", in_dim=in_d, out_dim=out_d, weight="w"), c)
            assert r.rank + r.nullity == r.q


class TestAnalyzeModel:
    def test_toy_mlp_hand_oracle(self):
        g, c = build_toy_mlp()
        r = analyze_model(g, c)
        assert r.n_weights == 3
        assert r.nu == 2
        assert r.mu == 2
        assert r.total_nullity == 8
        assert r.nullity_first == 6
        assert r.nu_percent == 66
        assert r.input_dim == 10 and r.output_dim == 2
        assert r.input_exceeds_output

    def test_single_orthogonal_layer(self):
        qmat, _ = np.linalg.qr(np.random.default_rng(3).normal(size=(5, 5)))
        c = container_from_arrays({"w": qmat})
        g = build_graph("o", [5], [LayerSpec("dense", in_dim=5, out_dim=5, weight="w")])
        r = analyze_model(g, c)
        assert r.nu == 0 and r.mu == 0 and r.total_nullity == 0

    def test_no_trainable_layers(self):
        g = build_graph("a", [4], [LayerSpec("activation", fn="relu")])
        with pytest.raises(NoTrainableLayersError):
            analyze_model(g, container_from_arrays({}))

    def test_conv_input_dim_is_unfolded_size(self):
        rng = np.random.default_rng(4)
        g, c = random_patchify_cnn(rng, c_in=1, k=2, grid=3, c_out=2, n_classes=4)
        r = analyze_model(g, c)
        # 3x3 patches of 1*2*2 elements each
        assert r.input_dim == 9 * 4

    def test_mu_le_nu_and_implication(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            g, c = (random_dense_net if rng.random() < 0.5 else random_patchify_cnn)(rng)
            r = analyze_model(g, c)
            assert r.mu <= r.nu
            for layer in r.layers:
                if layer.narrowing:
                    assert layer.has_kernel

    def test_input_exceeds_output_implies_narrowing_layer(self):
        rng = np.random.default_rng(6)
        for _ in range(40):
            g, c = (random_dense_net if rng.random() < 0.5 else random_patchify_cnn)(rng)
            r = analyze_model(g, c)
            if r.input_exceeds_output:
                assert any(l.narrowing for l in r.layers)

    def test_monotone_width(self):
        # widening a layer appends an input (a stored-orientation column,
        # an analysis-orientation row) to the weight downstream of it
        rng = np.random.default_rng(7)
        for _ in range(50):
            q, p = int(rng.integers(2, 8)), int(rng.integers(2, 8))
            w = rng.normal(size=(q, p))
            w_wide = np.vstack([w, rng.normal(size=(1, p))])
            assert min_gram_eigenvalue(w_wide) <= min_gram_eigenvalue(w) + 1e-10


class TestRenderReport:
    def test_markdown_single(self):
        g, c = build_toy_mlp()
        text = render_report(analyze_model(g, c), "markdown")
        assert "ν(θ) | 2" in text
        assert "66%" in text
        assert "nullity(W₁) | 6" in text

    def test_json_round_trip(self):
        g, c = build_toy_mlp()
        r = analyze_model(g, c)
        obj = json.loads(render_report(r, "json"))
        assert obj["nu_percent"] == 66 and obj["mu_percent"] == 66
        back = report_from_dict(obj)
        assert back == r

    def test_dict_round_trip(self):
        rng = np.random.default_rng(8)
        g, c = random_dense_net(rng)
        r = analyze_model(g, c)
        assert report_from_dict(report_to_dict(r)) == r

    def test_multi_model_rows(self):
        g, c = build_toy_mlp()
        r = analyze_model(g, c)
        text = render_report([r, r], "markdown")
        assert text.count("| toy-mlp |") == 2

    def test_empty_list_header_only(self):
        text = render_report([], "markdown")
        assert text.startswith("| Model |")
        assert len(text.strip().splitlines()) == 2  # header + separator

    def test_percentage_truncates(self):
        rng = np.random.default_rng(9)
        g, c = random_dense_net(rng, q=10, p=4, n_classes=3)
        # two trainable layers: 10->4 (nullity 6), 4->3 (nullity 1): nu=2, mu=2
        r = analyze_model(g, c)
        assert r.nu_percent == 100
        g2, c2 = build_toy_mlp()
        r2 = analyze_model(g2, c2)
        assert r2.nu_percent == 66  # 2/3 floors to 66, never rounds to 67

    def test_unknown_format(self):
        g, c = build_toy_mlp()
        with pytest.raises(ValueError):
            render_report(analyze_model(g, c), "yaml")
