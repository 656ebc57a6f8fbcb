"""Per-layer and model-level collision-risk metrics.

For every trainable weight, oriented q x p (fan-in rows), the analyzer
records the numerical rank, the left nullity (how many independent input
perturbations the layer absorbs exactly), and two flags: whether the kernel
is non-trivial at all, and whether p < q forces it to be.  Model-level
counts aggregate those flags the way the audit table in the report output
presents them.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from .container import WeightContainer
from .errors import NoTrainableLayersError
from .graph import LayerSpec, ModelGraph, as_analysis_matrix
from .linalg import DEFAULT_TOL, TolerancePolicy, numerical_rank, svd

REPORT_SCHEMA = "nullity-report/v1"


@dataclass(frozen=True)
class LayerNullityReport:
    layer_name: str
    q: int
    p: int
    rank: int
    nullity: int
    sigma_min: float
    sigma_max: float
    has_kernel: bool  # nullity >= 1: collisions are constructible here
    narrowing: bool  # fan-out < fan-in: a non-trivial kernel is forced


@dataclass(frozen=True)
class ModelNullityReport:
    model_name: str
    layers: tuple[LayerNullityReport, ...]
    n_weights: int
    nu: int  # layers with nullity >= 1
    mu: int  # layers with fan-out < fan-in
    total_nullity: int
    nullity_first: int
    input_dim: int
    output_dim: int
    input_exceeds_output: bool

    @property
    def nu_percent(self) -> int:
        return (100 * self.nu) // self.n_weights

    @property
    def mu_percent(self) -> int:
        return (100 * self.mu) // self.n_weights


def analyze_layer(
    layer: LayerSpec,
    container: WeightContainer,
    tol: TolerancePolicy = DEFAULT_TOL,
) -> LayerNullityReport:
    """Rank/nullity report for one dense or conv2d layer."""
    w = as_analysis_matrix(layer, container)
    q, p = w.shape
    s = svd(w, label=layer.label).s
    rank = numerical_rank(s, (q, p), tol)
    nullity = q - rank
    return LayerNullityReport(
        layer_name=layer.label,
        q=q,
        p=p,
        rank=rank,
        nullity=nullity,
        sigma_min=float(s[-1]),
        sigma_max=float(s[0]),
        has_kernel=nullity >= 1,
        narrowing=p < q,
    )


def _first_layer_input_dim(graph: ModelGraph) -> int:
    """Element count the first trainable layer actually consumes.

    For a conv first layer that is the unfolded patch tensor (patch count
    times patch size); for a dense first layer, its fan-in.
    """
    idx, layer = graph.first_trainable()
    if layer.kind == "dense":
        return layer.in_dim
    out_shape = graph.layer_shapes[idx]  # (c_out, oh, ow)
    patches = out_shape[1] * out_shape[2]
    return patches * layer.c_in * layer.kh * layer.kw


def analyze_model(
    graph: ModelGraph,
    container: WeightContainer,
    tol: TolerancePolicy = DEFAULT_TOL,
) -> ModelNullityReport:
    """Aggregate per-layer reports into the model-level metrics."""
    trainable = graph.trainable_layers()
    if not trainable:
        raise NoTrainableLayersError(f"model {graph.name!r} has no dense/conv2d layers")
    reports = tuple(analyze_layer(layer, container, tol) for _, layer in trainable)
    input_dim = _first_layer_input_dim(graph)
    output_dim = int(np.prod(graph.output_shape))
    return ModelNullityReport(
        model_name=graph.name,
        layers=reports,
        n_weights=len(reports),
        nu=sum(r.has_kernel for r in reports),
        mu=sum(r.narrowing for r in reports),
        total_nullity=sum(r.nullity for r in reports),
        nullity_first=reports[0].nullity,
        input_dim=input_dim,
        output_dim=output_dim,
        input_exceeds_output=input_dim > output_dim,
    )


def report_to_dict(report: ModelNullityReport) -> dict:
    out = asdict(report)
    out["layers"] = [asdict(l) for l in report.layers]
    out["nu_percent"] = report.nu_percent
    out["mu_percent"] = report.mu_percent
    out["schema"] = REPORT_SCHEMA
    return out


def report_from_dict(obj: dict) -> ModelNullityReport:
    if obj.get("schema") != REPORT_SCHEMA:
        raise ValueError(f"unknown report schema {obj.get('schema')!r}")
    layers = tuple(LayerNullityReport(**l) for l in obj["layers"])
    derived = ("layers", "schema", "nu_percent", "mu_percent")
    fields = {k: v for k, v in obj.items() if k not in derived}
    return ModelNullityReport(layers=layers, **fields)


_SUMMARY_HEADER = (
    "| Model | ν(θ) | ν/n_θ | μ(θ) | μ/n_θ | Σ nullity | nullity(W₁) |\n"
    "|---|---|---|---|---|---|---|\n"
)


def _summary_row(r: ModelNullityReport) -> str:
    return (
        f"| {r.model_name} | {r.nu} | {r.nu_percent}% | {r.mu} | {r.mu_percent}% "
        f"| {r.total_nullity} | {r.nullity_first} |\n"
    )


def render_report(report, format: str = "markdown") -> str:
    """Render one report (or a list of them) as markdown or JSON.

    A single report renders metric/value rows plus a per-layer table; a list
    renders one audit-table row per model (header only when the list is
    empty).  JSON output round-trips through report_from_dict.
    """
    if format == "json":
        if isinstance(report, ModelNullityReport):
            return json.dumps(report_to_dict(report), indent=2)
        return json.dumps(
            {"schema": REPORT_SCHEMA, "models": [report_to_dict(r) for r in report]},
            indent=2,
        )
    if format not in ("markdown", "md"):
        raise ValueError(f"unknown format {format!r}")
    if not isinstance(report, ModelNullityReport):
        return _SUMMARY_HEADER + "".join(_summary_row(r) for r in report)

    r = report
    lines = [
        f"## {r.model_name}\n",
        "\n",
        "| metric | value |\n",
        "|---|---|\n",
        f"| n_θ | {r.n_weights} |\n",
        f"| ν(θ) | {r.nu} |\n",
        f"| ν/n_θ | {r.nu_percent}% |\n",
        f"| μ(θ) | {r.mu} |\n",
        f"| μ/n_θ | {r.mu_percent}% |\n",
        f"| Σ nullity | {r.total_nullity} |\n",
        f"| nullity(W₁) | {r.nullity_first} |\n",
        f"| input dim | {r.input_dim} |\n",
        f"| output dim | {r.output_dim} |\n",
        f"| input > output | {str(r.input_exceeds_output).lower()} |\n",
        "\n",
        "| layer | q | p | rank | nullity | σ_min | σ_max | kernel ≥ 1 | p < q |\n",
        "|---|---|---|---|---|---|---|---|---|\n",
    ]
    for l in r.layers:
        lines.append(
            f"| {l.layer_name} | {l.q} | {l.p} | {l.rank} | {l.nullity} "
            f"| {l.sigma_min:.3e} | {l.sigma_max:.3e} "
            f"| {str(l.has_kernel).lower()} | {str(l.narrowing).lower()} |\n"
        )
    return "".join(lines)
