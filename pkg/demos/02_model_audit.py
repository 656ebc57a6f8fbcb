"""Audit models for collision risk and print the summary table.

For every trainable weight we count whether its left kernel is non-trivial
(nu), whether fan-out < fan-in forces that (mu), and how many kernel basis
vectors exist in total.  The committed fixture CNN and the toy MLP both
have first layers with large kernels.
"""

from pathlib import Path

from nullcollide import analyze_model, load_container, load_graph, render_report
from nullcollide.toys import build_toy_mlp

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"

graph, container = build_toy_mlp()
toy_report = analyze_model(graph, container)
print(render_report(toy_report, "markdown"))

cnn_report = analyze_model(
    load_graph(str(FIXTURES / "patchify_cnn.json")),
    load_container(str(FIXTURES / "patchify_cnn.safetensors")),
)
print(render_report(cnn_report, "markdown"))

# The multi-model table mirrors the audit-table layout: one row per model.
print(render_report([toy_report, cnn_report], "markdown"))
