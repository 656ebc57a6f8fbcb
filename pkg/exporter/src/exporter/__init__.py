"""One-shot scripts that turn torch checkpoints into analyzer-ready files.

convert: pretrained/classification checkpoints -> safetensors container
(+ graph JSON when the architecture maps onto the reference layer kinds,
weights-only manifest otherwise).

fixture: trains the small patchify CNN on synthetic blobs and emits the
committed test fixture (weights, graph, labeled probes, reference logits).
"""

__version__ = "0.1.0"
