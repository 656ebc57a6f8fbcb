"""Train and emit the committed patchify-CNN test fixture.

Architecture: conv 4x4 stride 4 (1 -> 6 channels) -> relu -> flatten ->
dense 24 -> 32 -> dense 32 -> 10.  The first weight sees 16-element patches
and has at most rank 6, so its left kernel is guaranteed non-trivial.

The synthetic task is 10 Gaussian blobs in [0, 1]^64 rendered as 8x8
images; class centers are kept close enough that a 0.1-budget attack can
cross decision boundaries, while training still separates them cleanly.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import torch
from safetensors.numpy import save_file

N_CLASSES = 10
SIDE = 8
N_PER_CLASS = 80
CENTER_LO, CENTER_HI = 0.35, 0.65
NOISE = 0.05
TRAIN_ACC_TARGET = 0.95


class PatchifyNet(torch.nn.Module):
    def __init__(self):
        super().__init__()
        self.conv = torch.nn.Conv2d(1, 6, kernel_size=4, stride=4)
        self.fc1 = torch.nn.Linear(24, 32)
        self.fc2 = torch.nn.Linear(32, 10)

    def forward(self, x):
        h = torch.relu(self.conv(x))
        h = h.flatten(1)
        return self.fc2(self.fc1(h))


def blob_dataset(rng: np.random.Generator):
    centers = rng.uniform(CENTER_LO, CENTER_HI, size=(N_CLASSES, SIDE * SIDE))
    xs, ys = [], []
    for k in range(N_CLASSES):
        pts = centers[k] + rng.normal(0.0, NOISE, size=(N_PER_CLASS, SIDE * SIDE))
        xs.append(np.clip(pts, 0.0, 1.0))
        ys.append(np.full(N_PER_CLASS, k))
    x = np.concatenate(xs).astype(np.float32).reshape(-1, 1, SIDE, SIDE)
    y = np.concatenate(ys).astype(np.int64)
    order = rng.permutation(len(y))
    return x[order], y[order]


def _train_once(seed: int):
    torch.set_num_threads(1)  # bit-for-bit reproducible training
    torch.use_deterministic_algorithms(True)
    torch.manual_seed(seed)
    rng = np.random.default_rng(seed)
    x, y = blob_dataset(rng)
    xt, yt = torch.from_numpy(x), torch.from_numpy(y)
    model = PatchifyNet()
    opt = torch.optim.Adam(model.parameters(), lr=5e-3)
    loss_fn = torch.nn.CrossEntropyLoss()
    for _ in range(300):
        opt.zero_grad()
        loss = loss_fn(model(xt), yt)
        loss.backward()
        opt.step()
    model.eval()
    with torch.no_grad():
        acc = float((model(xt).argmax(dim=1) == yt).float().mean())
    return model, x, y, acc


def _pick_probes(model: PatchifyNet, x: np.ndarray, y: np.ndarray, per_class: int = 2):
    """Two correctly classified samples per class, in class order."""
    with torch.no_grad():
        pred = model(torch.from_numpy(x)).argmax(dim=1).numpy()
    probes, labels = [], []
    for k in range(N_CLASSES):
        idx = np.nonzero((y == k) & (pred == k))[0][:per_class]
        probes.extend(x[idx])
        labels.extend([k] * len(idx))
    return np.stack(probes), np.array(labels, dtype=np.int64)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def graph_dict() -> dict:
    return {
        "name": "patchify-cnn-fixture",
        "input_shape": [1, SIDE, SIDE],
        "layers": [
            {
                "kind": "conv2d", "c_in": 1, "c_out": 6, "kh": 4, "kw": 4,
                "stride": [4, 4], "padding": [0, 0],
                "weight": "conv.weight", "bias": "conv.bias",
            },
            {"kind": "activation", "fn": "relu"},
            {"kind": "flatten"},
            {"kind": "dense", "in": 24, "out": 32, "weight": "fc1.weight", "bias": "fc1.bias"},
            {"kind": "dense", "in": 32, "out": 10, "weight": "fc2.weight", "bias": "fc2.bias"},
        ],
    }


def make_fixture(seed: int, out_dir: str, retries: int = 3) -> dict:
    """Train the fixture net, write all artifacts, return the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model = None
    acc = 0.0
    attempt_seed = seed
    for _ in range(retries):
        model, x, y, acc = _train_once(attempt_seed)
        if acc >= TRAIN_ACC_TARGET:
            break
        attempt_seed += 1000
    if acc < TRAIN_ACC_TARGET:
        raise RuntimeError(f"training failed: accuracy {acc:.3f} < {TRAIN_ACC_TARGET} after {retries} attempts")

    probes, labels = _pick_probes(model, x, y)
    with torch.no_grad():
        logits = model(torch.from_numpy(probes)).numpy().astype(np.float32)

    arrays = {name: p.detach().numpy() for name, p in model.state_dict().items()}
    container_path = out / "patchify_cnn.safetensors"
    # single metadata key: safetensors serializes multi-key metadata in
    # unstable order, which breaks byte-level reproducibility
    save_file(arrays, str(container_path), metadata={"source": f"exporter.fixture seed={attempt_seed}"})
    graph_path = out / "patchify_cnn.json"
    graph_path.write_text(json.dumps(graph_dict(), indent=2) + "\n")
    probes_path = out / "probes.npy"
    np.save(probes_path, probes.astype(np.float32), allow_pickle=False)
    logits_path = out / "probe_logits.npy"
    np.save(logits_path, logits, allow_pickle=False)

    manifest = {
        "seed_requested": seed,
        "seed_used": attempt_seed,
        "torch_version": torch.__version__,
        "train_accuracy": acc,
        "n_probes": int(len(labels)),
        "probe_labels": labels.tolist(),
        "architecture": "conv4x4s4(1->6) relu flatten dense24->32 dense32->10",
        "dataset": {
            "classes": N_CLASSES, "per_class": N_PER_CLASS, "side": SIDE,
            "center_range": [CENTER_LO, CENTER_HI], "noise": NOISE,
        },
        "hashes": {
            p.name: _sha256(p) for p in (container_path, graph_path, probes_path, logits_path)
        },
    }
    (out / "fixture_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Train and emit the patchify-CNN fixture.")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--out", required=True, help="output directory")
    args = parser.parse_args(argv)
    try:
        manifest = make_fixture(args.seed, args.out)
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(
        f"fixture trained to {manifest['train_accuracy']:.3f} accuracy; "
        f"{manifest['n_probes']} probes written to {args.out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
