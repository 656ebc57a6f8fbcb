"""Command-line interface.

Every command writes machine-readable JSON next to (or instead of) its
human-readable output so runs are auditable and diffable.  Exit codes:
0 success, 2 usage or I/O problem, 3 empty kernel, 4 collision
verification failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import analyzer, attacks, collider
from .container import (
    WeightContainer,
    load_container,
    load_tensor,
    save_container,
    save_tensor,
    write_pgm,
)
from .errors import EmptyKernelError, NullcollideError
from .graph import ModelGraph, load_graph
from .linalg import TolerancePolicy

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_EMPTY_KERNEL = 3
EXIT_NOT_COLLIDING = 4


def _tol(args) -> TolerancePolicy:
    return TolerancePolicy(mode=args.tol_mode, value=args.tol)


def _load_model(args) -> tuple[ModelGraph, WeightContainer]:
    return load_graph(args.model), load_container(args.weights)


def _find_layer(graph: ModelGraph, name: str):
    for _, layer in graph.trainable_layers():
        if layer.label == name:
            return layer
    raise NullcollideError(
        f"no trainable layer named {name!r}; choices: "
        f"{[l.label for _, l in graph.trainable_layers()]}"
    )


def _cmd_analyze(args) -> int:
    graph, container = _load_model(args)
    tol = _tol(args)
    if args.layer is not None:
        report = analyzer.analyze_layer(_find_layer(graph, args.layer), container, tol)
        if args.format == "json":
            print(json.dumps(dataclasses.asdict(report), indent=2))
        else:
            print(
                f"| layer | q | p | rank | nullity |\n|---|---|---|---|---|\n"
                f"| {report.layer_name} | {report.q} | {report.p} "
                f"| {report.rank} | {report.nullity} |"
            )
        return EXIT_OK
    report = analyzer.analyze_model(graph, container, tol)
    fmt = "json" if args.format == "json" else "markdown"
    print(analyzer.render_report(report, fmt))
    return EXIT_OK


def _basis_metadata(layer, basis, graph) -> dict[str, str]:
    meta = {"layer": basis.layer_name, "q": str(basis.q), "kind": layer.kind}
    if layer.kind == "conv2d":
        meta["geometry"] = json.dumps(
            {
                "c_in": layer.c_in, "c_out": layer.c_out, "kh": layer.kh, "kw": layer.kw,
                "stride": list(layer.stride), "padding": list(layer.padding),
                "input_shape": list(graph.input_shape),
            }
        )
    return meta


def _cmd_kernel(args) -> int:
    graph, container = _load_model(args)
    layer = _find_layer(graph, args.layer)
    tol = _tol(args)
    if args.operator:
        if layer.kind != "conv2d":
            raise NullcollideError("--operator only applies to conv2d layers")
        basis = collider.conv_operator_kernel(layer, graph.input_shape, container, tol)
        kind = "conv_operator"
    else:
        basis = collider.kernel_basis_set(layer, container, tol)
        kind = layer.kind
    out = WeightContainer()
    out.add("vectors", basis.vectors)
    out.metadata = _basis_metadata(layer, basis, graph)
    out.metadata["kind"] = kind
    save_container(out, args.out)
    print(f"wrote {basis.size} basis vectors (q={basis.q}) to {args.out}")
    return EXIT_OK


def _load_basis(path: str) -> tuple[collider.KernelBasisSet, dict]:
    cont = load_container(path)
    if "vectors" not in cont:
        raise NullcollideError(f"{path}: not a kernel-basis container (no 'vectors' tensor)")
    vectors = cont.as_f64("vectors")
    meta = dict(cont.metadata)
    basis = collider.KernelBasisSet(
        layer_name=meta.get("layer", "?"), q=vectors.shape[0], vectors=vectors
    )
    return basis, meta


def _parse_indices(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v != "")


def _build_perturbation(basis, meta, plan, x_shape) -> np.ndarray:
    kind = meta.get("kind", "dense")
    if plan.mode == "dense" or kind == "dense":
        p = np.zeros(basis.q)
        p += plan.beta * basis.vectors[:, plan.indices[0]]
        return p.reshape(x_shape)
    if kind == "conv_operator" or plan.mode == "conv_operator":
        return (plan.beta * basis.vectors[:, plan.indices[0]]).reshape(x_shape)
    geometry = json.loads(meta["geometry"])
    from .graph import LayerSpec

    conv = LayerSpec(
        "conv2d", c_in=geometry["c_in"], c_out=geometry["c_out"],
        kh=geometry["kh"], kw=geometry["kw"], stride=tuple(geometry["stride"]),
        padding=tuple(geometry["padding"]), weight=meta.get("layer"),
    )
    return collider.build_patch_perturbation(basis, tuple(x_shape), conv, plan)


def _plan_from_args(args, default_mode: str) -> collider.PerturbationPlan:
    clip_policy = "none"
    clip_range = None
    if args.clip is not None:
        lo, hi = (float(v) for v in args.clip.split(","))
        clip_range = (lo, hi)
        clip_policy = args.clip_policy
    multipliers = None
    if args.per_patch is not None:
        multipliers = tuple(float(v) for v in args.per_patch.split(","))
    mode = args.mode if args.mode is not None else default_mode
    if multipliers is not None:
        mode = "per_patch"
    return collider.PerturbationPlan(
        mode=mode,
        indices=_parse_indices(args.indices),
        beta=args.beta,
        patch_multipliers=multipliers,
        clip_policy=clip_policy,
        clip_range=clip_range,
    )


def _cmd_collide(args) -> int:
    x = load_tensor(args.input)
    basis, meta = _load_basis(args.basis)
    kind = meta.get("kind", "dense")
    default_mode = {"dense": "dense", "conv2d": "tile_single", "conv_operator": "conv_operator"}[kind]
    plan = _plan_from_args(args, default_mode)
    p = _build_perturbation(basis, meta, plan, x.shape)
    x_hat, applied = collider.apply_plan(np.asarray(x, dtype=np.float64), p, plan)
    save_tensor(args.out, x_hat.astype(x.dtype))
    sidecar = {
        "plan": {
            "mode": plan.mode,
            "indices": list(plan.indices),
            "beta": plan.beta,
            "patch_multipliers": list(plan.patch_multipliers) if plan.patch_multipliers else None,
            "clip_policy": plan.clip_policy,
            "clip_range": list(plan.clip_range) if plan.clip_range else None,
        },
        "applied_beta": plan.beta * applied.scale,
        "scale": applied.scale,
        "exactness_broken": applied.exactness_broken,
        "clipped_elements": applied.clipped_elements,
    }
    if args.pgm is not None:
        sidecar["pgm"] = {"path": args.pgm, **write_pgm(args.pgm, p)}
    with open(args.out + ".json", "w") as fh:
        json.dump(sidecar, fh, indent=2)
        fh.write("\n")
    print(json.dumps(sidecar, indent=2))
    return EXIT_OK


def _cmd_verify(args) -> int:
    graph, container = _load_model(args)
    a = load_tensor(args.a)
    b = load_tensor(args.b)
    report = collider.verify_collision(graph, container, a, b, precision=args.precision)
    print(report.to_json())
    return EXIT_OK if report.argmax_equal else EXIT_NOT_COLLIDING


def _cmd_attack(args) -> int:
    graph, container = _load_model(args)
    x = np.asarray(load_tensor(args.input), dtype=np.float64)
    cfg = attacks.AttackConfig(
        epsilon=args.eps,
        step_size=args.alpha if args.alpha is not None else args.eps / 4,
        iterations=args.steps,
        random_start=args.random_start,
        seed=args.seed,
    )
    summary: dict = {"attack": args.method, "eps": args.eps, "seed": args.seed}
    if args.method == "fgsm":
        result = attacks.fgsm(graph, container, x, args.label, args.eps)
    elif args.method == "pgd":
        result = attacks.pgd(graph, container, x, args.label, cfg)
    else:  # compose
        plan = collider.PerturbationPlan(
            mode="tile_single", indices=_parse_indices(args.indices), beta=args.beta
        )
        if args.basis is not None:
            # caller supplies a precomputed basis file instead of deriving one
            basis, meta = _load_basis(args.basis)
            adv = attacks.pgd(graph, container, x, args.label, cfg)
            p = _build_perturbation(basis, meta, plan, x.shape)
            scale = 1.0
            if args.respect_eps:
                scale = attacks.budget_rescale(x, adv.x_adv, p, args.eps, (0.0, 1.0))
            x_hat = adv.x_adv + scale * p
            report = collider.verify_collision(graph, container, adv.x_adv, x_hat)
            composed = attacks.ComposedAttackResult(
                adversarial=adv,
                x_hat=x_hat,
                applied_beta=args.beta * scale,
                collision=report,
                within_epsilon_of_x=float(np.max(np.abs(x_hat - x))) <= args.eps + 1e-12,
                basis_size=basis.size,
            )
        else:
            composed = attacks.colliding_adversarial(
                graph, container, x, args.label, cfg, plan,
                tol=_tol(args), respect_epsilon=args.respect_eps,
            )
        result = composed.adversarial
        save_tensor(args.out + "_xhat.npy", composed.x_hat)
        summary.update(
            {
                "argmax_equal": composed.collision.argmax_equal,
                "logit_residual": composed.collision.logit_residual,
                "applied_beta": composed.applied_beta,
                "within_epsilon_of_x": composed.within_epsilon_of_x,
                "basis_size": composed.basis_size,
            }
        )
    save_tensor(args.out + "_xprime.npy", result.x_adv)
    summary.update(
        {
            "premise_ok": result.premise_ok,
            "premise_note": None if result.premise_ok else "input already misclassified; attack skipped",
            "achieved": result.achieved,
            "prediction": result.prediction,
            "perturbation_linf": result.perturbation_linf,
            "perturbation_l2": result.perturbation_l2,
            "iterations_used": result.iterations_used,
        }
    )
    with open(args.out + "_summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def _cmd_report(args) -> int:
    with open(args.models) as fh:
        entries = json.load(fh)
    if not isinstance(entries, list):
        raise NullcollideError(f"{args.models}: expected a JSON list of model entries")
    tol = _tol(args)
    reports = []
    seen: dict[str, int] = {}
    for entry in entries:
        graph = load_graph(entry["graph"])
        container = load_container(entry["weights"])
        report = analyzer.analyze_model(graph, container, tol)
        name = entry.get("name", report.model_name)
        seen[name] = seen.get(name, 0) + 1
        if seen[name] > 1:
            name = f"{name}-{seen[name]}"
        reports.append(dataclasses.replace(report, model_name=name))
    text = analyzer.render_report(reports, "json" if args.format == "json" else "markdown")
    with open(args.out, "w") as fh:
        fh.write(text)
    print(f"wrote {len(reports)} model rows to {args.out}")
    return EXIT_OK


GLOBAL_DEFAULTS = {
    "precision": "f64",
    "tol": 1.0,
    "tol_mode": "relative",
    "seed": 0,
    "format": "md",
}


def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subparser from clobbering a global flag given before
    # the subcommand; defaults are filled in by main() afterwards
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--precision", choices=["f32", "f64"])
    common.add_argument("--tol", type=float, help="tolerance value")
    common.add_argument("--tol-mode", choices=["relative", "absolute"])
    common.add_argument("--seed", type=int)
    common.add_argument("--format", choices=["json", "md"])

    parser = argparse.ArgumentParser(
        prog="nullcollide",
        description="Audit neural-network weights for exact feature collisions and build them.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", parents=[common], help="nullity metrics for a model or one layer")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--layer")
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("kernel", parents=[common], help="write a layer's null-space basis")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--operator", action="store_true", help="materialize the full conv operator")
    p.set_defaults(func=_cmd_kernel)

    p = sub.add_parser("collide", parents=[common], help="build a colliding input from a basis")
    p.add_argument("--input", required=True)
    p.add_argument("--basis", required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--indices", default="0", help="comma-separated basis indices")
    p.add_argument("--per-patch", dest="per_patch", help="comma-separated per-patch multipliers")
    p.add_argument("--mode", choices=list(collider.PLAN_MODES))
    p.add_argument("--clip", help="LO,HI input range")
    p.add_argument("--clip-policy", choices=["clip_and_report", "rescale_beta"], default="clip_and_report")
    p.add_argument("--pgm", help="write a PGM preview of the perturbation")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_collide)

    p = sub.add_parser("verify", parents=[common], help="residual accounting for a candidate pair")
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("attack", parents=[common], help="adversarial examples, optionally composed")
    p.add_argument("method", choices=["pgd", "fgsm", "compose"])
    p.add_argument("--model", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--alpha", type=float)
    p.add_argument("--random-start", action="store_true")
    p.add_argument("--basis", help="(compose) precomputed basis container; default derives one")
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--indices", default="0")
    p.add_argument("--respect-eps", action="store_true", help="(compose) rescale beta to keep x_hat within eps of x")
    p.add_argument("--out", required=True, help="output path prefix")
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("report", parents=[common], help="audit table for a list of models")
    p.add_argument("--models", required=True, help="JSON list of {name, graph, weights}")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for key, value in GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    if getattr(args, "eps", None) is not None and args.eps <= 0:
        parser.error("--eps must be > 0")
    try:
        return args.func(args)
    except EmptyKernelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EMPTY_KERNEL
    except (NullcollideError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
