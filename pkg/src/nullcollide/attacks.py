"""Adversarial example generation and composition with null-space collisions.

PGD/FGSM produce a budgeted misclassifying input x'; the composition step
then adds a first-layer kernel perturbation to x', yielding a second
adversarial input with bit-for-bit (up to float rounding) identical
features and prediction.  A gradient-based feature-matching baseline is
included as the approximate-collision contrast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .collider import (
    CollisionReport,
    KernelBasisSet,
    PerturbationPlan,
    apply_plan,
    build_patch_perturbation,
    conv_operator_kernel,
    kernel_basis_set,
    verify_collision,
)
from .container import WeightContainer
from .graph import ModelGraph
from .linalg import DEFAULT_TOL, TolerancePolicy
from .refnet import CrossEntropy, LogitDistance, forward, input_gradient, predict


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    step_size: float
    iterations: int
    random_start: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be > 0, got {self.step_size}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")


@dataclass
class AdversarialResult:
    x_adv: np.ndarray
    achieved: bool  # G(x) == y and G(x_adv) != y
    premise_ok: bool  # input was correctly classified to begin with
    prediction: int  # model's call on x_adv
    perturbation_linf: float
    perturbation_l2: float
    iterations_used: int


def pgd(
    graph: ModelGraph,
    container: WeightContainer,
    x: np.ndarray,
    y: int,
    cfg: AttackConfig,
    input_range: tuple[float, float] = (0.0, 1.0),
) -> AdversarialResult:
    """Projected gradient ascent on cross-entropy inside the l_inf ball.

    An input the model already misclassifies is reported (premise_ok=False)
    and returned unperturbed.  Deterministic for a fixed seed.
    """
    x0 = np.asarray(x, dtype=np.float64)
    lo, hi = input_range
    start_pred = predict(forward(graph, container, x0))
    if start_pred != y:
        return AdversarialResult(
            x_adv=x0.copy(),
            achieved=False,
            premise_ok=False,
            prediction=start_pred,
            perturbation_linf=0.0,
            perturbation_l2=0.0,
            iterations_used=0,
        )

    adv = x0.copy()
    if cfg.random_start:
        rng = np.random.default_rng(cfg.seed)
        adv = np.clip(adv + rng.uniform(-cfg.epsilon, cfg.epsilon, size=adv.shape), lo, hi)

    loss = CrossEntropy(target=y)
    used = 0
    for _ in range(cfg.iterations):
        grad = input_gradient(graph, container, adv, loss)
        adv = adv + cfg.step_size * np.sign(grad)
        adv = np.clip(adv, x0 - cfg.epsilon, x0 + cfg.epsilon)
        adv = np.clip(adv, lo, hi)
        used += 1
        if predict(forward(graph, container, adv)) != y:
            break

    pred = predict(forward(graph, container, adv))
    delta = adv - x0
    return AdversarialResult(
        x_adv=adv,
        achieved=pred != y,
        premise_ok=True,
        prediction=pred,
        perturbation_linf=float(np.max(np.abs(delta))),
        perturbation_l2=float(np.linalg.norm(delta)),
        iterations_used=used,
    )


def fgsm(
    graph: ModelGraph,
    container: WeightContainer,
    x: np.ndarray,
    y: int,
    epsilon: float,
    input_range: tuple[float, float] = (0.0, 1.0),
) -> AdversarialResult:
    """Single full-budget gradient-sign step (PGD with one iteration)."""
    cfg = AttackConfig(epsilon=epsilon, step_size=epsilon, iterations=1)
    return pgd(graph, container, x, y, cfg, input_range)


@dataclass
class FeatureMatchResult:
    x: np.ndarray
    logit_distance: float
    steps_used: int
    diverged: bool


def feature_match(
    graph: ModelGraph,
    container: WeightContainer,
    x_target: np.ndarray,
    x_seed: np.ndarray,
    p: float = 2.0,
    steps: int = 500,
    lr: float = 0.01,
) -> FeatureMatchResult:
    """Gradient descent on the logit distance to a target input.

    This is the heuristic route to (approximate) collisions: it shrinks
    ||g(x) - g(x_target)||_p from x_seed but has no reason to reach zero.
    Returns the best iterate seen; stops early after 10 consecutive loss
    increases and flags the run as diverged.
    """
    target_logits = forward(graph, container, x_target).logits
    loss = LogitDistance(target_logits=target_logits, p=p)
    x = np.asarray(x_seed, dtype=np.float64).copy()
    best_x = x.copy()
    best_d, _ = loss.value_and_grad(forward(graph, container, x).logits)
    prev = best_d
    streak = 0
    used = 0
    diverged = False
    for _ in range(steps):
        grad = input_gradient(graph, container, x, loss)
        x = x - lr * grad
        d, _ = loss.value_and_grad(forward(graph, container, x).logits)
        used += 1
        if d < best_d:
            best_d, best_x = d, x.copy()
        streak = streak + 1 if d > prev else 0
        prev = d
        if streak >= 10:
            diverged = True
            break
    return FeatureMatchResult(x=best_x, logit_distance=float(best_d), steps_used=used, diverged=diverged)


@dataclass
class ComposedAttackResult:
    adversarial: AdversarialResult
    x_hat: np.ndarray
    applied_beta: float
    collision: CollisionReport
    within_epsilon_of_x: bool  # ||x_hat - x||_inf <= epsilon + 1e-12
    basis_size: int


def budget_rescale(
    x: np.ndarray,
    x_prime: np.ndarray,
    p: np.ndarray,
    epsilon: float,
    input_range: tuple[float, float],
) -> float:
    """Largest factor in [0, 1] keeping x' + scale*p within eps of x and in range."""
    nz = p != 0
    if not np.any(nz):
        return 1.0
    drift = x_prime - x
    room_hi = np.minimum(epsilon - drift, np.clip(input_range[1] - x_prime, 0, None))
    room_lo = np.maximum(-epsilon - drift, np.clip(input_range[0] - x_prime, None, 0))
    room = np.where(p > 0, room_hi, room_lo)
    scale = min(1.0, float(np.min(room[nz] / p[nz])))
    return max(scale, 0.0)


def _first_layer_perturbation(
    graph: ModelGraph,
    container: WeightContainer,
    input_shape: tuple[int, ...],
    plan: PerturbationPlan,
    tol: TolerancePolicy,
) -> tuple[np.ndarray, KernelBasisSet]:
    """Kernel perturbation for the first trainable layer, image-shaped."""
    _, layer = graph.first_trainable()
    if layer.kind == "dense":
        basis = kernel_basis_set(layer, container, tol)
        p = plan.beta * basis.vectors[:, plan.indices[0]]
        return p, basis
    if plan.mode == "conv_operator" or layer.stride != (layer.kh, layer.kw) or layer.padding != (0, 0):
        basis = conv_operator_kernel(layer, input_shape, container, tol)
        p = plan.beta * basis.vectors[:, plan.indices[0]].reshape(input_shape)
        return p, basis
    basis = kernel_basis_set(layer, container, tol)
    p = build_patch_perturbation(basis, input_shape, layer, plan)
    return p, basis


def colliding_adversarial(
    graph: ModelGraph,
    container: WeightContainer,
    x: np.ndarray,
    y: int,
    cfg: AttackConfig,
    plan: PerturbationPlan,
    tol: TolerancePolicy = DEFAULT_TOL,
    respect_epsilon: bool = False,
    input_range: tuple[float, float] = (0.0, 1.0),
) -> ComposedAttackResult:
    """Attack, then add a first-layer kernel perturbation to the result.

    x_hat = x' + P collides with x' on every layer, so both are adversarial
    with the same prediction.  With respect_epsilon the perturbation is
    rescaled by the largest factor keeping ||x_hat - x||_inf within the
    attack budget (and x_hat inside the input range); rescaling stays in
    the kernel, so exactness is preserved.  Otherwise the plan's own clip
    policy applies.
    """
    x = np.asarray(x, dtype=np.float64)
    adv = pgd(graph, container, x, y, cfg, input_range)
    x_prime = adv.x_adv
    p, basis = _first_layer_perturbation(graph, container, x.shape, plan, tol)
    p = p.reshape(x.shape)

    if respect_epsilon:
        scale = budget_rescale(x, x_prime, p, cfg.epsilon, input_range)
        x_hat = x_prime + scale * p
    else:
        x_hat, applied = apply_plan(x_prime, p, plan)
        scale = applied.scale

    report = verify_collision(graph, container, x_prime, x_hat, precision="f64")
    within = float(np.max(np.abs(x_hat - x))) <= cfg.epsilon + 1e-12
    return ComposedAttackResult(
        adversarial=adv,
        x_hat=x_hat,
        applied_beta=plan.beta * scale,
        collision=report,
        within_epsilon_of_x=within,
        basis_size=basis.size,
    )
