"""White-box evasion of the learned detector under stealth constraints.

The crafted perturbation v ascends the cross-entropy loss of the false
class within the feasible subspace: v is parameterized by the free
coordinates of the restricted stealth constraints, the loss gradient is
pulled back to those free coordinates by the chain rule, and the resulting
direction is lifted through the dependency so z_a + v stays invisible to
the residual check while crossing the classifier's decision boundary.
Each accepted step has infinity norm exactly ``size``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fdia, neural

NORMAL_LABEL = 0
FALSE_LABEL = 1


@dataclass(frozen=True)
class AttackConfig:
    size: float = 0.1
    max_iters: int = 1000
    padding_offset: int = 0  # offset the attacker fixes when targeting a padded model

    def __post_init__(self):
        if not self.size > 0:
            raise ValueError("size must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.padding_offset < 0:
            raise ValueError("padding_offset must be nonnegative")


@dataclass
class AdversarialResult:
    v: np.ndarray          # crafted perturbation, zero off the compromised set
    success: bool          # final verdict of the attacked model view
    iterations: int
    a_hat: np.ndarray      # total injected vector a + v
    reason: str            # already-normal | classified-normal | max-iters | zero-gradient


class _PlainView:
    """Direct white-box view of an MlpModel (gradients at temperature 1)."""

    def __init__(self, model: neural.MlpModel):
        self.model = model

    def classify(self, z: np.ndarray) -> int:
        return int(neural.classify(self.model, z[None, :])[0])

    def gradient_false(self, z: np.ndarray) -> np.ndarray:
        return neural.escape_gradient(self.model, z, FALSE_LABEL)


class _FixedOffsetView:
    """View of a padded model with the embedding offset pinned by the attacker.

    Gradients wrt the original measurement are the padded-input gradients
    sliced at the embedding window; padding positions contribute nothing.
    """

    def __init__(self, padded_model, offset: int):
        if not 0 <= offset <= padded_model.pad_width:
            raise ValueError(
                f"offset {offset} outside [0, {padded_model.pad_width}]"
            )
        self.inner = padded_model.model
        self.m = padded_model.m
        self.pad_width = padded_model.pad_width
        self.offset = offset

    def _embed(self, z: np.ndarray) -> np.ndarray:
        out = np.zeros(self.m + self.pad_width)
        out[self.offset : self.offset + self.m] = z
        return out

    def classify(self, z: np.ndarray) -> int:
        return int(neural.classify(self.inner, self._embed(z)[None, :])[0])

    def gradient_false(self, z: np.ndarray) -> np.ndarray:
        g = neural.escape_gradient(self.inner, self._embed(z), FALSE_LABEL)
        return g[self.offset : self.offset + self.m]


def _as_view(model):
    if isinstance(model, neural.MlpModel):
        return _PlainView(model)
    if hasattr(model, "classify") and hasattr(model, "gradient_false"):
        return model
    raise TypeError(f"cannot attack object of type {type(model).__name__}")


def _injected_values(a, m: int) -> np.ndarray:
    if a is None:
        return np.zeros(m)
    if isinstance(a, fdia.FalseDataVector):
        return np.asarray(a.values, dtype=float)
    return np.asarray(a, dtype=float)


def constrained_ascent_direction(cs: fdia.ConstraintSystem, g: np.ndarray) -> np.ndarray:
    """Feasible ascent direction for a loss gradient ``g`` under constraints.

    The perturbation is parameterized by its free (independent) coordinates:
    dependent coordinates follow through the dependency matrix and entries
    off the compromised set stay zero. By the chain rule, the gradient of
    the loss with respect to those free coordinates is g_I + dependencyᵀ g_D;
    lifting that free-coordinate gradient back through the dependency (via
    project_to_nullspace) gives a direction that satisfies the stealth
    constraints exactly and never descends: ⟨g, direction⟩ = ‖g_I +
    dependencyᵀ g_D‖² ≥ 0, with equality only when the loss is stationary
    on the whole feasible subspace.
    """
    g = np.asarray(g, dtype=float)
    if g.shape != (cs.m,):
        raise ValueError(f"expected an m-vector of length {cs.m}")
    cols = np.array(cs.scenario.compromised, dtype=int)
    free = g[cols[cs.independent]]
    if len(cs.dependent):
        free = free + cs.dependency.T @ g[cols[cs.dependent]]
    conditioned = np.zeros_like(g)
    conditioned[cols[cs.independent]] = free
    return fdia.project_to_nullspace(cs, conditioned)


def craft_perturbation(
    model,
    cs: fdia.ConstraintSystem,
    z_a: np.ndarray,
    cfg: AttackConfig,
    a=None,
) -> AdversarialResult:
    """Iterative constrained gradient attack on one false measurement vector.

    Each iteration takes the loss-ascent direction at the False label
    (computed in its scale-free logit-gap form, an exact positive multiple
    of the cross-entropy gradient that stays finite under saturation),
    converts it to the feasible ascent direction via
    constrained_ascent_direction, rescales that direction to max-norm
    ``size``, and accumulates it into v, stopping as soon as the model
    classifies z_a + v as Normal.

    ``model`` is an MlpModel or a model view; ``a`` (optional) is the
    injection already present in z_a, used only to report a_hat = a + v.
    Deterministic: same model, z_a, and cfg give an identical result.
    """
    view = _as_view(model)
    z_a = np.asarray(z_a, dtype=float)
    if z_a.shape != (cs.m,):
        raise ValueError(f"expected a measurement vector of length {cs.m}")
    base = _injected_values(a, cs.m)
    v = np.zeros(cs.m)
    if view.classify(z_a) == NORMAL_LABEL:
        return AdversarialResult(v=v, success=True, iterations=0, a_hat=base + v,
                                 reason="already-normal")
    for iteration in range(1, cfg.max_iters + 1):
        g = view.gradient_false(z_a + v)
        step = constrained_ascent_direction(cs, g)
        peak = float(np.abs(step).max())
        if peak == 0.0:
            return AdversarialResult(v=v, success=False, iterations=iteration - 1,
                                     a_hat=base + v, reason="zero-gradient")
        # normalize before scaling: size/peak overflows when the network
        # saturates and the gradient is denormal, step/peak never exceeds 1
        v = v + cfg.size * (step / peak)
        if view.classify(z_a + v) == NORMAL_LABEL:
            return AdversarialResult(v=v, success=True, iterations=iteration,
                                     a_hat=base + v, reason="classified-normal")
    return AdversarialResult(v=v, success=False, iterations=cfg.max_iters,
                             a_hat=base + v, reason="max-iters")


def attack_padded(
    padded_model,
    cs: fdia.ConstraintSystem,
    z_a: np.ndarray,
    cfg: AttackConfig,
    a=None,
) -> AdversarialResult:
    """Attack a padded model with the embedding offset fixed at cfg.padding_offset."""
    view = _FixedOffsetView(padded_model, cfg.padding_offset)
    return craft_perturbation(view, cs, z_a, cfg, a=a)


def vanilla_attack(a: fdia.FalseDataVector, alpha: float) -> fdia.FalseDataVector:
    """Uniform rescaling alpha * a of an injection; no model knowledge used."""
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    return fdia.FalseDataVector(
        values=alpha * np.asarray(a.values, dtype=float),
        scenario=a.scenario,
        target_l1=alpha * a.target_l1,
    )


def craft_batch(
    model: neural.MlpModel,
    systems,
    measurements: np.ndarray,
    cfg: AttackConfig,
) -> list[AdversarialResult]:
    """Lockstep crafting for many rows (one constraint system per row).

    Network passes run batched over the still-active rows; per-row nullspace
    projections are applied individually. Semantics per row match
    craft_perturbation up to floating point accumulation order.
    """
    z = np.asarray(measurements, dtype=float)
    if z.ndim != 2:
        raise ValueError("measurements must be a (count, m) block")
    count, m = z.shape
    systems = list(systems)
    if len(systems) != count:
        raise ValueError("need one constraint system per row")
    v = np.zeros_like(z)
    labels = neural.classify(model, z)
    active = labels == FALSE_LABEL
    iterations = np.zeros(count, dtype=int)
    reasons = np.array(["already-normal"] * count, dtype=object)
    success = ~active
    for iteration in range(1, cfg.max_iters + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        grads = neural.escape_gradient_batch(
            model, z[idx] + v[idx], np.full(idx.size, FALSE_LABEL)
        )
        for row, g in zip(idx, grads):
            step = constrained_ascent_direction(systems[row], g)
            peak = float(np.abs(step).max())
            if peak == 0.0:
                active[row] = False
                reasons[row] = "zero-gradient"
                continue
            v[row] += cfg.size * (step / peak)
            iterations[row] = iteration
        idx = np.flatnonzero(active)
        if idx.size:
            now_normal = neural.classify(model, z[idx] + v[idx]) == NORMAL_LABEL
            done = idx[now_normal]
            active[done] = False
            success[done] = True
            reasons[done] = "classified-normal"
    still = np.flatnonzero(active)
    reasons[still] = "max-iters"
    return [
        AdversarialResult(v=v[i].copy(), success=bool(success[i]), iterations=int(iterations[i]),
                          a_hat=v[i].copy(), reason=str(reasons[i]))
        for i in range(count)
    ]
