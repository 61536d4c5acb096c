"""First-order adversarial attacks with optional logit scaling.

The PGD loop records, for every example, a full prediction-correctness
trace plus the number of iterations survived before the first label flip
(`kappa`). Downstream consumers: instance-reweighted training reads kappa,
the all-iterates verdict reads the trace, and plain robust accuracy reads
the returned max-loss points.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .datasets import DomainBox
from .errors import CapabilityError, ContractError, ParameterError, ParseError, ShapeError
from .model import MlpParams, forward_logits, predict
from .tensor import Tape, Tensor, backward, scaled_softmax_cross_entropy, sum_all


@dataclass(frozen=True)
class AttackConfig:
    """Everything that defines one PGD-family attack.

    epsilon and step_size are in input units; alpha is the positive scale
    multiplied into the logits by the crafting loss (1 = vanilla PGD).
    """

    epsilon: float
    steps: int
    step_size: float
    restarts: int = 1
    alpha: float = 1.0
    random_start: bool = False
    clip_to_domain: bool = True

    def __post_init__(self):
        object.__setattr__(self, "epsilon", float(self.epsilon))
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "step_size", float(self.step_size))
        object.__setattr__(self, "restarts", int(self.restarts))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "random_start", bool(self.random_start))
        object.__setattr__(self, "clip_to_domain", bool(self.clip_to_domain))
        if not (np.isfinite(self.epsilon) and self.epsilon > 0):
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if not (np.isfinite(self.step_size) and self.step_size > 0):
            raise ParameterError(f"step_size must be > 0, got {self.step_size}")
        if self.steps < 1:
            raise ParameterError(f"steps must be >= 1, got {self.steps}")
        if self.restarts < 1:
            raise ParameterError(f"restarts must be >= 1, got {self.restarts}")
        if not (np.isfinite(self.alpha) and self.alpha > 0):
            raise ParameterError(f"alpha must be > 0, got {self.alpha}")

    def to_kv(self, sep: str = "\n") -> str:
        """Flat `key = value` block, embeddable in experiment config files."""
        parts = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, bool):
                text = "true" if v else "false"
            elif isinstance(v, float):
                text = format(v, ".17g")
            else:
                text = str(v)
            parts.append(f"{f.name} = {text}")
        return sep.join(parts)

    @classmethod
    def from_mapping(cls, mapping) -> "AttackConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in dict(mapping).items():
            key = key.strip()
            if key not in known:
                raise ParseError(f"unknown attack config key {key!r}")
            raw = str(raw).strip()
            try:
                if known[key].type == "bool":
                    if raw.lower() not in ("true", "false"):
                        raise ValueError(f"expected true/false, got {raw!r}")
                    kwargs[key] = raw.lower() == "true"
                elif known[key].type == "int":
                    kwargs[key] = int(raw)
                else:
                    kwargs[key] = float(raw)
            except ValueError as e:
                raise ParseError(f"bad value for {key!r}: {e}") from None
        missing = [k for k in ("epsilon", "steps", "step_size") if k not in kwargs]
        if missing:
            raise ParseError(f"attack config missing required keys {missing}")
        return cls(**kwargs)

    @classmethod
    def from_kv(cls, text: str) -> "AttackConfig":
        mapping = {}
        for lineno, line in enumerate(text.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ParseError(f"expected 'key = value', got {line!r}", line=lineno)
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
        return cls.from_mapping(mapping)


def pgd20_config(epsilon: float = 0.031) -> AttackConfig:
    """20 iterations, step epsilon/4, one random start."""
    return AttackConfig(epsilon=epsilon, steps=20, step_size=epsilon / 4, restarts=1, random_start=True)


def pgd_plus_config(epsilon: float = 0.031) -> AttackConfig:
    """40 iterations, step 0.01, 5 random restarts; pair with the all-iterates verdict."""
    return AttackConfig(epsilon=epsilon, steps=40, step_size=0.01, restarts=5, random_start=True)


def pgd200_config(epsilon: float = 0.031) -> AttackConfig:
    """200 iterations with a fine step.

    The fine step size is not pinned anywhere authoritative; epsilon/100 is
    this lab's choice.
    """
    return AttackConfig(epsilon=epsilon, steps=200, step_size=epsilon / 100, restarts=1, random_start=True)


ATTACK_PRESETS = {
    "pgd20": pgd20_config,
    "pgdplus": pgd_plus_config,
    "pgd200": pgd200_config,
}


@dataclass(frozen=True)
class AttackResult:
    """What one batched attack produced.

    correct_trace[i, r, t] is prediction correctness for example i at
    restart r's iterate t (t = 0 is the, possibly noised, start point).
    kappa counts from the natural point: kappa[i] = 0 means naturally
    misclassified, kappa[i] = steps means never flipped on the first
    restart. final_correct is correctness at the returned max-loss point.
    """

    adversarial: Tensor
    kappa: np.ndarray
    correct_trace: np.ndarray
    natural_correct: np.ndarray
    final_correct: np.ndarray


def _project(x: np.ndarray, x0: np.ndarray, epsilon: float, domain: DomainBox | None) -> np.ndarray:
    out = np.clip(x, x0 - epsilon, x0 + epsilon)
    if domain is not None:
        out = np.clip(out, domain.lower_array(), domain.upper_array())
    return out


def project_linf(x: Tensor, x0: Tensor, epsilon: float, domain: DomainBox | None = None) -> Tensor:
    """Clamp x into the epsilon-ball around x0, then into the domain box."""
    if x.shape != x0.shape:
        raise ShapeError(f"project_linf shapes differ: {x.shape} vs {x0.shape}")
    eps = float(epsilon)
    if not (np.isfinite(eps) and eps > 0):
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    return Tensor._wrap(_project(x.data, x0.data, eps, domain))


class _PgdRun(NamedTuple):
    best_x: np.ndarray
    best_loss: np.ndarray
    trace: np.ndarray
    natural_correct: np.ndarray
    kappa: np.ndarray
    first_traj: np.ndarray | None


def _run_pgd(
    model: MlpParams,
    x0: Tensor,
    y: np.ndarray,
    config: AttackConfig,
    domain: DomainBox | None,
    seed: int,
    keep_first_trajectory: bool = False,
) -> _PgdRun:
    x0d = x0.data
    if x0d.ndim != 2:
        raise ShapeError(f"attack input must be (n, d), got {x0d.shape}")
    n, d = x0d.shape
    y = np.asarray(y)
    T, R = config.steps, config.restarts
    eps = config.epsilon
    dom = domain if config.clip_to_domain else None
    rng = np.random.default_rng(seed)

    natural_correct = predict(model, x0) == y
    trace = np.zeros((n, R, T + 1), dtype=bool)
    best_loss = np.full(n, -np.inf)
    best_x = x0d.copy()
    traj = np.empty((T + 1, n, d)) if keep_first_trajectory else None

    for r in range(R):
        if config.random_start:
            x = _project(x0d + rng.uniform(-eps, eps, size=(n, d)), x0d, eps, dom)
        else:
            x = x0d.copy()
        for t in range(T + 1):
            if traj is not None and r == 0:
                traj[t] = x
            tape = Tape()
            xt = Tensor._wrap(x)
            tape.watch(xt)
            logits = forward_logits(model, xt, tape)
            losses = scaled_softmax_cross_entropy(logits, y, config.alpha, tape)
            trace[:, r, t] = np.argmax(logits.data, axis=1) == y
            lvals = losses.data
            # Strict > keeps the earliest (restart-major, then iteration)
            # max-loss iterate on ties.
            better = lvals > best_loss
            if better.any():
                best_loss = np.where(better, lvals, best_loss)
                best_x[better] = x[better]
            if t == T:
                break
            grad = backward(tape, sum_all(losses, tape)).wrt(xt).data
            x = _project(x + config.step_size * np.sign(grad), x0d, eps, dom)

    # kappa counts from the natural point regardless of random starts, then
    # follows the first restart's iterates.
    kappa_trace = np.concatenate([natural_correct[:, None], trace[:, 0, 1:]], axis=1)
    kappa = count_kappa(kappa_trace, T)
    return _PgdRun(best_x, best_loss, trace, natural_correct, kappa, traj)


def pgd_attack(
    model: MlpParams,
    x0: Tensor,
    y,
    config: AttackConfig,
    *,
    domain: DomainBox | None = None,
    seed: int = 0,
) -> AttackResult:
    """Sign-gradient PGD in the l-inf ball, batched over examples.

    Per restart: start at x0 (plus projected uniform noise when
    random_start), take `steps` fixed-size sign steps on the alpha-scaled
    cross-entropy, projecting after each. The returned point per example is
    the max-loss iterate over every restart and iteration.
    """
    run = _run_pgd(model, x0, np.asarray(y), config, domain, seed)
    adversarial = Tensor._wrap(run.best_x)
    final_correct = predict(model, adversarial) == np.asarray(y)
    return AttackResult(
        adversarial=adversarial,
        kappa=run.kappa,
        correct_trace=run.trace,
        natural_correct=run.natural_correct,
        final_correct=final_correct,
    )


def count_kappa(correct_trace, steps: int) -> np.ndarray:
    """Iterations survived before the first flip.

    correct_trace is (n, steps+1) booleans where column 0 is the natural
    point. Returns the index of the first False per row (0 = naturally
    misclassified), or `steps` for rows that never flip.
    """
    tr = np.asarray(correct_trace, dtype=bool)
    if tr.ndim != 2 or tr.shape[1] != steps + 1:
        raise ContractError(
            f"trace must cover iterations 0..{steps} per example, got shape {tr.shape}"
        )
    wrong = ~tr
    first = wrong.argmax(axis=1)
    return np.where(wrong.any(axis=1), first, steps).astype(np.int64)


def friendly_adversarial_search(
    model: MlpParams,
    x0: Tensor,
    y,
    config: AttackConfig,
    slack_steps: int = 0,
    *,
    domain: DomainBox | None = None,
    seed: int = 0,
) -> Tensor:
    """Early-stopped PGD: per example, return the iterate `slack_steps`
    after the first misclassified one on the first restart.

    At slack 0 that is the first iterate whose loss margin over the
    best competing label turned positive. Examples that never flip fall
    back to the plain max-loss attack output.
    """
    if int(slack_steps) < 0:
        raise ParameterError(f"slack_steps must be >= 0, got {slack_steps}")
    yv = np.asarray(y)
    run = _run_pgd(model, x0, yv, config, domain, seed, keep_first_trajectory=True)
    wrong = ~run.trace[:, 0, :]
    flipped = wrong.any(axis=1)
    t_first = wrong.argmax(axis=1)
    chosen = np.minimum(t_first + int(slack_steps), config.steps)
    out = run.best_x.copy()
    idx = np.nonzero(flipped)[0]
    if idx.size:
        out[idx] = run.first_traj[chosen[idx], idx]
    return Tensor._wrap(out)


def pgd_plus_verdict(
    model: MlpParams,
    x0: Tensor,
    y,
    config: AttackConfig,
    *,
    domain: DomainBox | None = None,
    seed: int = 0,
) -> np.ndarray:
    """All-iterates verdict: robust-correct iff correct at the natural point
    and at every post-step iterate of every restart (restarts x steps
    checks; 200 under the 40x5 configuration). One flip anywhere loses.
    """
    res = pgd_attack(model, x0, y, config, domain=domain, seed=seed)
    return res.natural_correct & res.correct_trace[:, :, 1:].all(axis=(1, 2))


def brute_force_attack(
    model: MlpParams,
    x0,
    y: int,
    epsilon: float,
    grid_resolution: int,
    *,
    domain: DomainBox | None = None,
) -> bool:
    """Exhaustive grid check of one low-dimensional point.

    Evaluates predict on the full G^d grid over the epsilon-ball (clipped
    to the domain), corners included; robust-correct iff correct at every
    grid point. Independent of any gradient machinery, so it serves as an
    oracle that PGD verdicts can be checked against.
    """
    point = np.asarray(x0.data if isinstance(x0, Tensor) else x0, dtype=np.float64).reshape(-1)
    d = point.size
    if d > 3:
        raise CapabilityError(f"brute force supports at most 3 dimensions, got {d}")
    G = int(grid_resolution)
    if G > 101:
        raise CapabilityError(f"grid resolution capped at 101 per axis, got {G}")
    if G < 2:
        raise ParameterError(f"need at least 2 grid points per axis, got {G}")
    eps = float(epsilon)
    if not (np.isfinite(eps) and eps > 0):
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    lo, hi = point - eps, point + eps
    if domain is not None:
        lo = np.maximum(lo, domain.lower_array())
        hi = np.minimum(hi, domain.upper_array())
    axes = [np.linspace(lo[j], hi[j], G) for j in range(d)]
    mesh = np.meshgrid(*axes, indexing="ij")
    grid = np.stack([m.reshape(-1) for m in mesh], axis=1)
    preds = predict(model, Tensor._wrap(grid))
    return bool(np.all(preds == int(y)))
