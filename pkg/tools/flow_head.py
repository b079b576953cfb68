"""Per-token flow-matching generation head.

OT-path interpolation, velocity targets, classifier-free guidance and an
Euler sampler, plus a small tanh MLP with analytic gradients so the whole
head can be trained end to end on a toy 2-D problem.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from errors import ConfigurationError, NumericError, PreconditionError, ShapeError

DEFAULT_SAMPLER_STEPS = 32
DEFAULT_CFG_WEIGHT = 2.0
DEFAULT_COND_DROPOUT = 0.1
DEFAULT_HIDDEN = (64, 64, 64)

logger = logging.getLogger(__name__)

VelocityFn = Callable[[np.ndarray, float], np.ndarray]


@dataclass
class FlowSample:
    """Noise draw x0, data latent x1 and time t (scalar or one per row)."""

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=np.float64)
        self.x1 = np.asarray(self.x1, dtype=np.float64)
        self.t = np.asarray(self.t, dtype=np.float64)
        if self.x0.shape != self.x1.shape:
            raise ShapeError(f"x0 {self.x0.shape} and x1 {self.x1.shape} differ")
        if np.any(self.t < 0.0) or np.any(self.t > 1.0):
            raise PreconditionError("Flow time t must lie in [0, 1]")
        if not (np.all(np.isfinite(self.x0)) and np.all(np.isfinite(self.x1))):
            raise PreconditionError("Flow sample endpoints must be finite")

    def _t_column(self) -> np.ndarray:
        # Broadcast per-row times against (B, d) endpoints
        if self.t.ndim == 1 and self.x0.ndim == 2:
            return self.t[:, None]
        return self.t


@dataclass(frozen=True)
class GuidanceConfig:
    cfg_weight: float = DEFAULT_CFG_WEIGHT
    cond_dropout_prob: float = DEFAULT_COND_DROPOUT
    steps: int = DEFAULT_SAMPLER_STEPS

    def validate(self) -> list[str]:
        problems = []
        if self.cfg_weight < 0:
            problems.append(f"CFG weight must be >= 0, got {self.cfg_weight}")
        if not 0.0 <= self.cond_dropout_prob <= 1.0:
            problems.append(f"Condition dropout must be in [0, 1], got {self.cond_dropout_prob}")
        if self.steps < 1:
            problems.append(f"Sampler steps must be >= 1, got {self.steps}")
        return problems


def ot_interpolate(sample: FlowSample) -> np.ndarray:
    t = sample._t_column()
    return (1.0 - t) * sample.x0 + t * sample.x1


def velocity_target(sample: FlowSample) -> np.ndarray:
    return sample.x1 - sample.x0


def fm_loss(predicted_velocity: np.ndarray, sample: FlowSample) -> float:
    """Mean squared error against the OT velocity target, over all elements."""
    predicted = np.asarray(predicted_velocity, dtype=np.float64)
    target = velocity_target(sample)
    if predicted.shape != target.shape:
        raise ShapeError(f"Predicted velocity {predicted.shape} vs target {target.shape}")
    return float(np.mean((predicted - target) ** 2))


def cfg_velocity(v_cond: np.ndarray, v_uncond: np.ndarray, w: float) -> np.ndarray:
    v_cond = np.asarray(v_cond, dtype=np.float64)
    v_uncond = np.asarray(v_uncond, dtype=np.float64)
    return v_uncond + w * (v_cond - v_uncond)


def _check_prob(prob: float) -> None:
    if not 0.0 <= prob <= 1.0:
        raise ConfigurationError(f"Dropout probability must be in [0, 1], got {prob}")


def drop_condition(rng: np.random.Generator, prob: float = DEFAULT_COND_DROPOUT) -> bool:
    _check_prob(prob)
    return bool(rng.random() < prob)


def drop_condition_mask(rng: np.random.Generator, prob: float, size: int) -> np.ndarray:
    """Vectorised drop_condition: one boolean per batch row."""
    _check_prob(prob)
    return rng.random(size) < prob


def euler_sample(velocity_fn: VelocityFn, x0: np.ndarray, steps: int = DEFAULT_SAMPLER_STEPS) -> np.ndarray:
    """Integrate dx/dt = v(x, t) from t=0 to t=1 with uniform Euler steps.

    Raises:
        PreconditionError: If steps < 1
        NumericError: If the velocity field returns non-finite values
    """
    if steps < 1:
        raise PreconditionError(f"Euler sampler needs at least one step, got {steps}")
    x = np.array(x0, dtype=np.float64, copy=True)
    dt = 1.0 / steps
    for k in range(steps):
        v = np.asarray(velocity_fn(x, k * dt), dtype=np.float64)
        if not np.all(np.isfinite(v)):
            raise NumericError("velocity field returned non-finite values", step=k)
        x = x + dt * v
    return x


@dataclass
class VelocityNet:
    """MLP (x_t, t, condition) -> velocity with tanh hidden layers and a linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    data_dim: int
    cond_dim: int

    @property
    def input_dim(self) -> int:
        return self.data_dim + 1 + self.cond_dim

    @property
    def num_layers(self) -> int:
        return len(self.weights)

    def validate(self) -> list[str]:
        problems = []
        if len(self.weights) != len(self.biases) or not self.weights:
            problems.append(f"{len(self.weights)} weight matrices but {len(self.biases)} bias vectors")
            return problems
        expected_in = self.input_dim
        for index, (weight, bias) in enumerate(zip(self.weights, self.biases)):
            if weight.ndim != 2 or weight.shape[0] != expected_in:
                problems.append(f"Layer {index}: weight {weight.shape} does not take {expected_in} inputs")
            if bias.shape != (weight.shape[-1],):
                problems.append(f"Layer {index}: bias {bias.shape} does not match weight {weight.shape}")
            if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
                problems.append(f"Layer {index}: non-finite parameters")
            expected_in = weight.shape[-1]
        if expected_in != self.data_dim:
            problems.append(f"Output layer produces {expected_in} values, expected {self.data_dim}")
        return problems

    def parameters(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def zeros_like(self) -> "VelocityNet":
        return VelocityNet(
            [np.zeros_like(w) for w in self.weights],
            [np.zeros_like(b) for b in self.biases],
            self.data_dim,
            self.cond_dim,
        )

    def copy(self) -> "VelocityNet":
        return VelocityNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.data_dim,
            self.cond_dim,
        )


def init_velocity_net(
    data_dim: int,
    cond_dim: int,
    rng: np.random.Generator,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
) -> VelocityNet:
    """LeCun-normal weights, zero biases."""
    sizes = [data_dim + 1 + cond_dim, *hidden, data_dim]
    weights = [rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in) for fan_in, fan_out in zip(sizes, sizes[1:])]
    biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
    return VelocityNet(weights, biases, data_dim, cond_dim)


def _as_batch(x_t, t, condition, net: VelocityNet):
    x_t = np.asarray(x_t, dtype=np.float64)
    single = x_t.ndim == 1
    x_t = np.atleast_2d(x_t)
    batch = x_t.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1, 1), (batch, 1))
    condition = np.atleast_2d(np.asarray(condition, dtype=np.float64))
    if condition.shape[0] == 1 and batch > 1:
        condition = np.broadcast_to(condition, (batch, condition.shape[1]))
    if x_t.shape[1] != net.data_dim:
        raise ShapeError(f"Layer 0: x_t has width {x_t.shape[1]}, net expects {net.data_dim}")
    if condition.shape != (batch, net.cond_dim):
        raise ShapeError(f"Layer 0: condition {condition.shape}, net expects ({batch}, {net.cond_dim})")
    return np.concatenate([x_t, t, condition], axis=1), single


def _forward_activations(net: VelocityNet, inputs: np.ndarray) -> list[np.ndarray]:
    activations = [inputs]
    h = inputs
    for index, (weight, bias) in enumerate(zip(net.weights, net.biases)):
        if h.shape[1] != weight.shape[0]:
            raise ShapeError(f"Layer {index}: input width {h.shape[1]} vs weight {weight.shape}")
        a = h @ weight + bias
        h = a if index == net.num_layers - 1 else np.tanh(a)
        activations.append(h)
    return activations


def velocity_net_forward(net: VelocityNet, x_t: np.ndarray, t, condition: np.ndarray) -> np.ndarray:
    """Velocity for one vector (d,) or a batch (B, d)."""
    inputs, single = _as_batch(x_t, t, condition, net)
    out = _forward_activations(net, inputs)[-1]
    return out[0] if single else out


@dataclass
class FlowBatch:
    """Training batch: endpoints, per-row times and (possibly nulled) conditions."""

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray
    condition: np.ndarray

    def as_sample(self) -> FlowSample:
        return FlowSample(self.x0, self.x1, self.t)


def velocity_net_backward(net: VelocityNet, batch: FlowBatch) -> tuple[float, VelocityNet]:
    """fm_loss of the net on a batch and its exact gradient for every parameter."""
    sample = batch.as_sample()
    x_t = ot_interpolate(sample)
    target = velocity_target(sample)
    inputs, _ = _as_batch(x_t, sample.t, batch.condition, net)
    activations = _forward_activations(net, inputs)
    output = activations[-1]
    loss = float(np.mean((output - target) ** 2))

    grads = net.zeros_like()
    delta = 2.0 * (output - target) / output.size
    for index in reversed(range(net.num_layers)):
        h_in = activations[index]
        grads.weights[index] = h_in.T @ delta
        grads.biases[index] = delta.sum(axis=0)
        if index:
            delta = (delta @ net.weights[index].T) * (1.0 - h_in**2)
    return loss, grads


def batch_fm_loss(net: VelocityNet, batch: FlowBatch) -> float:
    sample = batch.as_sample()
    predicted = velocity_net_forward(net, ot_interpolate(sample), sample.t, batch.condition)
    return fm_loss(predicted, sample)


def guided_sample(
    net: VelocityNet,
    condition: np.ndarray,
    x0: np.ndarray,
    steps: int = DEFAULT_SAMPLER_STEPS,
    cfg_weight: float = DEFAULT_CFG_WEIGHT,
) -> np.ndarray:
    """Euler sampling with CFG between the given condition and the null (all-zero) condition."""
    condition = np.asarray(condition, dtype=np.float64)
    null = np.zeros_like(condition)

    def velocity_fn(x, t):
        v_cond = velocity_net_forward(net, x, t, condition)
        v_uncond = velocity_net_forward(net, x, t, null)
        return cfg_velocity(v_cond, v_uncond, cfg_weight)

    return euler_sample(velocity_fn, x0, steps)


class Adam:
    """Adam optimizer updating a VelocityNet in place.

    Keeps exponential moving averages of each gradient (m, decay beta1)
    and squared gradient (v, decay beta2). Both start at zero, so step t
    divides them by (1 - beta^t) before the update

        param -= learning_rate * m_hat / (sqrt(v_hat) + eps)

    which makes the first step move each parameter by about learning_rate
    in the direction opposite its gradient's sign.
    """

    def __init__(self, net: VelocityNet, learning_rate: float = 3e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = [np.zeros_like(p) for p in net.parameters()]
        self._v = [np.zeros_like(p) for p in net.parameters()]

    def step(self, net: VelocityNet, grads: VelocityNet) -> None:
        self.step_count += 1
        correction1 = 1.0 - self.beta1**self.step_count
        correction2 = 1.0 - self.beta2**self.step_count
        for param, grad, m, v in zip(net.parameters(), grads.parameters(), self._m, self._v):
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad**2
            param -= self.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + self.eps)


TOY_CENTERS = np.array([[4.0, 4.0], [-4.0, 4.0], [-4.0, -4.0], [4.0, -4.0]])


def make_toy_dataset(
    rng: np.random.Generator, size: int, spread: float = 0.1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Conditional 2-D Gaussian clusters.

    Returns:
        (points (size, 2), one-hot conditions (size, 4), cluster labels (size,))
    """
    labels = rng.integers(0, len(TOY_CENTERS), size=size)
    points = TOY_CENTERS[labels] + spread * rng.standard_normal((size, 2))
    conditions = np.eye(len(TOY_CENTERS))[labels]
    return points, conditions, labels


def make_flow_batch(
    rng: np.random.Generator, size: int, spread: float, cond_dropout_prob: float
) -> FlowBatch:
    x1, conditions, _ = make_toy_dataset(rng, size, spread)
    x0 = rng.standard_normal(x1.shape)
    t = rng.random(size)
    dropped = drop_condition_mask(rng, cond_dropout_prob, size)
    conditions = np.where(dropped[:, None], 0.0, conditions)
    return FlowBatch(x0, x1, t, conditions)


@dataclass
class FlowDemoConfig:
    train_steps: int = 2000
    batch_size: int = 256
    learning_rate: float = 3e-3
    hidden: tuple = DEFAULT_HIDDEN
    spread: float = 0.1
    eval_size: int = 1024
    log_every: int = 100
    samples_per_cluster: int = 8
    guidance: GuidanceConfig = field(default_factory=GuidanceConfig)

    def validate(self) -> list[str]:
        problems = list(self.guidance.validate())
        for name in ("train_steps", "batch_size", "eval_size", "log_every", "samples_per_cluster"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0:
            problems.append(f"learning_rate must be positive, got {self.learning_rate}")
        return problems


def train_toy_flow(
    config: FlowDemoConfig,
    rng: np.random.Generator,
    logger: Optional[logging.Logger] = None,
) -> dict:
    """Train the velocity net on the toy clusters and draw guided samples.

    Losses are reported on a fixed, fully conditioned held-out batch.
    """
    log = logger or logging.getLogger(__name__)
    problems = config.validate()
    if problems:
        raise ConfigurationError("; ".join(problems))

    net = init_velocity_net(2, len(TOY_CENTERS), rng, config.hidden)
    optimizer = Adam(net, config.learning_rate)
    held_out = make_flow_batch(rng, config.eval_size, config.spread, 0.0)
    initial_loss = batch_fm_loss(net, held_out)
    log.info(f"Initial held-out fm_loss: {initial_loss:.4f}")

    history = [{"step": 0, "fm_loss": initial_loss}]
    for step in range(1, config.train_steps + 1):
        batch = make_flow_batch(rng, config.batch_size, config.spread, config.guidance.cond_dropout_prob)
        loss, grads = velocity_net_backward(net, batch)
        if not np.isfinite(loss):
            raise NumericError("training loss is not finite", step=step)
        optimizer.step(net, grads)
        if step % config.log_every == 0 or step == config.train_steps:
            held = batch_fm_loss(net, held_out)
            history.append({"step": step, "fm_loss": held})
            log.debug(f"step {step}: train {loss:.4f}, held-out {held:.4f}")

    final_loss = history[-1]["fm_loss"]
    log.info(f"Final held-out fm_loss: {final_loss:.4f} ({initial_loss / max(final_loss, 1e-12):.1f}x lower)")

    samples = []
    for label, center in enumerate(TOY_CENTERS):
        condition = np.eye(len(TOY_CENTERS))[label]
        x0 = rng.standard_normal((config.samples_per_cluster, 2))
        points = guided_sample(net, condition, x0, config.guidance.steps, config.guidance.cfg_weight)
        samples.append(
            {
                "cluster": label,
                "center": center.tolist(),
                "points": points.tolist(),
                "mean_distance": float(np.mean(np.linalg.norm(points - center, axis=1))),
            }
        )

    return {
        "config": asdict(config),
        "log": history,
        "initial_loss": initial_loss,
        "final_loss": final_loss,
        "samples": samples,
    }
