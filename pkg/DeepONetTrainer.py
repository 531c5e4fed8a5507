from dataclasses import dataclass, field, replace
import time

import numpy as np

from WSExceptions import ConfigException, DataException, DomainException, ShapeException, TrainingException
from DeepONet import Batch, DeepONetModel, deeponet_forward, loss_and_gradients, DEFAULT_P, DEFAULT_HIDDEN
from WoundGeometry import WoundGeometry, polygon_area
from BioModel import VariableParams
from CustomLogger import logger

LOSS_HEADER = 'epoch,train,val'

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 100
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    shuffle: bool = True
    p: int = DEFAULT_P
    hidden: tuple = DEFAULT_HIDDEN
    predict_batch: int = 10000

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ConfigException(argument=self.learning_rate, message="learning rate must be positive")
        for name in ('batch_size', 'epochs', 'p', 'predict_batch'):
            if int(getattr(self, name)) < 1:
                raise ConfigException(argument=getattr(self, name), message=f"{name} must be a positive integer")
        if self.epsilon <= 0.0:
            raise ConfigException(argument=self.epsilon, message="Adam epsilon must be positive")
        for name in ('beta1', 'beta2'):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ConfigException(argument=getattr(self, name), message=f"{name} must lie in [0, 1)")
        if not self.hidden or any(int(w) < 1 for w in self.hidden):
            raise ConfigException(argument=self.hidden, message="hidden layer widths must be positive")
        object.__setattr__(self, 'hidden', tuple(int(w) for w in self.hidden))

    def with_overrides(self, **overrides) -> 'TrainConfig':
        return replace(self, **overrides)

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0

    @classmethod
    def zeros(cls, parameters: list) -> 'AdamState':
        return cls([np.zeros_like(p) for p in parameters], [np.zeros_like(p) for p in parameters])

def adam_step(parameters: list, state: AdamState, gradients: list, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8) -> list:
    """Bias-corrected Adam update, applied to `parameters` in place."""
    if len(parameters) != len(gradients) or len(parameters) != len(state.m):
        raise ShapeException(argument=(len(parameters), len(gradients), len(state.m)), message="optimizer state does not match the parameters")
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(parameters, gradients, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeException(argument=(p.shape, g.shape), message="gradient shape mismatch")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / correction1) / (np.sqrt(v / correction2) + epsilon)
    return parameters

@dataclass
class LossHistory:
    epochs: list = field(default_factory=list)
    train: list = field(default_factory=list)
    val: list = field(default_factory=list)

    def append(self, epoch: int, train_loss: float, val_loss: float):
        self.epochs.append(epoch)
        self.train.append(train_loss)
        self.val.append(val_loss)

    def to_csv(self, path):
        with open(path, mode='w') as file:
            file.write(LOSS_HEADER + '\n')
            for row in zip(self.epochs, self.train, self.val):
                file.write(f"{row[0]},{float(row[1])!r},{float(row[2])!r}\n")

    @classmethod
    def from_csv(cls, path) -> 'LossHistory':
        history = cls()
        with open(path, mode='r') as file:
            lines = file.read().splitlines()
        if not lines or lines[0] != LOSS_HEADER:
            raise DataException(argument=path, message="not a loss history file")
        for line in lines[1:]:
            epoch, train_loss, val_loss = line.split(',')
            history.append(int(epoch), float(train_loss), float(val_loss))
        return history

def evaluate_loss(model: DeepONetModel, data: Batch, batch_size: int = 10000) -> float:
    """MSE over a full split, accumulated chunk by chunk in a fixed order."""
    if len(data) == 0:
        raise DataException(argument=0, message="cannot evaluate on an empty split")
    total = 0.0
    for start in range(0, len(data), batch_size):
        chunk = data.take(slice(start, start + batch_size))
        predicted = deeponet_forward(model, chunk.branch, chunk.trunk, chunk.extent)
        total += float(np.sum((predicted - chunk.target) ** 2))
    return total / (2 * len(data))

def train(model: DeepONetModel, train_set: Batch, val_set: Batch, config: TrainConfig):
    """
    Mini-batch Adam over `config.epochs` epochs with a seeded per-epoch shuffle.
    Returns the trained model (updated in place) and the loss history, whose
    epoch 0 holds the losses of the untrained model.
    """
    if len(train_set) == 0 or len(val_set) == 0:
        raise DataException(argument=(len(train_set), len(val_set)), message="training and validation splits must be non-empty")

    rng = np.random.default_rng(config.seed)
    parameters = model.parameters()
    state = AdamState.zeros(parameters)
    history = LossHistory()
    history.append(0, evaluate_loss(model, train_set), evaluate_loss(model, val_set))
    logger.info(f"epoch 0: train={history.train[-1]:.4e} val={history.val[-1]:.4e} ({len(train_set)}/{len(val_set)} records)")

    n = len(train_set)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        for start in range(0, n, config.batch_size):
            loss, gradients = loss_and_gradients(model, train_set.take(order[start:start + config.batch_size]))
            if not np.isfinite(loss):
                raise TrainingException(argument=f"epoch {epoch}", message="loss is not finite")
            adam_step(parameters, state, gradients, config.learning_rate, config.beta1, config.beta2, config.epsilon)
        history.append(epoch, evaluate_loss(model, train_set), evaluate_loss(model, val_set))
        if not np.isfinite(history.train[-1]):
            raise TrainingException(argument=f"epoch {epoch}", message="training loss diverged")
        message = f"epoch {epoch}: train={history.train[-1]:.4e} val={history.val[-1]:.4e}"
        if epoch % 10 == 0 or epoch == config.epochs:
            logger.info(message)
        else:
            logger.debug(message)
    return model, history

def warm_start(model_prev: DeepONetModel, reference: DeepONetModel | None = None) -> DeepONetModel:
    """Independent copy of a trained model; a fresh optimizer state is created by the next `train` call."""
    if reference is not None and reference.architecture() != model_prev.architecture():
        raise ShapeException(argument=(model_prev.architecture(), reference.architecture()), message="warm start needs identical architectures")
    logger.info("warm start from previously trained parameters")
    return model_prev.copy()

def field_inputs(var_params: VariableParams, geometry: WoundGeometry, times, points):
    """Raw branch/trunk rows for every (time, point) pair, time-major."""
    times = np.asarray(times, dtype=float).ravel()
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    x_l, y_l = geometry.extent
    tolerance = 1e-12 * max(x_l, y_l)
    if np.any(points < -tolerance) or np.any(points[:, 0] > x_l + tolerance) or np.any(points[:, 1] > y_l + tolerance):
        raise DomainException(argument=(x_l, y_l), message="prediction grid leaves the domain")
    n_rows = len(times) * len(points)
    trunk = np.empty((n_rows, 7))
    trunk[:, 0] = np.repeat(times, len(points))
    trunk[:, 1:3] = np.tile(points, (len(times), 1))
    trunk[:, 3:] = np.array(geometry.quadruple)
    branch = np.broadcast_to(var_params.as_array(), (n_rows, 5))
    return branch, trunk, np.array([x_l, y_l])

def predict_field(model: DeepONetModel, var_params: VariableParams, geometry: WoundGeometry, times, points,
                  batch_size: int = 10000):
    """Displacements (n_times, n_points, 2) on the undeformed grid and the evaluation wall-clock in seconds."""
    started = time.perf_counter()
    branch, trunk, extent = field_inputs(var_params, geometry, times, points)
    out = np.empty((len(trunk), 2))
    for start in range(0, len(trunk), batch_size):
        stop = start + batch_size
        out[start:stop] = deeponet_forward(model, branch[start:stop], trunk[start:stop], extent)
    seconds = time.perf_counter() - started
    return out.reshape(len(np.ravel(times)), -1, 2), seconds

def predict_rsaw(model: DeepONetModel, var_params: VariableParams, geometry: WoundGeometry, times, rim: np.ndarray,
                 batch_size: int = 10000) -> np.ndarray:
    """Surrogate RSAW series from the displaced undeformed rim polyline."""
    u, _ = predict_field(model, var_params, geometry, times, rim, batch_size)
    origin = np.zeros((1, 2))
    initial = polygon_area(np.vstack([origin, rim]))
    return np.array([polygon_area(np.vstack([origin, rim + u_t])) / initial for u_t in u])
