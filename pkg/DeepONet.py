from dataclasses import dataclass
from enum import Enum
import copy

import numpy as np
import yaml

from WSExceptions import ShapeException, DomainException, ConfigException, DataException
from BioModel import VARIABLE_RANGES
from CustomLogger import logger

MODEL_FORMAT = 'woundsurrogate-deeponet'
MODEL_VERSION = 1
DEFAULT_P = 50
DEFAULT_HIDDEN = (50, 50, 50)

class ShapeInput(Enum):
    """Where the wound-shape quadruple enters the operator network."""

    Off = 'none'
    Branch = 'branch'
    Trunk = 'trunk'

@dataclass(frozen=True)
class Ablation:
    shape_info: ShapeInput = ShapeInput.Trunk
    sine_aug: bool = True

    def __post_init__(self):
        if not isinstance(self.shape_info, ShapeInput):
            object.__setattr__(self, 'shape_info', ShapeInput(self.shape_info))

    @property
    def branch_width(self) -> int:
        return 9 if self.shape_info == ShapeInput.Branch else 5

    @property
    def trunk_width(self) -> int:
        return 7 if self.shape_info == ShapeInput.Trunk else 3

ABLATIONS = {
    'case1': Ablation(ShapeInput.Off, False),
    'case2': Ablation(ShapeInput.Branch, False),
    'case3': Ablation(ShapeInput.Trunk, False),
    'case4': Ablation(ShapeInput.Off, True),
    'final': Ablation(ShapeInput.Trunk, True),
}

@dataclass
class Batch:
    """
    Raw network inputs: branch (n, 5) patient parameters, trunk (n, 7) as
    (t, x, y, y_cut, x_m, y_m, x_cut), target (n, 2) displacements in cm,
    extent (n, 2) as (x_l, y_l).
    """

    branch: np.ndarray
    trunk: np.ndarray
    target: np.ndarray
    extent: np.ndarray

    def __len__(self):
        return len(self.branch)

    def take(self, index) -> 'Batch':
        return Batch(self.branch[index], self.trunk[index], self.target[index], self.extent[index])

def relu(x):
    return np.maximum(x, 0.0)

class MLP:
    """
    Fully connected network, ReLU on hidden layers and a linear output.
    Layers compute x @ W + b with W of shape (fan_in, fan_out).
    """

    def __init__(self, weights: list, biases: list):
        if len(weights) != len(biases) or not weights:
            raise ShapeException(argument=(len(weights), len(biases)), message="one bias per weight matrix required")
        for k, (W, b) in enumerate(zip(weights, biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ShapeException(argument=k, message="bias width does not match weight matrix")
            if k and weights[k - 1].shape[1] != W.shape[0]:
                raise ShapeException(argument=k, message="consecutive layer dimensions disagree")
        self.weights = [np.asarray(W, dtype=float) for W in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]

    @classmethod
    def initialise(cls, widths, rng: np.random.Generator) -> 'MLP':
        """He-uniform weights (limit sqrt(6 / fan_in)), zero biases."""
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            limit = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    def parameters(self) -> list:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def _check(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.widths[0]:
            raise ShapeException(argument=(x.shape[-1], self.widths[0]), message="input width mismatch")
        return x

    def forward(self, x) -> np.ndarray:
        a = self._check(x)
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ W + b
            if k < last:
                a = relu(a)
        return a

    def forward_cached(self, x):
        a = np.atleast_2d(self._check(x))
        inputs, preactivations = [], []
        last = len(self.weights) - 1
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(a)
            z = a @ W + b
            preactivations.append(z)
            a = relu(z) if k < last else z
        return a, (inputs, preactivations)

    def backward(self, cache, grad_out: np.ndarray) -> list:
        inputs, preactivations = cache
        grads = [None] * (2 * len(self.weights))
        delta = grad_out
        for k in reversed(range(len(self.weights))):
            grads[2 * k] = inputs[k].T @ delta
            grads[2 * k + 1] = delta.sum(axis=0)
            if k:
                delta = (delta @ self.weights[k].T) * (preactivations[k - 1] > 0.0)
        return grads

def mlp_forward(mlp: MLP, x) -> np.ndarray:
    return mlp.forward(x)

def _min_max(lo, hi):
    lo = np.asarray(lo, dtype=float)
    span = np.asarray(hi, dtype=float) - lo
    return lo, np.where(span > 0.0, span, 1.0)

@dataclass
class Normalization:
    """Min-max maps of the raw branch (5) and trunk (7) inputs onto [0, 1]."""

    branch_lo: np.ndarray
    branch_hi: np.ndarray
    trunk_lo: np.ndarray
    trunk_hi: np.ndarray

    @classmethod
    def from_trunk(cls, trunk: np.ndarray) -> 'Normalization':
        ranges = np.array(list(VARIABLE_RANGES.values()))
        trunk = np.asarray(trunk, dtype=float)
        if len(trunk) == 0:
            raise DataException(argument=0, message="cannot fit a normalization on an empty dataset")
        return cls(ranges[:, 0], ranges[:, 1], trunk.min(axis=0), trunk.max(axis=0))

    @classmethod
    def identity(cls) -> 'Normalization':
        return cls(np.zeros(5), np.ones(5), np.zeros(7), np.ones(7))

    def branch(self, x):
        lo, span = _min_max(self.branch_lo, self.branch_hi)
        return (np.asarray(x, dtype=float) - lo) / span

    def trunk(self, x):
        lo, span = _min_max(self.trunk_lo, self.trunk_hi)
        return (np.asarray(x, dtype=float) - lo) / span

def _sinpi(r):
    r = np.asarray(r, dtype=float)
    return np.where(r == np.round(r), 0.0, np.sin(np.pi * r))

def _cospi(r):
    r = np.asarray(r, dtype=float)
    return np.where(r - 0.5 == np.round(r - 0.5), 0.0, np.cos(np.pi * r))

def sine_factors(x, y, x_l, y_l):
    """Multipliers of (u1, u2); exact zeros on the boundaries where displacement is prescribed."""
    x_l = np.asarray(x_l, dtype=float)
    y_l = np.asarray(y_l, dtype=float)
    if np.any(x_l <= 0.0) or np.any(y_l <= 0.0):
        raise DomainException(argument=(x_l, y_l), message="domain extent must be positive")
    rx = np.asarray(x, dtype=float) / x_l
    ry = np.asarray(y, dtype=float) / y_l
    return _sinpi(rx) * _cospi(0.5 * ry), _sinpi(ry) * _cospi(0.5 * rx)

def sine_augment(u1_hat, u2_hat, x, y, x_l, y_l):
    s1, s2 = sine_factors(x, y, x_l, y_l)
    return u1_hat * s1, u2_hat * s2

def basis_combine(b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """(u1, u2) = (sum_i b_i c_i, sum_i b_{i+p} c_i) for branch output b (.., 2p), trunk output c (.., p)."""
    p = c.shape[-1]
    if b.shape[-1] != 2 * p:
        raise ShapeException(argument=(b.shape[-1], p), message="branch output must be twice the basis dimension")
    return np.stack([np.sum(b[..., :p] * c, axis=-1), np.sum(b[..., p:] * c, axis=-1)], axis=-1)

class DeepONetModel:
    """
    Branch/trunk operator network. The branch encodes the patient
    parameters, the trunk the space-time query and, depending on the
    ablation, the wound-shape quadruple. Normalization is part of the model.
    """

    def __init__(self, branch: MLP, trunk: MLP, p: int, ablation: Ablation, normalization: Normalization):
        if p < 1:
            raise ShapeException(argument=p, message="basis dimension must be at least one")
        if branch.widths[0] != ablation.branch_width:
            raise ShapeException(argument=(branch.widths[0], ablation.branch_width), message="branch input width does not match the ablation")
        if trunk.widths[0] != ablation.trunk_width:
            raise ShapeException(argument=(trunk.widths[0], ablation.trunk_width), message="trunk input width does not match the ablation")
        if branch.widths[-1] != 2 * p or trunk.widths[-1] != p:
            raise ShapeException(argument=(branch.widths[-1], trunk.widths[-1], p), message="output widths must be 2p and p")
        self.branch = branch
        self.trunk = trunk
        self.p = p
        self.ablation = ablation
        self.normalization = normalization

    @classmethod
    def create(cls, ablation: Ablation, normalization: Normalization, rng: np.random.Generator,
               p: int = DEFAULT_P, hidden=DEFAULT_HIDDEN) -> 'DeepONetModel':
        branch = MLP.initialise([ablation.branch_width, *hidden, 2 * p], rng)
        trunk = MLP.initialise([ablation.trunk_width, *hidden, p], rng)
        return cls(branch, trunk, p, ablation, normalization)

    def parameters(self) -> list:
        return self.branch.parameters() + self.trunk.parameters()

    def architecture(self) -> tuple:
        return (tuple(self.branch.widths), tuple(self.trunk.widths), self.p, self.ablation)

    def copy(self) -> 'DeepONetModel':
        return copy.deepcopy(self)

    def inputs(self, branch_raw, trunk_raw):
        branch_raw = np.atleast_2d(np.asarray(branch_raw, dtype=float))
        trunk_raw = np.atleast_2d(np.asarray(trunk_raw, dtype=float))
        if branch_raw.shape[-1] != 5 or trunk_raw.shape[-1] != 7:
            raise ShapeException(argument=(branch_raw.shape, trunk_raw.shape), message="raw inputs must be (n, 5) and (n, 7)")
        b = self.normalization.branch(branch_raw)
        t = self.normalization.trunk(trunk_raw)
        if self.ablation.shape_info == ShapeInput.Branch:
            return np.hstack([b, t[:, 3:]]), t[:, :3]
        if self.ablation.shape_info == ShapeInput.Trunk:
            return b, t
        return b, t[:, :3]

def _factors(model: DeepONetModel, trunk_raw, extent, n):
    if not model.ablation.sine_aug:
        return np.ones(n), np.ones(n)
    if extent is None:
        raise ConfigException(argument='extent', message="sine augmentation needs the domain extent")
    extent = np.broadcast_to(np.asarray(extent, dtype=float), (n, 2))
    trunk_raw = np.atleast_2d(trunk_raw)
    return sine_factors(trunk_raw[:, 1], trunk_raw[:, 2], extent[:, 0], extent[:, 1])

def deeponet_forward(model: DeepONetModel, branch_raw, trunk_raw, extent=None) -> np.ndarray:
    """Displacements (n, 2) in cm for raw (un-normalized) inputs."""
    branch_in, trunk_in = model.inputs(branch_raw, trunk_raw)
    u_hat = basis_combine(model.branch.forward(branch_in), model.trunk.forward(trunk_in))
    s1, s2 = _factors(model, trunk_raw, extent, len(u_hat))
    return np.column_stack([u_hat[:, 0] * s1, u_hat[:, 1] * s2])

def loss_and_gradients(model: DeepONetModel, batch: Batch):
    """Mean squared error over records and both components, and its gradient per parameter."""
    if len(batch) == 0:
        raise DataException(argument=0, message="empty batch")
    branch_in, trunk_in = model.inputs(batch.branch, batch.trunk)
    b, branch_cache = model.branch.forward_cached(branch_in)
    c, trunk_cache = model.trunk.forward_cached(trunk_in)
    p = model.p
    s1, s2 = _factors(model, batch.trunk, batch.extent, len(b))
    u1 = np.sum(b[:, :p] * c, axis=1) * s1
    u2 = np.sum(b[:, p:] * c, axis=1) * s2
    r1 = u1 - batch.target[:, 0]
    r2 = u2 - batch.target[:, 1]
    n = len(b)
    loss = float((np.sum(r1 * r1) + np.sum(r2 * r2)) / (2 * n))
    g1 = (r1 / n) * s1
    g2 = (r2 / n) * s2
    grad_b = np.hstack([g1[:, None] * c, g2[:, None] * c])
    grad_c = g1[:, None] * b[:, :p] + g2[:, None] * b[:, p:]
    return loss, model.branch.backward(branch_cache, grad_b) + model.trunk.backward(trunk_cache, grad_c)

def _encode(array) -> dict:
    array = np.asarray(array, dtype=float)
    return {'shape': list(array.shape), 'data': [float(v).hex() for v in array.ravel()]}

def _decode(entry) -> np.ndarray:
    return np.array([float.fromhex(v) for v in entry['data']], dtype=float).reshape(entry['shape'])

def _encode_mlp(mlp: MLP) -> dict:
    return {'weights': [_encode(W) for W in mlp.weights], 'biases': [_encode(b) for b in mlp.biases]}

def _decode_mlp(entry) -> MLP:
    return MLP([_decode(W) for W in entry['weights']], [_decode(b) for b in entry['biases']])

def save_model(model: DeepONetModel, path):
    document = {
        'format': MODEL_FORMAT,
        'version': MODEL_VERSION,
        'p': model.p,
        'ablation': {'shape_info': model.ablation.shape_info.value, 'sine_aug': model.ablation.sine_aug},
        'widths': {'branch': model.branch.widths, 'trunk': model.trunk.widths},
        'normalization': {name: _encode(getattr(model.normalization, name))
                          for name in ('branch_lo', 'branch_hi', 'trunk_lo', 'trunk_hi')},
        'branch': _encode_mlp(model.branch),
        'trunk': _encode_mlp(model.trunk),
    }
    with open(path, mode='w') as file:
        yaml.safe_dump(document, file, sort_keys=True, default_flow_style=None, width=120)
    logger.debug(f"model saved to {path}")

def load_model(path) -> DeepONetModel:
    loader = getattr(yaml, 'CSafeLoader', yaml.SafeLoader)
    with open(path, mode='r') as file:
        document = yaml.load(file, Loader=loader)
    if not isinstance(document, dict) or document.get('format') != MODEL_FORMAT:
        raise DataException(argument=path, message="not a model file")
    if document.get('version') != MODEL_VERSION:
        raise DataException(argument=document.get('version'), message="unsupported model file version")
    ablation = Ablation(ShapeInput(document['ablation']['shape_info']), bool(document['ablation']['sine_aug']))
    normalization = Normalization(**{name: _decode(entry) for name, entry in document['normalization'].items()})
    return DeepONetModel(_decode_mlp(document['branch']), _decode_mlp(document['trunk']), int(document['p']),
                         ablation, normalization)
