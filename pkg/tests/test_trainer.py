import numpy as np
import pytest

from WSExceptions import ConfigException, DataException, DomainException, ShapeException
from WoundGeometry import WoundGeometry, ShapeKind
from BioModel import VariableParams, VARIABLE_RANGES
from DeepONet import ABLATIONS, Batch, DeepONetModel, Normalization, deeponet_forward
from DeepONetTrainer import (TrainConfig, AdamState, LossHistory, adam_step, evaluate_loss, train, warm_start,
                             predict_field, predict_rsaw)

GEOMETRY = WoundGeometry(ShapeKind.Ellipse, 2.0, 1.0)

def inputs(rng, n, geometry=GEOMETRY):
    lo = np.array([lo for lo, _ in VARIABLE_RANGES.values()])
    hi = np.array([hi for _, hi in VARIABLE_RANGES.values()])
    x_l, y_l = geometry.extent
    trunk = np.column_stack([rng.uniform(0, 100, n), rng.uniform(0, x_l, n), rng.uniform(0, y_l, n),
                             np.tile(geometry.quadruple, (n, 1))])
    return rng.uniform(lo, hi, (n, 5)), trunk, np.tile(geometry.extent, (n, 1))

def realizable(seed, n, p=8, hidden=(16, 16)):
    """Targets produced by a fixed network of the trained architecture."""
    rng = np.random.default_rng(seed)
    branch, trunk, extent = inputs(rng, n)
    normalization = Normalization.from_trunk(trunk)
    target_model = DeepONetModel.create(ABLATIONS['final'], normalization, rng, p=p, hidden=hidden)
    target_model.branch.weights[-1] *= 3.0
    target_model.branch.biases[-1] += 0.5
    target = deeponet_forward(target_model, branch, trunk, extent)
    return Batch(branch, trunk, target, extent), normalization

def test_adam_scalar_step():
    theta = np.array([0.0])
    state = AdamState.zeros([theta])
    adam_step([theta], state, [np.array([1.0])], 1e-3)
    assert state.step == 1
    assert theta[0] == pytest.approx(-0.001, rel=1e-7)

def test_adam_zero_gradient_keeps_parameters():
    params = [np.array([[1.0, -2.0]]), np.array([3.0])]
    state = AdamState.zeros(params)
    adam_step(params, state, [np.zeros((1, 2)), np.zeros(1)], 1e-3)
    assert np.array_equal(params[0], [[1.0, -2.0]]) and np.array_equal(params[1], [3.0])
    assert state.step == 1

def test_adam_rejects_mismatched_gradients():
    params = [np.zeros(2)]
    with pytest.raises(ShapeException):
        adam_step(params, AdamState.zeros(params), [np.zeros(3)], 1e-3)

def test_train_config_validation():
    with pytest.raises(ConfigException):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigException):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigException):
        TrainConfig(hidden=())
    assert TrainConfig(hidden=[8, 8]).hidden == (8, 8)

def test_training_reduces_loss_on_realizable_targets():
    data, normalization = realizable(0, 2000)
    train_set, val_set = data.take(slice(0, 1600)), data.take(slice(1600, 2000))
    model = DeepONetModel.create(ABLATIONS['final'], normalization, np.random.default_rng([0, 0]), p=8, hidden=(16, 16))
    config = TrainConfig(learning_rate=3e-3, batch_size=50, epochs=60, seed=0)
    _, history = train(model, train_set, val_set, config)
    assert history.epochs == list(range(61))
    assert history.val[-1] <= 0.1 * history.val[0]

def test_training_is_deterministic():
    data, normalization = realizable(1, 300, p=4, hidden=(8,))
    config = TrainConfig(epochs=3, batch_size=32, seed=5, p=4, hidden=(8,))
    runs = []
    for _ in range(2):
        model = DeepONetModel.create(ABLATIONS['final'], normalization, np.random.default_rng([5, 0]), p=4, hidden=(8,))
        runs.append(train(model, data.take(slice(0, 240)), data.take(slice(240, 300)), config))
    (first, history1), (second, history2) = runs
    assert history1 == history2
    assert all(np.array_equal(a, b) for a, b in zip(first.parameters(), second.parameters()))

def test_training_needs_both_splits():
    data, normalization = realizable(2, 50, p=4, hidden=(8,))
    model = DeepONetModel.create(ABLATIONS['final'], normalization, np.random.default_rng(0), p=4, hidden=(8,))
    with pytest.raises(DataException):
        train(model, data, data.take(slice(0, 0)), TrainConfig(epochs=1))

def test_evaluate_loss_is_chunk_independent():
    data, normalization = realizable(3, 250, p=4, hidden=(8,))
    model = DeepONetModel.create(ABLATIONS['final'], normalization, np.random.default_rng(1), p=4, hidden=(8,))
    assert evaluate_loss(model, data, 7) == pytest.approx(evaluate_loss(model, data, 1000), rel=1e-12)

def test_loss_history_csv(tmp_path):
    history = LossHistory()
    history.append(0, 1.5, 2.5)
    history.append(1, 0.1 + 0.2, 1e-7)
    history.to_csv(tmp_path / 'loss_history.csv')
    assert (tmp_path / 'loss_history.csv').read_text().splitlines()[0] == 'epoch,train,val'
    assert LossHistory.from_csv(tmp_path / 'loss_history.csv') == history

def test_warm_start_copies_the_model():
    data, normalization = realizable(4, 20, p=4, hidden=(8,))
    previous = DeepONetModel.create(ABLATIONS['final'], normalization, np.random.default_rng(2), p=4, hidden=(8,))
    started = warm_start(previous)
    assert np.array_equal(deeponet_forward(started, data.branch, data.trunk, data.extent),
                          deeponet_forward(previous, data.branch, data.trunk, data.extent))
    started.branch.weights[0] += 1.0
    assert not np.array_equal(started.branch.weights[0], previous.branch.weights[0])
    other = DeepONetModel.create(ABLATIONS['final'], normalization, np.random.default_rng(2), p=5, hidden=(8,))
    with pytest.raises(ShapeException):
        warm_start(previous, other)

@pytest.fixture
def model():
    _, trunk, _ = inputs(np.random.default_rng(6), 100)
    return DeepONetModel.create(ABLATIONS['final'], Normalization.from_trunk(trunk), np.random.default_rng(7),
                                p=4, hidden=(8,))

def test_predict_field_shape_and_boundaries(model):
    x_l, y_l = GEOMETRY.extent
    points = np.array([[0.0, 1.0], [2.0, 0.0], [x_l, 1.0], [2.0, y_l], [1.0, 1.0]])
    u, seconds = predict_field(model, VariableParams.midpoint(), GEOMETRY, [0.0, 10.0, 20.0], points, batch_size=4)
    assert u.shape == (3, 5, 2)
    assert seconds >= 0.0
    assert np.all(u[:, 0, 0] == 0.0)
    assert np.all(u[:, 1, 1] == 0.0)
    assert np.all(u[:, 2] == 0.0) and np.all(u[:, 3] == 0.0)

def test_predict_field_is_pointwise(model):
    rng = np.random.default_rng(8)
    points = rng.uniform([0.0, 0.0], GEOMETRY.extent, size=(40, 2))
    order = rng.permutation(40)
    var = VariableParams.midpoint()
    u, _ = predict_field(model, var, GEOMETRY, [5.0, 50.0], points)
    shuffled, _ = predict_field(model, var, GEOMETRY, [5.0, 50.0], points[order], batch_size=7)
    assert np.allclose(u[:, order], shuffled, rtol=1e-12, atol=1e-15)

def test_predict_field_rejects_points_outside(model):
    with pytest.raises(DomainException):
        predict_field(model, VariableParams.midpoint(), GEOMETRY, [1.0], np.array([[6.0, 1.0]]))

def test_predict_rsaw_starts_from_the_rim(model):
    rim = GEOMETRY.rim_points(0.1)
    series = predict_rsaw(model, VariableParams.midpoint(), GEOMETRY, [0.0, 30.0], rim)
    assert series.shape == (2,)
    assert np.all(series > 0.0)
