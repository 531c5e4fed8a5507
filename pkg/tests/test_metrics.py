import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from WSExceptions import MetricException, AlignmentException
from WoundGeometry import WoundGeometry, ShapeKind, round1
from BioModel import VariableParams
from DeepONet import ABLATIONS, DeepONetModel, Normalization
from DataPipe import COLUMNS, Dataset, SimulationInfo
from Metrics import (component_r2, r2_score, component_arrmse, arrmse, round_half_away, arelerr, abs_error_profile,
                     rsaw_compare, TimingReport, bench_speedup, EvalReport, target_rsaw, evaluate_model)

def test_perfect_prediction_scores():
    rng = np.random.default_rng(0)
    truth = rng.normal(size=(50, 2))
    assert r2_score(truth, truth) == 1.0
    assert arrmse(truth, truth) == 0.0
    assert arelerr(truth, truth) == 0.0

def test_hand_computed_scores():
    truth = np.array([1.0, -1.0, 1.0, -1.0])
    pred = np.array([1.0, -1.0, 0.0, 0.0])
    assert arrmse(truth, pred) == pytest.approx(math.sqrt(0.5), rel=1e-12)
    assert r2_score(truth, pred) == pytest.approx(0.5, rel=1e-12)

@settings(max_examples=50)
@given(st.integers(min_value=0, max_value=2**32 - 1), st.integers(min_value=2, max_value=40))
def test_arrmse_squared_complements_r2(seed, n):
    rng = np.random.default_rng(seed)
    truth = rng.normal(size=(n, 2))
    pred = truth + rng.normal(scale=0.3, size=(n, 2))
    assert np.allclose(component_arrmse(truth, pred) ** 2, 1.0 - component_r2(truth, pred), rtol=1e-9, atol=1e-12)

def test_round_half_away_from_zero():
    assert np.array_equal(round_half_away([0.25, -0.25, -0.75, 0.04, 0.06]), [0.3, -0.3, -0.8, 0.0, 0.1])

def test_rounding_matches_the_geometry_cuts():
    assert np.array_equal(round_half_away([0.15, 2.675, -0.15, 1.45, -2.05]), [0.2, 2.7, -0.2, 1.5, -2.1])

@settings(max_examples=100)
@given(st.lists(st.floats(min_value=-50.0, max_value=50.0, allow_nan=False), min_size=1, max_size=20))
def test_rounding_agrees_with_round1(values):
    assert np.array_equal(round_half_away(values), [round1(v) for v in values])

def test_arelerr_skips_records_rounding_to_zero():
    truth = np.array([[1.0, 2.0], [0.04, 1.0]])
    pred = np.array([[0.2, 2.0], [5.0, 0.5]])
    # first component keeps one record (0.8), second averages 0 and 0.5
    assert arelerr(truth, pred) == pytest.approx(0.525, rel=1e-12)

def test_arelerr_compares_rounded_values():
    truth = np.array([[-0.8, 1.0], [0.5, 2.0]])
    assert arelerr(truth, np.array([[-0.76, 1.0], [0.5, 2.0]])) == 0.0

def test_arelerr_of_a_uniform_bias():
    truth = np.array([1.0, 2.0, -1.0])
    assert arelerr(truth, truth * 0.2) == pytest.approx(0.8, rel=1e-12)

def test_metric_errors():
    with pytest.raises(MetricException):
        r2_score([1.0], [1.0])
    with pytest.raises(MetricException):
        arrmse(np.ones((5, 2)), np.zeros((5, 2)))
    with pytest.raises(MetricException):
        r2_score(np.zeros((4, 2)), np.zeros((3, 2)))
    with pytest.raises(MetricException):
        arelerr(np.array([[0.01, 1.0], [-0.02, 2.0]]), np.zeros((2, 2)))

def test_abs_error_profile():
    times = np.array([0.0, 0.0, 1.0, 1.0, 1.0])
    samples = np.array([0, 1, 0, 0, 1])
    pred = np.array([[3.0, 4.0], [1.0, 0.0], [0.0, 2.0], [0.0, 4.0], [0.0, 1.0]])
    profile = abs_error_profile(times, samples, np.zeros((5, 2)), pred, grid=[0.0, 1.0, 2.0])
    assert np.array_equal(profile.times, [0.0, 1.0])
    assert np.allclose(profile.mean, [3.0, 2.0])
    assert np.allclose(profile.std, [2.0, 1.0])

def test_error_profile_csv(tmp_path):
    profile = abs_error_profile([0.0, 5.0], [0, 0], np.zeros((2, 2)), np.array([[0.0, 0.5], [0.0, 0.25]]))
    profile.to_csv(tmp_path / 'abs_error_profile.csv')
    assert (tmp_path / 'abs_error_profile.csv').read_text().splitlines() == ['t,mean,std', '0,0.5,0.0', '5,0.25,0.0']

def test_rsaw_comparison_takes_the_earliest_minimum():
    times = np.arange(5.0)
    comparison = rsaw_compare(times, [1.0, 0.8, 0.7, 0.7, 0.9], times, [1.0, 0.75, 0.75, 0.8, 0.85])
    assert comparison.target_summary.argmin_time == 2.0
    assert comparison.pred_summary.argmin_time == 1.0
    deltas = comparison.deltas
    assert deltas['argmin_time'] == -1.0
    assert deltas['min_value'] == pytest.approx(0.05)
    assert deltas['final_value'] == pytest.approx(-0.05)
    assert comparison.max_deviation == pytest.approx(0.1)

def test_rsaw_comparison_alignment_errors():
    with pytest.raises(AlignmentException):
        rsaw_compare([0.0, 1.0], [1.0, 0.9], [0.0, 2.0], [1.0, 0.9])
    with pytest.raises(AlignmentException):
        rsaw_compare([0.0, 1.0], [1.0], [0.0, 1.0], [1.0, 0.9])
    with pytest.raises(AlignmentException):
        rsaw_compare([], [], [], [])

def test_timing_report_ratios():
    report = TimingReport(10.0, 0.5, 2.0)
    assert report.speedup == 20.0
    assert report.boundary_speedup == 5.0
    assert TimingReport(1.0, 1.0).boundary_speedup is None

def test_bench_times_at_least_three_repetitions():
    calls = {'sim': 0, 'surrogate': 0}

    def runner(name):
        def run():
            calls[name] += 1
        return run

    report = bench_speedup(runner('sim'), runner('surrogate'), repeats=1)
    assert report.repeats == 3
    assert calls == {'sim': 3, 'surrogate': 3}
    assert report.boundary_seconds is None
    assert report.simulator_seconds >= 0.0

def comparison(deviation):
    times = np.arange(3.0)
    return rsaw_compare(times, [1.0, 0.8, 0.9], times, [1.0, 0.8 + deviation, 0.9])

def test_report_files(tmp_path):
    profile = abs_error_profile([0.0], [0], np.zeros((1, 2)), np.ones((1, 2)))
    report = EvalReport(name='final', r2=0.99, arrmse=0.1, arelerr=0.05, profile=profile,
                        rsaw={3: comparison(0.1), 7: comparison(0.01), 9: comparison(0.01)},
                        timing=TimingReport(4.0, 0.01), n_records=1)
    assert report.best_and_worst() == (7, 3)
    report.to_files(tmp_path)
    lines = (tmp_path / 'report').read_text().splitlines()
    assert 'name = final' in lines
    assert 'r2 = 0.99' in lines
    assert 'rsaw.worst.sim = 3' in lines and 'rsaw.best.sim = 7' in lines
    assert 'timing.statistic = median of 3' in lines
    worst = (tmp_path / 'rsaw_compare.csv').read_text().splitlines()
    assert worst[0] == 't,target,pred'
    assert worst[2] == f"1,0.8,{0.8 + 0.1!r}"
    assert (tmp_path / 'rsaw_compare_best.csv').exists()
    assert (tmp_path / 'abs_error_profile.csv').exists()

def test_report_without_comparisons_writes_no_rsaw_tables(tmp_path):
    profile = abs_error_profile([0.0], [0], np.zeros((1, 2)), np.ones((1, 2)))
    EvalReport(name='case1', r2=0.5, arrmse=0.7, arelerr=float('nan'), profile=profile).to_files(tmp_path)
    assert not (tmp_path / 'rsaw_compare.csv').exists()
    assert 'arelerr = nan' in (tmp_path / 'report').read_text().splitlines()

def test_target_rsaw_from_recorded_displacements():
    rim = np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    interior = np.array([[0.5, 0.5], [2.0, 2.0]])
    xy = np.vstack([rim, interior, interior, rim])
    u = np.vstack([np.zeros((5, 2)), -0.1 * interior, -0.1 * rim])
    t = np.array([0.0] * 5 + [10.0] * 5)
    grid, values = target_rsaw(t, xy, u, rim)
    assert np.array_equal(grid, [0.0, 10.0])
    assert values[0] == 1.0
    assert values[1] == pytest.approx(0.81, rel=1e-12)
    with pytest.raises(AlignmentException):
        target_rsaw(t[:5], interior[[0, 1, 0, 1, 0]], u[:5], rim)

def rim_dataset(rng):
    """Records at the rim nodes of two simulations, zero displacement at t = 0."""
    blocks, simulations = [], []
    for index, geometry in enumerate([WoundGeometry(ShapeKind.Rectangle, 1.0, 1.0),
                                      WoundGeometry(ShapeKind.Ellipse, 1.5, 1.0)]):
        h = geometry.x_cut / 3.0
        rim = geometry.rim_points(h)
        var = VariableParams.midpoint()
        for t in (0.0, 20.0):
            rows = np.zeros((len(rim), len(COLUMNS)))
            rows[:, 0:5] = var.as_array()
            rows[:, 5] = t
            rows[:, 6:8] = rim
            rows[:, 8:12] = geometry.quadruple
            rows[:, 12:14] = 0.0 if t == 0.0 else rng.normal(scale=0.05, size=(len(rim), 2)) - 0.1 * rim
            rows[:, 14:16] = geometry.extent
            blocks.append(rows)
        simulations.append(SimulationInfo(index, 2 * len(rim), h, geometry, var))
    return Dataset(np.vstack(blocks), simulations, {'kind': 'test'})

def test_evaluate_model():
    dataset = rim_dataset(np.random.default_rng(4))
    batch = dataset.as_batch()
    model = DeepONetModel.create(ABLATIONS['final'], Normalization.from_trunk(batch.trunk),
                                 np.random.default_rng(5), p=4, hidden=(8,))
    report, predicted = evaluate_model(model, dataset, name='final', batch_size=7)
    assert predicted.shape == (len(dataset), 2)
    assert report.n_records == len(dataset)
    assert report.r2 <= 1.0 and report.arrmse >= 0.0
    assert sorted(report.rsaw) == [0, 1]
    for comparison in report.rsaw.values():
        assert list(comparison.times) == [0.0, 20.0]
        assert comparison.target[0] == 1.0
        assert comparison.target[1] < 1.0
    assert np.array_equal(report.profile.times, [0.0, 20.0])

def test_evaluate_model_without_rsaw():
    dataset = rim_dataset(np.random.default_rng(6))
    model = DeepONetModel.create(ABLATIONS['case1'], Normalization.from_trunk(dataset.as_batch().trunk),
                                 np.random.default_rng(7), p=4, hidden=(8,))
    report, _ = evaluate_model(model, dataset, name='case1', rsaw=False)
    assert report.rsaw == {}
    assert report.summary()['name'] == 'case1'

def test_evaluate_model_skips_rsaw_without_rim_records(caplog):
    rng = np.random.default_rng(8)
    rim = rim_dataset(rng)
    records = rim.records.copy()
    records[:, 6:8] = rng.uniform(0.1, 0.9, (len(records), 2)) * records[:, 14:16]
    dataset = Dataset(records, rim.simulations, {'kind': 'train'})
    model = DeepONetModel.create(ABLATIONS['final'], Normalization.from_trunk(dataset.as_batch().trunk),
                                 np.random.default_rng(9), p=4, hidden=(8,))
    with caplog.at_level('WARNING', logger='woundsurrogate'):
        report, predicted = evaluate_model(model, dataset, name='final')
    assert report.rsaw == {}
    assert predicted.shape == (len(dataset), 2)
    assert 'do not hold the rim nodes' in caplog.text
