from dataclasses import dataclass, field
import os
import statistics
import time

import numpy as np
from scipy.spatial import cKDTree

from WSExceptions import MetricException, AlignmentException
from WoundGeometry import polygon_area, round1
from DeepONet import DeepONetModel, deeponet_forward
from DeepONetTrainer import predict_rsaw
from CustomLogger import logger

MATCH_TOLERANCE = 1e-9

def _pair(true_u, pred_u):
    true_u = np.asarray(true_u, dtype=float)
    pred_u = np.asarray(pred_u, dtype=float)
    if true_u.ndim == 1:
        true_u = true_u[:, None]
        pred_u = pred_u.reshape(-1, 1)
    if true_u.shape != pred_u.shape:
        raise MetricException(argument=(true_u.shape, pred_u.shape), message="truth and prediction shapes differ")
    return true_u, pred_u

def _sums(true_u, pred_u):
    true_u, pred_u = _pair(true_u, pred_u)
    if len(true_u) < 2:
        raise MetricException(argument=len(true_u), message="at least two records are required")
    sse = np.sum((true_u - pred_u) ** 2, axis=0)
    sst = np.sum((true_u - true_u.mean(axis=0)) ** 2, axis=0)
    if np.any(sst == 0.0):
        raise MetricException(argument=sst.tolist(), message="zero variance in a displacement component")
    return sse, sst

def component_r2(true_u, pred_u) -> np.ndarray:
    sse, sst = _sums(true_u, pred_u)
    return 1.0 - sse / sst

def r2_score(true_u, pred_u) -> float:
    return float(np.mean(component_r2(true_u, pred_u)))

def component_arrmse(true_u, pred_u) -> np.ndarray:
    sse, sst = _sums(true_u, pred_u)
    return np.sqrt(sse / sst)

def arrmse(true_u, pred_u) -> float:
    return float(np.mean(component_arrmse(true_u, pred_u)))

_round1 = np.vectorize(round1, otypes=[float])

def round_half_away(x):
    """One decimal, halves away from zero, rounded the same way as the geometry cuts."""
    return _round1(np.asarray(x, dtype=float))

def arelerr(true_u, pred_u) -> float:
    """
    Mean relative error of the one-decimal rounded values; records whose
    rounded truth is zero are left out of each component's average.
    """
    true_u, pred_u = _pair(true_u, pred_u)
    truth = round_half_away(true_u)
    guess = round_half_away(pred_u)
    values = []
    for k in range(truth.shape[1]):
        kept = truth[:, k] != 0.0
        if not np.any(kept):
            raise MetricException(argument=k, message="no record with non-zero rounded truth in this component")
        values.append(np.mean(np.abs(truth[kept, k] - guess[kept, k]) / np.abs(truth[kept, k])))
    return float(np.mean(values))

@dataclass
class ErrorProfile:
    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def to_csv(self, path):
        with open(path, mode='w') as file:
            file.write('t,mean,std\n')
            for row in zip(self.times, self.mean, self.std):
                file.write(f"{row[0]:g},{float(row[1])!r},{float(row[2])!r}\n")

def abs_error_profile(times, samples, true_u, pred_u, grid=None) -> ErrorProfile:
    """
    Per time: mean absolute displacement error of each sample, then mean and
    population standard deviation across samples.
    """
    true_u, pred_u = _pair(true_u, pred_u)
    times = np.asarray(times, dtype=float)
    samples = np.asarray(samples)
    error = np.linalg.norm(true_u - pred_u, axis=1)
    grid = np.unique(times) if grid is None else np.asarray(grid, dtype=float)
    kept, means, stds = [], [], []
    for t in grid:
        bucket = times == t
        if not np.any(bucket):
            logger.warning(f"no records at t={t:g}, time skipped in the error profile")
            continue
        per_sample = [float(np.mean(error[bucket & (samples == s)])) for s in np.unique(samples[bucket])]
        kept.append(float(t))
        means.append(float(np.mean(per_sample)))
        stds.append(float(np.std(per_sample)))
    return ErrorProfile(np.array(kept), np.array(means), np.array(stds))

@dataclass(frozen=True)
class RsawSummary:
    argmin_time: float
    min_value: float
    final_value: float

    @classmethod
    def of(cls, times, values) -> 'RsawSummary':
        first = int(np.argmin(values))
        return cls(float(times[first]), float(values[first]), float(values[-1]))

@dataclass
class RsawComparison:
    times: np.ndarray
    target: np.ndarray
    pred: np.ndarray
    target_summary: RsawSummary
    pred_summary: RsawSummary

    @property
    def deltas(self) -> dict:
        return {'argmin_time': self.pred_summary.argmin_time - self.target_summary.argmin_time,
                'min_value': self.pred_summary.min_value - self.target_summary.min_value,
                'final_value': self.pred_summary.final_value - self.target_summary.final_value}

    @property
    def max_deviation(self) -> float:
        return float(np.max(np.abs(self.pred - self.target)))

    def to_csv(self, path):
        with open(path, mode='w') as file:
            file.write('t,target,pred\n')
            for row in zip(self.times, self.target, self.pred):
                file.write(f"{row[0]:g},{float(row[1])!r},{float(row[2])!r}\n")

def rsaw_compare(target_times, target, pred_times, pred) -> RsawComparison:
    target_times = np.asarray(target_times, dtype=float)
    pred_times = np.asarray(pred_times, dtype=float)
    if target_times.shape != pred_times.shape or not np.array_equal(target_times, pred_times):
        raise AlignmentException(argument=(len(target_times), len(pred_times)), message="RSAW series live on different time grids")
    target = np.asarray(target, dtype=float)
    pred = np.asarray(pred, dtype=float)
    if len(target) != len(target_times) or len(pred) != len(pred_times) or not len(target):
        raise AlignmentException(argument=(len(target), len(pred)), message="series length does not match its time grid")
    return RsawComparison(target_times, target, pred, RsawSummary.of(target_times, target), RsawSummary.of(pred_times, pred))

@dataclass
class TimingReport:
    simulator_seconds: float
    surrogate_seconds: float
    boundary_seconds: float | None = None
    repeats: int = 3

    @property
    def speedup(self) -> float:
        return self.simulator_seconds / self.surrogate_seconds

    @property
    def boundary_speedup(self) -> float | None:
        if self.boundary_seconds is None:
            return None
        return self.simulator_seconds / self.boundary_seconds

def median_seconds(runner, repeats: int = 3) -> float:
    durations = []
    for _ in range(max(repeats, 1)):
        started = time.perf_counter()
        runner()
        durations.append(time.perf_counter() - started)
    return statistics.median(durations)

def bench_speedup(simulator_runner, surrogate_runner, boundary_runner=None, repeats: int = 3) -> TimingReport:
    """Median wall-clock of each runner over the same workload."""
    if repeats < 3:
        logger.warning(f"{repeats} repetitions requested, timing with 3")
        repeats = 3
    report = TimingReport(median_seconds(simulator_runner, repeats), median_seconds(surrogate_runner, repeats),
                          None if boundary_runner is None else median_seconds(boundary_runner, repeats), repeats)
    logger.info(f"simulator {report.simulator_seconds:.3f}s, surrogate {report.surrogate_seconds:.4f}s, "
                f"speedup {report.speedup:.1f}x")
    return report

@dataclass
class EvalReport:
    name: str
    r2: float
    arrmse: float
    arelerr: float
    profile: ErrorProfile
    rsaw: dict = field(default_factory=dict)
    timing: TimingReport | None = None
    n_records: int = 0

    def best_and_worst(self):
        if not self.rsaw:
            return None, None
        ranked = sorted(self.rsaw, key=lambda index: (self.rsaw[index].max_deviation, index))
        return ranked[0], ranked[-1]

    def summary(self) -> dict:
        values = {'name': self.name, 'n_records': self.n_records, 'r2': self.r2, 'arrmse': self.arrmse,
                  'arelerr': self.arelerr}
        best, worst = self.best_and_worst()
        for label, index in (('best', best), ('worst', worst)):
            if index is None:
                continue
            comparison = self.rsaw[index]
            values[f"rsaw.{label}.sim"] = index
            for side, summary in (('target', comparison.target_summary), ('pred', comparison.pred_summary)):
                values[f"rsaw.{label}.{side}.argmin_time"] = summary.argmin_time
                values[f"rsaw.{label}.{side}.min"] = summary.min_value
                values[f"rsaw.{label}.{side}.final"] = summary.final_value
        if self.timing is not None:
            values['timing.simulator_seconds'] = self.timing.simulator_seconds
            values['timing.surrogate_seconds'] = self.timing.surrogate_seconds
            values['timing.speedup'] = self.timing.speedup
            values['timing.statistic'] = f"median of {self.timing.repeats}"
            if self.timing.boundary_seconds is not None:
                values['timing.boundary_seconds'] = self.timing.boundary_seconds
                values['timing.boundary_speedup'] = self.timing.boundary_speedup
        return values

    def to_files(self, directory):
        os.makedirs(directory, exist_ok=True)
        with open(os.path.join(directory, 'report'), mode='w') as file:
            for name, value in self.summary().items():
                file.write(f"{name} = {float(value)!r}\n" if isinstance(value, float) else f"{name} = {value}\n")
        self.profile.to_csv(os.path.join(directory, 'abs_error_profile.csv'))
        best, worst = self.best_and_worst()
        if worst is not None:
            self.rsaw[worst].to_csv(os.path.join(directory, 'rsaw_compare.csv'))
            self.rsaw[best].to_csv(os.path.join(directory, 'rsaw_compare_best.csv'))

def target_rsaw(records_t, records_xy, records_u, rim: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """RSAW per time from recorded nodal displacements at the undeformed rim nodes."""
    origin = np.zeros((1, 2))
    initial = polygon_area(np.vstack([origin, rim]))
    grid = np.unique(records_t)
    values = []
    for t in grid:
        at_t = records_t == t
        distance, nearest = cKDTree(records_xy[at_t]).query(rim)
        if np.any(distance > MATCH_TOLERANCE):
            raise AlignmentException(argument=f"t={t:g}", message="rim nodes missing from the recorded nodes")
        values.append(polygon_area(np.vstack([origin, rim + records_u[at_t][nearest]])) / initial)
    return grid, np.array(values)

def evaluate_model(model: DeepONetModel, dataset, name: str = 'model', batch_size: int = 10000,
                   rsaw: bool = True) -> tuple[EvalReport, np.ndarray]:
    """Metrics of `model` on a dataset; returns the report and the predictions (n, 2)."""
    batch = dataset.as_batch()
    predicted = np.empty_like(batch.target)
    for start in range(0, len(batch), batch_size):
        chunk = batch.take(slice(start, start + batch_size))
        predicted[start:start + batch_size] = deeponet_forward(model, chunk.branch, chunk.trunk, chunk.extent)
    sims = dataset.sim_index
    times = batch.trunk[:, 0]
    try:
        relative = arelerr(batch.target, predicted)
    except MetricException as e:
        logger.warning(f"{name}: aRelErr undefined ({e})")
        relative = float('nan')
    report = EvalReport(name=name, r2=r2_score(batch.target, predicted), arrmse=arrmse(batch.target, predicted),
                        arelerr=relative,
                        profile=abs_error_profile(times, sims, batch.target, predicted), n_records=len(batch))
    if rsaw:
        for info in dataset.simulations:
            rows = sims == info.index
            rim = info.geometry.rim_points(info.h)
            try:
                grid, target = target_rsaw(times[rows], batch.trunk[rows, 1:3], batch.target[rows], rim)
            except AlignmentException as e:
                logger.warning(f"{name}: no RSAW comparison for simulation {info.index}, "
                               f"its records do not hold the rim nodes ({e})")
                continue
            pred = predict_rsaw(model, info.var_params, info.geometry, grid, rim, batch_size)
            report.rsaw[info.index] = rsaw_compare(grid, target, grid, pred)
    logger.info(f"{name}: R2={report.r2:.5f} aRRMSE={report.arrmse:.5f} aRelErr={report.arelerr:.5f}")
    return report, predicted
