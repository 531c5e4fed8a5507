from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
import asyncio
import hashlib
import os
import traceback

import aiofiles
import numpy as np
import yaml

from WSExceptions import WSException, ConfigException, DataException
from WoundGeometry import WoundGeometry, ShapeKind, sample_geometry
from BioModel import KineticParams, VariableParams, sample_variable_params
from FEMSolver import SimConfig, run_simulation
from DeepONet import Batch
from CustomLogger import logger

DATASET_HEADER = 'DF,chiF,Dc,kF,acI,t,x,y,ycut,xm,ym,xcut,u1,u2,xl,yl'
COLUMNS = DATASET_HEADER.split(',')
DATASET_FILE = 'dataset.csv'
PROVENANCE_FILE = 'provenance'
WRITE_CHUNK = 10000
YEAR_END = 365.0
YEAR_SCENARIOS = {'S1': (50, 30), 'S2': (150, 10)}

@dataclass(frozen=True)
class SimulationInfo:
    """What is needed to rebuild one simulation of a dataset."""

    index: int
    records: int
    h: float
    geometry: WoundGeometry
    var_params: VariableParams

    def describe(self) -> str:
        var = ','.join(repr(float(v)) for v in self.var_params.as_array())
        return f"{self.index} | {self.records} | {float(self.h)!r} | {self.geometry.describe()} | {var}"

    @classmethod
    def parse(cls, text: str) -> 'SimulationInfo':
        try:
            index, records, h, geometry, var = (part.strip() for part in text.split('|'))
            return cls(int(index), int(records), float(h), WoundGeometry.parse(geometry),
                       VariableParams.from_array([float(v) for v in var.split(',')]))
        except (ValueError, WSException) as e:
            raise DataException(argument=text, message=f"malformed simulation entry ({e})")

@dataclass
class Dataset:
    """
    Records as rows of DATASET_HEADER columns, stored contiguously per
    simulation in simulation-index order.
    """

    records: np.ndarray
    simulations: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @property
    def sim_index(self) -> np.ndarray:
        return np.repeat([s.index for s in self.simulations], [s.records for s in self.simulations]).astype(int)

    def column(self, name: str) -> np.ndarray:
        return self.records[:, COLUMNS.index(name)]

    def as_batch(self) -> Batch:
        return Batch(branch=self.records[:, 0:5], trunk=self.records[:, 5:12], target=self.records[:, 12:14],
                     extent=self.records[:, 14:16])

    def select(self, rows: np.ndarray) -> 'Dataset':
        """Subset regrouped by simulation, `rows` order kept within each; simulation entries are recounted."""
        rows = np.asarray(rows, dtype=int)
        owners = self.sim_index[rows] if len(rows) else np.zeros(0, dtype=int)
        order = np.argsort(owners, kind='stable')
        rows, owners = rows[order], owners[order]
        counts = {index: int(np.sum(owners == index)) for index in np.unique(owners)}
        simulations = [SimulationInfo(s.index, counts[s.index], s.h, s.geometry, s.var_params)
                       for s in self.simulations if s.index in counts]
        return Dataset(self.records[rows], simulations, dict(self.provenance))

    def simulation(self, index: int) -> 'Dataset':
        return self.select(np.flatnonzero(self.sim_index == index))

def concat_datasets(first: Dataset, second: Dataset) -> Dataset:
    taken = {s.index for s in first.simulations} & {s.index for s in second.simulations}
    if taken:
        raise DataException(argument=sorted(taken), message="datasets share simulation indices")
    return Dataset(np.vstack([first.records, second.records]), first.simulations + second.simulations,
                   dict(first.provenance))

def sim_config_hash(config: SimConfig) -> str:
    values = {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(config).items()}
    return hashlib.sha256(yaml.safe_dump(values, sort_keys=True).encode()).hexdigest()

@dataclass(frozen=True)
class SampleTask:
    index: int
    seed: int
    config: SimConfig
    params: KineticParams
    n_times: int | None
    n_points: int | None
    convex: bool = False

@dataclass
class SampleOutcome:
    index: int
    records: np.ndarray | None = None
    info: SimulationInfo | None = None
    error: str | None = None

def _rows(var: VariableParams, geometry: WoundGeometry, t: float, points: np.ndarray, u: np.ndarray) -> np.ndarray:
    rows = np.empty((len(points), len(COLUMNS)))
    rows[:, 0:5] = var.as_array()
    rows[:, 5] = t
    rows[:, 6:8] = points
    rows[:, 8:12] = geometry.quadruple
    rows[:, 12:14] = u
    rows[:, 14:16] = geometry.extent
    return rows

def simulate_sample(task: SampleTask) -> SampleOutcome:
    """
    One simulation of a campaign with its own random stream derived from
    (seed, index): geometry, patient parameters, FEM run and record sampling.
    """
    rng = np.random.default_rng([task.seed, task.index])
    try:
        geometry = sample_geometry(rng, kind=ShapeKind.Convex if task.convex else None)
        var = sample_variable_params(rng)
        result = run_simulation(task.config, geometry, var, task.params)
    except WSException as e:
        logger.warning(f"simulation {task.index} failed: {e}")
        logger.debug(traceback.format_exc())
        return SampleOutcome(task.index, error=str(e))

    snapshots = result.snapshots
    if task.n_times is None:
        chosen = range(len(snapshots))
    else:
        chosen = np.sort(rng.choice(len(snapshots), size=task.n_times, replace=False))
    x_l, y_l = geometry.extent
    blocks = []
    for k in chosen:
        snap = snapshots[k]
        if task.n_points is None:
            points, u = snap.reference, snap.u
        else:
            points = np.column_stack([rng.uniform(0.0, x_l, task.n_points), rng.uniform(0.0, y_l, task.n_points)])
            u = snap.displacement_at(points)
        blocks.append(_rows(var, geometry, snap.t, points, u))
    records = np.vstack(blocks)
    info = SimulationInfo(task.index, len(records), task.config.element_size(geometry), geometry, var)
    return SampleOutcome(task.index, records=records, info=info)

async def run_campaign(tasks: list, jobs: int = 1) -> list:
    """Simulations in a process pool, results ordered by task position."""
    if jobs <= 1:
        return [simulate_sample(task) for task in tasks]
    loop = asyncio.get_running_loop()
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [loop.run_in_executor(pool, simulate_sample, task) for task in tasks]
        return await asyncio.gather(*futures)

def _check_times(config: SimConfig, n_times: int | None):
    available = len(config.recorded_steps())
    if n_times is not None and n_times > available:
        raise DataException(argument=f"{n_times} > {available}", message="more time draws than recorded times")

async def generate_async(n_sims: int, config: SimConfig, seed: int, params: KineticParams | None = None,
                         n_times: int | None = 10, n_points: int | None = 20, convex: bool = False,
                         jobs: int = 1, first_index: int = 0, kind: str = 'train') -> Dataset:
    if n_sims < 1:
        raise DataException(argument=n_sims, message="at least one simulation is required")
    _check_times(config, n_times)
    params = params or KineticParams()
    tasks = [SampleTask(first_index + i, seed, config, params, n_times, n_points, convex) for i in range(n_sims)]
    logger.info(f"running {n_sims} {kind} simulations with {jobs} job(s)")
    outcomes = await run_campaign(tasks, jobs)

    failed = [o for o in outcomes if o.error is not None]
    done = [o for o in outcomes if o.error is None]
    if failed:
        logger.warning(f"{len(failed)} of {n_sims} simulations failed and were skipped")
    if not done:
        raise DataException(argument=n_sims, message="every simulation failed")
    provenance = {'version': 1, 'seed': seed, 'kind': kind, 'scenario': 'none', 'n_simulations': len(done),
                  'failures': len(failed), 'times_per_sim': 'all' if n_times is None else n_times,
                  'points_per_sim': 'all' if n_points is None else n_points,
                  'sim_config_hash': sim_config_hash(config)}
    dataset = Dataset(np.vstack([o.records for o in done]), [o.info for o in done], provenance)
    logger.info(f"{kind} dataset: {len(dataset)} records from {len(done)} simulations")
    return dataset

def generate_training_set(n_sims: int, config: SimConfig, seed: int, params: KineticParams | None = None,
                          jobs: int = 1, n_times: int = 10, n_points: int = 20) -> Dataset:
    return asyncio.run(generate_async(n_sims, config, seed, params, n_times, n_points, jobs=jobs, kind='train'))

def generate_convex_test_set(n_sims: int, config: SimConfig, seed: int, params: KineticParams | None = None,
                             jobs: int = 1) -> Dataset:
    return asyncio.run(generate_async(n_sims, config, seed, params, None, None, convex=True, jobs=jobs, kind='convex'))

def year_scenario(name: str, desk: bool = True) -> tuple[int, int]:
    """(simulations, time draws) of a year-extension scenario; desk scale keeps a tenth of the simulations."""
    if name not in YEAR_SCENARIOS:
        raise ConfigException(argument=name, message=f"scenario must be one of {sorted(YEAR_SCENARIOS)}")
    n_sims, n_times = YEAR_SCENARIOS[name]
    return (n_sims // 10 if desk else n_sims), n_times

def extend_year_dataset(base: Dataset, scenario: str, config: SimConfig, seed: int, params: KineticParams | None = None,
                        desk: bool = True, jobs: int = 1, n_points: int = 20) -> Dataset:
    n_sims, n_times = year_scenario(scenario, desk)
    if config.t_end != YEAR_END:
        logger.info(f"year scenario {scenario}: t_end {config.t_end:g} -> {YEAR_END:g}")
        config = config.with_overrides(t_end=YEAR_END)
    first = max((s.index for s in base.simulations), default=-1) + 1
    added = asyncio.run(generate_async(n_sims, config, seed, params, n_times, n_points, jobs=jobs,
                                       first_index=first, kind='year'))
    extended = concat_datasets(base, added)
    extended.provenance.update({'scenario': scenario, 'added_records': len(added),
                                'added_simulations': len(added.simulations),
                                'year_sim_config_hash': added.provenance['sim_config_hash'],
                                'failures': int(base.provenance.get('failures', 0)) + added.provenance['failures']})
    extended.provenance['n_simulations'] = len(extended.simulations)
    return extended

def split_dataset(dataset: Dataset, fraction: float = 0.8, seed: int = 0, level: str = 'record'):
    """Seeded disjoint split; `level` is 'record' or 'simulation'."""
    if not 0.0 < fraction < 1.0:
        raise ConfigException(argument=fraction, message="split fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    if level == 'record':
        order = rng.permutation(len(dataset))
        n_train = int(round(fraction * len(dataset)))
        return dataset.select(order[:n_train]), dataset.select(order[n_train:])
    if level == 'simulation':
        indices = np.array([s.index for s in dataset.simulations])
        order = rng.permutation(len(indices))
        n_train = int(round(fraction * len(indices)))
        train_sims = np.isin(dataset.sim_index, indices[order[:n_train]])
        return dataset.select(np.flatnonzero(train_sims)), dataset.select(np.flatnonzero(~train_sims))
    raise ConfigException(argument=level, message="split level must be 'record' or 'simulation'")

async def write_dataset(dataset: Dataset, directory):
    os.makedirs(directory, exist_ok=True)
    async with aiofiles.open(os.path.join(directory, DATASET_FILE), mode='w') as file:
        await file.write(DATASET_HEADER + '\n')
        for start in range(0, len(dataset), WRITE_CHUNK):
            chunk = dataset.records[start:start + WRITE_CHUNK]
            await file.write(''.join(','.join(repr(float(v)) for v in row) + '\n' for row in chunk))
    provenance = dict(dataset.provenance)
    provenance['n_records'] = len(dataset)
    async with aiofiles.open(os.path.join(directory, PROVENANCE_FILE), mode='w') as file:
        for name, value in provenance.items():
            await file.write(f"{name} = {value}\n")
        for info in dataset.simulations:
            await file.write(f"sim = {info.describe()}\n")

async def read_dataset(directory) -> Dataset:
    path = os.path.join(directory, DATASET_FILE)
    if not os.path.exists(path):
        raise DataException(argument=path, message="dataset file not found")
    rows = []
    async with aiofiles.open(path, mode='r') as file:
        header = (await file.readline()).strip()
        if header != DATASET_HEADER:
            raise DataException(argument=header, message="unexpected dataset header")
        async for line in file:
            if line.strip():
                rows.append([float(v) for v in line.split(',')])
    records = np.array(rows, dtype=float).reshape(-1, len(COLUMNS))

    provenance, simulations = {}, []
    async with aiofiles.open(os.path.join(directory, PROVENANCE_FILE), mode='r') as file:
        async for line in file:
            if '=' not in line:
                continue
            name, value = (part.strip() for part in line.split('=', 1))
            if name == 'sim':
                simulations.append(SimulationInfo.parse(value))
            else:
                provenance[name] = value
    if sum(s.records for s in simulations) != len(records):
        raise DataException(argument=directory, message="provenance record counts do not match the dataset")
    provenance.pop('n_records', None)
    return Dataset(records, simulations, provenance)

def save_dataset(dataset: Dataset, directory):
    asyncio.run(write_dataset(dataset, directory))
    logger.info(f"wrote {len(dataset)} records to {directory}")

def load_dataset(directory) -> Dataset:
    dataset = asyncio.run(read_dataset(directory))
    logger.info(f"read {len(dataset)} records from {directory}")
    return dataset
