from pathlib import Path

import numpy as np
import pytest
import yaml

from WSExceptions import ArgumentException, ConfigException
from WSArguments import WSArguments
from WSConfig import WSConfig
from WoundGeometry import WoundGeometry, ShapeKind
from BioModel import VariableParams
from FEMSolver import SimConfig
from DataPipe import COLUMNS, Dataset, SimulationInfo, save_dataset
from DeepONet import ABLATIONS
from startWoundSurrogate import cli_dispatch

REPO_CONFIG = Path(__file__).resolve().parent.parent / 'data' / 'config.yml'

SMALL = {
    'version': 1,
    'seed': 3,
    'geometry': {'shape': 'rectangle', 'x_cut': 1.0, 'y_cut': 1.0},
    'sim': {'dt': 0.5, 't_end': 1.0},
    'train': {'epochs': 2, 'batch_size': 16, 'p': 4, 'hidden': [8]},
    'eval': {'rsaw': False},
}

@pytest.fixture(autouse=True)
def fresh_singletons():
    WSArguments.reset()
    WSConfig.reset()
    yield
    WSArguments.reset()
    WSConfig.reset()

def write_config(path, values):
    path.write_text(yaml.safe_dump(values))
    return str(path)

def synthetic_dataset(directory, n_sims, per_sim, seed):
    rng = np.random.default_rng(seed)
    blocks, simulations = [], []
    for i in range(n_sims):
        geometry = WoundGeometry(ShapeKind.Rectangle, 1.0 + 0.2 * i, 1.0)
        var = VariableParams.midpoint()
        rows = np.zeros((per_sim, len(COLUMNS)))
        rows[:, 0:5] = var.as_array()
        rows[:, 5] = rng.integers(0, 3, per_sim).astype(float)
        rows[:, 6:8] = rng.uniform(0.0, 1.0, (per_sim, 2)) * geometry.extent
        rows[:, 8:12] = geometry.quadruple
        rows[:, 12:14] = rng.normal(size=(per_sim, 2))
        rows[:, 14:16] = geometry.extent
        blocks.append(rows)
        simulations.append(SimulationInfo(i, per_sim, geometry.x_cut / 3.0, geometry, var))
    save_dataset(Dataset(np.vstack(blocks), simulations, {'version': '1', 'seed': str(seed), 'kind': 'train'}),
                 directory)
    return str(directory)

def only_run(outdir, command):
    runs = sorted(Path(outdir).glob(f"{command}-*"))
    assert len(runs) >= 1
    return runs[-1]

def test_defaults_fill_a_minimal_file(tmp_path):
    config = WSConfig(write_config(tmp_path / 'c.yml', {'version': 1}))
    assert config.SEED == 0
    assert config.sim_config() == SimConfig()
    train = config.train_config()
    assert train.hidden == (50, 50, 50) and train.p == 50 and train.epochs == 100
    assert config.TRAIN['split_fraction'] == 0.8 and config.TRAIN['split_level'] == 'record'
    assert config.geometry() == WoundGeometry(ShapeKind.Rectangle, 1.0, 1.0)

def test_repository_config_is_valid():
    config = WSConfig(str(REPO_CONFIG))
    assert config.sim_config().dt == 0.1
    assert config.EVAL['batch_size'] == 10000

@pytest.mark.parametrize('values', [
    {'version': 1, 'solver': {}},
    {'version': 1, 'sim': {'dtt': 0.1}},
    {'version': 2},
    {'version': 1, 'seed': -1},
    {'version': 1, 'sim': {'dt': 0.0}},
    {'version': 1, 'train': {'split_level': 'patient'}},
    {'version': 1, 'kinetics': {'nu': 0.5}},
    {'version': 1, 'geometry': {'shape': 'hexagon'}},
    {'version': 1, 'data': {'year_scale': 'huge'}},
])
def test_invalid_configs_rejected(tmp_path, values):
    with pytest.raises(ConfigException):
        WSConfig(write_config(tmp_path / 'c.yml', values))

def test_config_hash_follows_content(tmp_path):
    first = WSConfig(write_config(tmp_path / 'a.yml', SMALL)).config_hash()
    WSConfig.reset()
    again = WSConfig(write_config(tmp_path / 'b.yml', SMALL)).config_hash()
    WSConfig.reset()
    other = WSConfig(write_config(tmp_path / 'c.yml', {**SMALL, 'seed': 4})).config_hash()
    assert first == again != other

def test_effective_config_reloads_identically(tmp_path):
    config = WSConfig(write_config(tmp_path / 'c.yml', SMALL))
    config.write(tmp_path / 'effective.yml')
    expected = config.config_hash()
    WSConfig.reset()
    assert WSConfig(str(tmp_path / 'effective.yml')).config_hash() == expected

def test_arguments_validate_paths(tmp_path):
    with pytest.raises(ArgumentException):
        WSArguments(['--configfile', str(tmp_path / 'missing.yml'), 'simulate'])
    WSArguments.reset()
    config = write_config(tmp_path / 'c.yml', SMALL)
    with pytest.raises(ArgumentException):
        WSArguments(['--configfile', config, 'train', '--dataset', str(tmp_path / 'nothing')])
    WSArguments.reset()
    with pytest.raises(ArgumentException):
        WSArguments(['--configfile', config, 'eval', '--dataset', str(tmp_path)])
    WSArguments.reset()
    args = WSArguments(['--configfile', config, '--jobs', '2', 'simulate', '--shape', 'ellipse'])
    assert (args.COMMAND, args.JOBS, args.OPTIONS.shape) == ('simulate', 2, 'ellipse')

def test_simulate_command(tmp_path):
    config = write_config(tmp_path / 'c.yml', SMALL)
    assert cli_dispatch(['--configfile', config, '--outdir', str(tmp_path / 'runs'), 'simulate']) == 0
    run = only_run(tmp_path / 'runs', 'simulate')
    assert (run / 'rsaw.csv').read_text().splitlines()[1] == '0,1.0'
    assert (run / 'config.yml').exists() and (run / 'run.log').exists()
    assert yaml.safe_load((run / 'config.yml').read_text())['sim']['dt'] == 0.5

def test_exit_codes(tmp_path):
    bad = write_config(tmp_path / 'bad.yml', {'version': 1, 'sim': {'dtt': 0.1}})
    assert cli_dispatch(['--configfile', bad, '--outdir', str(tmp_path / 'runs'), 'simulate']) == 2
    good = write_config(tmp_path / 'c.yml', SMALL)
    assert cli_dispatch(['--configfile', good, 'no-such-command']) == 2
    assert cli_dispatch(['--configfile', str(tmp_path / 'missing.yml'), 'simulate']) == 2
    assert cli_dispatch(['--configfile', good, '--outdir', str(tmp_path / 'runs'), 'simulate', '--xcut', '-1']) == 2

def test_training_runs_are_reproducible(tmp_path):
    config = write_config(tmp_path / 'c.yml', SMALL)
    dataset = synthetic_dataset(tmp_path / 'train', 4, 25, seed=0)
    models = []
    for outdir in ('first', 'second'):
        assert cli_dispatch(['--configfile', config, '--outdir', str(tmp_path / outdir),
                             'train', '--dataset', dataset]) == 0
        run = only_run(tmp_path / outdir, 'train')
        assert (run / 'loss_history.csv').read_text().splitlines()[0] == 'epoch,train,val'
        models.append((run / 'model.yml').read_bytes())
    assert models[0] == models[1]

    first = only_run(tmp_path / 'first', 'train')
    assert cli_dispatch(['--configfile', config, '--outdir', str(tmp_path / 'warm'), 'train', '--dataset', dataset,
                         '--warm-start', str(first / 'model.yml'), '--epochs', '1']) == 0

    assert cli_dispatch(['--configfile', config, '--outdir', str(tmp_path / 'plots'),
                         'export-plot', '--train-run', str(first)]) == 0
    exported = only_run(tmp_path / 'plots', 'export-plot') / 'loss_curve.csv'
    assert exported.read_bytes() == (first / 'loss_history.csv').read_bytes()
    assert cli_dispatch(['--configfile', config, '--outdir', str(tmp_path / 'plots'),
                         'export-plot', '--eval-run', str(first)]) == 4

def test_ablation_table(tmp_path):
    config = write_config(tmp_path / 'c.yml', SMALL)
    train_set = synthetic_dataset(tmp_path / 'train', 4, 25, seed=1)
    test_set = synthetic_dataset(tmp_path / 'test', 2, 20, seed=2)
    assert cli_dispatch(['--configfile', config, '--outdir', str(tmp_path / 'runs'), 'eval', '--dataset', test_set,
                         '--ablation', 'all', '--train-dataset', train_set]) == 0
    run = only_run(tmp_path / 'runs', 'eval')
    lines = (run / 'ablation_table.csv').read_text().splitlines()
    assert lines[0] == 'model,r2,arrmse,arelerr'
    assert [line.split(',')[0] for line in lines[1:]] == list(ABLATIONS)
    for name in ABLATIONS:
        assert (run / name / 'model.yml').exists()
        predictions = (run / name / 'predictions.csv').read_text().splitlines()
        assert predictions[0] == 'sim,t,x,y,u1,u2,u1_pred,u2_pred'
        assert len(predictions) == 41
        assert not (run / name / 'rsaw_compare.csv').exists()

def test_predict_command(tmp_path):
    config = write_config(tmp_path / 'c.yml', SMALL)
    dataset = synthetic_dataset(tmp_path / 'train', 2, 25, seed=5)
    assert cli_dispatch(['--configfile', config, '--outdir', str(tmp_path / 'runs'), 'train', '--dataset', dataset]) == 0
    model = only_run(tmp_path / 'runs', 'train') / 'model.yml'
    assert cli_dispatch(['--configfile', config, '--outdir', str(tmp_path / 'runs'), 'predict', '--model', str(model),
                         '--boundary-only']) == 0
    run = only_run(tmp_path / 'runs', 'predict')
    rsaw = (run / 'rsaw.csv').read_text().splitlines()
    assert rsaw[0] == 't,rsaw'
    assert [line.split(',')[0] for line in rsaw[1:]] == ['0.0', '1.0']
    assert (run / 'field.csv').read_text().splitlines()[0] == 't,x,y,u1,u2'
