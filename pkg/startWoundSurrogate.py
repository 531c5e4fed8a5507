from datetime import datetime
import os
import shutil
import sys
import traceback

import numpy as np

from WSArguments import WSArguments
from WSConfig import WSConfig
from WSExceptions import WSException, DataException
from WoundGeometry import WoundGeometry
from BioModel import VariableParams
from FEMMesh import generate_mesh
from FEMSolver import run_simulation, wound_boundary_trace, save_simulation_inputs
from DeepONet import ABLATIONS, DeepONetModel, Normalization, save_model, load_model
from DeepONetTrainer import train, warm_start, predict_field, predict_rsaw
from DataPipe import (Dataset, generate_training_set, generate_convex_test_set, extend_year_dataset, split_dataset,
                      save_dataset, load_dataset)
from Metrics import evaluate_model, bench_speedup

# Get the logger
from CustomLogger import logger, setDebugMode, addRunLogFile, removeRunLogFile

version = "1.0.0"

def banner():
    logger.info("##########################################################################################")
    logger.info("#                                                                                        #")
    logger.info("#   ##   ##   ####   ##  ##  ##  ##  #####          #####  ##  ##  #####   #####         #")
    logger.info("#   ##   ##  ##  ##  ##  ##  ### ##  ##  ##        ##      ##  ##  ##  ##  ##  ##        #")
    logger.info("#   ## # ##  ##  ##  ##  ##  ######  ##  ##         ####   ##  ##  #####   #####         #")
    logger.info("#   #######  ##  ##  ##  ##  ## ###  ##  ##            ##  ##  ##  ## ##   ## ##         #")
    logger.info("#   ##   ##   ####    ####   ##  ##  #####         #####    ####   ##  ##  ##  ##        #")
    logger.info("#                                                                                        #")
    logger.info("##########################################################################################")
    logger.info(f"Starting WoundSurrogate {version}")
    logger.info("")

def make_run_dir(outdir, command: str, config_hash: str) -> str:
    """<outdir>/<command>-<hash12>-<timestamp>; an existing directory is never reused."""
    base = os.path.join(outdir, f"{command}-{config_hash[:12]}-{datetime.now().strftime('%Y%m%d-%H%M%S')}")
    path, suffix = base, 1
    while os.path.exists(path):
        path = f"{base}-{suffix}"
        suffix += 1
    os.makedirs(path)
    return path

def _geometry(options, config: WSConfig) -> WoundGeometry:
    return config.geometry(options.shape, options.xcut, options.ycut, options.weights)

def _variable_params(options) -> VariableParams:
    if options.params is not None:
        return VariableParams.from_file(options.params)
    return VariableParams.midpoint()

def _write_table(path, header: str, rows):
    with open(path, mode='w') as file:
        file.write(header + '\n')
        for row in rows:
            file.write(','.join(v if isinstance(v, str) else f"{v:g}" if isinstance(v, int) else repr(float(v))
                                for v in row) + '\n')

def cmd_simulate(options, config: WSConfig, run_dir):
    geometry = _geometry(options, config)
    var = _variable_params(options)
    params = config.kinetic_params()
    result = run_simulation(config.sim_config(t_end=options.t_end), geometry, var, params)
    result.save(run_dir)
    save_simulation_inputs(run_dir, params, var)
    trace = wound_boundary_trace(result)
    logger.info(f"RSAW minimum {trace.min_value:.4f} at t={trace.argmin_time:g}, final {trace.final_value:.4f}")

def _generate(options, config: WSConfig, run_dir, convex: bool):
    data = config.DATA
    n_sims = options.n_sims or (data['n_test_sims'] if convex else data['n_train_sims'])
    args = WSArguments()
    if convex:
        dataset = generate_convex_test_set(n_sims, config.sim_config(), config.SEED, config.kinetic_params(), args.JOBS)
    else:
        dataset = generate_training_set(n_sims, config.sim_config(), config.SEED, config.kinetic_params(), args.JOBS,
                                        data['times_per_sim'], data['points_per_sim'])
    dataset.provenance['config_hash'] = config.config_hash()
    save_dataset(dataset, run_dir)

def cmd_gen_train(options, config: WSConfig, run_dir):
    _generate(options, config, run_dir, convex=False)

def cmd_gen_test(options, config: WSConfig, run_dir):
    _generate(options, config, run_dir, convex=True)

def cmd_gen_year(options, config: WSConfig, run_dir):
    base = load_dataset(options.base)
    desk = config.DATA['year_scale'] == 'desk' and not options.full_scale
    extended = extend_year_dataset(base, options.scenario, config.sim_config(), config.SEED, config.kinetic_params(),
                                   desk=desk, jobs=WSArguments().JOBS, n_points=config.DATA['points_per_sim'])
    extended.provenance['config_hash'] = config.config_hash()
    save_dataset(extended, run_dir)

def train_ablation(dataset: Dataset, ablation: str, config: WSConfig, epochs=None, previous: DeepONetModel | None = None):
    train_set, val_set = split_dataset(dataset, config.TRAIN['split_fraction'], config.SEED, config.TRAIN['split_level'])
    train_config = config.train_config(epochs=epochs)
    if previous is not None:
        model = warm_start(previous)
        if model.ablation != ABLATIONS[ablation]:
            logger.warning(f"warm start keeps the ablation of the previous model, not '{ablation}'")
    else:
        normalization = Normalization.from_trunk(train_set.as_batch().trunk)
        model = DeepONetModel.create(ABLATIONS[ablation], normalization, np.random.default_rng([config.SEED, 0]),
                                     train_config.p, train_config.hidden)
    logger.info(f"training '{ablation}' on {len(train_set)} records, validating on {len(val_set)}")
    return train(model, train_set.as_batch(), val_set.as_batch(), train_config)

def cmd_train(options, config: WSConfig, run_dir):
    dataset = load_dataset(options.dataset)
    previous = load_model(options.warm_start) if options.warm_start else None
    model, history = train_ablation(dataset, options.ablation, config, options.epochs, previous)
    save_model(model, os.path.join(run_dir, 'model.yml'))
    history.to_csv(os.path.join(run_dir, 'loss_history.csv'))
    logger.info(f"validation MSE {history.val[0]:.4e} -> {history.val[-1]:.4e}")

def _evaluate_into(model: DeepONetModel, dataset: Dataset, name: str, config: WSConfig, directory):
    report, predicted = evaluate_model(model, dataset, name, config.EVAL['batch_size'], config.EVAL['rsaw'])
    report.to_files(directory)
    batch = dataset.as_batch()
    table = np.column_stack([dataset.sim_index, batch.trunk[:, 0:3], batch.target, predicted])
    _write_table(os.path.join(directory, 'predictions.csv'), 'sim,t,x,y,u1,u2,u1_pred,u2_pred',
                 ([int(row[0])] + list(row[1:]) for row in table))
    return report

def cmd_eval(options, config: WSConfig, run_dir):
    test = load_dataset(options.dataset)
    if options.ablation != 'all':
        _evaluate_into(load_model(options.model), test, os.path.basename(options.model), config, run_dir)
        return
    training = load_dataset(options.train_dataset)
    rows = []
    for name in ABLATIONS:
        directory = os.path.join(run_dir, name)
        os.makedirs(directory)
        model, history = train_ablation(training, name, config)
        save_model(model, os.path.join(directory, 'model.yml'))
        history.to_csv(os.path.join(directory, 'loss_history.csv'))
        report = _evaluate_into(model, test, name, config, directory)
        rows.append((name, report.r2, report.arrmse, report.arelerr))
    _write_table(os.path.join(run_dir, 'ablation_table.csv'), 'model,r2,arrmse,arelerr', rows)
    logger.info(f"{'model':>8} {'R2':>10} {'aRRMSE':>10} {'aRelErr':>10}")
    for name, r2, rrmse, relerr in rows:
        logger.info(f"{name:>8} {r2:10.5f} {rrmse:10.5f} {relerr:10.5f}")

def cmd_predict(options, config: WSConfig, run_dir):
    model = load_model(options.model)
    geometry = _geometry(options, config)
    var = _variable_params(options)
    sim = config.sim_config(t_end=options.t_end)
    times = np.array(sim.recorded_steps()) * sim.dt
    horizon = float(model.normalization.trunk_hi[0])
    if times[-1] > horizon:
        logger.info(f"predicting up to t={times[-1]:g}, beyond the trained horizon t={horizon:g}")
    rim = geometry.rim_points(sim.element_size(geometry))
    points = rim if options.boundary_only else generate_mesh(geometry, sim.element_size(geometry)).nodes
    u, seconds = predict_field(model, var, geometry, times, points, config.TRAIN['predict_batch'])
    logger.info(f"{u.shape[0] * u.shape[1]} evaluations in {seconds:.4f}s")
    _write_table(os.path.join(run_dir, 'field.csv'), 't,x,y,u1,u2',
                 ((t, x, y, u1, u2) for t, u_t in zip(times, u) for (x, y), (u1, u2) in zip(points, u_t)))
    series = predict_rsaw(model, var, geometry, times, rim, config.TRAIN['predict_batch'])
    _write_table(os.path.join(run_dir, 'rsaw.csv'), 't,rsaw', zip(times, series))

def cmd_bench(options, config: WSConfig, run_dir):
    model = load_model(options.model)
    geometry = _geometry(options, config)
    var = _variable_params(options)
    params = config.kinetic_params()
    sim = config.sim_config()
    h = sim.element_size(geometry)
    times = np.array(sim.recorded_steps()) * sim.dt
    nodes = generate_mesh(geometry, h).nodes
    rim = geometry.rim_points(h)
    batch = config.TRAIN['predict_batch']
    report = bench_speedup(lambda: run_simulation(sim, geometry, var, params),
                           lambda: predict_field(model, var, geometry, times, nodes, batch),
                           lambda: predict_field(model, var, geometry, times, rim, batch),
                           config.EVAL['repeats'])
    with open(os.path.join(run_dir, 'timing'), mode='w') as file:
        file.write(f"workload = {len(times)} times x {len(nodes)} nodes ({len(rim)} rim nodes)\n")
        file.write(f"statistic = median of {report.repeats}\n")
        file.write(f"simulator_seconds = {report.simulator_seconds!r}\n")
        file.write(f"surrogate_seconds = {report.surrogate_seconds!r}\n")
        file.write(f"boundary_seconds = {report.boundary_seconds!r}\n")
        file.write(f"speedup = {report.speedup!r}\n")
        file.write(f"boundary_speedup = {report.boundary_speedup!r}\n")

def _find(run, name: str) -> str:
    for candidate in (os.path.join(run, name), os.path.join(run, 'final', name)):
        if os.path.isfile(candidate):
            return candidate
    raise DataException(argument=os.path.join(run, name), message="run directory lacks the file")

def cmd_export_plot(options, config: WSConfig, run_dir):
    copies = []
    if options.train_run:
        copies.append((_find(options.train_run, 'loss_history.csv'), 'loss_curve.csv'))
    if options.eval_run:
        copies.append((_find(options.eval_run, 'predictions.csv'), 'scatter.csv'))
        copies.append((_find(options.eval_run, 'rsaw_compare.csv'), 'rsaw_curves.csv'))
        copies.append((_find(options.eval_run, 'abs_error_profile.csv'), 'abs_error_profile.csv'))
    for source, target in copies:
        shutil.copyfile(source, os.path.join(run_dir, target))
        logger.info(f"exported {target}")

COMMANDS = {
    'simulate': cmd_simulate,
    'gen-train': cmd_gen_train,
    'gen-test': cmd_gen_test,
    'gen-year': cmd_gen_year,
    'train': cmd_train,
    'eval': cmd_eval,
    'predict': cmd_predict,
    'bench': cmd_bench,
    'export-plot': cmd_export_plot,
}

def cli_dispatch(argv=None) -> int:
    """
    Run one sub-command and return the process exit code
    (0 success, 2 config/usage, 3 simulation, 4 data, 5 training).
    """
    WSArguments.reset()
    WSConfig.reset()
    banner()
    try:
        logger.info("Reading Arguments ...")
        args = WSArguments(argv)

        logger.info("Reading Configuration ...")
        config = WSConfig(args.CONFIGFILE)
        if config.LOGGING['debug']:
            setDebugMode()

        run_dir = make_run_dir(args.OUTDIR, args.COMMAND, config.config_hash())
        config.write(os.path.join(run_dir, 'config.yml'))
        handler = addRunLogFile(os.path.join(run_dir, 'run.log')) if config.LOGGING['run_log'] else None
        try:
            logger.info(f"{args.COMMAND} -> {run_dir}")
            COMMANDS[args.COMMAND](args.OPTIONS, config, run_dir)
        finally:
            if handler is not None:
                removeRunLogFile(handler)
        logger.info(f"artifacts written to {run_dir}")
        return 0
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    except WSException as e:
        logger.error(f"{type(e).__name__}: {e}")
        logger.debug(traceback.format_exc())
        return e.exit_code
    except Exception as e:
        logger.error(f"Unexpected error: {e}")
        logger.error(traceback.format_exc())
        return 1

if __name__ == "__main__":
    sys.exit(cli_dispatch())
