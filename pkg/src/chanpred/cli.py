"""Command-line entry point: ``chanpred <command> [options]``."""

import argparse
import sys
import warnings

import numpy as np

from . import fileio, mobility
from .arfit import sample_autocorr, yule_walker
from .errors import ChanPredError, ExperimentError
from .evaluation import ExperimentConfig, outdated_baseline, run_experiment
from .mlp import MlpConfig, build_lmmse, predict_mlp, preprocess, train, windows
from .scm import ScmScenario, dft_pilot, generate_trace, ls_estimate, measure, sample_scenario
from .vkf import run_vkf


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def cmd_generate(args):
    if args.scenario:
        with open(args.scenario, encoding="utf-8") as fh:
            scenario = ScmScenario.from_text(fh.read())
        if args.speed is not None:
            scenario = scenario.with_speed(args.speed)
    else:
        overrides = {k: v for k, v in (("bs_rows", args.bs_rows), ("bs_cols", args.bs_cols),
                                       ("n_ue", args.n_ue)) if v is not None}
        scenario = sample_scenario(args.seed, preset=args.preset,
                                   speed_kmh=3.0 if args.speed is None else args.speed, **overrides)
    trace = generate_trace(scenario, args.slots)
    fileio.write_trace(args.out, trace)
    if args.scenario_out:
        with open(args.scenario_out, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(scenario.to_text())
    return 0


def cmd_measure(args):
    trace = fileio.read_trace(args.trace)
    tau = trace.n_ue if args.tau is None else args.tau
    pilot = dft_pilot(tau, trace.n_ue, 10.0 ** (args.snr_db / 10.0), m_r=trace.m_r)
    fileio.write_measurements(args.out, measure(trace, pilot, noise_seed=args.seed))
    return 0


def cmd_mobility(args):
    if args.calibrate:
        def sampler(seed, speed):
            return sample_scenario(seed, preset=args.preset, speed_kmh=speed)

        cal = mobility.calibrate_thresholds(_floats(args.calibrate), sampler=sampler,
                                            trials=args.trials, base_seed=args.seed)
        with open(args.thresholds, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(cal.thresholds.to_text())
        for speed, med in sorted(cal.medians.items()):
            print(f"median eta at {speed:g} km/h: {med:.6f}")
        return 0
    if not args.trace and not args.measurements:
        raise SystemExit("mobility needs --trace or --measurements (or --calibrate)")
    with open(args.thresholds, encoding="utf-8") as fh:
        thresholds = mobility.MobilityThresholds.from_text(fh.read())
    source = fileio.read_measurements(args.measurements) if args.measurements else \
        fileio.read_trace(args.trace)
    eta = mobility.snapshot_satc(source, slot=args.slot)
    speed = thresholds.classify(eta)
    print(f"eta={eta:.6f} speed_class_kmh={speed:g}")
    return 0


def cmd_fit_ar(args):
    meas = fileio.read_measurements(args.measurements)
    eps = None if args.eps == "default" else ("auto" if args.eps == "auto" else float(args.eps))
    acorr = sample_autocorr(meas, args.order, eps=eps, n_samples=args.n_samples,
                            noise_var=args.noise_var)
    fileio.write_ar_model(args.out, yule_walker(acorr))
    return 0


def cmd_train_mlp(args):
    meas = fileio.read_measurements(args.measurements)
    config = MlpConfig(input_order=args.order, hidden_layers=args.layers, nodes_per_layer=args.nodes,
                       learning_rate=args.lr, batch_size=args.batch_size, epochs=args.epochs,
                       seed=args.seed)
    n_train = args.n_train or meas.slots
    if args.raw:
        model = train(config, meas.y, n_train=n_train, targets=ls_estimate(meas.pilot, meas.y))
        model.raw_input = True
    else:
        ctx = build_lmmse(meas.pilot, meas, n_samples=n_train)
        model = train(config, preprocess(ctx, meas.y), n_train=n_train)
    fileio.write_mlp_model(args.out, model, include_optimizer=not args.no_optimizer)
    return 0


def cmd_predict(args):
    meas = fileio.read_measurements(args.measurements)
    pilot = meas.pilot
    if args.method == "outdated":
        pred = outdated_baseline(pilot, meas.y)
    elif args.method == "vkf":
        if not args.model:
            raise SystemExit("--model is required for --method vkf")
        pred = run_vkf(fileio.read_ar_model(args.model), pilot, meas).predictions
    else:
        if not args.model:
            raise SystemExit("--model is required for --method mlp")
        model = fileio.read_mlp_model(args.model)
        ctx = None if model.raw_input else build_lmmse(pilot, meas, n_samples=args.n_samples)
        pred = predict_mlp(model, ctx, windows(meas.y, model.input_order))
    # Row k predicts the slot after the k-th measurement (after the first I - 1 for mlp).
    mats = np.swapaxes(pred.reshape(pred.shape[0], pilot.n_ue, pilot.m_r), 1, 2)
    fileio.write_trace(args.out, mats)
    return 0


def cmd_evaluate(args):
    with open(args.config, encoding="utf-8") as fh:
        config = ExperimentConfig.from_text(fh.read())
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.snr_db is not None:
        changes["snr_grid_db"] = tuple(_floats(args.snr_db))
    if args.slots is not None:
        changes["slots"] = args.slots
    if args.orders is not None:
        order = ExperimentConfig.parse_value("ar_order", args.orders)
        changes["ar_order"] = changes["input_order"] = order
    if args.methods is not None:
        changes["methods"] = tuple(m.strip() for m in args.methods.split(",") if m.strip())
    if args.timing:
        changes["record_wallclock"] = True
    config = config.replace(**changes)
    try:
        table = run_experiment(config)
    except ExperimentError as exc:
        if exc.partial is not None:
            with open(args.out, "w", encoding="utf-8", newline="") as fh:
                fh.write(exc.partial.to_csv())
        print(f"error: {exc}", file=sys.stderr)
        return 3
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write(table.to_csv())
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="chanpred",
                                     description="Massive-MIMO channel traces and predictors.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a channel trace (SCMT)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speed", type=float, default=None, help="UE speed in km/h (default 3)")
    p.add_argument("--slots", type=int, default=1000)
    p.add_argument("--preset", default="umi_like")
    p.add_argument("--bs-rows", type=int)
    p.add_argument("--bs-cols", type=int)
    p.add_argument("--n-ue", type=int)
    p.add_argument("--scenario", help="key=value scenario file to use instead of sampling")
    p.add_argument("--scenario-out", help="also write the scenario as key=value text")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("measure", help="noisy pilot observations of a trace (SCMY)")
    p.add_argument("--trace", required=True)
    p.add_argument("--snr-db", type=float, default=20.0)
    p.add_argument("--tau", type=int, help="pilot length (default N)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("mobility", help="classify UE speed, or calibrate thresholds")
    p.add_argument("--trace")
    p.add_argument("--measurements")
    p.add_argument("--thresholds", required=True, help="threshold file to read (or write with --calibrate)")
    p.add_argument("--slot", type=int, default=1, help="compare slots SLOT-1 and SLOT")
    p.add_argument("--calibrate", help="comma-separated speeds in km/h")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--preset", default="umi_like")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_mobility)

    p = sub.add_parser("fit-ar", help="Yule-Walker fit from measurements (ARMX)")
    p.add_argument("--measurements", required=True)
    p.add_argument("--order", type=int, required=True)
    p.add_argument("--eps", default="auto",
                   help="diagonal loading: a number, 'auto' (default) or 'default' for 1e-6 tr(R0)/d")
    p.add_argument("--n-samples", type=int, default=None)
    p.add_argument("--noise-var", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit_ar)

    p = sub.add_parser("train-mlp", help="train the dense predictor (MLPX)")
    p.add_argument("--measurements", required=True)
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--epochs", type=int, default=1000)
    p.add_argument("--n-train", type=int, default=None)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--nodes", type=int, default=512)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--raw", action="store_true", help="train on unprocessed measurements")
    p.add_argument("--no-optimizer", action="store_true", help="omit Adam state from the file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_mlp)

    p = sub.add_parser("predict", help="one-step-ahead predictions (SCMT)")
    p.add_argument("--method", choices=("vkf", "mlp", "outdated"), required=True)
    p.add_argument("--model")
    p.add_argument("--measurements", required=True)
    p.add_argument("--n-samples", type=int, default=None,
                   help="measurements used for the LMMSE covariance (mlp)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="run an experiment config and write CSV")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--snr-db", help="comma-separated SNR grid")
    p.add_argument("--slots", type=int)
    p.add_argument("--orders", help="order for both predictors, or 'adaptive'")
    p.add_argument("--methods", help="comma-separated subset of methods")
    p.add_argument("--timing", action="store_true", help="record wallclock seconds (not reproducible)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return args.func(args)
    except (ChanPredError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
