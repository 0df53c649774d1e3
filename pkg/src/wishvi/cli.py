"""Command line interface.

Subcommands: simulate (synthetic data), train (fit one model), forecast
(covariances from a checkpoint), evaluate (the sliding-window protocol),
grad-check (finite differences against the gradient engine), and
variance-demo (the gradient-variance pathology of the noiseless model).

Every command that writes an output file also writes a sibling manifest
``<out>.manifest.json`` echoing the effective settings and seed. Exit
codes: 0 success, 2 configuration problems, 3 data problems, 4 numerical
failures.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, build_experiment, load_config
from .data import ReturnsDataset, extend_time_inputs, load_prices, make_splits
from .diagnostics import SyntheticSpec, generate_synthetic, gradient_variance_experiment
from .errors import ConfigError, DataError, InvalidInputError, NumericalError
from .forecast import evaluate_protocol, forecast_covariance
from .gp import default_inducing
from .inference import (
    load_checkpoint,
    objective_with_noise,
    save_checkpoint,
    select_checkpoint,
    train,
)
from .kernels import make_spec
from .likelihoods import make_model_config, variant_name
from .model import init_params

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_log_csv(path, log) -> None:
    # field order follows first appearance; val_score shows up late
    fields: list = []
    for record in log:
        for key in record:
            if key not in fields:
                fields.append(key)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields, restval="")
        writer.writeheader()
        writer.writerows(log)


def _write_manifest(out, command: str, cfg: ExperimentConfig, seed: int, extra=None) -> None:
    payload = {
        "command": command,
        "seed": seed,
        "settings": cfg.as_dict(),
    }
    if extra:
        payload.update(extra)
    _write_json(f"{out}.manifest.json", payload)


def _experiment_from_args(args) -> ExperimentConfig:
    mapping = load_config(args.config) if getattr(args, "config", None) else {}
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "jobs", None) is not None:
        overrides["jobs"] = args.jobs
    return build_experiment(mapping, **overrides)


def _load_dataset(path, cfg: ExperimentConfig) -> ReturnsDataset:
    suffix = Path(path).suffix.lower()
    if suffix == ".npz":
        try:
            with np.load(path, allow_pickle=False) as data:
                if "y" not in data.files:
                    raise DataError(f"dataset {path!r} has no 'y' array")
                y = np.asarray(data["y"], dtype=np.float64)
                names = [str(n) for n in data["names"]] if "names" in data.files else None
        except (OSError, ValueError) as exc:
            raise DataError(f"could not read dataset {path!r}: {exc}") from exc
        return ReturnsDataset.from_returns(y, names, demean=cfg.demean)
    table = load_prices(path)
    return ReturnsDataset.from_prices(
        table.prices,
        table.names,
        demean=cfg.demean,
        log1p_returns=cfg.log1p_returns,
    )


def _cmd_simulate(args) -> int:
    cfg = _experiment_from_args(args)
    rng = np.random.default_rng(cfg.seed)
    spec = SyntheticSpec(n=args.n, d=args.dim)
    data = generate_synthetic(spec, rng)
    np.savez(args.out, x=data.x, y=data.y, covariances=data.covariances)
    _write_manifest(args.out, "simulate", cfg, cfg.seed, {"n": args.n, "dim": args.dim})
    print(f"simulated {args.n} points in {args.dim} dimensions -> {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _experiment_from_args(args)
    dataset = _load_dataset(args.data, cfg)
    rng = np.random.default_rng(cfg.seed)
    config = make_model_config(cfg.variant, dataset.d, cfg.nu)
    kspec, kparams = make_spec(cfg.kernel)

    n = dataset.n
    n_val = int(round(cfg.val_fraction * n)) if cfg.val_fraction > 0.0 else 0
    n_val = min(max(n_val, 1 if cfg.val_fraction > 0.0 else 0), n - 1)
    cut = n - n_val
    x_train, y_train = dataset.x[:cut], dataset.y[:cut]
    x_val = dataset.x[cut:] if n_val else None
    y_val = dataset.y[cut:] if n_val else None

    z = default_inducing(cfg.n_inducing, float(x_train[0]), float(x_train[-1]))
    params = init_params(
        config, kspec, kparams, z, rng, scale_init=cfg.scale_init, noise_init=cfg.noise_init
    )
    result = train(
        config, kspec, params, x_train, y_train, cfg.train, rng, x_val=x_val, y_val=y_val
    )

    selected = result.params
    selected_step = None
    val_score = None
    if result.checkpoints:
        best = select_checkpoint(result)
        selected, selected_step, val_score = best.params, best.step, best.score
    is_final = selected_step is None or selected_step == cfg.train.n_steps - 1
    save_checkpoint(
        args.out,
        config,
        kspec,
        selected,
        opt_state=result.opt_state if is_final else None,
        meta={"n_train": int(cut), "variant": variant_name(config)},
    )
    log_path = args.log if args.log else f"{args.out}.log.csv"
    _write_log_csv(log_path, result.log)
    _write_manifest(
        args.out, "train", cfg, cfg.seed,
        {
            "data": str(args.data),
            "n_train": int(cut),
            "n_val": int(n_val),
            "selected_step": selected_step,
            "val_score": val_score,
            "final_elbo": result.log[-1]["elbo"] if result.log else None,
            "log": str(log_path),
        },
    )
    tail = f", selected step {selected_step}" if selected_step is not None else ""
    final = f"{result.log[-1]['elbo']:.4f}" if result.log else "n/a"
    print(f"trained {variant_name(config)} for {len(result.log)} steps, final elbo {final}{tail}")
    print(f"checkpoint -> {args.out}")
    return 0


def _cmd_forecast(args) -> int:
    cfg = _experiment_from_args(args)
    seed = args.seed if args.seed is not None else cfg.seed
    config, kspec, params, _, meta = load_checkpoint(args.checkpoint)
    n_train = args.n_train if args.n_train is not None else meta.get("n_train")
    if n_train is None:
        raise ConfigError(
            "checkpoint has no training-size record; pass --n-train to place the forecast grid"
        )
    x_star = extend_time_inputs(int(n_train), args.horizon)
    rng = np.random.default_rng(seed)
    result = forecast_covariance(config, kspec, params, x_star, rng, args.samples)
    np.savez(
        args.out,
        x=result.x,
        covariances=result.covariances,
        n_samples=result.n_samples,
        n_dropped=result.n_dropped,
    )
    _write_manifest(
        args.out, "forecast", cfg, seed,
        {
            "checkpoint": str(args.checkpoint),
            "horizon": args.horizon,
            "samples": args.samples,
            "n_dropped": result.n_dropped,
        },
    )
    print(
        f"forecast {args.horizon} steps from {args.checkpoint} "
        f"({result.n_dropped} dropped samples) -> {args.out}"
    )
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _experiment_from_args(args)
    dataset = _load_dataset(args.data, cfg)
    plan = make_splits(
        dataset.n,
        cfg.n_splits,
        cfg.horizon,
        val_fraction=cfg.val_fraction,
        val_split_index=cfg.val_split_index,
    )
    rng = np.random.default_rng(cfg.seed)
    result = evaluate_protocol(
        dataset,
        plan,
        variant=cfg.variant,
        rng=rng,
        nu=cfg.nu,
        n_inducing=cfg.n_inducing,
        kernel_tree=cfg.kernel,
        tcfg=cfg.train,
        forecast_samples=cfg.forecast_samples,
        scale_init=cfg.scale_init,
        noise_init=cfg.noise_init,
        jobs=cfg.jobs,
    )
    payload = {
        "variant": result.variant,
        "n_splits": plan.n_splits,
        "horizon": plan.horizon,
        "scores": result.scores.tolist(),
        "mean_score": float(result.scores.mean()),
        "std_score": float(result.scores.std()),
        "per_split": list(result.records),
    }
    _write_json(args.out, payload)
    _write_manifest(args.out, "evaluate", cfg, cfg.seed, {"data": str(args.data)})
    print(
        f"evaluated {result.variant} on {plan.n_splits} splits x {plan.horizon} steps, "
        f"log score {payload['mean_score']:.4f} +- {payload['std_score']:.4f} -> {args.out}"
    )
    return 0


def _cmd_grad_check(args) -> int:
    import jax

    cfg = _experiment_from_args(args)
    seed = args.seed if args.seed is not None else cfg.seed
    rng = np.random.default_rng(seed)
    config = make_model_config("n-wp", 2, 2)
    kspec, kparams = make_spec(cfg.kernel)
    x = np.arange(1, 9) / 8.0
    y = rng.standard_normal((8, 2)) * 0.5
    z = default_inducing(3, float(x[0]), float(x[-1]))
    params = init_params(config, kspec, kparams, z, rng)
    noise = rng.standard_normal((1, config.n_gps, x.size))

    def value(p):
        return objective_with_noise(config, kspec, p, x, y, noise)

    grads = jax.grad(value)(params)
    leaves, treedef = jax.tree.flatten(params)
    grad_leaves = jax.tree.leaves(grads)
    h = 1e-5
    worst = 0.0
    checked = 0
    for li, leaf in enumerate(leaves):
        flat = np.asarray(leaf).ravel()
        picks = range(flat.size) if flat.size <= 4 else rng.choice(flat.size, 4, replace=False)
        for idx in picks:
            # separate buffers per side: jax may alias numpy memory on CPU,
            # so a buffer must never be mutated after it enters a pytree
            plus_flat = flat.copy()
            plus_flat[idx] += h
            minus_flat = flat.copy()
            minus_flat[idx] -= h
            plus = jax.tree.unflatten(
                treedef, leaves[:li] + [plus_flat.reshape(leaf.shape)] + leaves[li + 1:]
            )
            minus = jax.tree.unflatten(
                treedef, leaves[:li] + [minus_flat.reshape(leaf.shape)] + leaves[li + 1:]
            )
            fd = (float(value(plus)) - float(value(minus))) / (2 * h)
            ad = float(np.asarray(grad_leaves[li]).ravel()[idx])
            scale = max(abs(fd), abs(ad), 1.0)
            worst = max(worst, abs(fd - ad) / scale)
            checked += 1

    tol = args.tolerance
    status = "ok" if worst <= tol else "FAILED"
    print(f"gradient check: {checked} coordinates, max relative error {worst:.3e} ({status})")
    if args.out:
        _write_json(args.out, {"checked": checked, "max_rel_error": worst, "tolerance": tol})
        _write_manifest(args.out, "grad-check", cfg, seed)
    if worst > tol:
        raise NumericalError(f"gradient check failed: {worst:.3e} > {tol:.1e}")
    return 0


def _cmd_variance_demo(args) -> int:
    cfg = _experiment_from_args(args)
    seed = args.seed if args.seed is not None else cfg.seed
    rng = np.random.default_rng(seed)
    result = gradient_variance_experiment(rng, n_draws=args.draws, noise=args.noise)
    print(f"gradient samples at latent coordinate {result.coordinate}, {args.draws} draws")
    print(f"  noiseless construction: mean {result.wp_mean:.4e}, std {result.wp_std:.4e}")
    print(f"  with noise {result.noise:g}:     mean {result.noisy_mean:.4e}, std {result.noisy_std:.4e}")
    ratio = result.wp_std / result.noisy_std if result.noisy_std > 0 else float("inf")
    print(f"  standard deviation ratio: {ratio:.3e}")
    if args.out:
        _write_json(
            args.out,
            {
                "wp_mean": result.wp_mean,
                "wp_std": result.wp_std,
                "noisy_mean": result.noisy_mean,
                "noisy_std": result.noisy_std,
                "std_ratio": ratio,
                "noise": result.noise,
                "draws": args.draws,
                "coordinate": list(result.coordinate),
            },
        )
        _write_manifest(args.out, "variance-demo", cfg, seed)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wishvi",
        description="Variational inference for Wishart process covariance models.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--jobs", type=int, help="worker processes where supported")
        if out_required:
            p.add_argument("--out", required=True, help="output path")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--n", type=int, default=400, help="number of observations")
    p.add_argument("--dim", type=int, default=3, help="dimension of each observation")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="fit a model on one dataset")
    common(p)
    p.add_argument("--data", required=True, help="price CSV or npz dataset")
    p.add_argument("--log", help="training log CSV path (default <out>.log.csv)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("forecast", help="forecast covariances from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, help="trained model npz")
    p.add_argument("--horizon", type=int, default=10, help="steps to forecast")
    p.add_argument("--samples", type=int, default=300, help="Monte Carlo samples")
    p.add_argument("--n-train", type=int, help="training size for the forecast grid")
    p.set_defaults(func=_cmd_forecast)

    p = sub.add_parser("evaluate", help="run the sliding-window protocol")
    common(p)
    p.add_argument("--data", required=True, help="price CSV or npz dataset")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("grad-check", help="finite-difference check of the gradients")
    common(p, out_required=False)
    p.add_argument("--out", help="optional JSON report path")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=_cmd_grad_check)

    p = sub.add_parser("variance-demo", help="gradient variance of the noiseless model")
    common(p, out_required=False)
    p.add_argument("--out", help="optional JSON report path")
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--noise", type=float, default=0.01)
    p.set_defaults(func=_cmd_variance_demo)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, InvalidInputError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
