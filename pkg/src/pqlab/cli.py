"""Command line entry point: prepare, train, sample, validate, game.

Every command is a pure function of (config file, input files, seeds):
rerunning a command with the same inputs rewrites byte-identical outputs.
Each command drops ``config.ini``, the fully resolved configuration it
actually ran with, into the output directory.

Artifact layout under [run] out_dir:

    config.ini             resolved config echo (every command)
    slices.npz             slice store          (prepare)
    dataset.manifest       counts and scale     (prepare)
    loss_log.csv           per-step loss rows   (train)
    checkpoint.npz         final state          (train)
    checkpoint_step<N>.npz cadence snapshots    (train, optional)
    paths_slice<I>.csv     sampled bundle       (sample)
    table_5_1.csv          validation summary   (validate)
    game_<product>_<level>.csv  one level row   (game)
    game_<product>.txt     aligned level table  (game)

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

import numpy as np

from . import market_paths as mp
from . import path_stats, pq_game, runconfig, sampler, training
from .denoiser import DenoiserConfig
from .diffusion import build_schedule
from .errors import ConfigError, DataError, PQLabError
from .objectives import LOSS_CSV_HEADER

# Salt mixed into the per-slice Q seed so the generator's sampling stream
# never collides with the GBM pricing stream of the same slice.
P_SOURCE_SALT = 0x50


def _child_seed(*parts) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def _ensure_out_dir(cfg: runconfig.RunConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _echo_config(cfg: runconfig.RunConfig) -> None:
    with open(os.path.join(cfg.out_dir, "config.ini"), "w", newline="") as fh:
        fh.write(runconfig.resolved_text(cfg))


def _load_dataset(cfg: runconfig.RunConfig):
    d = cfg.data
    if d.source == "synthetic":
        gen = mp.GeneratorConfig(
            n_days=d.n_days,
            s0=d.s0,
            mu1=d.mu1,
            mu2=d.mu2,
            sigma1=d.sigma1,
            sigma2=d.sigma2,
            p_switch=d.p_switch,
            start_date=d.start_date,
        )
        series = mp.synthesize_series(gen, seed=d.seed)
        rates = {
            w: mp.RateTable(w, [d.start_date], [d.rate]) for w in d.windows
        }
        return series, rates
    series = mp.load_series_csv(d.series_csv)
    rates = mp.load_rates_csv(d.rates_csv)
    missing = sorted(set(d.windows) - set(rates))
    if missing:
        raise DataError(
            f"{d.rates_csv} has no rate quotes for tenor(s) "
            f"{', '.join(str(m) for m in missing)}"
        )
    return series, rates


def _slices_path(cfg: runconfig.RunConfig) -> str:
    return os.path.join(cfg.out_dir, "slices.npz")


def _load_slices(cfg: runconfig.RunConfig):
    path = _slices_path(cfg)
    if not os.path.isfile(path):
        raise DataError(f"slice store not found: {path}; run `prepare` first")
    split = mp.load_slices(path)
    manifest_path = os.path.join(cfg.out_dir, "dataset.manifest")
    if not os.path.isfile(manifest_path):
        raise DataError(
            f"dataset manifest not found: {manifest_path}; run `prepare` first"
        )
    return split, mp.read_manifest(manifest_path)


def _resolve_checkpoint(cfg: runconfig.RunConfig, override) -> str:
    path = override or os.path.join(cfg.out_dir, "checkpoint.npz")
    if not os.path.isfile(path):
        raise DataError(f"checkpoint not found: {path}; run `train` first")
    return path


def _resolve_length(model: runconfig.ModelSection, l_max: int) -> int:
    block = 2 ** model.depth
    if model.input_length:
        if model.input_length < l_max:
            raise ConfigError(
                f"input_length {model.input_length} is shorter than the "
                f"longest slice ({l_max})"
            )
        if model.input_length % block:
            raise ConfigError(
                f"input_length {model.input_length} must be a multiple of {block}"
            )
        return model.input_length
    return max(l_max + (-l_max % block), block)


def _net_config(cfg: runconfig.RunConfig, l_max: int) -> DenoiserConfig:
    m = cfg.model
    return DenoiserConfig(
        input_length=_resolve_length(m, l_max),
        base_channels=m.base_channels,
        depth=m.depth,
        time_embed_dim=m.time_embed_dim,
        cond_embed_dim=m.cond_embed_dim,
        cond_hidden_dim=m.cond_hidden_dim,
    )


def _build_sched(cfg: runconfig.RunConfig):
    s = cfg.schedule
    return build_schedule(s.timesteps, s.beta_start, s.beta_end)


def cmd_prepare(cfg: runconfig.RunConfig) -> int:
    out = _ensure_out_dir(cfg)
    series, rates = _load_dataset(cfg)
    split = mp.slice_dataset(
        series, rates, cfg.data.windows, cfg.data.split_date, stride=cfg.data.stride
    )
    if not split.train:
        raise DataError(
            "no training slices survived; widen the series or shrink windows"
        )
    if not split.test:
        raise DataError(
            "no test slices survived; move split_date earlier or extend the series"
        )
    scale = training.compute_return_scale(split.train)
    mp.save_slices(_slices_path(cfg), split)
    manifest = {
        "train_slices": len(split.train),
        "test_slices": len(split.test),
        "l_max": split.l_max,
        "return_scale": repr(scale),
        "source": cfg.data.source,
        "windows": ",".join(str(w) for w in cfg.data.windows),
        "split_date": cfg.data.split_date,
    }
    for name, count in sorted(split.skipped.items()):
        manifest[f"skipped_{name}"] = count
    mp.write_manifest(os.path.join(out, "dataset.manifest"), manifest)
    _echo_config(cfg)
    print(
        f"prepared {len(split.train)} train / {len(split.test)} test slices "
        f"(l_max={split.l_max}, return_scale={scale:.6g})"
    )
    return 0


def cmd_train(cfg: runconfig.RunConfig, resume=None) -> int:
    out = _ensure_out_dir(cfg)
    split, manifest = _load_slices(cfg)
    scale = float(manifest["return_scale"])
    sched = _build_sched(cfg)
    net = _net_config(cfg, split.l_max)
    tcfg = training.TrainConfig(
        steps=cfg.train.steps,
        batch_size=cfg.train.batch_size,
        lr=cfg.train.lr,
        clip_norm=cfg.train.clip_norm,
        seed=cfg.train.seed,
        mode=cfg.model.mode,
        weights=cfg.loss.weights(),
        vol_window=cfg.loss.vol_window,
        vol_stride=cfg.loss.vol_stride,
        checkpoint_every=cfg.train.checkpoint_every,
    )
    log_path = os.path.join(out, "loss_log.csv")
    if resume:
        state = training.load_checkpoint(resume)
        if state.net != net:
            raise ConfigError("checkpoint network layout differs from config")
        if state.mode != cfg.model.mode:
            raise ConfigError(
                f"checkpoint mode {state.mode!r} differs from config "
                f"{cfg.model.mode!r}"
            )
        if not np.array_equal(state.sched.beta, sched.beta):
            raise ConfigError("checkpoint noise schedule differs from config")
        if state.return_scale != scale:
            raise ConfigError("checkpoint return scale differs from prepared data")
        if state.step > tcfg.steps:
            raise ConfigError(
                f"checkpoint already at step {state.step} > steps {tcfg.steps}"
            )
        fresh_log = not os.path.isfile(log_path)
    else:
        state = training.init_state(net, sched, cfg.model.mode, scale, cfg.train.seed)
        fresh_log = True

    checkpoint_fn = None
    if tcfg.checkpoint_every:
        def checkpoint_fn(st):
            training.save_checkpoint(
                os.path.join(out, f"checkpoint_step{st.step}.npz"), st
            )

    with open(log_path, "w" if fresh_log else "a", newline="") as fh:
        if fresh_log:
            fh.write(LOSS_CSV_HEADER + "\n")
        training.train(split.train, state, tcfg, log_fh=fh, checkpoint_fn=checkpoint_fn)
    training.save_checkpoint(os.path.join(out, "checkpoint.npz"), state)
    _echo_config(cfg)
    print(f"trained to step {state.step}; wrote {os.path.join(out, 'checkpoint.npz')}")
    return 0


def cmd_sample(cfg: runconfig.RunConfig, checkpoint=None, slice_idx: int = 0) -> int:
    out = _ensure_out_dir(cfg)
    split, _ = _load_slices(cfg)
    state = training.load_checkpoint(_resolve_checkpoint(cfg, checkpoint))
    if not 0 <= slice_idx < len(split.test):
        raise ConfigError(
            f"slice index {slice_idx} out of range (have {len(split.test)} test slices)"
        )
    s = split.test[slice_idx]
    scfg = sampler.SamplerConfig(
        num_steps=cfg.sampler.num_steps,
        eta=cfg.sampler.eta,
        seed=cfg.sampler.seed,
        n_paths=cfg.sampler.n_paths,
    )
    paths = sampler.sample_paths(state.model(), scfg, s.condition, state.sched)
    bundle = os.path.join(out, f"paths_slice{slice_idx}.csv")
    sampler.write_path_bundle(bundle, paths, s.condition, scfg)
    _echo_config(cfg)
    print(f"wrote {paths.shape[0]} paths x {paths.shape[1]} steps to {bundle}")
    return 0


def cmd_validate(cfg: runconfig.RunConfig, checkpoint=None) -> int:
    out = _ensure_out_dir(cfg)
    split, _ = _load_slices(cfg)
    state = training.load_checkpoint(_resolve_checkpoint(cfg, checkpoint))
    model = state.model()
    slices = split.test
    if cfg.validate.max_conditions:
        slices = slices[: cfg.validate.max_conditions]
    if not slices:
        raise DataError("no test slices to validate against")
    rows = []
    for i, s in enumerate(slices):
        scfg = sampler.SamplerConfig(
            num_steps=cfg.sampler.num_steps,
            eta=cfg.sampler.eta,
            seed=_child_seed(cfg.sampler.seed, i),
            n_paths=cfg.validate.n_paths,
        )
        gen = sampler.sample_paths(model, scfg, s.condition, state.sched)
        rows.append(path_stats.compare_condition(s.log_returns, gen))
    report = path_stats.aggregate_report(rows)
    path_stats.write_table_csv(os.path.join(out, "table_5_1.csv"), report)
    _echo_config(cfg)
    print(f"validated {len(rows)} conditions")
    for metric in path_stats.METRICS:
        print(f"{metric:12s} mean={report.mean(metric):.6f} std={report.std(metric):.6f}")
    return 0


def _model_p_source(model, sched, cfg: runconfig.RunConfig):
    """P values each slice by sampling the generator and compounding prices."""

    def source(s, q_params):
        scfg = sampler.SamplerConfig(
            num_steps=cfg.sampler.num_steps,
            eta=cfg.sampler.eta,
            seed=_child_seed(q_params.seed, P_SOURCE_SALT),
            n_paths=cfg.game.p_paths,
        )
        rets = sampler.sample_paths(model, scfg, s.condition, sched)
        return s.s0 * np.exp(np.cumsum(rets, axis=1))

    return source


def cmd_game(cfg: runconfig.RunConfig, checkpoint=None) -> int:
    out = _ensure_out_dir(cfg)
    split, _ = _load_slices(cfg)
    state = training.load_checkpoint(_resolve_checkpoint(cfg, checkpoint))
    gcfg = pq_game.GameConfig(
        threshold=cfg.game.threshold,
        q_paths=cfg.game.q_paths,
        seed=cfg.game.seed,
        discount=cfg.game.discount,
        threads=cfg.threads,
    )
    p_source = _model_p_source(state.model(), state.sched, cfg)
    for product in cfg.game.products:
        contract = cfg.contracts.build(product)
        outcomes = pq_game.run_game(
            split.test,
            contract,
            p_source,
            levels=cfg.game.levels or None,
            config=gcfg,
        )
        reports = [o.report for o in outcomes]
        for report in reports:
            name = f"game_{product}_{repr(float(report.level))}.csv"
            pq_game.write_game_csv(os.path.join(out, name), [report])
        table = pq_game.format_game_table(reports, title=product)
        with open(os.path.join(out, f"game_{product}.txt"), "w", newline="") as fh:
            fh.write(table)
        print(table, end="")
    _echo_config(cfg)
    return 0


def _apply_overrides(cfg: runconfig.RunConfig, args) -> runconfig.RunConfig:
    if args.out_dir:
        cfg = replace(cfg, out_dir=args.out_dir)
    if args.threads is not None:
        cfg = replace(cfg, threads=args.threads)
    if getattr(args, "steps", None) is not None:
        cfg = replace(cfg, train=replace(cfg.train, steps=args.steps))
    if getattr(args, "product", None):
        cfg = replace(
            cfg, game=replace(cfg.game, products=(args.product.strip().lower(),))
        )
    if getattr(args, "levels", None):
        try:
            levels = tuple(float(part) for part in args.levels.split(",") if part.strip())
        except ValueError as exc:
            raise ConfigError(f"--levels {args.levels!r}: {exc}") from exc
        cfg = replace(cfg, game=replace(cfg.game, levels=levels))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pqlab",
        description="Diffusion path generator, exotic pricing, and the P-Q quoting game.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="run configuration INI file")
        p.add_argument("--out-dir", default=None, help="override [run] out_dir")
        p.add_argument("--threads", type=int, default=None, help="cap worker count")

    p_prepare = sub.add_parser("prepare", help="slice the series into a dataset store")
    common(p_prepare)

    p_train = sub.add_parser("train", help="fit the denoiser on prepared slices")
    common(p_train)
    p_train.add_argument("--resume", default=None, help="checkpoint to continue from")
    p_train.add_argument("--steps", type=int, default=None, help="override [train] steps")

    p_sample = sub.add_parser("sample", help="draw paths for one test condition")
    common(p_sample)
    p_sample.add_argument("--checkpoint", default=None, help="checkpoint file")
    p_sample.add_argument("--slice", type=int, default=0, dest="slice_idx",
                          help="test slice index")

    p_validate = sub.add_parser("validate", help="compare generated vs held-out paths")
    common(p_validate)
    p_validate.add_argument("--checkpoint", default=None, help="checkpoint file")

    p_game = sub.add_parser("game", help="run the quoting game over test slices")
    common(p_game)
    p_game.add_argument("--checkpoint", default=None, help="checkpoint file")
    p_game.add_argument("--product", default=None, help="play a single product")
    p_game.add_argument("--levels", default=None,
                        help="comma-separated greediness levels")

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _apply_overrides(runconfig.load_config(args.config), args)
        if args.command == "prepare":
            return cmd_prepare(cfg)
        if args.command == "train":
            return cmd_train(cfg, resume=args.resume)
        if args.command == "sample":
            return cmd_sample(cfg, checkpoint=args.checkpoint,
                              slice_idx=args.slice_idx)
        if args.command == "validate":
            return cmd_validate(cfg, checkpoint=args.checkpoint)
        if args.command == "game":
            return cmd_game(cfg, checkpoint=args.checkpoint)
        raise ConfigError(f"unknown command {args.command!r}")
    except PQLabError as exc:
        print(f"pqlab: error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)


if __name__ == "__main__":
    sys.exit(main())
