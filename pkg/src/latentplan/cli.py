"""Command-line entry point: ``latentplan <command> [flags]``.

Exit codes are 0 on success, 1 on runtime or I/O failure and 2 on usage or
validation errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from latentplan import pipeline as P
from latentplan.checkpoint import CorruptFileError, load_checkpoint, save_checkpoint
from latentplan.config import Config
from latentplan.env import generate_track
from latentplan.rollouts import read_rollouts, write_rollouts
from latentplan.viz import render_svg
from latentplan.worldmodel import VAE, ModelDims, WorldModel, dims_from_params

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load_config(path: str | None, **overrides) -> Config:
    try:
        cfg = Config.from_file(path) if path else Config()
    except ValueError as exc:
        raise UsageError(f"{path}: {exc}") from None
    changes = {k: v for k, v in overrides.items() if v is not None}
    try:
        cfg = cfg.replace(**changes)
        cfg.planner_config()
        cfg.env_config()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return cfg


def _load_model(path: str, cfg: Config) -> WorldModel:
    try:
        return WorldModel.from_tensors(load_checkpoint(path), sample_latents=cfg.sample_latents)
    except KeyError as exc:
        raise CorruptFileError(f"{path}: missing tensor {exc}") from None
    except ValueError as exc:
        if isinstance(exc, CorruptFileError):
            raise
        raise CorruptFileError(f"{path}: {exc}") from None


def _parse_values(text: str) -> list[int]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise UsageError("value list must not be empty")
    try:
        return [int(s) for s in items]
    except ValueError:
        raise UsageError(f"values must be integers, got {text!r}") from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_collect(args) -> int:
    if args.episodes < 1:
        raise UsageError("episodes must be ≥ 1")
    if args.steps < 1:
        raise UsageError("steps must be ≥ 1")
    if args.policy == "plan" and not args.model:
        raise UsageError("--model is required for the plan policy")
    cfg = _load_config(args.config)
    model = _load_model(args.model, cfg) if args.policy == "plan" else None
    rollouts = P.collect_rollouts(args.policy, args.episodes, args.steps, args.seed, cfg, model)
    write_rollouts(args.out, rollouts)
    for i, r in enumerate(rollouts):
        print(f"episode {i} (track {args.seed + i}): {len(r)} steps, reward {r.total_reward:.2f}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.component == "mdrnn" and not args.vae:
        raise UsageError("--vae is required when training the mdrnn component")
    rollouts = read_rollouts(args.data)
    if not rollouts:
        raise UsageError(f"{args.data}: no rollouts listed in the manifest")
    dims = cfg.model_dims()
    if args.component == "vae":
        vae, trace = P.train_vae(rollouts, cfg.vae_epochs, cfg.vae_lr, cfg.vae_batch, cfg.seed, dims, cfg.kl_weight)
        tensors = {f"vae.{k}": v for k, v in vae.params.items()}
    else:
        try:
            vae_params = {k[4:]: v for k, v in load_checkpoint(args.vae).items() if k.startswith("vae.")}
            if not vae_params:
                raise CorruptFileError(f"{args.vae}: no vae.* tensors")
            vae = VAE(dims_from_params(vae_params), vae_params)
        except KeyError as exc:
            raise CorruptFileError(f"{args.vae}: missing tensor {exc}") from None
        dims = ModelDims(
            latent_dim=vae.dims.latent_dim, hidden_dim=cfg.hidden_dim, mixtures=cfg.mixtures, enc_hidden=vae.dims.enc_hidden
        )
        latent = P.encode_rollouts(vae, rollouts)
        mdrnn, trace = P.train_mdrnn(
            latent, cfg.mdrnn_epochs, cfg.mdrnn_lr, cfg.mdrnn_batch, cfg.bptt_len, cfg.seed, dims
        )
        tensors = WorldModel(vae, mdrnn).to_tensors()
    save_checkpoint(args.out, tensors)
    loss_path = Path(args.loss) if args.loss else Path(str(args.out) + ".loss.csv")
    loss_path.write_text("epoch,loss\n" + "".join(f"{i + 1},{v:.6f}\n" for i, v in enumerate(trace)))
    print(f"wrote {args.out} and {loss_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.tracks < 1:
        raise UsageError("tracks must be ≥ 1")
    cfg = _load_config(args.config, horizon=args.horizon, generations=args.generations)
    model = _load_model(args.model, cfg)
    report = P.evaluate(model, cfg.planner_config(), args.tracks, args.seed, cfg, policy=args.policy)
    if args.report:
        report.write(args.report)
    print(report.summary())
    return EXIT_OK


def cmd_iterate(args) -> int:
    cfg = _load_config(args.config, iterations=args.iterations)
    if cfg.iterations < 0:
        raise UsageError("iterations must be ≥ 0")
    result = P.run_iterative(cfg, args.out)
    for i, r in enumerate(result.reports):
        print(f"iteration {i}: {r.summary()}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    values = _parse_values(args.values)
    if any(v < 1 for v in values):
        raise UsageError(f"{args.param} values must be ≥ 1")
    cfg = _load_config(args.config)
    model = _load_model(args.model, cfg)
    rows = P.sweep(args.param, values, model, args.tracks, args.seed, cfg)
    Path(args.out).write_text(P.sweep_csv(args.param, rows))
    for v, r in rows:
        print(f"{args.param}={v}: {r.summary()}")
    return EXIT_OK


def cmd_viz(args) -> int:
    if args.every < 1:
        raise UsageError("every must be ≥ 1")
    cfg = _load_config(args.config)
    model = _load_model(args.model, cfg)
    (episode,) = P.run_episodes(
        "plan", [args.track_seed], cfg.t_max, cfg, model, args.track_seed, keep_plans=args.every if args.show_plans else 0
    )
    spec = generate_track(args.track_seed, cfg.env_config())
    svg = render_svg(spec, episode, model, cfg.env_config(), show_plans=args.show_plans)
    Path(args.out).write_text(svg)
    print(f"track {args.track_seed}: reward {episode.score:.2f}, wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentplan", description="World-model planning experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="record rollouts")
    p.add_argument("--policy", choices=["random", "plan", "oracle"], default="random")
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train", help="train the VAE or the MDN-RNN")
    p.add_argument("--component", choices=["vae", "mdrnn"], required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--vae", help="checkpoint holding the VAE (mdrnn only)")
    p.add_argument("--out", required=True)
    p.add_argument("--loss", help="loss trace CSV (default: <out>.loss.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score the planner on fresh tracks")
    p.add_argument("--model", required=True)
    p.add_argument("--tracks", type=int, default=20)
    p.add_argument("--horizon", type=int)
    p.add_argument("--generations", type=int)
    p.add_argument("--seed", type=int, default=1_000_000)
    p.add_argument("--policy", choices=["plan", "random", "oracle"], default="plan")
    p.add_argument("--config")
    p.add_argument("--report")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("iterate", help="iterative training")
    p.add_argument("--config")
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_iterate)

    p = sub.add_parser("sweep", help="horizon or generations sweep")
    p.add_argument("--model", required=True)
    p.add_argument("--param", choices=["horizon", "generations"], required=True)
    p.add_argument("--values", required=True, help="comma-separated integers")
    p.add_argument("--tracks", type=int, default=20)
    p.add_argument("--seed", type=int, default=1_000_000)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("viz", help="SVG of one planning episode")
    p.add_argument("--model", required=True)
    p.add_argument("--track-seed", type=int, default=0)
    p.add_argument("--show-plans", action="store_true")
    p.add_argument("--every", type=int, default=10, help="plan snapshot interval in steps")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_viz)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorruptFileError, OSError, RuntimeError, ValueError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
