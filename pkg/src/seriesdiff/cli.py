"""Command-line pipeline: ingest -> train -> sample/augment -> backtest -> report.

Configuration is a flat JSON object of dotted keys merged over built-in
defaults; unknown keys are rejected so typos fail loudly.  Every artifact a
command writes embeds the SHA-256 digest of the resolved configuration, and
nothing written contains a timestamp or machine identity, so a rerun with the
same inputs, config, and seed is byte-identical.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, evaluate, samplers, scorenet
from .errors import DataError, NumericError, ParameterError
from .schedules import NoiseSchedule, make_linear_schedule, schedule_from_dict

logger = logging.getLogger(__name__)

__all__ = ["main", "DEFAULT_CONFIG"]

DEFAULT_CONFIG: dict[str, object] = {
    "schedule.steps": 400,
    "schedule.beta_start": 1e-4,
    "schedule.beta_end": 0.02,
    "data.window": 60,
    "data.step": 20,
    "data.ipo_head_days": 5,
    "data.max_interp_gap": 5,
    "data.max_long_gaps": 3,
    "data.max_gap_days": 60,
    "data.train_fraction": 0.8,
    "net.width": 64,
    "net.blocks": 4,
    "net.time_dim": 32,
    "net.embed_dim": 16,
    "net.cond_hidden": 128,
    "net.n_industries": 124,
    "net.activation": "silu",
    "train.epochs": 20,
    "train.batch_size": 64,
    "train.learning_rate": 1e-3,
    "train.p_uncond": 0.1,
    "train.weighting": "elbo",
    "sampler.mode": "ddim",
    "sampler.steps": 50,
    "sampler.eta": 0.0,
    "sampler.guidance": 7.5,
    "sampler.num_samples": 4,
    "sampler.lambda_antv": 0.03,
    "sampler.lambda_bp": 0.03,
    "sampler.antv_window": 3,
    "sampler.antv_alpha": 1.0,
    "sampler.antv_sigma": 1.0,
    "sampler.band_low": 1,
    "sampler.band_high": 10,
    "eval.top_k": 20,
    "eval.horizon": 5,
    "eval.lookback": 20,
}


def load_config(path: str | None) -> dict[str, object]:
    """Defaults overlaid with the JSON file at ``path``; unknown keys rejected."""
    config = dict(DEFAULT_CONFIG)
    if path is None:
        return config
    p = Path(path)
    if not p.exists():
        raise ParameterError(f"config file {p} does not exist")
    try:
        overrides = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ParameterError(f"config file {p} is not valid JSON: {exc}") from exc
    if not isinstance(overrides, dict):
        raise ParameterError(f"config file {p} must hold a JSON object")
    for key, value in overrides.items():
        if key not in DEFAULT_CONFIG:
            raise ParameterError(f"unknown config key {key!r}")
        default = DEFAULT_CONFIG[key]
        if isinstance(default, bool) or isinstance(value, bool):
            raise ParameterError(f"config key {key!r} has unsupported boolean value")
        if isinstance(default, int) and not isinstance(value, int):
            raise ParameterError(f"config key {key!r} must be an integer, got {value!r}")
        if isinstance(default, float) and not isinstance(value, (int, float)):
            raise ParameterError(f"config key {key!r} must be a number, got {value!r}")
        if isinstance(default, str) and not isinstance(value, str):
            raise ParameterError(f"config key {key!r} must be a string, got {value!r}")
        config[key] = float(value) if isinstance(default, float) else value
    return config


def config_digest(config: dict[str, object]) -> str:
    """SHA-256 of the canonical JSON form of the resolved configuration."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _write_json(obj: dict, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _schedule_from_config(config: dict[str, object]) -> NoiseSchedule:
    return make_linear_schedule(
        int(config["schedule.steps"]),
        float(config["schedule.beta_start"]),
        float(config["schedule.beta_end"]),
    )


def _load_schedule_for(checkpoint_path: str, override: str | None) -> NoiseSchedule:
    """The schedule saved next to the checkpoint at train time, or an explicit file."""
    path = Path(override) if override else Path(checkpoint_path).parent / "schedule.json"
    if not path.exists():
        raise DataError(f"schedule file {path} does not exist")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"schedule file {path} is not valid JSON: {exc}") from exc
    return schedule_from_dict(obj)


def _parse_board(text: str) -> dataio.Board:
    try:
        return dataio.Board(int(text))
    except ValueError:
        pass
    try:
        return dataio.Board[text.upper()]
    except KeyError:
        names = ", ".join(b.name for b in dataio.Board)
        raise ParameterError(f"unknown board {text!r}; expected one of {names}") from None


def _parse_ratio(text: str) -> tuple[int, int]:
    parts = text.split(":")
    if len(parts) != 2:
        raise ParameterError(f"ratio must look like REAL:SYNTH, got {text!r}")
    try:
        real, synth = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParameterError(f"ratio parts must be integers, got {text!r}") from None
    if real < 1 or synth < 0:
        raise ParameterError(f"ratio needs REAL >= 1 and SYNTH >= 0, got {text!r}")
    return real, synth


def _require_seed(args: argparse.Namespace) -> int:
    if args.seed is None:
        raise ParameterError("--seed is required for this command")
    return int(args.seed)


def _net_config(config: dict[str, object], input_len: int) -> scorenet.ScoreNetConfig:
    return scorenet.ScoreNetConfig(
        input_len=input_len,
        width=int(config["net.width"]),
        blocks=int(config["net.blocks"]),
        time_dim=int(config["net.time_dim"]),
        embed_dim=int(config["net.embed_dim"]),
        cond_hidden=int(config["net.cond_hidden"]),
        n_industries=int(config["net.n_industries"]),
        activation=str(config["net.activation"]),
    )


def _sampler_config(
    config: dict[str, object],
    seed: int,
    num_samples: int | None = None,
    source: np.ndarray | None = None,
) -> samplers.SamplerConfig:
    return samplers.SamplerConfig(
        mode=str(config["sampler.mode"]),
        steps=int(config["sampler.steps"]),
        eta=float(config["sampler.eta"]),
        guidance=float(config["sampler.guidance"]),
        num_samples=num_samples if num_samples is not None else int(config["sampler.num_samples"]),
        lambda_antv=float(config["sampler.lambda_antv"]),
        lambda_bp=float(config["sampler.lambda_bp"]),
        antv_window=int(config["sampler.antv_window"]),
        antv_alpha=float(config["sampler.antv_alpha"]),
        antv_sigma=float(config["sampler.antv_sigma"]),
        band=(int(config["sampler.band_low"]), int(config["sampler.band_high"])),
        source=source,
        seed=seed,
    )


def cmd_ingest(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    records = dataio.read_close_csv(args.csv, n_industries=int(config["net.n_industries"]))
    windows, report = dataio.prepare_windows(
        records,
        length=int(config["data.window"]),
        step=int(config["data.step"]),
        ipo_head_days=int(config["data.ipo_head_days"]),
        max_interp_gap=int(config["data.max_interp_gap"]),
        max_long_gaps=int(config["data.max_long_gaps"]),
        max_gap_days=int(config["data.max_gap_days"]),
    )
    if not windows:
        raise DataError("ingest produced no windows; every record was skipped or too short")
    dataio.write_window_store(windows, out / "windows.jsonl")
    manifest = {"config_digest": config_digest(config), **report}
    _write_json(manifest, out / "manifest.json")
    logger.info("ingested %d windows from %d records", len(windows), len(records))
    print(f"wrote {len(windows)} windows to {out / 'windows.jsonl'}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    seed = _require_seed(args)
    out = _out_dir(args)
    store = dataio.read_window_store(args.store)
    length = int(config["data.window"])
    if any(w.values.size != length for w in store):
        raise DataError(
            f"store {args.store} holds windows of a different length than "
            f"data.window={length}"
        )
    train_split, test_split = dataio.split_train_test(
        store, train_fraction=float(config["data.train_fraction"])
    )
    windows = np.stack([w.values for w in train_split])
    conditions = [w.condition for w in train_split]
    schedule = _schedule_from_config(config)
    result = scorenet.train(
        windows,
        conditions,
        schedule,
        scorenet.TrainConfig(
            epochs=int(config["train.epochs"]),
            batch_size=int(config["train.batch_size"]),
            learning_rate=float(config["train.learning_rate"]),
            p_uncond=float(config["train.p_uncond"]),
            weighting=str(config["train.weighting"]),
            seed=seed,
        ),
        net_config=_net_config(config, length),
    )
    digest = config_digest(config)
    scorenet.save_checkpoint(
        result.params,
        out / "checkpoint.json",
        meta={
            "config_digest": digest,
            "seed": seed,
            "n_train_windows": len(train_split),
            "n_test_windows": len(test_split),
        },
    )
    (out / "schedule.json").write_text(schedule.to_json() + "\n")
    with (out / "loss.csv").open("w") as fh:
        fh.write("epoch,loss\n")
        for epoch, loss in enumerate(result.epoch_losses, start=1):
            fh.write(f"{epoch},{loss!r}\n")
    print(
        f"trained on {len(train_split)} windows ({len(test_split)} held out); "
        f"checkpoint at {out / 'checkpoint.json'}"
    )
    return 0


def _emit_samples(
    fh,
    result: samplers.SampleResult,
    base: dict,
) -> None:
    for i in range(result.samples.shape[0]):
        obj = {**base, "kind": "sample", "index": i, "values": result.samples[i].tolist()}
        fh.write(json.dumps(obj, sort_keys=True) + "\n")
    obj = {**base, "kind": "mean", "index": None, "values": result.mean.tolist()}
    fh.write(json.dumps(obj, sort_keys=True) + "\n")


def cmd_sample(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    seed = _require_seed(args)
    out = _out_dir(args)
    params = scorenet.load_checkpoint(args.checkpoint)
    schedule = _load_schedule_for(args.checkpoint, args.schedule)
    if (args.industry is None) != (args.board is None):
        raise ParameterError("--industry and --board must be given together")
    guidance = float(config["sampler.guidance"])
    if args.industry is None:
        if guidance != 0.0:
            raise ParameterError(
                "unconditional sampling needs sampler.guidance = 0; "
                "pass --industry/--board to sample a condition"
            )
        condition = None
        industry_id: int | None = None
        board: dataio.Board | None = None
    else:
        board = _parse_board(args.board)
        industry_id = int(args.industry)
        condition = scorenet.encode_condition(industry_id, int(board), params)
    cfg = _sampler_config(config, seed)
    result = samplers.sample(params, schedule, cfg, condition)
    base = {
        "industry_id": industry_id,
        "board": board.name if board is not None else None,
        "seed": seed,
        "config_digest": config_digest(config),
    }
    with (out / "samples.jsonl").open("w") as fh:
        _emit_samples(fh, result, base)
    print(f"wrote {result.samples.shape[0]} samples and their mean to {out / 'samples.jsonl'}")
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    seed = _require_seed(args)
    out = _out_dir(args)
    params = scorenet.load_checkpoint(args.checkpoint)
    schedule = _load_schedule_for(args.checkpoint, args.schedule)
    store = dataio.read_window_store(args.store)
    board = _parse_board(args.board)
    real, synth = _parse_ratio(args.ratio)
    targets = [w for w in store if w.board == board and not w.synthetic]
    if not targets:
        raise DataError(f"store has no real windows on board {board.name}")
    length = params.config.input_len
    if any(w.values.size != length for w in targets):
        raise DataError("store window length does not match the checkpoint input length")
    n_synth = (len(targets) * synth) // real
    streams = np.random.SeedSequence(seed).spawn(max(n_synth, 1))
    digest = config_digest(config)
    synthetic: list[dataio.SeriesWindow] = []
    for i in range(n_synth):
        source_window = targets[i % len(targets)]
        condition = scorenet.encode_condition(
            source_window.industry_id, int(source_window.board), params
        )
        cfg = _sampler_config(
            config,
            seed=seed,
            num_samples=int(config["sampler.num_samples"]) if args.use_mean else 1,
            source=source_window.values if args.transfer else None,
        )
        rng = np.random.default_rng(streams[i])
        if args.use_mean:
            values = np.stack(
                [
                    samplers.sample_one(params, schedule, cfg, condition, rng)
                    for _ in range(cfg.num_samples)
                ]
            ).mean(axis=0)
        else:
            values = samplers.sample_one(params, schedule, cfg, condition, rng)
        synthetic.append(
            dataio.SeriesWindow(
                ticker=source_window.ticker,
                start_date=source_window.start_date,
                values=values,
                mean=0.0,
                scale=1.0,
                industry_id=source_window.industry_id,
                board=source_window.board,
                synthetic=True,
            )
        )
    dataio.write_window_store(list(store) + synthetic, out / "augmented.jsonl")
    _write_json(
        {
            "config_digest": digest,
            "board": board.name,
            "ratio": f"{real}:{synth}",
            "transfer": bool(args.transfer),
            "use_mean": bool(args.use_mean),
            "n_real_board_windows": len(targets),
            "n_synthetic": n_synth,
            "n_total": len(store) + n_synth,
            "seed": seed,
        },
        out / "augment_manifest.json",
    )
    print(
        f"added {n_synth} synthetic windows for board {board.name}; "
        f"store at {out / 'augmented.jsonl'}"
    )
    return 0


def _equity_svg(dates: list[str], cumulative: np.ndarray) -> str:
    """Minimal self-contained line chart of the compounded return path."""
    width, height, pad = 640.0, 240.0, 10.0
    y = np.asarray(cumulative, dtype=np.float64)
    lo, hi = float(y.min()), float(y.max())
    span = hi - lo if hi > lo else 1.0
    n = y.shape[0]
    points = []
    for i in range(n):
        px = pad + (width - 2 * pad) * (i / (n - 1) if n > 1 else 0.5)
        py = height - pad - (height - 2 * pad) * ((y[i] - lo) / span)
        points.append(f"{px:.2f},{py:.2f}")
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {width:.0f} {height:.0f}">'
        f'<title>cumulative return, {dates[0]} to {dates[-1]}</title>'
        f'<polyline fill="none" stroke="black" stroke-width="1.5" '
        f'points="{" ".join(points)}"/></svg>\n'
    )


def cmd_backtest(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    out = _out_dir(args)
    panel = evaluate.read_panel_csv(args.panel)
    k = int(config["eval.top_k"])
    result = evaluate.topk_dropk_backtest(panel, k=k)
    summary = evaluate.summarize_backtest(panel, k=k)
    summary["config_digest"] = config_digest(config)
    _write_json(summary, out / "summary.json")
    with (out / "backtest.csv").open("w") as fh:
        fh.write("date,daily_return,cumulative_rr\n")
        for d, date in enumerate(result.dates):
            fh.write(f"{date},{result.daily_returns[d]!r},{result.cumulative[d]!r}\n")
    (out / "equity.svg").write_text(_equity_svg(result.dates, result.cumulative))
    print(
        f"backtest over {len(result.dates)} dates: cumulative return "
        f"{result.cumulative_return:.4%}, turnover {result.turnover}"
    )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    if not run_dir.is_dir():
        raise DataError(f"run directory {run_dir} does not exist")
    out = Path(args.out) if args.out else run_dir
    out.mkdir(parents=True, exist_ok=True)
    report: dict[str, object] = {}
    manifest = run_dir / "manifest.json"
    if manifest.exists():
        report["ingest"] = json.loads(manifest.read_text())
    augment_manifest = run_dir / "augment_manifest.json"
    if augment_manifest.exists():
        report["augment"] = json.loads(augment_manifest.read_text())
    checkpoint = run_dir / "checkpoint.json"
    if checkpoint.exists():
        report["train"] = scorenet.read_checkpoint_meta(checkpoint)
    loss_csv = run_dir / "loss.csv"
    if loss_csv.exists():
        lines = [ln for ln in loss_csv.read_text().splitlines()[1:] if ln]
        losses = [float(ln.split(",")[1]) for ln in lines]
        if losses:
            report["loss"] = {
                "epochs": len(losses),
                "first": losses[0],
                "last": losses[-1],
            }
    summary = run_dir / "summary.json"
    if summary.exists():
        report["backtest"] = json.loads(summary.read_text())
    if not report:
        raise DataError(f"no known artifacts found under {run_dir}")
    _write_json(report, out / "report.json")
    for section in sorted(report):
        print(f"{section}: {json.dumps(report[section], sort_keys=True)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seriesdiff",
        description="Synthesize conditioned price windows and measure their value",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser, out_default: str | None = None) -> None:
        p.add_argument("--config", help="JSON file of dotted config keys")
        p.add_argument("--seed", type=int, help="random seed (required to train/sample/augment)")
        if out_default is None:
            p.add_argument("--out", required=True, help="output directory")
        else:
            p.add_argument("--out", default=out_default, help="output directory")

    p = sub.add_parser("ingest", help="CSV of closes -> repaired, windowed store")
    p.add_argument("csv", help="long-format close CSV")
    common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit the denoiser on a window store")
    p.add_argument("store", help="windows.jsonl from ingest or augment")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw windows from a checkpoint")
    p.add_argument("checkpoint", help="checkpoint.json from train")
    p.add_argument("--schedule", help="schedule JSON (default: next to the checkpoint)")
    p.add_argument("--industry", type=int, help="industry id to condition on")
    p.add_argument("--board", help="board name or id to condition on")
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("augment", help="extend a store with synthetic windows")
    p.add_argument("store", help="windows.jsonl to augment")
    p.add_argument("checkpoint", help="checkpoint.json from train")
    p.add_argument("--schedule", help="schedule JSON (default: next to the checkpoint)")
    p.add_argument("--board", required=True, help="target board name or id")
    p.add_argument("--ratio", required=True, help="REAL:SYNTH windows, e.g. 1:1")
    p.add_argument(
        "--transfer",
        action="store_true",
        help="start each draw from a partially corrupted real window and anchor its spectrum",
    )
    p.add_argument(
        "--use-mean",
        action="store_true",
        help="average sampler.num_samples draws per synthetic window instead of one draw",
    )
    common(p)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("backtest", help="top-k rotation on a prediction panel")
    p.add_argument("panel", help="CSV of date,ticker,score,realized_return")
    common(p)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("report", help="merge a run directory's artifacts")
    p.add_argument("run_dir", help="directory holding pipeline outputs")
    p.add_argument("--config", help="JSON file of dotted config keys")
    p.add_argument("--seed", type=int, help="unused; accepted for uniformity")
    p.add_argument("--out", help="output directory (default: the run directory)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr, format="%(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
