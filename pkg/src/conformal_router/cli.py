"""Command-line pipeline: calibrate, select-alpha, evaluate, sweep, serve.

Configuration precedence is flags > TOML config file > built-in defaults.
All randomness flows from the single top-level seed. Exit codes: 0 ok,
2 configuration error, 3 data error, 4 backend error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - version-dependent import
    import tomli as tomllib

from .conformal import CalibrationModel, calibrate
from .dataset import MCQRecord, SplitSpec, gold_scores, load_records, split
from .errors import BackendError, ConformalRouterError, DataError, ValidationError
from .evaluation import (
    EvaluationReport,
    accuracy,
    evaluate_strategy,
    render_table,
    write_report_csv,
    write_report_json,
)
from .fbe import DEFAULT_BETA, SetSizeHistogram, fbe, select_alpha
from .routing import StrategyConfig, StrategyKind, run_strategy


class ConfigError(ValidationError):
    """Configuration problem: bad flag, bad config file, missing input."""


DEFAULTS = {
    "alpha_grid": "0.01:0.50:0.01",
    "beta": DEFAULT_BETA,
    "tau": 1,
    "seed": 0,
    "strategies": "cp,always_cheap,always_expensive",
    "out": "out",
    "serve_port": 8080,
}

_STRATEGY_ALIASES = {
    "cp": StrategyKind.CP_ROUTER,
    "cp_router": StrategyKind.CP_ROUTER,
    "random": StrategyKind.RANDOM,
    "top1": StrategyKind.TOP1,
    "entropy": StrategyKind.ENTROPY,
    "dynathink": StrategyKind.DYNATHINK,
    "explicit": StrategyKind.EXPLICIT,
    "always_cheap": StrategyKind.ALWAYS_CHEAP,
    "always_expensive": StrategyKind.ALWAYS_EXPENSIVE,
}


@dataclass
class RunConfig:
    calibration: str | None = None
    test: str | None = None
    split_fraction: float | None = None
    stratify: bool = False
    alpha: float | None = None
    alpha_grid: str = DEFAULTS["alpha_grid"]
    beta: float = DEFAULTS["beta"]
    tau: int = DEFAULTS["tau"]
    seed: int = DEFAULTS["seed"]
    strategies: str = DEFAULTS["strategies"]
    out: str = DEFAULTS["out"]
    serve_port: int = DEFAULTS["serve_port"]
    gateway: dict = field(default_factory=dict)


def parse_alpha_grid(spec: str) -> tuple[float, ...]:
    """Parse "start:stop:step" (inclusive) or a comma-separated list."""
    try:
        if ":" in spec:
            start_s, stop_s, step_s = spec.split(":")
            start, stop, step = float(start_s), float(stop_s), float(step_s)
            if step <= 0 or stop < start:
                raise ValueError
            values = []
            k = 0
            while True:
                value = round(start + k * step, 10)
                if value > stop + 1e-12:
                    break
                values.append(value)
                k += 1
            grid = tuple(values)
        else:
            grid = tuple(float(v) for v in spec.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"cannot parse alpha grid {spec!r}") from None
    if not grid or any(not (0.0 < a < 1.0) for a in grid):
        raise ConfigError(f"alpha grid {spec!r} must be non-empty with values in (0, 1)")
    return grid


def parse_strategies(spec: str, tau: int, seed: int) -> list[tuple[str, StrategyConfig]]:
    """Parse "kind[:threshold]" tokens into named strategy configs."""
    out = []
    for token in spec.split(","):
        token = token.strip()
        if not token:
            continue
        kind_s, _, threshold_s = token.partition(":")
        kind = _STRATEGY_ALIASES.get(kind_s.strip().lower())
        if kind is None:
            raise ConfigError(f"unknown strategy {kind_s!r}")
        threshold = None
        if threshold_s:
            try:
                threshold = float(threshold_s)
            except ValueError:
                raise ConfigError(f"bad threshold in strategy token {token!r}") from None
        try:
            config = StrategyConfig(kind=kind, threshold=threshold, tau=tau, seed=seed)
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None
        name = kind.value if threshold is None else f"{kind.value}:{threshold:g}"
        out.append((name, config))
    if not out:
        raise ConfigError("strategy list is empty")
    return out


def load_config(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, the optional TOML file, and CLI flags."""
    merged = dict(DEFAULTS)
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            merged.update(tomllib.loads(path.read_text(encoding="utf-8")))
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
    for key in (
        "calibration",
        "test",
        "split_fraction",
        "alpha",
        "alpha_grid",
        "beta",
        "tau",
        "seed",
        "strategies",
        "out",
        "serve_port",
    ):
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if getattr(args, "stratify", False):
        merged["stratify"] = True
    known = {f for f in RunConfig.__dataclass_fields__}
    merged = {k: v for k, v in merged.items() if k in known}
    try:
        return RunConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def resolve_corpora(cfg: RunConfig) -> tuple[list[MCQRecord], list[MCQRecord]]:
    """Load (calibration, test) record lists per the configuration."""
    if not cfg.calibration:
        raise ConfigError("a calibration corpus path is required (--calibration)")
    if not Path(cfg.calibration).exists():
        raise ConfigError(f"calibration corpus {cfg.calibration} does not exist")
    records = load_records(cfg.calibration)
    if cfg.test:
        if not Path(cfg.test).exists():
            raise ConfigError(f"test corpus {cfg.test} does not exist")
        return records, load_records(cfg.test)
    if cfg.split_fraction is not None:
        spec = SplitSpec(
            calibration_fraction=cfg.split_fraction,
            seed=cfg.seed,
            stratify_by_gold=cfg.stratify,
        )
        return split(records, spec)
    raise ConfigError("need either --test or --split-fraction")


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _calibration_model(cal_records: Sequence[MCQRecord]) -> CalibrationModel:
    return calibrate(gold_scores(cal_records))


def cmd_calibrate(cfg: RunConfig) -> int:
    # Only the calibration side is needed; a test corpus is optional here.
    if not cfg.calibration:
        raise ConfigError("a calibration corpus path is required (--calibration)")
    if not Path(cfg.calibration).exists():
        raise ConfigError(f"calibration corpus {cfg.calibration} does not exist")
    records = load_records(cfg.calibration)
    if cfg.split_fraction is not None:
        spec = SplitSpec(
            calibration_fraction=cfg.split_fraction,
            seed=cfg.seed,
            stratify_by_gold=cfg.stratify,
        )
        records, _ = split(records, spec)
    model = _calibration_model(records)
    out = _out_dir(cfg)
    _write_json(out / "calibration.json", {"n": model.n, "scores": list(model.scores)})
    print(f"calibrated on {model.n} records -> {out / 'calibration.json'}")
    return 0


def cmd_select_alpha(cfg: RunConfig) -> int:
    cal_records, test_records = resolve_corpora(cfg)
    model = _calibration_model(cal_records)
    grid = parse_alpha_grid(cfg.alpha_grid)
    report = select_alpha(
        model, [r.distribution() for r in test_records], alpha_grid=grid, beta=cfg.beta
    )
    out = _out_dir(cfg)
    _write_json(out / "fbe.json", report.to_dict())
    print(f"selected alpha = {report.selected_alpha} (fbe = {report.selected.fbe:.6f})")
    return 0


def _evaluate_reports(
    cfg: RunConfig,
    cal_records: Sequence[MCQRecord],
    test_records: Sequence[MCQRecord],
) -> tuple[list[EvaluationReport], dict]:
    model = _calibration_model(cal_records)
    grid = parse_alpha_grid(cfg.alpha_grid)
    if cfg.alpha is not None:
        alpha = cfg.alpha
        fbe_payload = None
    else:
        fbe_report = select_alpha(
            model, [r.distribution() for r in test_records], alpha_grid=grid, beta=cfg.beta
        )
        alpha = fbe_report.selected_alpha
        fbe_payload = fbe_report.to_dict()
    from .conformal import quantile_threshold

    q_hat = quantile_threshold(model, alpha)

    cheap_decisions = run_strategy(
        test_records, StrategyConfig(kind=StrategyKind.ALWAYS_CHEAP)
    )
    acc_cheap = accuracy(cheap_decisions, test_records)

    reports = []
    for name, strat in parse_strategies(cfg.strategies, tau=cfg.tau, seed=cfg.seed):
        decisions = run_strategy(test_records, strat, q_hat=q_hat, alpha=alpha)
        set_sizes = None
        if strat.kind is StrategyKind.CP_ROUTER:
            set_sizes = [d.set_size for d in decisions]
        reports.append(
            evaluate_strategy(name, decisions, test_records, acc_cheap, set_sizes=set_sizes)
        )
    metadata = {
        "alpha": alpha,
        "q_hat": q_hat,
        "tau": cfg.tau,
        "beta": cfg.beta,
        "seed": cfg.seed,
        "acc_cheap_baseline": acc_cheap,
        "n_calibration": len(cal_records),
        "n_test": len(test_records),
        "fbe": fbe_payload,
        "generated_at": datetime.now(timezone.utc).isoformat(),
    }
    return reports, metadata


def cmd_evaluate(cfg: RunConfig) -> int:
    cal_records, test_records = resolve_corpora(cfg)
    reports, metadata = _evaluate_reports(cfg, cal_records, test_records)
    out = _out_dir(cfg)
    write_report_json(reports, out / "report.json", metadata=metadata)
    write_report_csv(reports, out / "report.csv")
    print(render_table(reports))
    print(f"\nreports -> {out / 'report.json'}, {out / 'report.csv'}")
    return 0


def cmd_sweep(cfg: RunConfig) -> int:
    cal_records, test_records = resolve_corpora(cfg)
    model = _calibration_model(cal_records)
    grid = parse_alpha_grid(cfg.alpha_grid)
    from .conformal import quantile_threshold

    cheap_decisions = run_strategy(
        test_records, StrategyConfig(kind=StrategyKind.ALWAYS_CHEAP)
    )
    acc_cheap = accuracy(cheap_decisions, test_records)

    rows = []
    for alpha in grid:
        q_hat = quantile_threshold(model, alpha)
        decisions = run_strategy(
            test_records,
            StrategyConfig(kind=StrategyKind.CP_ROUTER, tau=cfg.tau, seed=cfg.seed),
            q_hat=q_hat,
            alpha=alpha,
        )
        sizes = [d.set_size for d in decisions]
        report = evaluate_strategy("cp_router", decisions, test_records, acc_cheap, set_sizes=sizes)
        hist = SetSizeHistogram.from_sizes(sizes)
        rows.append(
            {
                "alpha": alpha,
                "q_hat": q_hat,
                "acc": report.acc,
                "trr": report.trr,
                "u_token": report.u_token,
                "apss": report.apss,
                "escalation_rate": report.escalation_rate,
                "fbe": fbe(hist, cfg.beta),
            }
        )
    out = _out_dir(cfg)
    _write_json(
        out / "sweep.json",
        {
            "beta": cfg.beta,
            "tau": cfg.tau,
            "seed": cfg.seed,
            "acc_cheap_baseline": acc_cheap,
            "rows": rows,
            "generated_at": datetime.now(timezone.utc).isoformat(),
        },
    )
    import csv as _csv

    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = _csv.DictWriter(
            fh,
            fieldnames=[
                "alpha", "q_hat", "acc", "trr", "u_token", "apss", "escalation_rate", "fbe",
            ],
        )
        writer.writeheader()
        writer.writerows(rows)
    print(f"swept {len(rows)} error rates -> {out / 'sweep.csv'}")
    return 0


def cmd_serve(cfg: RunConfig) -> int:  # pragma: no cover - long-running server
    import os

    import uvicorn

    from .gateway import (
        BackendConfig,
        BackendMode,
        ChatBackend,
        RouterState,
        RoutingGateway,
        build_app,
    )

    gw = cfg.gateway
    if "cheap" not in gw or "expensive" not in gw:
        raise ConfigError("serving requires [gateway.cheap] and [gateway.expensive] config")

    def backend(section: dict, mode: BackendMode) -> ChatBackend:
        try:
            return ChatBackend(
                BackendConfig(
                    name=section["name"],
                    base_url=section["base_url"],
                    model_id=section["model_id"],
                    mode=mode,
                    api_key_env=section.get("api_key_env"),
                    timeout_ms=int(section.get("timeout_ms", 30_000)),
                    max_retries=int(section.get("max_retries", 2)),
                    max_concurrency=int(section.get("max_concurrency", 8)),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"gateway backend config missing key {exc}") from None

    cal_records, test_records = resolve_corpora(cfg)
    model = _calibration_model(cal_records)
    if cfg.alpha is not None:
        state = RouterState.from_calibration(model, cfg.alpha, tau=cfg.tau)
    else:
        report = select_alpha(
            model,
            [r.distribution() for r in test_records],
            alpha_grid=parse_alpha_grid(cfg.alpha_grid),
            beta=cfg.beta,
        )
        state = RouterState.from_calibration(
            model, report.selected_alpha, tau=cfg.tau, fbe_report=report
        )
    gateway = RoutingGateway(
        cheap=backend(gw["cheap"], BackendMode.LOGPROB_SCORING),
        expensive=backend(gw["expensive"], BackendMode.GENERATION),
        state=state,
        harvest_path=gw.get("harvest"),
    )
    token_env = gw.get("admin_token_env")
    app = build_app(gateway, admin_token=os.environ.get(token_env) if token_env else None)
    uvicorn.run(app, host=gw.get("host", "127.0.0.1"), port=cfg.serve_port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="conformal-router",
        description="Conformal prediction-set routing between a cheap and an expensive model",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in (
        ("calibrate", cmd_calibrate),
        ("select-alpha", cmd_select_alpha),
        ("evaluate", cmd_evaluate),
        ("sweep", cmd_sweep),
        ("serve", cmd_serve),
    ):
        p = sub.add_parser(name)
        p.set_defaults(func=func)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--calibration", help="calibration corpus (JSONL)")
        p.add_argument("--test", help="test corpus (JSONL)")
        p.add_argument("--split-fraction", dest="split_fraction", type=float,
                       help="split the calibration corpus instead of providing --test")
        p.add_argument("--stratify", action="store_true",
                       help="stratify the split by gold label")
        p.add_argument("--alpha", type=float, help="pin the error rate (skip FBE selection)")
        p.add_argument("--alpha-grid", dest="alpha_grid",
                       help='candidate error rates, "start:stop:step" or comma list')
        p.add_argument("--beta", type=float, help="full-entropy weight in FBE")
        p.add_argument("--tau", type=int, help="set-size cutoff for cheap routing")
        p.add_argument("--seed", type=int, help="top-level random seed")
        p.add_argument("--strategies", help='comma list, e.g. "cp,random:0.3,top1:0.7"')
        p.add_argument("--out", help="output directory")
        p.add_argument("--serve-port", dest="serve_port", type=int, help="gateway port")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args)
        return args.func(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, DataError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return 4
    except ConformalRouterError as exc:  # pragma: no cover - safety net
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
