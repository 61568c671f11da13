"""Command-line interface.

Subcommands: ``synth`` writes a synthetic panel plus a ready-to-run config;
``impute`` runs the full per-cell imputation with method selection;
``evaluate`` adds the ground-truth quality measures; ``densities`` and
``profile`` export plot-ready density grids and coefficient profiles.

Exit codes: 0 success, 1 configuration or data error, 2 partial success
(some cells were unfittable and passed through unimputed).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from censimpute.config import PipelineConfig, load_config, write_config
from censimpute.errors import CensImputeError, ConfigError
from censimpute.synthgen import COVARIATE_COLUMNS, SynthConfig, generate, write_outputs

CONFIG_ENV = "CENSIMPUTE_CONFIG"


def _config_from_args(args: argparse.Namespace) -> PipelineConfig:
    path = args.config or os.environ.get(CONFIG_ENV)
    if not path:
        raise ConfigError(f"no config file given (use --config or ${CONFIG_ENV})")
    config = load_config(path)
    overrides = {}
    for name in ("input", "truth", "output_dir", "seed", "workers", "draws"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "methods", None):
        overrides["methods"] = tuple(m.strip() for m in args.methods.split(","))
    if overrides:
        config = dataclasses.replace(config, **overrides)
        config.validate()
    return config


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help=f"config file (default: ${CONFIG_ENV})")
    parser.add_argument("--input", help="override input CSV path")
    parser.add_argument("--truth", help="override ground-truth CSV path")
    parser.add_argument("--output-dir", dest="output_dir", help="override output directory")
    parser.add_argument("--seed", type=int, help="override master seed")
    parser.add_argument("--workers", type=int, help="worker processes for per-cell fits")
    parser.add_argument("--draws", type=int, help="imputation draws per censored row")
    parser.add_argument("--methods", help="comma-separated method set override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="censimpute",
        description="Impute right-censored wages in longitudinal panels with "
        "automatic per-cell method selection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a synthetic panel and a ready config")
    synth.add_argument("--out", required=True, help="output directory")
    synth.add_argument("--persons", type=int, default=5000)
    synth.add_argument("--years", type=int, default=2, help="number of panel years")
    synth.add_argument("--first-year", type=int, default=2009)
    synth.add_argument(
        "--regime", choices=["constant", "location_scale", "lower_tail"], default="constant"
    )
    synth.add_argument("--share", type=float, default=0.12, help="target censoring share")
    synth.add_argument("--seed", type=int, default=12345)
    synth.add_argument("--genders", type=int, default=2, choices=[1, 2])
    synth.add_argument("--age-groups", type=int, default=2)
    synth.add_argument("--edu-groups", type=int, default=1)

    for name, help_text in (
        ("impute", "impute censored wages and select the best method per cell"),
        ("evaluate", "run the imputation and score it against ground truth"),
        ("densities", "export per-cell density grids for all methods"),
        ("profile", "export per-cell quantile-coefficient profiles"),
    ):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
    return parser


def _cmd_synth(args: argparse.Namespace) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SynthConfig(
        n_persons=args.persons,
        years=tuple(range(args.first_year, args.first_year + args.years)),
        genders=("m", "f")[: args.genders],
        n_age_groups=args.age_groups,
        n_edu_groups=args.edu_groups,
        regime=args.regime,
        target_censor_share=args.share,
        seed=args.seed,
    )
    result = generate(cfg)
    write_outputs(result, out / "panel.csv", out / "truth.csv")
    run_config = PipelineConfig(
        input="panel.csv",
        truth="truth.csv",
        output_dir="out",
        seed=args.seed,
        covariates=tuple(c for c in COVARIATE_COLUMNS if c != "age"),
        censor_rules=tuple(result.rules),
        base_dir=out,
    )
    write_config(run_config, out / "config.txt")
    print(
        f"wrote {len(result.store)} spells to {out / 'panel.csv'} "
        f"(censoring share {result.realized_censor_share:.3f}); config at {out / 'config.txt'}"
    )
    return 0


def _cmd_impute(args: argparse.Namespace) -> int:
    from censimpute.pipeline import run_impute

    config = _config_from_args(args)
    result, out_dir = run_impute(config)
    n_imputed = int((result.store["method_used"] != "none").sum())
    print(
        f"imputed {n_imputed} censored rows across "
        f"{sum(1 for o in result.outcomes.values() if o.candidates)} cells; outputs in {out_dir}"
    )
    if result.status != 0:
        skipped = [o.key.label for o in result.outcomes.values() if (o.unfittable or o.error) and o.n_censored]
        print(f"warning: {len(skipped)} cells passed through unimputed: {', '.join(skipped[:8])}")
    return result.status


def _cmd_evaluate(args: argparse.Namespace) -> int:
    from censimpute.pipeline import run_evaluate, write_impute_outputs

    config = _config_from_args(args)
    metrics, agreement, result = run_evaluate(config)
    write_impute_outputs(result, config)
    out_dir = config.resolve(config.output_dir)
    print(f"evaluated {metrics['cell'].nunique() if not metrics.empty else 0} cells; outputs in {out_dir}")
    if not agreement.empty:
        for row in agreement.itertuples(index=False):
            print(f"  selection agreement on {row.measure}: {row.agreement:.2f} over {row.cells} cells")
    return result.status


def _cmd_densities(args: argparse.Namespace) -> int:
    from censimpute.pipeline import export_densities, load_store

    config = _config_from_args(args)
    store = load_store(config)
    grids = export_densities(store, config)
    out_dir = config.resolve(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for label, frame in grids.items():
        frame.to_csv(out_dir / f"densities_{label}.csv", index=False)
    print(f"wrote {len(grids)} density files to {out_dir}")
    return 0


def _cmd_profile(args: argparse.Namespace) -> int:
    from censimpute.pipeline import export_profiles, load_store

    config = _config_from_args(args)
    store = load_store(config)
    profiles = export_profiles(store, config)
    out_dir = config.resolve(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for label, frame in profiles.items():
        frame.to_csv(out_dir / f"profile_{label}.csv", index=False)
    print(f"wrote {len(profiles)} profile files to {out_dir}")
    return 0


_COMMANDS = {
    "synth": _cmd_synth,
    "impute": _cmd_impute,
    "evaluate": _cmd_evaluate,
    "densities": _cmd_densities,
    "profile": _cmd_profile,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except CensImputeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
