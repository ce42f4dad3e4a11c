"""Command-line front end.

Subcommands
-----------
recover             one experiment (any noise level; routes by regime)
noiseless           zero-noise pipeline shortcut
sweep               grid of experiments over one or more axes
compare-estimators  mean-estimator error vs separation, as plot data

Flags mirror the experiment configuration; ``--config FILE`` reads defaults
from a ``key = value`` text file (same keys as the long flags, values parsed
as JSON scalars with bare strings allowed) which explicit flags override.
Exit status is 0 when every trial completed and 2 when any trial failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .estimators import BatchPolicy
from .harness import (
    ExperimentConfig,
    TruthSpec,
    emit_plot_data,
    estimator_comparison,
    run_experiment,
    run_sweep,
)
from .recovery import RecoveryConfig


def parse_config_file(path) -> dict:
    """Parse a ``key = value`` config file into a flat dict."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        try:
            values[key] = json.loads(value)
        except json.JSONDecodeError:
            values[key] = value
    return values


def _add_common(parser: argparse.ArgumentParser, with_noise: bool) -> None:
    parser.add_argument("--config", help="key = value config file with defaults")
    parser.add_argument("--n", type=int, help="ambient dimension")
    parser.add_argument("--k", type=int, help="sparsity of the hidden vectors")
    if with_noise:
        parser.add_argument("--sigma", type=float, help="noise standard deviation")
        parser.add_argument("--gamma", type=float, help="target precision")
    parser.add_argument("--seed", type=int, help="root seed (default 0)")
    parser.add_argument("--trials", type=int, help="number of trials (default 1)")
    parser.add_argument("--m", type=int, dest="m", help="override the query count")
    parser.add_argument("--c-s", type=float, dest="c_s",
                        help="design size constant (default 3)")
    parser.add_argument("--c-em", type=float, dest="c_em")
    parser.add_argument("--c-mom", type=float, dest="c_mom")
    parser.add_argument("--c-single", type=float, dest="c_single")
    parser.add_argument("--c-test", type=float, dest="c_test")
    parser.add_argument("--eta-preset", choices=["per_query_n2", "proof_preset"],
                        dest="eta_preset")
    parser.add_argument("--gap-bound", type=float, dest="gap_bound",
                        help="known lower bound on the vector separation")
    parser.add_argument("--truth", choices=["random_ksparse", "twin", "explicit"])
    parser.add_argument("--gap", type=float, help="exact separation for twin truth")
    parser.add_argument("--value-range", dest="value_range",
                        help="nonzero magnitude range, e.g. 1.0,1.0")
    parser.add_argument("--output", help="report/data file to write")


def _merged(args: argparse.Namespace, defaults: dict) -> dict:
    merged = dict(defaults)
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config", "axis", "format"):
            merged[key] = value
    return merged


def _require(merged: dict, keys) -> None:
    missing = [k for k in keys if merged.get(k) is None]
    if missing:
        raise SystemExit(f"missing required option(s): {', '.join('--' + m for m in missing)}")


def _build_experiment(merged: dict, sigma_override=None) -> ExperimentConfig:
    value_range = merged.get("value_range", (1.0, 1.0))
    if isinstance(value_range, str):
        lo, _, hi = value_range.partition(",")
        value_range = (float(lo), float(hi))
    elif isinstance(value_range, list):
        value_range = tuple(float(v) for v in value_range)
    truth = TruthSpec(
        kind=merged.get("truth", "random_ksparse"),
        value_range=value_range,
        gap=merged.get("gap"),
        beta1=merged.get("beta1"),
        beta2=merged.get("beta2"),
    )
    batch = BatchPolicy(
        c_em=merged.get("c_em", 8.0),
        c_mom=merged.get("c_mom", 24.0),
        c_single=merged.get("c_single", 8.0),
        c_test=merged.get("c_test", 32.0),
    )
    recovery = RecoveryConfig(
        c_s=merged.get("c_s", 3.0),
        m_override=merged.get("m"),
        batch=batch,
        eta_preset=merged.get("eta_preset", "per_query_n2"),
        gap_l2_bound=merged.get("gap_bound"),
    )
    sigma = sigma_override if sigma_override is not None else merged["sigma"]
    return ExperimentConfig(
        n=int(merged["n"]),
        k=int(merged["k"]),
        sigma=float(sigma),
        gamma=float(merged["gamma"]),
        seed=int(merged.get("seed", 0)),
        trials=int(merged.get("trials", 1)),
        truth=truth,
        recovery=recovery,
        output=merged.get("output"),
    )


def _report_exit(results: list[dict]) -> int:
    failed = [r for r in results if "error" in r]
    for r in results:
        if "error" in r:
            print(f"trial {r['trial']}: FAILED {r['error']}")
        else:
            print(
                f"trial {r['trial']}: branch={r['branch']} "
                f"l2_errors=({r['l2_error_1']:.3e}, {r['l2_error_2']:.3e}) "
                f"queries={r['total_queries']}"
            )
    print(f"{len(results) - len(failed)}/{len(results)} trials completed")
    return 2 if failed else 0


def _cmd_recover(args, defaults) -> int:
    merged = _merged(args, defaults)
    _require(merged, ["n", "k", "sigma", "gamma"])
    return _report_exit(run_experiment(_build_experiment(merged)))


def _cmd_noiseless(args, defaults) -> int:
    merged = _merged(args, defaults)
    merged.setdefault("gamma", 1.0)  # unused on the zero-noise path
    _require(merged, ["n", "k"])
    return _report_exit(run_experiment(_build_experiment(merged, sigma_override=0.0)))


def _parse_axis(spec: str) -> tuple[str, list[float]]:
    name, _, values = spec.partition("=")
    if not values:
        raise SystemExit(f"bad --axis {spec!r}; expected name=v1,v2,...")
    parsed = [float(v) for v in values.split(",")]
    return name.strip().replace("-", "_"), parsed


def _cmd_sweep(args, defaults) -> int:
    merged = _merged(args, defaults)
    _require(merged, ["n", "k", "sigma", "gamma"])
    axes = dict(_parse_axis(spec) for spec in args.axis or [])
    if not axes:
        raise SystemExit("sweep needs at least one --axis name=v1,v2,...")
    base = _build_experiment({**merged, "output": None})
    result = run_sweep(base, axes)
    output = merged.get("output")
    if output:
        emit_plot_data(result, output, format=args.format)
        print(f"wrote {output}")
    failed = sum(c["failed_trials"] for c in result.cells)
    for cell in result.cells:
        axis_desc = " ".join(f"{k}={cell[k]}" for k in axes)
        print(
            f"{axis_desc}: mean_max_l2_error={cell['mean_max_l2_error']:.4g} "
            f"mean_queries={cell['mean_total_queries']:.0f} "
            f"failed={cell['failed_trials']}"
        )
    return 2 if failed else 0


def _cmd_compare(args, defaults) -> int:
    merged = _merged(args, defaults)
    _require(merged, ["sigma"])
    separations = [float(v) for v in str(merged.get("separations", "")).split(",") if v]
    if not separations:
        raise SystemExit("compare-estimators needs --separations v1,v2,...")
    result = estimator_comparison(
        separations,
        samples_per_trial=int(merged.get("samples", 1000)),
        trials=int(merged.get("trials", 100)),
        sigma=float(merged["sigma"]),
        seed=int(merged.get("seed", 0)),
    )
    output = merged.get("output")
    if output:
        emit_plot_data(result, output, format=args.format)
        print(f"wrote {output}")
    for cell in result.cells:
        print(
            f"separation={cell['separation']:g}: "
            f"em={cell['em_mean_abs_error']:.4f} "
            f"mom={cell['mom_mean_abs_error']:.4f} "
            f"single={cell['single_mean_abs_error']:.4f}"
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sparsemix",
        description="Recover two sparse regressors from an unlabeled mixture oracle.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_recover = sub.add_parser("recover", help="run one recovery experiment")
    _add_common(p_recover, with_noise=True)
    p_recover.set_defaults(func=_cmd_recover)

    p_noiseless = sub.add_parser("noiseless", help="zero-noise recovery pipeline")
    _add_common(p_noiseless, with_noise=False)
    p_noiseless.set_defaults(func=_cmd_noiseless)

    p_sweep = sub.add_parser("sweep", help="grid of experiments")
    _add_common(p_sweep, with_noise=True)
    p_sweep.add_argument("--axis", action="append",
                         help="axis as name=v1,v2,... (repeatable)")
    p_sweep.add_argument("--format", choices=["csv", "json"], default="csv")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_cmp = sub.add_parser("compare-estimators",
                           help="estimator error vs mean separation")
    p_cmp.add_argument("--config")
    p_cmp.add_argument("--separations", help="comma list of separations")
    p_cmp.add_argument("--samples", type=int, help="samples per trial (default 1000)")
    p_cmp.add_argument("--trials", type=int, help="trials per separation (default 100)")
    p_cmp.add_argument("--sigma", type=float)
    p_cmp.add_argument("--seed", type=int)
    p_cmp.add_argument("--output")
    p_cmp.add_argument("--format", choices=["csv", "json"], default="csv")
    p_cmp.set_defaults(func=_cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    defaults = parse_config_file(args.config) if getattr(args, "config", None) else {}
    try:
        return args.func(args, defaults)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
