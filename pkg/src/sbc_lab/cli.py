"""Command-line front end: run SBC experiments, scan the discrete model, list names.

``run`` executes one experiment configuration and writes the rank table,
uniformity report, evolution trace, and SVG figures into the output
directory; the exit code is 0 when every quantity passes at the 5% level,
2 when any fails, and 1 on configuration or execution errors. Flat JSON
config files mirror the flags; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from .core import run_sbc
from .diagnostics import RankSet, ecdf_band, evolution_table
from .models import bernoulli, gaussian, simplex
from .plots import svg_ecdf_difference, svg_evolution, svg_rank_histogram
from .reports import build_report, write_evolution_csv, write_ranks_csv, write_report_json

__all__ = ["main"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; we reserve that
        raise UsageError(message)


def _model_catalog() -> dict[str, dict[str, list[str]]]:
    return {
        "bernoulli": {
            "variants": sorted(bernoulli.FAMILY_NAMES),
            "quantities": sorted(q.name for q in bernoulli.quantity_library()),
        },
        "gaussian": {
            "variants": sorted(gaussian.VARIANT_NAMES),
            "quantities": sorted(
                gaussian.default_quantity_names(gaussian.make_variant("correct", 3))
            ),
        },
        "simplex": {
            "variants": sorted(simplex.VARIANT_NAMES),
            "quantities": sorted(q.name for q in simplex.quantity_library()),
        },
    }


def _build(model: str, variant: str, n: int):
    """Generator, family, full quantity library, and the default thin stride."""
    if model == "gaussian":
        if variant not in gaussian.VARIANT_NAMES:
            raise UsageError(
                f"unknown gaussian variant {variant!r}; valid: {', '.join(gaussian.VARIANT_NAMES)}"
            )
        family = gaussian.make_variant(variant, n)
        return gaussian.GaussianGenerator(n), family, gaussian.quantity_library(n, family), 1
    if model == "bernoulli":
        if variant not in bernoulli.FAMILY_NAMES:
            raise UsageError(
                f"unknown bernoulli family {variant!r}; valid: {', '.join(bernoulli.FAMILY_NAMES)}"
            )
        family = bernoulli.FamilySampler(bernoulli.get_family(variant))
        return bernoulli.BernoulliGenerator(), family, bernoulli.quantity_library(), 1
    if model == "simplex":
        if variant not in simplex.VARIANT_NAMES:
            raise UsageError(
                f"unknown simplex variant {variant!r}; valid: {', '.join(simplex.VARIANT_NAMES)}"
            )
        return simplex.SimplexGenerator(), simplex.RwmSimplexFamily(variant), simplex.quantity_library(), 20
    raise UsageError(f"unknown model {model!r}; valid: bernoulli, gaussian, simplex")


_RUN_KEYS = (
    "model",
    "variant",
    "n",
    "sims",
    "draws",
    "seed",
    "thin",
    "quantities",
    "step",
    "out",
    "no_timestamp",
)
_RUN_DEFAULTS = {
    "variant": "correct",
    "n": 3,
    "sims": 1000,
    "draws": 100,
    "seed": 1,
    "quantities": "default",
    "step": 10,
    "out": "sbc-out",
    "no_timestamp": False,
}


def _merge_config(args: argparse.Namespace) -> dict:
    settings: dict = {}
    if args.config is not None:
        with open(args.config, encoding="utf-8") as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(_RUN_KEYS)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
        settings.update(loaded)
    for key in _RUN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None and flag is not False:
            settings[key] = flag
    for key, value in _RUN_DEFAULTS.items():
        settings.setdefault(key, value)
    if "model" not in settings:
        raise UsageError("--model is required (or provide it in --config)")
    return settings


def _select_quantities(requested: str, library) -> list:
    available = {q.name: q for q in library}
    if requested == "default":
        return list(library)
    chosen = []
    for name in (part.strip() for part in requested.split(",")):
        if name not in available:
            raise UsageError(
                f"unknown quantity {name!r}; valid: {', '.join(sorted(available))}"
            )
        chosen.append(available[name])
    return chosen


def cmd_run(args: argparse.Namespace) -> int:
    settings = _merge_config(args)
    model = settings["model"]
    generator, family, library, default_thin = _build(
        model, settings["variant"], int(settings["n"])
    )
    thin = int(settings["thin"]) if settings.get("thin") is not None else default_thin
    quantities = _select_quantities(settings["quantities"], library)
    out_dir = Path(settings["out"])
    out_dir.mkdir(parents=True, exist_ok=True)
    S, M, seed = int(settings["sims"]), int(settings["draws"]), int(settings["seed"])
    run = run_sbc(generator, family, quantities, S=S, M=M, seed=seed, thin_stride=thin)

    write_ranks_csv(run, out_dir / "ranks.csv")
    metadata = {
        "model": model,
        "variant": settings["variant"],
        "n": int(settings["n"]) if model == "gaussian" else None,
        "S_requested": S,
        "M": M,
        "seed": seed,
        "thin_stride": thin,
    }
    report = build_report(run, metadata=metadata)
    write_report_json(report, out_dir / "report.json")

    names = [q.name for q in quantities if q.name in run.quantity_names()]
    traces = evolution_table({q: run.ranks(q) for q in names}, M, step=int(settings["step"]))
    write_evolution_csv(traces, out_dir / "evolution.csv")

    stamp = not bool(settings.get("no_timestamp"))
    svg_evolution(traces, out_dir / "evolution.svg", title=f"{model}/{settings['variant']}", timestamp=stamp)
    band = None
    for name in names:
        rank_set = RankSet.from_run(run, name)
        if band is None or band.S != rank_set.S:
            band = ecdf_band(rank_set.S, M)
        svg_rank_histogram(rank_set, out_dir / f"hist_{name}.svg", quantity=name, timestamp=stamp)
        svg_ecdf_difference(
            rank_set, band, out_dir / f"ecdf_{name}.svg", quantity=name, timestamp=stamp
        )

    all_pass = all(entry["pass_5pct"] for entry in report["quantities"])
    failed = [e["quantity"] for e in report["quantities"] if not e["pass_5pct"]]
    print(f"{model}/{settings['variant']}: S={S} M={M} seed={seed} failures={run.n_failed}")
    for entry in report["quantities"]:
        verdict = "pass" if entry["pass_5pct"] else "FAIL"
        print(f"  {entry['quantity']:<18} log_ratio={entry['log_ratio']:+.3f}  {verdict}")
    if failed:
        print(f"uniformity rejected at 5% for: {', '.join(failed)}")
    return 0 if all_pass else 2


def cmd_scan_discrete(args: argparse.Namespace) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    passing, values, residuals = bernoulli.discrete_sbc_scan(grid_resolution=args.resolution)
    with open(out_dir / "scan.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("a,b,residual\n")
        for i, a in enumerate(values):
            for j, b in enumerate(values):
                fh.write(f"{float(a)!r},{float(b)!r},{float(residuals[i, j])!r}\n")
    print(f"grid {len(values)}x{len(values)}, passing points: {len(passing)}")
    for a, b in passing:
        print(f"  a={a:.6f} b={b:.6f}")
    return 0


def cmd_list(args: argparse.Namespace) -> int:
    catalog = _model_catalog()
    for model in sorted(catalog):
        print(model)
        print(f"  variants: {', '.join(catalog[model]['variants'])}")
        print(f"  quantities: {', '.join(catalog[model]['quantities'])}")
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="sbc-lab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one SBC experiment")
    run_p.add_argument("--model", choices=("bernoulli", "gaussian", "simplex"))
    run_p.add_argument("--variant")
    run_p.add_argument("--n", type=int, help="gaussian data points per simulation")
    run_p.add_argument("--sims", type=int, help="number of simulations S")
    run_p.add_argument("--draws", type=int, help="posterior draws per simulation M")
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--thin", type=int, help="thinning stride for correlated samplers")
    run_p.add_argument("--quantities", help='comma-separated names or "default"')
    run_p.add_argument("--step", type=int, help="evolution trace step")
    run_p.add_argument("--out", help="output directory")
    run_p.add_argument("--config", help="flat JSON config file; flags override")
    run_p.add_argument("--no-timestamp", dest="no_timestamp", action="store_true", default=None)
    run_p.set_defaults(func=cmd_run)

    scan_p = sub.add_parser("scan-discrete", help="scan the two-point model for SBC solutions")
    scan_p.add_argument("--resolution", type=int, default=200)
    scan_p.add_argument("--out", default="sbc-out")
    scan_p.set_defaults(func=cmd_scan_discrete)

    list_p = sub.add_parser("list", help="list models, variants, and quantities")
    list_p.set_defaults(func=cmd_list)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        catalog = _model_catalog()
        print(
            "valid models: " + ", ".join(sorted(catalog)),
            file=sys.stderr,
        )
        return 1
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
