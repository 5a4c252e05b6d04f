"""Command-line surface: stats, fuse, simulate, ablate, compare.

Composition happens through files (MXFT tensors in, MXFT/PGM/CSV out),
so the tool chains in shell pipelines.  Every command prints one JSON
summary line to stdout.  Exit codes: 0 success, 2 usage or input error,
1 internal failure.  All numeric output uses 9 significant digits so
repeated runs produce byte-identical CSV and MXFT files.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

from .fusion import FusionConfig, maxfusion_fold
from .simulator import (
    PRESET_NAMES,
    RunReport,
    Scenario,
    preset_scenario,
    run_ablation,
    sample,
    scenario_from_dict,
)
from .stats import channel_std_map, correlation_map, normalized_std_map
from .tensor_core import (
    FeatureMap,
    SpatialMap,
    read_tensor,
    write_pgm,
    write_selection_pgm,
    write_tensor,
)

CSV_HEADER = "strategy,delta,branch,mse,averaged_fraction,seed"


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _jfloat(x: float):
    return None if math.isnan(x) else float(_fmt(x))


def _load_feature(path: str) -> FeatureMap:
    with open(path, "rb") as fh:
        return read_tensor(fh)


def _write(out_dir: Path, name: str, writer, obj) -> None:
    with open(out_dir / name, "wb") as fh:
        writer(obj, fh)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_summary(obj: dict) -> None:
    print(json.dumps(obj))


def cmd_stats(args) -> int:
    if not 1 <= len(args.inputs) <= 2:
        raise ValueError(f"stats takes 1 or 2 tensor files, got {len(args.inputs)}")
    maps = [_load_feature(p) for p in args.inputs]
    out = _out_dir(args)
    for i, fm in enumerate(maps):
        _write(out, f"sigma_{i}.mxft", write_tensor, channel_std_map(fm))
        sigma_hat = normalized_std_map(fm)
        _write(out, f"sigma_hat_{i}.mxft", write_tensor, sigma_hat)
        _write(out, f"sigma_hat_{i}.pgm", write_pgm, sigma_hat)
    summary = {"inputs": len(maps), "out_dir": str(out)}
    if len(maps) == 2:
        rho = correlation_map(maps[0], maps[1])
        _write(out, "rho.mxft", write_tensor, rho)
        _write(out, "rho.pgm", write_pgm, rho)
        summary["rho_mean"] = _jfloat(float(rho.data.mean()))
    _print_summary(summary)
    return 0


def cmd_fuse(args) -> int:
    if len(args.inputs) < 2:
        raise ValueError(f"fuse needs at least 2 tensor files, got {len(args.inputs)}")
    maps = [_load_feature(p) for p in args.inputs]
    cfg = FusionConfig(
        delta=args.delta if args.delta is not None else 0.7,
        renormalize=not args.no_renorm,
    )
    fold = maxfusion_fold(maps, cfg)
    out = _out_dir(args)
    _write(out, "f_eff.mxft", write_tensor, fold.f_eff)
    final_mask = fold.pair_results[-1].selection
    _write(out, "selection.mxft", write_tensor, final_mask.tag_map())
    _write(out, "selection.pgm", write_selection_pgm, final_mask)
    for i, updated in enumerate(fold.updated):
        _write(out, f"branch_{i}_unmerged.mxft", write_tensor, updated)

    # branch 0 participates in the first pair, branch i >= 1 in pair i-1
    pair_wins = [fold.pair_results[0].selection.win_fractions()[0]]
    pair_wins += [
        fold.pair_results[i - 1].selection.win_fractions()[1] for i in range(1, len(maps))
    ]
    averaged = sum(r.selection.averaged_fraction() for r in fold.pair_results) / len(
        fold.pair_results
    )
    _print_summary(
        {
            "inputs": len(maps),
            "delta": _jfloat(cfg.delta),
            "renormalize": cfg.renormalize,
            "averaged_fraction": _jfloat(averaged),
            "win_fractions": [_jfloat(w) for w in pair_wins],
            "out_dir": str(out),
        }
    )
    return 0


def _scenario_from_args(args) -> Scenario:
    if getattr(args, "scenario", None):
        with open(args.scenario, "r", encoding="utf-8") as fh:
            data = json.load(fh)
        scn = scenario_from_dict(data)
    elif getattr(args, "preset", None):
        scn = preset_scenario(args.preset)
    else:
        raise ValueError("one of --preset or --scenario is required")
    if getattr(args, "delta", None) is not None:
        scn = replace(scn, fusion=replace(scn.fusion, delta=args.delta))
    if getattr(args, "no_renorm", False):
        scn = replace(scn, fusion=replace(scn.fusion, renormalize=False))
    if getattr(args, "seed", None) is not None:
        scn = replace(scn, seed=args.seed)
    return scn


def _effective_delta(scn: Scenario) -> str:
    if scn.strategy == "maxfusion":
        return _fmt(scn.fusion.delta)
    if scn.strategy == "naive":
        return _fmt(-1.0)
    if scn.strategy == "max_select":
        return _fmt(2.0)
    return ""


def _csv_rows(label: str, scn: Scenario, rep: RunReport) -> list[str]:
    frac = rep.averaged_fraction
    frac_s = "" if math.isnan(frac) else _fmt(frac)
    delta_s = _effective_delta(scn)
    return [
        f"{label},{delta_s},{b},{_fmt(mse)},{frac_s},{scn.seed}"
        for b, mse in enumerate(rep.branch_mse)
    ]


def _write_csv(path: Path, rows: list[str]) -> None:
    with open(path, "w", encoding="ascii", newline="") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row + "\n")


def cmd_simulate(args) -> int:
    scn = _scenario_from_args(args)
    rep = sample(scn)
    out = _out_dir(args)
    final = SpatialMap(rep.final_sample)
    _write(out, "sample.mxft", write_tensor, final)
    _write(out, "sample.pgm", write_pgm, final)
    _write_csv(out / "metrics.csv", _csv_rows(scn.strategy, scn, rep))
    trace = {
        "strategy": scn.strategy,
        "delta": _jfloat(scn.fusion.delta),
        "renormalize": scn.fusion.renormalize,
        "seed": scn.seed,
        "steps": scn.schedule.steps,
        "branch_mse": [_jfloat(m) for m in rep.branch_mse],
        "averaged_fraction": _jfloat(rep.averaged_fraction),
        "per_step_averaged_fraction": [_jfloat(f) for f in rep.per_step_averaged_fraction()],
        "wall_clock_s": rep.wall_clock_s,
    }
    with open(out / "trace.json", "w", encoding="ascii") as fh:
        json.dump(trace, fh)
        fh.write("\n")
    _print_summary(
        {
            "strategy": scn.strategy,
            "seed": scn.seed,
            "branch_mse": [_jfloat(m) for m in rep.branch_mse],
            "averaged_fraction": _jfloat(rep.averaged_fraction),
            "out_dir": str(out),
        }
    )
    return 0


def _parse_deltas(text: str) -> list[float]:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty delta list")
    deltas = []
    for p in parts:
        try:
            d = float(p)
        except ValueError:
            raise ValueError(f"malformed delta {p!r}") from None
        if not math.isfinite(d):
            raise ValueError(f"delta must be finite, got {p!r}")
        deltas.append(d)
    return deltas


def cmd_ablate(args) -> int:
    scn = _scenario_from_args(args)
    deltas = _parse_deltas(args.deltas)
    rows = run_ablation(scn, deltas)
    out = _out_dir(args)
    csv_rows = []
    for row in rows:
        frac_s = "" if math.isnan(row.averaged_fraction) else _fmt(row.averaged_fraction)
        for b, mse in enumerate(row.branch_mse):
            csv_rows.append(
                f"maxfusion,{_fmt(row.delta)},{b},{_fmt(mse)},{frac_s},{scn.seed}"
            )
    _write_csv(out / "metrics.csv", csv_rows)
    fracs = [row.averaged_fraction for row in rows]
    monotonic = all(a >= b for a, b in zip(fracs, fracs[1:]))
    if not monotonic:
        raise RuntimeError(
            f"averaged fraction is not non-increasing across deltas: {fracs}"
        )
    _print_summary(
        {
            "deltas": [_jfloat(r.delta) for r in rows],
            "averaged_fractions": [_jfloat(f) for f in fracs],
            "monotonic": monotonic,
            "out_dir": str(out),
        }
    )
    return 0


def cmd_compare(args) -> int:
    scn = _scenario_from_args(args)
    variants: list[tuple[str, Scenario]] = [
        ("naive", replace(scn, strategy="naive")),
        ("max_select", replace(scn, strategy="max_select")),
        ("maxfusion", replace(scn, strategy="maxfusion")),
        (
            "maxfusion-no-renorm",
            replace(scn, strategy="maxfusion", fusion=replace(scn.fusion, renormalize=False)),
        ),
    ]
    for b in range(len(scn.branches)):
        variants.append((f"single({b})", replace(scn, strategy="single", single_branch=b)))
    variants.append(("unconditional", replace(scn, strategy="unconditional")))

    out = _out_dir(args)
    csv_rows = []
    md = ["| strategy | " + " | ".join(f"branch {b} MSE" for b in range(len(scn.branches)))
          + " | averaged fraction |"]
    md.append("|" + "---|" * (len(scn.branches) + 2))
    reports = {}
    for label, variant in variants:
        rep = sample(variant)
        reports[label] = rep
        csv_rows.extend(_csv_rows(label, variant, rep))
        frac = rep.averaged_fraction
        cells = [label] + [_fmt(m) for m in rep.branch_mse]
        cells.append("" if math.isnan(frac) else _fmt(frac))
        md.append("| " + " | ".join(cells) + " |")
    _write_csv(out / "compare.csv", csv_rows)
    with open(out / "compare.md", "w", encoding="ascii", newline="") as fh:
        fh.write("\n".join(md) + "\n")
    _print_summary(
        {
            "strategies": [label for label, _ in variants],
            "max_branch_mse": {
                label: _jfloat(max(rep.branch_mse)) if rep.branch_mse else None
                for label, rep in reports.items()
            },
            "out_dir": str(out),
        }
    )
    return 0


def _add_scenario_flags(sp) -> None:
    sp.add_argument("--preset", default=None, help=f"named scenario: {', '.join(PRESET_NAMES)}")
    sp.add_argument("--scenario", default=None, help="path to a scenario JSON file")
    sp.add_argument("--delta", type=float, default=None, help="correlation gate threshold (default 0.7)")
    sp.add_argument("--no-renorm", action="store_true", help="disable loser std renormalization in unmerge")
    sp.add_argument("--seed", type=int, default=None, help="override the run seed (default 42)")
    sp.add_argument("--out", default="./out", help="output directory (default ./out)")


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="maxfusion",
        description="Multi-branch feature fusion and its toy-diffusion testbed.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    st = sub.add_parser("stats", help="per-location std / normalized-std / correlation maps")
    st.add_argument("inputs", nargs="+", metavar="TENSOR", help="1 or 2 MXFT tensor files")
    st.add_argument("--out", default="./out")
    st.set_defaults(func=cmd_stats)

    fu = sub.add_parser("fuse", help="merge 2+ tensors, writing fused and unmerged outputs")
    fu.add_argument("inputs", nargs="+", metavar="TENSOR", help="2 or more MXFT tensor files")
    fu.add_argument("--delta", type=float, default=None)
    fu.add_argument("--no-renorm", action="store_true")
    fu.add_argument("--out", default="./out")
    fu.set_defaults(func=cmd_fuse)

    si = sub.add_parser("simulate", help="run one toy-diffusion scenario")
    _add_scenario_flags(si)
    si.set_defaults(func=cmd_simulate)

    ab = sub.add_parser("ablate", help="sweep the correlation threshold on one scenario")
    _add_scenario_flags(ab)
    ab.add_argument("--deltas", required=True, help="comma-separated threshold list")
    ab.set_defaults(func=cmd_ablate)

    co = sub.add_parser("compare", help="run every fusion strategy on identical noise")
    _add_scenario_flags(co)
    co.set_defaults(func=cmd_compare)

    return p


def _join_delta_flag(argv: list[str]) -> list[str]:
    # let "--deltas -1,2" survive argparse's leading-dash value handling
    out = []
    i = 0
    while i < len(argv):
        if argv[i] == "--deltas" and i + 1 < len(argv):
            out.append("--deltas=" + argv[i + 1])
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv=None) -> int:
    parser = _build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parser.parse_args(_join_delta_flag(argv))
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
