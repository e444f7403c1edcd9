"""Command-line entry point: `tradepack <subcommand> ...`."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from .detect import DetectorConfig, detect_packages, write_packages_tsv
from .impact import (FmFilter, anova_oneway, binned_groups, conditional_impact, fit_impact_powerlaw,
                     package_impacts, select_impacts, transaction_impacts, write_impact_bins)
from .ingest import Aggressor, TradeFileError, parse_trade_file, prepare_stream, summarize, \
    write_summary_tsv, write_trade_file
from .pipeline import (ITYPE_CHOICES, PipelineConfig, StageError, dump_json, filter_itype,
                       fit_variables, read_metadata, run_pipeline)
from .powerlaw import PowerLawError, Regime, fit_with_xmin_scan
from .profile import (Selector, endpoint_time_pdfs, mean_volume_profile, package_transactions,
                      stock_mean_volumes, total_volume_profile, transaction_time_pdf,
                      write_profile_tsv)
from .regress import (build_second_grid, regress_ar_volume, regress_lagged_volume, write_ar_table,
                      write_lagged_table)
from .scaling import scaling_exponents, write_bins_tsv
from .synth import SynthConfig, generate_market

logger = logging.getLogger("tradepack")


def _lags(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _add_input(p: argparse.ArgumentParser) -> None:
    p.add_argument("--input", "-i", required=True, help="trade file (CSV)")
    p.add_argument("--lenient", action="store_true", help="skip malformed rows instead of failing")


def _add_detector(p: argparse.ArgumentParser) -> None:
    p.add_argument("--break-days", type=int, default=1)
    p.add_argument("--theta", type=float, default=0.75)
    p.add_argument("--min-market", type=int, default=5)
    p.add_argument("--investor-type", choices=sorted(ITYPE_CHOICES), default="all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tradepack", description=__doc__)
    parser.add_argument("--config", help="JSON config (pipeline for `run`, generator for `synth`)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out-dir", default=".")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("summarize", help="per-stock trade statistics")
    _add_input(p)
    p.add_argument("--metadata", help="TSV with stock, A_tot, C_flo, C_tot")

    p = sub.add_parser("detect", help="detect trade packages")
    _add_input(p)
    _add_detector(p)
    p.add_argument("--one-day-only", action="store_true")

    p = sub.add_parser("fit-pdf", help="power-law fit of T, N or V")
    _add_input(p)
    _add_detector(p)
    p.add_argument("--var", choices=("T", "N", "V"), required=True)
    p.add_argument("--regime", choices=("bounded", "tail"), default=None)

    p = sub.add_parser("scaling", help="scaling exponents g1, g2, g3")
    _add_input(p)
    _add_detector(p)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--window-top-frac", type=float, default=0.5)

    p = sub.add_parser("profile", help="intraday profiles of within-one-day packages")
    _add_input(p)
    _add_detector(p)
    p.add_argument("--bins", type=int, default=48)

    p = sub.add_parser("impact", help="package or transaction price impact")
    _add_input(p)
    _add_detector(p)
    p.add_argument("--level", choices=("package", "transaction"), default="package")
    p.add_argument("--condition", choices=("T", "V", "t", "v"), default="V")
    p.add_argument("--fm", choices=[f.value for f in FmFilter], default="all")
    p.add_argument("--aggr", choices=("market", "limit", "all"), default="all")
    p.add_argument("--concurrent", action="store_true", help="use R_con instead of R_i")
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--floor", type=float, default=None)

    p = sub.add_parser("regress", help="return on signed log-volume regressions")
    _add_input(p)
    _add_detector(p)
    p.add_argument("--model", choices=("lagged", "ar"), default="lagged")
    p.add_argument("--lags", type=_lags, default=[0, 5, 10, 15, 20, 25])
    p.add_argument("--ar-lags", type=_lags, default=[5, 10, 15, 20, 25])

    p = sub.add_parser("synth", help="generate a synthetic market")
    p.add_argument("--out", required=True)
    p.add_argument("--truth", required=True)

    sub.add_parser("run", help="full pipeline from --config")
    return parser


def _out(args, name: str) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def _load(args):
    if not os.path.exists(args.input):
        raise FileNotFoundError(f"input file not found: {args.input}")
    tape = parse_trade_file(args.input, strict=not args.lenient)
    return tape, prepare_stream(tape)


def _packages(args, stream, one_day_only=False):
    cfg = DetectorConfig(args.break_days, args.theta, args.min_market, one_day_only)
    return filter_itype(detect_packages(stream, cfg), ITYPE_CHOICES[args.investor_type])


def cmd_summarize(args) -> None:
    _, stream = _load(args)
    meta = read_metadata(args.metadata) if args.metadata else None
    with open(_out(args, "summary.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        write_summary_tsv(summarize(stream, meta), fh)


def cmd_detect(args) -> None:
    _, stream = _load(args)
    pkgs = _packages(args, stream, args.one_day_only)
    with open(_out(args, f"packages_n{args.break_days}.tsv"), "w", encoding="utf-8",
              newline="\n") as fh:
        write_packages_tsv(pkgs, fh)


def cmd_fit_pdf(args) -> None:
    _, stream = _load(args)
    pkgs = _packages(args, stream)
    regime = Regime(args.regime) if args.regime else None
    if regime is None:
        result = fit_variables(pkgs)[args.var]
    else:
        values = np.array([getattr(p, args.var) for p in pkgs], dtype=float)
        values = values[values > 0]
        fit = fit_with_xmin_scan(values, regime)
        result = {"regime": regime.value, "delta": fit.delta, "sigma": fit.sigma,
                  "xmin": fit.x_min, "xmax": fit.x_max, "ks": fit.ks, "n_tail": fit.n_tail}
    dump_json(result, _out(args, f"fit_{args.var}.json"))


def cmd_scaling(args) -> None:
    _, stream = _load(args)
    res = scaling_exponents(_packages(args, stream), args.bins, args.window_top_frac)
    with open(_out(args, "scaling_bins.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        write_bins_tsv(res.series, fh)
    data = {k: dataclasses.asdict(getattr(res, k)) for k in ("g1", "g2", "g3")}
    data["product_gap"] = res.product_gap
    data["gap_sigma"] = res.gap_sigma
    dump_json(data, _out(args, "scaling.json"))


def cmd_profile(args) -> None:
    _, stream = _load(args)
    pkgs = _packages(args, stream, one_day_only=True)
    means = stock_mean_volumes(stream)
    trades = package_transactions(pkgs)
    cols = {f"v_{s.value}": mean_volume_profile(trades, means, s, args.bins, pkgs, stream)
            for s in Selector}
    cols["v_total"] = total_volume_profile(trades, means, args.bins)
    cols["P_t"] = transaction_time_pdf(trades, args.bins)
    cols["P_t_ini"], cols["P_t_fin"] = endpoint_time_pdfs(pkgs, args.bins)
    with open(_out(args, "profile.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        write_profile_tsv(cols, fh)


def cmd_impact(args) -> None:
    tape, stream = _load(args)
    cfg = DetectorConfig(args.break_days, args.theta, args.min_market)
    day_pkgs = [p for p in detect_packages(stream, cfg) if p.within_one_day]
    itype = ITYPE_CHOICES[args.investor_type]
    fm = FmFilter(args.fm)
    if args.level == "package":
        if args.condition not in ("T", "V", "t"):
            raise ValueError("package impact conditions on T, V or t")
        impacts = select_impacts(package_impacts(day_pkgs), itype, fm)
        field_name = "R"
    else:
        if args.condition not in ("t", "v"):
            raise ValueError("transaction impact conditions on t or v")
        aggr = {"market": Aggressor.MARKET, "limit": Aggressor.LIMIT, "all": None}[args.aggr]
        impacts = select_impacts(transaction_impacts(day_pkgs, tape), itype, fm, aggr)
        field_name = "R_con" if args.concurrent else "R"
    series = conditional_impact(impacts, args.condition, args.bins, field_name=field_name)
    with open(_out(args, "impact_bins.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        write_impact_bins(series, fh, args.condition)
    result = {"n": len(impacts),
              "anova": dataclasses.asdict(anova_oneway(
                  binned_groups(impacts, args.condition, args.bins, field_name)))}
    try:
        result["fit"] = dataclasses.asdict(fit_impact_powerlaw(series, args.floor))
    except ValueError as exc:
        result["fit_error"] = str(exc)
    dump_json(result, _out(args, "impact.json"))


def cmd_regress(args) -> None:
    tape, stream = _load(args)
    pkgs = _packages(args, stream)
    by_stock = {}
    for rec in tape:
        by_stock.setdefault(rec.stock, []).append(rec)
    rows = {}
    for stock in sorted(by_stock):
        grid = build_second_grid(by_stock[stock], [p for p in pkgs if p.stock == stock])
        try:
            if args.model == "lagged":
                rows[stock] = regress_lagged_volume(grid, args.lags)
            else:
                rows[stock] = regress_ar_volume(grid, args.ar_lags, args.lags)
        except ValueError as exc:
            logger.warning("stock %s skipped: %s", stock, exc)
    with open(_out(args, f"regress_{args.model}.tsv"), "w", encoding="utf-8", newline="\n") as fh:
        if args.model == "lagged":
            write_lagged_table(rows, fh, args.lags)
        else:
            write_ar_table(rows, fh, args.lags)


def cmd_synth(args) -> None:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = SynthConfig.from_json(fh.read())
    else:
        cfg = SynthConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    records, truth = generate_market(cfg)
    write_trade_file(records, args.out)
    with open(args.truth, "w", encoding="utf-8", newline="\n") as fh:
        truth.to_json(fh)


def cmd_run(args) -> None:
    if not args.config:
        raise ValueError("run needs --config")
    if not os.path.exists(args.config):
        raise FileNotFoundError(f"config file not found: {args.config}")
    with open(args.config, encoding="utf-8") as fh:
        config = PipelineConfig.from_json(fh.read())
    if args.seed is not None:
        config.seed = args.seed
    manifest = run_pipeline(config, args.out_dir, args.jobs)
    print(json.dumps({"complete": manifest["complete"], "out_dir": args.out_dir}))


COMMANDS = {
    "summarize": cmd_summarize, "detect": cmd_detect, "fit-pdf": cmd_fit_pdf,
    "scaling": cmd_scaling, "profile": cmd_profile, "impact": cmd_impact,
    "regress": cmd_regress, "synth": cmd_synth, "run": cmd_run,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * args.verbose
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, TradeFileError, PowerLawError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
