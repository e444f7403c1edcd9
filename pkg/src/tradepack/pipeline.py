"""End-to-end analysis run with table emitters and a checksummed manifest."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .detect import DetectorConfig, TradePackage, detect_packages, package_stats, write_packages_tsv
from .impact import (FmFilter, anova_oneway, binned_groups, conditional_impact, fit_impact_powerlaw,
                     package_impacts, select_impacts, transaction_impacts)
from .ingest import (Aggressor, InvestorType, TradeRecord, parse_trade_file, prepare_stream,
                     summarize, write_summary_tsv, write_trade_file)
from .powerlaw import PowerLawError, Regime, fit_with_xmin_scan
from .profile import (Selector, endpoint_time_pdfs, mean_volume_profile, package_transactions,
                      stock_mean_volumes, total_volume_profile, transaction_time_pdf,
                      write_profile_tsv)
from .regress import (DEFAULT_AR_LAGS, DEFAULT_LAGS, build_second_grid, regress_ar_volume,
                      regress_lagged_volume, write_ar_table, write_lagged_table)
from .scaling import scaling_exponents
from .synth import SynthConfig, generate_market

logger = logging.getLogger(__name__)

ITYPE_CHOICES = {"inst": InvestorType.INSTITUTION, "indiv": InvestorType.INDIVIDUAL, "all": None}
VAR_REGIME = {"T": Regime.BOUNDED, "N": Regime.TAIL, "V": Regime.TAIL}


@dataclass
class PipelineConfig:
    input: str | None = None
    synth: dict[str, Any] | None = None
    seed: int = 0
    lenient: bool = False
    metadata: str | None = None
    break_days: list[int] = field(default_factory=lambda: [1, 5, 10])
    theta: float = 0.75
    min_market_trades: int = 5
    investor_type: str = "all"
    scaling_bins: int = 20
    window_top_frac: float = 0.5
    profile_bins: int = 48
    impact_bins: int = 20
    transaction_floor: float = 1e3
    lags: list[int] = field(default_factory=lambda: list(DEFAULT_LAGS))
    ar_lags: list[int] = field(default_factory=lambda: list(DEFAULT_AR_LAGS))
    min_regression_obs: int = 100

    def __post_init__(self):
        if self.investor_type not in ITYPE_CHOICES:
            raise ValueError(f"investor_type must be one of {sorted(ITYPE_CHOICES)}")
        if self.input is None and self.synth is None:
            raise ValueError("config needs an input file or a synth section")

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        data = json.loads(text)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def canonical_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, separators=(",", ":"))

    def detector(self, break_days: int) -> DetectorConfig:
        return DetectorConfig(break_days, self.theta, self.min_market_trades)


def _clean(value):
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if not math.isfinite(value):
            return None
        return float(f"{value:.12g}")
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def dump_json(data, path: str) -> None:
    """JSON with floats at 12 significant digits; non-finite numbers become null."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_clean(data), fh, indent=2, sort_keys=True)
        fh.write("\n")


def sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def read_metadata(path: str) -> dict[str, dict[str, float]]:
    """Optional per-stock pass-through columns (stock, A_tot, C_flo, C_tot) as TSV."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        for line in fh:
            cells = line.rstrip("\n").split("\t")
            row = dict(zip(header, cells))
            out[row["stock"]] = {k: float(v) for k, v in row.items() if k != "stock" and v}
    return out


def filter_itype(packages: Sequence[TradePackage], itype: InvestorType | None):
    return [p for p in packages if itype is None or p.itype is itype]


def _fmt_pm(value: float, err: float, digits: int = 3) -> str:
    if value is None or not math.isfinite(value):
        return ""
    if err is None or not math.isfinite(err):
        return f"{value:.{digits}f}"
    return f"{value:.{digits}f}({err:.{digits}f})"


def fit_variables(packages: Sequence[TradePackage]) -> dict[str, dict]:
    """KS-scan power-law fits of T (bounded) and N, V (tail) for one population."""
    out = {}
    for var, regime in VAR_REGIME.items():
        values = np.array([getattr(p, var) for p in packages], dtype=float)
        if var == "T":
            values = values[values > 0]
        try:
            fit = fit_with_xmin_scan(values, regime)
        except (PowerLawError, ValueError) as exc:
            out[var] = {"error": str(exc), "n": int(values.size)}
            continue
        out[var] = {"regime": regime.value, "delta": fit.delta, "sigma": fit.sigma,
                    "xmin": fit.x_min, "xmax": fit.x_max, "ks": fit.ks, "n_tail": fit.n_tail}
    return out


def write_table2(cells: dict[tuple[int, str], dict], sink) -> None:
    """Package counts, means, tail exponents and scaling exponents per (type, break)."""
    keys = sorted(cells, key=lambda k: (k[1] != "I", k[0]))
    sink.write("\t".join(["quantity"] + [f"{t}_n{n}" for n, t in keys]) + "\n")

    def row(label, fn):
        sink.write("\t".join([label] + [fn(cells[k]) for k in keys]) + "\n")

    row("N_p", lambda c: str(c["N_p"]))
    row("<T>", lambda c: f"{c['mean_T']:.0f}" if c["N_p"] else "")
    row("<N>", lambda c: f"{c['mean_N']:.1f}" if c["N_p"] else "")
    row("<V>", lambda c: f"{c['mean_V']:.0f}" if c["N_p"] else "")
    for var in ("T", "N", "V"):
        row(f"delta_{var}", lambda c, v=var: _fmt_pm(c["fits"].get(v, {}).get("delta"),
                                                     c["fits"].get(v, {}).get("sigma")))
    for g in ("g1", "g2", "g3"):
        row(g, lambda c, g=g: _fmt_pm(c["scaling"].get(g, {}).get("exponent"),
                                      c["scaling"].get(g, {}).get("stderr")))


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


class Pipeline:
    """Stage-sequential run; each stage lists the files it wrote for the manifest."""

    def __init__(self, config: PipelineConfig, out_dir: str, jobs: int = 1):
        self.config = config
        self.out_dir = out_dir
        self.jobs = max(1, jobs)
        self.itype = ITYPE_CHOICES[config.investor_type]
        self.stages: dict[str, dict] = {}
        self.tape: list[TradeRecord] = []
        self.stream: list[TradeRecord] = []
        self.packages: dict[int, list[TradePackage]] = {}

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def run(self) -> dict:
        os.makedirs(self.out_dir, exist_ok=True)
        steps: list[tuple[str, Callable[[], list[str]]]] = [
            ("ingest", self.stage_ingest),
            ("detect", self.stage_detect),
            ("fit-pdf", self.stage_fit),
            ("profile", self.stage_profile),
            ("impact", self.stage_impact),
            ("regress", self.stage_regress),
        ]
        failure = None
        for name, step in steps:
            try:
                outputs = step()
            except Exception as exc:  # any stage failure aborts the run
                logger.error("stage %s failed: %s", name, exc)
                self.stages[name] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
                failure = StageError(name, exc)
                break
            self.stages[name] = {"status": "ok",
                                 "outputs": {o: sha256_file(self.path(o)) for o in outputs}}
        manifest = {
            "version": __version__,
            "config_sha256": hashlib.sha256(self.config.canonical_json().encode()).hexdigest(),
            "complete": failure is None,
            "stages": self.stages,
        }
        dump_json(manifest, self.path("manifest.json"))
        if failure is not None:
            raise failure
        return manifest

    def stage_ingest(self) -> list[str]:
        cfg = self.config
        outputs = []
        if cfg.input is not None:
            if not os.path.exists(cfg.input):
                raise FileNotFoundError(f"input file not found: {cfg.input}")
            self.tape = parse_trade_file(cfg.input, strict=not cfg.lenient)
        else:
            synth_cfg = SynthConfig(**{**cfg.synth, "seed": cfg.seed})
            self.tape, truth = generate_market(synth_cfg)
            write_trade_file(self.tape, self.path("data.csv"))
            with open(self.path("truth.json"), "w", encoding="utf-8", newline="\n") as fh:
                truth.to_json(fh)
            outputs += ["data.csv", "truth.json"]
        self.stream = prepare_stream(self.tape)
        metadata = read_metadata(cfg.metadata) if cfg.metadata else None
        with open(self.path("summary.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            write_summary_tsv(summarize(self.stream, metadata), fh)
        return outputs + ["summary.tsv"]

    def stage_detect(self) -> list[str]:
        outputs = []
        for n in self.config.break_days:
            pkgs = detect_packages(self.stream, self.config.detector(n))
            self.packages[n] = pkgs
            name = f"packages_n{n}.tsv"
            with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
                write_packages_tsv(filter_itype(pkgs, self.itype), fh)
            outputs.append(name)
        return outputs

    def stage_fit(self) -> list[str]:
        cfg = self.config
        cells: dict[tuple[int, str], dict] = {}
        fits_json = {}
        itypes = [self.itype] if self.itype else list(InvestorType)
        for n in cfg.break_days:
            stats = package_stats(self.packages[n]) if self.packages[n] else {}
            for itype in itypes:
                pop = filter_itype(self.packages[n], itype)
                st = stats.get(itype)
                cell = {"N_p": len(pop),
                        "mean_T": st.mean_T if st else math.nan,
                        "mean_N": st.mean_N if st else math.nan,
                        "mean_V": st.mean_V if st else math.nan,
                        "fits": fit_variables(pop) if pop else {},
                        "scaling": {}}
                try:
                    sc = scaling_exponents(pop, cfg.scaling_bins, cfg.window_top_frac)
                    cell["scaling"] = {k: dataclasses.asdict(getattr(sc, k))
                                       for k in ("g1", "g2", "g3")}
                    cell["scaling"]["product_gap"] = sc.product_gap
                except ValueError as exc:
                    cell["scaling"] = {"error": str(exc)}
                cells[(n, itype.value)] = cell
                fits_json[f"{itype.value}_n{n}"] = cell
        dump_json(fits_json, self.path("fits.json"))
        with open(self.path("table2.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            write_table2(cells, fh)
        return ["fits.json", "table2.tsv"]

    def _day_packages(self) -> list[TradePackage]:
        n = min(self.config.break_days)
        return [p for p in filter_itype(self.packages[n], self.itype) if p.within_one_day]

    def stage_profile(self) -> list[str]:
        pkgs = self._day_packages()
        if not pkgs:
            raise ValueError("no within-one-day packages to profile")
        n_bins = self.config.profile_bins
        means = stock_mean_volumes(self.stream)
        trades = package_transactions(pkgs)
        cols = {}
        for sel in Selector:
            cols[f"v_{sel.value}"] = mean_volume_profile(trades, means, sel, n_bins,
                                                         packages=pkgs, stream=self.stream)
        cols["v_total"] = total_volume_profile(trades, means, n_bins)
        cols["P_t"] = transaction_time_pdf(trades, n_bins)
        cols["P_t_ini"], cols["P_t_fin"] = endpoint_time_pdfs(pkgs, n_bins)
        with open(self.path("profile.tsv"), "w", encoding="utf-8", newline="\n") as fh:
            write_profile_tsv(cols, fh)
        return ["profile.tsv"]

    def stage_impact(self) -> list[str]:
        cfg = self.config
        n = min(cfg.break_days)
        all_day = [p for p in self.packages[n] if p.within_one_day]
        pkg_imp = package_impacts(all_day)
        tr_imp = transaction_impacts(all_day, self.tape)
        itypes = [self.itype] if self.itype else list(InvestorType)
        result: dict[str, Any] = {"package": {}, "transaction": {}}
        table4, table5 = [], []
        for itype in itypes:
            for fm in (FmFilter.GT08, FmFilter.LT02):
                chosen = select_impacts(pkg_imp, itype, fm)
                entry = self._package_entry(chosen)
                result["package"][f"{itype.value}_{fm.value}"] = entry
                table4.append((itype.value, fm.value, entry.get("fit")))
            for label, aggr, fld in (("market", Aggressor.MARKET, "R"),
                                     ("limit", Aggressor.LIMIT, "R"),
                                     ("concurrent", Aggressor.MARKET, "R_con")):
                chosen = select_impacts(tr_imp, itype, aggressor=aggr)
                entry = self._transaction_entry(chosen, fld)
                result["transaction"][f"{itype.value}_{label}"] = entry
                table5.append((itype.value, label, entry.get("fit")))
        dump_json(result, self.path("impact.json"))
        for name, rows, (a, g) in (("table4.tsv", table4, ("A", "gamma")),
                                   ("table5.tsv", table5, ("B", "k"))):
            with open(self.path(name), "w", encoding="utf-8", newline="\n") as fh:
                fh.write(f"itype\tgroup\t{a}\t{g}\tn_bins\n")
                for itype, group, fit in rows:
                    if fit is None:
                        fh.write(f"{itype}\t{group}\t\t\t0\n")
                        continue
                    fh.write(f"{itype}\t{group}\t{fit['sign'] * fit['prefactor']:.3g}\t"
                             f"{_fmt_pm(fit['exponent'], fit['exponent_se'])}\t{fit['n_bins']}\n")
        return ["impact.json", "table4.tsv", "table5.tsv"]

    def _package_entry(self, impacts) -> dict:
        bins = self.config.impact_bins
        entry: dict[str, Any] = {"n": len(impacts)}
        if len(impacts) < 2 * bins:
            entry["error"] = f"{len(impacts)} packages, need {2 * bins}"
            return entry
        for cond in ("T", "V"):
            a = anova_oneway(binned_groups(impacts, cond, bins))
            entry[f"anova_{cond}"] = dataclasses.asdict(a)
        try:
            fit = fit_impact_powerlaw(conditional_impact(impacts, "V", bins))
            entry["fit"] = dataclasses.asdict(fit)
        except ValueError as exc:
            entry["fit_error"] = str(exc)
        return entry

    def _transaction_entry(self, impacts, field_name: str) -> dict:
        bins = self.config.impact_bins
        entry: dict[str, Any] = {"n": len(impacts)}
        if len(impacts) < bins:
            entry["error"] = f"{len(impacts)} transactions, need {bins}"
            return entry
        entry["mean"] = float(np.mean([getattr(i, field_name) for i in impacts]))
        try:
            series = conditional_impact(impacts, "v", bins, field_name=field_name)
            entry["fit"] = dataclasses.asdict(
                fit_impact_powerlaw(series, floor=self.config.transaction_floor))
        except ValueError as exc:
            entry["fit_error"] = str(exc)
        return entry

    def stage_regress(self) -> list[str]:
        cfg = self.config
        n = min(cfg.break_days)
        by_stock: dict[str, list[TradeRecord]] = {}
        for rec in self.tape:
            by_stock.setdefault(rec.stock, []).append(rec)
        itypes = [self.itype] if self.itype else list(InvestorType)
        outputs = []
        for itype in itypes:
            pkgs = filter_itype(self.packages[n], itype)

            def one(stock):
                grid = build_second_grid(by_stock[stock], [p for p in pkgs if p.stock == stock])
                if grid.package_mask.sum() < cfg.min_regression_obs:
                    return stock, None, None
                lagged = regress_lagged_volume(grid, cfg.lags, cfg.min_regression_obs)
                ar = regress_ar_volume(grid, cfg.ar_lags, cfg.lags)
                return stock, lagged, ar

            with ThreadPoolExecutor(self.jobs) as pool:
                results = list(pool.map(one, sorted(by_stock)))
            lagged_rows = {s: lag for s, lag, _ in results if lag is not None}
            ar_rows = {s: ar for s, _, ar in results if ar is not None}
            first, second = ("table6", "table8") if itype is InvestorType.INSTITUTION \
                else ("table7", "table9")
            with open(self.path(f"{first}_lagged.tsv"), "w", encoding="utf-8", newline="\n") as fh:
                write_lagged_table(lagged_rows, fh, cfg.lags)
            with open(self.path(f"{second}_ar.tsv"), "w", encoding="utf-8", newline="\n") as fh:
                write_ar_table(ar_rows, fh, cfg.lags)
            outputs += [f"{first}_lagged.tsv", f"{second}_ar.tsv"]
        return outputs


def run_pipeline(config: PipelineConfig, out_dir: str, jobs: int = 1) -> dict:
    return Pipeline(config, out_dir, jobs).run()
