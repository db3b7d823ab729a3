"""Command-line front end: simulate, fit, diagnose, summarize, predict, poststratify.

Every subcommand reads one INI configuration file::

    [paths]
    dataset = survey.csv
    adjacency = areas.adj
    output = out/
    archive = out/          ; draw archive for diagnose/summarize/predict/poststratify
    population = counts.csv ; poststratify only

    [model]
    variant = corr            ; indep | corr | corr_ire
    cutpoint_mode = per_cell  ; per_cell | shared
    include_alpha = false
    sigma_upper = 100

    [sampler]
    chains = 5
    iterations = 8000
    burn_in = 2000
    thin = 30
    seed = 0

    [reports]
    relevance_high = 0.8
    relevance_low = 0.2
    pca_components = 2
    credible_level = 0.95

Exit codes: 0 success, 1 convergence gate failed, 2 invalid configuration or
input.
"""

from __future__ import annotations

import argparse
import configparser
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .diagnostics import convergence_report, gate_passes, waic
from .graph import AdjacencyError, load_adjacency, write_adjacency
from .model import ModelSpec, ParameterState, Variant
from .posterior import (
    areal_summaries,
    correlation_report,
    pca_of_spatial_means,
    posterior_predictive_areal,
    poststratify,
)
from .sampler import SamplerConfig, run_chains
from .synth import TrueParameters, generate_dataset, grid_graph, mixing_for_correlation

log = logging.getLogger("ordinalcar")

EXIT_OK, EXIT_GATE, EXIT_CONFIG = 0, 1, 2

DEFAULTS = {
    "model": {"variant": "corr", "cutpoint_mode": "per_cell", "include_alpha": "false", "sigma_upper": "100"},
    "sampler": {"chains": "5", "iterations": "8000", "burn_in": "2000", "thin": "30", "seed": "0", "workers": "1"},
    "reports": {
        "relevance_high": "0.8", "relevance_low": "0.2", "pca_components": "2",
        "pca_standardize": "false", "credible_level": "0.95", "predictive_seed": "0",
    },
    "simulate": {
        "variant": "corr", "grid_rows": "5", "grid_cols": "5", "num_variables": "2", "num_categories": "4",
        "num_cells": "2", "respondents_per_area": "20", "rho": "0.7", "areal_scale": "1.0",
        "areal_correlation": "", "individual_scale": "1.0", "individual_correlation": "", "seed": "0",
    },
}


class ConfigError(ValueError):
    pass


class RunConfig:
    """Typed access to the INI file, with errors that name the offending key."""

    def __init__(self, parser: configparser.ConfigParser, source: str = "<memory>"):
        self.parser = parser
        self.source = source
        self.output_override: str | None = None
        self.seed_override: int | None = None

    @classmethod
    def load(cls, path) -> RunConfig:
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        parser.read_dict(DEFAULTS)
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        return cls(parser, str(path))

    def to_dict(self) -> dict:
        d = {s: dict(self.parser[s]) for s in self.parser.sections()}
        if self.output_override is not None:
            d.setdefault("paths", {})["output"] = self.output_override
        if self.seed_override is not None:
            d.setdefault("overrides", {})["seed"] = str(self.seed_override)
        return d

    def get(self, section: str, key: str, required: bool = True) -> str | None:
        value = self.parser.get(section, key, fallback=None)
        if value is None or value.strip() == "":
            if required:
                raise ConfigError(f"missing required config key [{section}] {key}")
            return None
        return value.strip()

    def number(self, section: str, key: str, kind=float, lo=None, hi=None):
        raw = self.get(section, key)
        try:
            value = kind(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected {kind.__name__}, got {raw!r}") from None
        if (lo is not None and value < lo) or (hi is not None and value > hi):
            raise ConfigError(f"[{section}] {key} = {value} outside [{lo}, {hi}]")
        return value

    def flag(self, section: str, key: str) -> bool:
        try:
            return self.parser.getboolean(section, key)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected true/false") from None

    def floats(self, section: str, key: str) -> list[float]:
        raw = self.get(section, key, required=False)
        if raw is None:
            return []
        try:
            return [float(v) for v in raw.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"[{section}] {key}: expected a list of numbers") from None

    def input_path(self, key: str) -> Path:
        path = Path(self.get("paths", key))
        if not path.exists():
            raise ConfigError(f"[paths] {key}: file not found: {path}")
        return path

    def output_dir(self) -> Path:
        raw = self.output_override or self.get("paths", "output")
        out = Path(raw)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"[paths] output: cannot create {out}: {exc}") from None
        return out

    def archive_dir(self) -> Path:
        raw = self.get("paths", "archive", required=False)
        path = Path(raw) if raw else self.output_dir()
        if not (path / "manifest.json").exists():
            raise ConfigError(f"[paths] archive: no manifest.json in {path}")
        return path

    def seed(self, section: str, key: str = "seed") -> int:
        if self.seed_override is not None:
            return self.seed_override
        return self.number(section, key, int, lo=0)

    def sampler_config(self) -> SamplerConfig:
        try:
            return SamplerConfig(
                num_chains=self.number("sampler", "chains", int, lo=1),
                iterations_per_chain=self.number("sampler", "iterations", int, lo=1),
                burn_in=self.number("sampler", "burn_in", int, lo=0),
                thin=self.number("sampler", "thin", int, lo=1),
                seed=self.seed("sampler"),
                max_workers=self.number("sampler", "workers", int, lo=1),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"[sampler] {exc}") from None

    def credible_level(self) -> float:
        return self.number("reports", "credible_level", float, lo=0.5, hi=0.999)


# ----------------------------------------------------------------------------
# subcommands


def cmd_simulate(cfg: RunConfig) -> int:
    """Synthetic survey on a rook grid: dataset.csv, adjacency.txt, truth.json."""
    sec = "simulate"
    rows = cfg.number(sec, "grid_rows", int, lo=1)
    cols = cfg.number(sec, "grid_cols", int, lo=1)
    K = cfg.number(sec, "num_variables", int, lo=1)
    J = cfg.number(sec, "num_categories", int, lo=2)
    Z = cfg.number(sec, "num_cells", int, lo=1)
    per_area = cfg.number(sec, "respondents_per_area", int, lo=1)
    rho = cfg.number(sec, "rho", float, lo=0.0, hi=0.999)
    seed = cfg.seed(sec)
    try:
        variant = Variant(cfg.get(sec, "variant"))
    except ValueError:
        raise ConfigError(f"[simulate] variant must be one of {[v.value for v in Variant]}") from None

    graph = grid_graph(rows, cols)
    M = graph.num_areas
    spec = ModelSpec(variant, J, K, Z, M)
    rng = np.random.default_rng(seed)
    delta = rng.dirichlet(np.full(J, 5.0), size=(Z, K))
    areal = _correlation_matrix(cfg.floats(sec, "areal_correlation"), K, "areal_correlation")
    scale = cfg.number(sec, "areal_scale", float, lo=0.0)
    if variant is Variant.INDEP:
        state = ParameterState(delta=delta, phi=None, mixing=np.eye(K), rho=np.full(K, rho), sigma=np.full(K, scale))
    else:
        state = ParameterState(
            delta=delta, phi=None, mixing=mixing_for_correlation(areal, np.full(K, scale)),
            rho=np.full(K, rho), sigma_M=1.0,
        )
        if variant is Variant.CORR_IRE:
            indiv = _correlation_matrix(cfg.floats(sec, "individual_correlation"), K, "individual_correlation")
            state.ire_mixing = mixing_for_correlation(indiv, np.full(K, cfg.number(sec, "individual_scale", float, lo=0.0)))
            state.sigma_Mtilde = 1.0
    truth = TrueParameters(state, np.full(M, per_area), np.full(Z, 1.0 / Z))
    survey = generate_dataset(truth, spec, graph, seed=rng)

    out = cfg.output_dir()
    io.write_dataset(survey.data, out / "dataset.csv")
    write_adjacency(graph, out / "adjacency.txt")
    io.write_truth(out / "truth.json", spec, survey.truth, {"seed": seed, "grid": [rows, cols]})
    print(f"wrote {survey.data.num_respondents} respondents in {M} areas to {out}")
    return EXIT_OK


def _correlation_matrix(upper: list[float], K: int, key: str) -> np.ndarray:
    """Correlation matrix from its strict upper triangle, row by row."""
    need = K * (K - 1) // 2
    if not upper:
        upper = [0.0] * need
    if len(upper) != need:
        raise ConfigError(f"[simulate] {key}: expected {need} values for K={K}, got {len(upper)}")
    corr = np.eye(K)
    corr[np.triu_indices(K, 1)] = upper
    corr = corr + np.triu(corr, 1).T
    if np.linalg.eigvalsh(corr).min() <= 0:
        raise ConfigError(f"[simulate] {key}: matrix is not positive definite")
    return corr


def _load_inputs(cfg: RunConfig):
    graph_path = cfg.input_path("adjacency")
    data_path = cfg.input_path("dataset")
    try:
        graph = load_adjacency(graph_path)
    except AdjacencyError as exc:
        raise ConfigError(f"[paths] adjacency: {exc}") from None
    J = cfg.get("model", "num_categories", required=False)
    Z = cfg.get("model", "num_cells", required=False)
    try:
        data = io.read_dataset(data_path, int(J) if J else None, int(Z) if Z else None, graph.num_areas)
    except (io.SchemaError, ValueError) as exc:
        raise ConfigError(f"[paths] dataset: {exc}") from None
    return data, graph


def _model_spec(cfg: RunConfig, data) -> ModelSpec:
    try:
        return ModelSpec(
            variant=cfg.get("model", "variant"),
            num_categories=data.num_categories,
            num_variables=data.num_variables,
            num_cells=data.num_cells,
            num_areas=data.num_areas,
            cutpoint_mode=cfg.get("model", "cutpoint_mode"),
            include_alpha=cfg.flag("model", "include_alpha"),
            sigma_upper=cfg.number("model", "sigma_upper", float, lo=0.0),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[model] {exc}") from None


def _write_diagnostics(draws, out: Path) -> bool:
    rows = convergence_report(draws)
    io.write_diagnostics(rows, out / "diagnostics.csv")
    io.write_waic(waic(draws.loglik_matrix), out / "waic.json")
    failed = [r for r in rows if not r.passed]
    for r in failed:
        print(f"gate failed: {r.functional} rhat={r.rhat:.4g} ess={r.ess:.4g}", file=sys.stderr)
    print(f"{len(rows) - len(failed)}/{len(rows)} functionals pass the convergence gate")
    return gate_passes(rows)


def cmd_fit(cfg: RunConfig) -> int:
    """Run the sampler; writes the draw archive, diagnostics.csv and waic.json."""
    data, graph = _load_inputs(cfg)
    spec = _model_spec(cfg, data)
    sampler = cfg.sampler_config()
    out = cfg.output_dir()
    draws = run_chains(spec, data, graph, sampler)
    io.write_archive(draws, out, run_config=cfg.to_dict())
    print(f"saved {draws.total_draws} draws ({draws.num_chains} x {draws.draws_per_chain}) to {out}")
    return EXIT_OK if _write_diagnostics(draws, out) else EXIT_GATE


def cmd_diagnose(cfg: RunConfig) -> int:
    """Recompute diagnostics.csv and waic.json from an archive."""
    draws = io.read_archive(cfg.archive_dir())
    return EXIT_OK if _write_diagnostics(draws, cfg.output_dir()) else EXIT_GATE


def cmd_summarize(cfg: RunConfig) -> int:
    """Areal summaries, correlation reports and PCA from an archive."""
    draws = io.read_archive(cfg.archive_dir())
    out = cfg.output_dir()
    level = cfg.credible_level()
    summary = areal_summaries(draws, level)
    io.write_areal_summary(summary, out / "areal_summary.csv",
                           cfg.number("reports", "relevance_high", float, 0.0, 1.0),
                           cfg.number("reports", "relevance_low", float, 0.0, 1.0))
    if draws.spec.has_mixing:
        io.write_correlation(correlation_report(draws, "areal", level), "areal",
                             out / "correlation_areal.csv", out / "correlation_areal.json")
    if draws.spec.has_ire:
        io.write_correlation(correlation_report(draws, "individual", level), "individual",
                             out / "correlation_individual.csv", out / "correlation_individual.json")
    ncomp = min(cfg.number("reports", "pca_components", int, lo=1), draws.spec.num_variables)
    if draws.spec.num_areas >= 2:
        pca = pca_of_spatial_means(summary, ncomp, cfg.flag("reports", "pca_standardize"))
        io.write_pca(pca, out / "pca.csv")
    print(f"wrote summaries for {draws.spec.num_areas} areas to {out}")
    return EXIT_OK


def cmd_predict(cfg: RunConfig) -> int:
    """Posterior predictive category percentages per area."""
    draws = io.read_archive(cfg.archive_dir())
    data, _ = _load_inputs(cfg)
    if data.num_areas != draws.spec.num_areas or data.num_variables != draws.spec.num_variables:
        raise ConfigError("[paths] dataset does not match the archive's dimensions")
    areas = cfg.floats("reports", "area_filter")
    area_filter = None
    if areas:
        area_filter = np.array(areas, dtype=int) - 1
        if area_filter.min() < 0 or area_filter.max() >= data.num_areas:
            raise ConfigError(f"[reports] area_filter: areas must be in 1..{data.num_areas}")
    report = posterior_predictive_areal(draws, data, area_filter, seed=cfg.seed("reports", "predictive_seed"),
                                        level=cfg.credible_level())
    out = cfg.output_dir()
    io.write_predictive(report, out / "predictive.csv", model=draws.spec.variant.value)
    print(f"coverage {report.covered.mean():.3f} over {report.covered.size} cells")
    return EXIT_OK


def cmd_poststratify(cfg: RunConfig) -> int:
    """Post-stratified expected category proportions per area."""
    draws = io.read_archive(cfg.archive_dir())
    try:
        counts = io.read_population_counts(cfg.input_path("population"), draws.spec.num_cells, draws.spec.num_areas)
    except io.SchemaError as exc:
        raise ConfigError(f"[paths] population: {exc}") from None
    report = poststratify(draws, counts, cfg.credible_level())
    out = cfg.output_dir()
    io.write_poststrat(report, out / "poststrat.csv")
    print(f"wrote {report.label} for {draws.spec.num_areas} areas to {out}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "summarize": cmd_summarize,
    "predict": cmd_predict,
    "poststratify": cmd_poststratify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ordinalcar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--output", help="output directory (overrides [paths] output)")
        p.add_argument("--seed", type=int, help="random seed (overrides the config)")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        cfg.output_override = args.output
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.seed_override = args.seed
        return COMMANDS[args.command](cfg)
    except (ConfigError, io.SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
