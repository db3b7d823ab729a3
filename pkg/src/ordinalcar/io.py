"""File formats: survey CSV, truth JSON, draw archives and report tables."""

from __future__ import annotations

import csv
import json
import math
import io as io_
import os
import zipfile
from pathlib import Path

import numpy as np

from .diagnostics import DiagnosticRow, WAICResult
from .model import MISSING, ModelSpec, ParameterState, SurveyDataset
from .sampler import PosteriorDraws, SamplerConfig

# per-respondent arrays are kept out of the CSV archives
RESPONDENT_LEVEL = ("ire_phi",)
MISSING_TOKENS = ("", "NA", "na", "NaN", "nan")
ARCHIVE_FORMAT = "ordinalcar-archive/1"


class SchemaError(ValueError):
    pass


# ----------------------------------------------------------------------------
# survey data


def read_dataset(path, num_categories: int | None = None, num_cells: int | None = None,
                 num_areas: int | None = None) -> SurveyDataset:
    """Read ``respondent_id,cell,area,y1,...,yK`` with 1-based cells and areas.

    Missing answers are empty fields or ``NA``.  Dimensions not given are
    taken as the largest value present.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        if header[:3] != ["respondent_id", "cell", "area"] or len(header) < 4:
            raise SchemaError(f"{path}: header must start with respondent_id,cell,area,y1")
        for k, name in enumerate(header[3:], start=1):
            if name != f"y{k}":
                raise SchemaError(f"{path}: expected column y{k}, found {name!r}")
        ids, cells, areas, rows = [], [], [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(header):
                raise SchemaError(f"{path}:{lineno}: expected {len(header)} fields, got {len(rec)}")
            try:
                ids.append(int(rec[0]))
                cells.append(int(rec[1]))
                areas.append(int(rec[2]))
                rows.append([MISSING if f.strip() in MISSING_TOKENS else int(f) for f in rec[3:]])
            except ValueError:
                raise SchemaError(f"{path}:{lineno}: non-integer field in {rec}") from None
    K = len(header) - 3
    y = np.array(rows, dtype=np.int64).reshape(-1, K)
    cells = np.array(cells, dtype=np.int64)
    areas = np.array(areas, dtype=np.int64)
    if len(cells) and (cells.min() < 1 or areas.min() < 1):
        raise SchemaError(f"{path}: cells and areas are 1-based")
    J = num_categories or (int(y.max()) if y.size else 2)
    Z = num_cells or (int(cells.max()) if len(cells) else 1)
    M = num_areas or (int(areas.max()) if len(areas) else 1)
    return SurveyDataset(y, cells - 1, areas - 1, J, Z, M, np.array(ids, dtype=np.int64))


def write_dataset(data: SurveyDataset, path) -> None:
    K = data.num_variables
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["respondent_id", "cell", "area"] + [f"y{k + 1}" for k in range(K)])
        for rid, z, m, row in zip(data.respondent_ids, data.cell_index, data.area_index, data.responses):
            w.writerow([int(rid), int(z) + 1, int(m) + 1] + ["NA" if v == MISSING else int(v) for v in row])


def read_population_counts(path, num_cells: int, num_areas: int) -> np.ndarray:
    """``cell,area,count`` CSV (1-based) into an (Z, M) array; absent pairs are 0."""
    counts = np.zeros((num_cells, num_areas))
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) < {"cell", "area", "count"}:
            raise SchemaError(f"{path}: header must contain cell,area,count")
        for rec in reader:
            z, m = int(rec["cell"]) - 1, int(rec["area"]) - 1
            if not (0 <= z < num_cells and 0 <= m < num_areas):
                raise SchemaError(f"{path}: cell/area ({z + 1}, {m + 1}) out of range")
            counts[z, m] += float(rec["count"])
    return counts


def write_population_counts(counts, path) -> None:
    counts = np.asarray(counts)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell", "area", "count"])
        for z in range(counts.shape[0]):
            for m in range(counts.shape[1]):
                w.writerow([z + 1, m + 1, _num(counts[z, m])])


# ----------------------------------------------------------------------------
# truth / state JSON


def state_to_dict(state: ParameterState) -> dict:
    out = {}
    for name in state.__dataclass_fields__:
        v = getattr(state, name)
        out[name] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def state_from_dict(d: dict) -> ParameterState:
    kw = {}
    for name in ParameterState.__dataclass_fields__:
        v = d.get(name)
        if v is None:
            kw[name] = None
        elif name in ("sigma_M", "sigma_Mtilde"):
            kw[name] = float(v)
        else:
            kw[name] = np.asarray(v, dtype=float)
    return ParameterState(**kw)


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "variant": spec.variant.value,
        "num_categories": spec.num_categories,
        "num_variables": spec.num_variables,
        "num_cells": spec.num_cells,
        "num_areas": spec.num_areas,
        "cutpoint_mode": spec.cutpoint_mode.value,
        "include_alpha": spec.include_alpha,
        "sigma_upper": spec.sigma_upper,
    }


def write_truth(path, spec: ModelSpec, truth: ParameterState, extra: dict | None = None) -> None:
    doc = {"spec": spec_to_dict(spec), "parameters": state_to_dict(truth)}
    doc["theta"] = truth.theta.tolist()
    if truth.psi is not None:
        doc["psi"] = truth.psi.tolist()
    doc.update(extra or {})
    _write_json(path, doc)


def read_truth(path) -> tuple[ModelSpec, ParameterState, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return ModelSpec(**doc["spec"]), state_from_dict(doc["parameters"]), doc


# ----------------------------------------------------------------------------
# draw archive


def _column_names(name: str, shape: tuple) -> list[str]:
    if not shape:
        return [name]
    return [f"{name}[{','.join(str(i + 1) for i in idx)}]" for idx in np.ndindex(shape)]


def write_archive(draws: PosteriorDraws, directory, run_config: dict | None = None) -> Path:
    """Write one CSV (plus an .npz sidecar) per chain and a JSON manifest."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    names = [n for n in draws.params if n not in RESPONDENT_LEVEL]
    shapes = {n: list(draws.params[n].shape[2:]) for n in draws.params}
    header = [c for n in names for c in _column_names(n, tuple(shapes[n]))]
    files = []
    for c in range(draws.num_chains):
        table = np.concatenate(
            [draws.params[n][c].reshape(draws.draws_per_chain, -1) for n in names], axis=1
        )
        csv_name = f"chain_{c}.csv"
        np.savetxt(out / csv_name, table, delimiter=",", header=_csv_line(header), comments="", fmt="%.17g")
        side = {"loglik": draws.loglik[c]}
        for n in RESPONDENT_LEVEL:
            if n in draws.params:
                side[n] = draws.params[n][c]
        npz_name = f"chain_{c}_extra.npz"
        _save_npz(out / npz_name, side)
        files.append({"csv": csv_name, "npz": npz_name})
    _save_npz(out / "observations.npz", {
        "obs_index": draws.obs_index,
        "area_sample_sizes": draws.area_sample_sizes if draws.area_sample_sizes is not None else np.zeros(0),
    })
    manifest = {
        "format": ARCHIVE_FORMAT,
        "spec": spec_to_dict(draws.spec),
        "sampler": draws.config.to_dict(),
        "num_chains": draws.num_chains,
        "draws_per_chain": draws.draws_per_chain,
        "parameters": names,
        "respondent_level": [n for n in RESPONDENT_LEVEL if n in draws.params],
        "shapes": shapes,
        "acceptance": draws.acceptance,
        "files": files,
        "run_config": run_config or {},
    }
    _write_json(out / "manifest.json", manifest)
    return out / "manifest.json"


def _csv_line(fields) -> str:
    buf = io_.StringIO()
    csv.writer(buf, lineterminator="").writerow(fields)
    return buf.getvalue()


def _save_npz(path, arrays: dict) -> None:
    """Compressed .npz with fixed member timestamps, so reruns are byte-identical."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        for name, arr in arrays.items():
            buf = io_.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.exists():
        raise SchemaError(f"no manifest.json in {directory}")
    manifest = json.loads(path.read_text(encoding="utf-8"))
    if manifest.get("format") != ARCHIVE_FORMAT:
        raise SchemaError(f"{path}: unsupported archive format {manifest.get('format')!r}")
    return manifest


def read_archive(directory) -> PosteriorDraws:
    out = Path(directory)
    manifest = read_manifest(out)
    spec = ModelSpec(**manifest["spec"])
    cfg = manifest["sampler"]
    cfg["frozen"] = tuple(cfg.get("frozen", ()))
    config = SamplerConfig(**cfg)
    shapes = {n: tuple(s) for n, s in manifest["shapes"].items()}
    names = manifest["parameters"]
    expected = [c for n in names for c in _column_names(n, shapes[n])]
    per_chain: dict[str, list] = {n: [] for n in list(names) + manifest["respondent_level"]}
    loglik = []
    for entry in manifest["files"]:
        with open(out / entry["csv"], newline="", encoding="utf-8") as fh:
            header = next(csv.reader(fh))
        if header != expected:
            raise SchemaError(f"{entry['csv']}: columns do not match the manifest")
        table = np.loadtxt(out / entry["csv"], delimiter=",", skiprows=1, ndmin=2)
        if table.shape[0] != manifest["draws_per_chain"]:
            raise SchemaError(f"{entry['csv']}: expected {manifest['draws_per_chain']} rows")
        col = 0
        for n in names:
            width = int(np.prod(shapes[n])) if shapes[n] else 1
            per_chain[n].append(table[:, col:col + width].reshape((-1,) + shapes[n]))
            col += width
        with np.load(out / entry["npz"]) as side:
            loglik.append(side["loglik"])
            for n in manifest["respondent_level"]:
                per_chain[n].append(side[n])
    with np.load(out / "observations.npz") as obs:
        obs_index = obs["obs_index"]
        sizes = obs["area_sample_sizes"]
    return PosteriorDraws(
        spec=spec,
        config=config,
        params={n: np.stack(v) for n, v in per_chain.items()},
        loglik=np.stack(loglik),
        obs_index=obs_index,
        acceptance=manifest.get("acceptance", []),
        area_sample_sizes=sizes if sizes.size else None,
    )


# ----------------------------------------------------------------------------
# reports


def _num(x) -> str:
    """Float formatting for report CSVs; NaN is written as an empty field."""
    x = float(x)
    if math.isnan(x):
        return ""
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _parse(field: str) -> float:
    return math.nan if field.strip() == "" else float(field)


def write_diagnostics(rows: list[DiagnosticRow], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["functional", "rhat", "ess", "pass"])
        for r in rows:
            w.writerow([r.functional, _num(r.rhat), _num(r.ess), "true" if r.passed else "false"])


def read_diagnostics(path) -> list[DiagnosticRow]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["functional", "rhat", "ess", "pass"]:
            raise SchemaError(f"{path}: unexpected diagnostics header {reader.fieldnames}")
        return [
            DiagnosticRow(r["functional"], _parse(r["rhat"]), _parse(r["ess"]), r["pass"] == "true")
            for r in reader
        ]


def write_waic(result: WAICResult, path) -> None:
    _write_json(path, result.to_dict())


def read_waic(path) -> WAICResult:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return WAICResult(float(d["waic"]), float(d["lppd"]), float(d["p_waic"]), int(d["n_obs"]))


AREAL_HEADER = ["area", "variable", "theta_mean", "relevance", "q025", "q975", "flag"]


def write_areal_summary(summary, path, high: float = 0.80, low: float = 0.20) -> None:
    """One row per (area, item); ``flag`` is +1/-1/0 for worse/better/neither."""
    M, K = summary.theta_mean.shape
    flags = summary.relevant(high, low)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(AREAL_HEADER)
        for m in range(M):
            for k in range(K):
                w.writerow([m + 1, k + 1, _num(summary.theta_mean[m, k]), _num(summary.relevance[m, k]),
                            _num(summary.q025[m, k]), _num(summary.q975[m, k]), int(flags[m, k])])


def read_areal_summary(path):
    from .posterior import ArealSummary

    rows = _read_table(path, AREAL_HEADER)
    M = max(int(r["area"]) for r in rows)
    K = max(int(r["variable"]) for r in rows)
    arrays = {c: np.full((M, K), np.nan) for c in AREAL_HEADER[2:6]}
    for r in rows:
        m, k = int(r["area"]) - 1, int(r["variable"]) - 1
        for c in arrays:
            arrays[c][m, k] = _parse(r[c])
    return ArealSummary(arrays["theta_mean"], arrays["relevance"], arrays["q025"], arrays["q975"])


CORR_HEADER = ["level", "var1", "var2", "mean", "q025", "q975", "relevant"]


def write_correlation(report, level: str, csv_path, json_path=None) -> None:
    K = report.mean.shape[0]
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CORR_HEADER)
        for k in range(K):
            for l in range(K):
                w.writerow([level, k + 1, l + 1, _num(report.mean[k, l]), _num(report.lower[k, l]),
                            _num(report.upper[k, l]), "true" if report.relevant[k, l] else "false"])
    if json_path is not None:
        _write_json(json_path, {
            "level": level,
            "num_draws": report.num_draws,
            "mean": report.mean.tolist(),
            "q025": report.lower.tolist(),
            "q975": report.upper.tolist(),
            "relevant": report.relevant.tolist(),
        })


def read_correlation(path):
    from .posterior import CorrelationReport

    rows = _read_table(path, CORR_HEADER)
    K = max(int(r["var1"]) for r in rows)
    mean, lo, hi = (np.full((K, K), np.nan) for _ in range(3))
    rel = np.zeros((K, K), dtype=bool)
    for r in rows:
        k, l = int(r["var1"]) - 1, int(r["var2"]) - 1
        mean[k, l], lo[k, l], hi[k, l] = _parse(r["mean"]), _parse(r["q025"]), _parse(r["q975"])
        rel[k, l] = r["relevant"] == "true"
    return CorrelationReport(mean, lo, hi, rel, num_draws=0)


PCA_HEADER = ["area", "component", "score"]


def write_pca(result, path) -> None:
    M, C = result.scores.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PCA_HEADER)
        for m in range(M):
            for c in range(C):
                w.writerow([m + 1, c + 1, _num(result.scores[m, c])])
    _write_json(Path(path).with_suffix(".json"), {
        "loadings": result.loadings.tolist(),
        "explained": result.explained.tolist(),
        "center": result.center.tolist(),
        "scale": result.scale.tolist(),
    })


PREDICTIVE_HEADER = ["model", "area", "variable", "category", "pred_mean", "pred_q025", "pred_q975",
                     "observed", "covered"]


def write_predictive(report, path, model: str = "") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PREDICTIVE_HEADER)
        for r in report.rows(model):
            w.writerow([r["model"], r["area"], r["variable"], r["category"], _num(r["pred_mean"]),
                        _num(r["pred_q025"]), _num(r["pred_q975"]), _num(r["observed"]),
                        "true" if r["covered"] else "false"])


def read_predictive(path) -> list[dict]:
    """Rows of a predictive report; the area column may be an index or a label."""
    rows = _read_table(path, PREDICTIVE_HEADER)
    out = []
    for r in rows:
        area = r["area"]
        out.append({
            "model": r["model"],
            "area": int(area) if area.isdigit() else area,
            "variable": int(r["variable"]),
            "category": int(r["category"]),
            "pred_mean": _parse(r["pred_mean"]),
            "pred_q025": _parse(r["pred_q025"]),
            "pred_q975": _parse(r["pred_q975"]),
            "observed": _parse(r["observed"]),
            "covered": r["covered"] == "true",
        })
    return out


POSTSTRAT_HEADER = ["area", "variable", "category", "expected_proportion", "q025", "q975"]


def write_poststrat(report, path) -> None:
    M, K, J = report.mean.shape
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POSTSTRAT_HEADER)
        for m in range(M):
            for k in range(K):
                for j in range(J):
                    w.writerow([m + 1, k + 1, j + 1, _num(report.mean[m, k, j]),
                                _num(report.lower[m, k, j]), _num(report.upper[m, k, j])])


def read_poststrat(path) -> dict[str, np.ndarray]:
    rows = _read_table(path, POSTSTRAT_HEADER)
    M = max(int(r["area"]) for r in rows)
    K = max(int(r["variable"]) for r in rows)
    J = max(int(r["category"]) for r in rows)
    out = {c: np.full((M, K, J), np.nan) for c in POSTSTRAT_HEADER[3:]}
    for r in rows:
        idx = (int(r["area"]) - 1, int(r["variable"]) - 1, int(r["category"]) - 1)
        for c in out:
            out[c][idx] = _parse(r[c])
    return out


def _read_table(path, header) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != header:
            raise SchemaError(f"{path}: expected header {header}, found {reader.fieldnames}")
        return list(reader)


def _write_json(path, doc) -> None:
    tmp = Path(str(path) + ".tmp")
    tmp.write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")
