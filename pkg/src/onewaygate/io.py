"""File formats: grouped z-score CSV, parameter JSON and test reports."""
from __future__ import annotations

import csv
import json
import math
from importlib import resources
from pathlib import Path

import numpy as np

from .gate import DecisionSet, pfdr_between, pfdr_selective, pfdr_total, pfnr_total
from .model import DensitySpec, GammParams, GroupedObservations, LfdrTable

__all__ = [
    "InputParseError",
    "CSV_HEADER",
    "read_grouped_csv",
    "write_grouped_csv",
    "read_params",
    "write_params",
    "params_to_dict",
    "params_from_dict",
    "build_test_report",
    "dump_json",
    "load_schema",
]

CSV_HEADER = ("group_id", "unit_id", "z")


class InputParseError(ValueError):
    """An input file could not be parsed; the message names the row or field."""


def read_grouped_csv(path) -> GroupedObservations:
    """Read ``group_id,unit_id,z`` rows. Groups keep their order of first
    appearance; rows of one group need not be contiguous."""
    path = Path(path)
    groups: dict[str, list[tuple[str, float]]] = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputParseError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise InputParseError(f"{path}: header must be {','.join(CSV_HEADER)}, got {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise InputParseError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            gid, uid, raw = (c.strip() for c in row)
            if not gid:
                raise InputParseError(f"{path}:{lineno}: empty group_id")
            try:
                z = float(raw)
            except ValueError:
                raise InputParseError(f"{path}:{lineno}: field z is not a number: {raw!r}") from None
            if not math.isfinite(z):
                raise InputParseError(f"{path}:{lineno}: field z is not finite: {raw!r}")
            groups.setdefault(gid, []).append((uid, z))
    if not groups:
        raise InputParseError(f"{path}: no data rows")
    gids = tuple(groups)
    values = np.array([z for g in gids for _, z in groups[g]])
    units = tuple(u for g in gids for u, _ in groups[g])
    sizes = np.array([len(groups[g]) for g in gids])
    return GroupedObservations(values, sizes, gids, units)


def write_grouped_csv(data: GroupedObservations, path) -> None:
    gidx = data.group_index
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for k in range(data.N):
            w.writerow([data.group_ids[gidx[k]], data.unit_ids[k], repr(float(data.values[k]))])


def params_to_dict(params: GammParams) -> dict:
    d = params.densities
    return {
        "pi1": params.pi1,
        "pi2": params.pi2 if isinstance(params.pi2, float) else list(params.pi2),
        "weights": list(d.alt_weights),
        "means": list(d.alt_means),
        "sigma": d.alt_sd,
    }


def params_from_dict(obj: dict) -> GammParams:
    missing = {"pi1", "pi2", "weights", "means"} - set(obj)
    if missing:
        raise InputParseError(f"parameter file is missing fields: {sorted(missing)}")
    try:
        dens = DensitySpec(tuple(obj["weights"]), tuple(obj["means"]), float(obj.get("sigma", 1.0)))
        return GammParams(obj["pi1"], obj["pi2"], dens)
    except TypeError as exc:
        raise InputParseError(f"parameter file has a malformed field: {exc}") from None


def read_params(path) -> GammParams:
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputParseError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(obj, dict):
        raise InputParseError(f"{path}: expected a JSON object")
    return params_from_dict(obj)


def write_params(params: GammParams, path) -> None:
    Path(path).write_text(dump_json(params_to_dict(params)))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dump_json(obj) -> str:
    """Deterministic JSON: sorted keys, shortest round-trip float repr."""
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def build_test_report(data: GroupedObservations, table: LfdrTable, dec: DecisionSet, *,
                      method: str, alpha: float, eta, params: GammParams, parameter_source: str) -> dict:
    rej = dec.rejections_per_group
    selected = dec.selected_mask
    gidx = data.group_index
    groups = [
        {
            "group_id": data.group_ids[i],
            "n": int(data.sizes[i]),
            "lfdr_star_group": table.lfdr_star_group[i],
            "lambda": table.lam[i],
            "lfdr_group": table.lfdr_group[i],
            "selected": bool(selected[i]),
            "decision": bool(rej[i] > 0),
            "rejections": int(rej[i]),
        }
        for i in range(data.m)
    ]
    hyps = [
        {
            "group_id": data.group_ids[gidx[k]],
            "unit_id": data.unit_ids[k],
            "z": data.values[k],
            "lfdr_star": table.lfdr_star[k],
            "lfdr_cond": table.lfdr_cond[k],
            "lfdr": table.lfdr_hyp[k],
            "decision": bool(dec.delta_hyp[k]),
        }
        for k in range(data.N)
    ]
    summary = {
        "n_hypotheses": data.N,
        "n_groups": data.m,
        "total_rejections": dec.n_rejections,
        "groups_with_rejections": int((rej > 0).sum()),
        "n_selected_groups": int(dec.selected_groups.size),
        "pfdr_total": pfdr_total(dec, table),
        "pfnr_total": pfnr_total(dec, table),
        "pfdr_selective": pfdr_selective(dec, table),
        "pfdr_between": pfdr_between(dec, table),
    }
    return _jsonable({
        "method": method,
        "alpha": alpha,
        "eta": eta,
        "parameter_source": parameter_source,
        "parameters": params_to_dict(params),
        "summary": summary,
        "threshold": dec.threshold_info,
        "selected_groups": [data.group_ids[i] for i in dec.selected_groups],
        "groups": groups,
        "hypotheses": hyps,
    })


def load_schema(name: str = "test_report") -> dict:
    text = resources.files("onewaygate").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)
