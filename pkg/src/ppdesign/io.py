"""File formats: designs, master designs, traces and reports.

Everything written here is 1-based (choice sets, profiles, attributes and
levels).
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import Design, DesignSpace, InvalidInputError
from .master import MasterDesign


def sidecar_path(csv_path: str | Path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".constants.json")


def constant_attributes(design: Design) -> list[list[int]]:
    return [[int(a) + 1 for a in np.flatnonzero(row)] for row in design.constant_mask()]


def write_design_csv(design: Design, path: str | Path, sidecar: bool = True) -> Path:
    path = Path(path)
    S, J, K = design.shape
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["choice_set", "profile"] + [f"attr_{i + 1}" for i in range(K)])
        for s in range(S):
            for j in range(J):
                w.writerow([s + 1, j + 1] + [int(x) for x in design.levels[s, j]])
    if sidecar:
        doc = {"num_choice_sets": S, "profiles_per_set": J, "constant_attributes": constant_attributes(design)}
        sidecar_path(path).write_text(json.dumps(doc, indent=2) + "\n")
    return path


def read_design_csv(path: str | Path) -> Design:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], [r for r in rows[1:] if r]
    if header[:2] != ["choice_set", "profile"]:
        raise InvalidInputError(f"{path}: expected header choice_set,profile,attr_1..")
    K = len(header) - 2
    S = max(int(r[0]) for r in body)
    J = max(int(r[1]) for r in body)
    levels = np.zeros((S, J, K), dtype=np.int64)
    seen = set()
    for r in body:
        s, j = int(r[0]) - 1, int(r[1]) - 1
        if (s, j) in seen:
            raise InvalidInputError(f"{path}: duplicate row for set {s + 1}, profile {j + 1}")
        seen.add((s, j))
        levels[s, j] = [int(x) for x in r[2:]]
    if len(seen) != S * J:
        raise InvalidInputError(f"{path}: expected {S * J} rows, found {len(seen)}")
    design = Design(levels)
    side = sidecar_path(path)
    if side.exists():
        doc = json.loads(side.read_text())
        if doc.get("constant_attributes") != constant_attributes(design):
            raise InvalidInputError(f"{side}: constant attributes disagree with {path.name}")
    return design


def design_to_dict(design: Design, space: DesignSpace | None = None) -> dict:
    doc = {
        "levels": design.levels.tolist(),
        "constant_attributes": constant_attributes(design),
    }
    if space is not None:
        doc["space"] = space_to_dict(space)
    return doc


def design_from_dict(doc: dict) -> Design:
    design = Design(np.asarray(doc["levels"], dtype=np.int64))
    if "constant_attributes" in doc and doc["constant_attributes"] != constant_attributes(design):
        raise InvalidInputError("constant_attributes disagree with levels")
    return design


def write_design_json(design: Design, path: str | Path, space: DesignSpace | None = None, **extra) -> Path:
    doc = design_to_dict(design, space)
    doc.update(extra)
    Path(path).write_text(dumps(doc) + "\n")
    return Path(path)


def read_design_json(path: str | Path) -> Design:
    return design_from_dict(json.loads(Path(path).read_text()))


def read_design(path: str | Path) -> Design:
    path = Path(path)
    return read_design_json(path) if path.suffix == ".json" else read_design_csv(path)


def space_to_dict(space: DesignSpace) -> dict:
    return {
        "num_choice_sets": space.num_choice_sets,
        "profiles_per_set": space.profiles_per_set,
        "attribute_levels": list(space.attribute_levels),
        "num_constant_attributes": space.num_constant_attributes,
        "forbidden_combinations": [{str(a + 1): lv for a, lv in combo} for combo in space.forbidden_combinations],
    }


def space_from_dict(doc: dict) -> DesignSpace:
    combos = [{int(a) - 1: int(lv) for a, lv in c.items()} for c in doc.get("forbidden_combinations", [])]
    return DesignSpace(
        doc["num_choice_sets"],
        doc["profiles_per_set"],
        doc["attribute_levels"],
        doc.get("num_constant_attributes", 0),
        combos,
    )


def write_master_csv(master: MasterDesign, path: str | Path, names: Sequence[str] | None = None) -> Path:
    K = master.num_attributes
    names = list(names) if names is not None else [f"attr_{i + 1}" for i in range(K)]
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        w.writerows(master.incidence.tolist())
    return Path(path)


def read_master_csv(path: str | Path) -> MasterDesign:
    with Path(path).open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    return MasterDesign(np.asarray([[int(x) for x in r] for r in rows[1:]], dtype=np.int64))


def write_rows_csv(path: str | Path, columns: Sequence[str], rows: Iterable[Sequence]) -> Path:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(x) for x in row])
    return Path(path)


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return x


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def dumps(doc) -> str:
    """JSON with non-finite floats spelled as strings."""
    return json.dumps(_clean(doc), indent=2)
