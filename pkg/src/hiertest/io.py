"""
File formats: numeric CSV, strict JSON configs, result records and an SVG
dendrogram. Every writer goes through :func:`atomic_write_text`, so an output
file is either complete or absent.
"""

import csv
import dataclasses
import json
import math
import os
import tempfile
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .engine import EngineConfig, HierTestResult, significant_clusters
from .simulation import ScenarioSpec
from .tree import ClusterTree


class InputError(ValueError):
    """Unreadable or malformed input (CLI exit status 2)."""


class DimensionError(ValueError):
    """Inputs that parse but do not fit together (CLI exit status 3)."""


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def read_csv_table(path) -> Tuple[np.ndarray, Optional[List[str]]]:
    """Parse a numeric CSV, returning (matrix, header or None).

    The first row is a header when any of its cells is non-numeric. Blank
    lines are skipped; rows of unequal length are rejected with the line
    number of the first offender.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    header, rows, width = None, [], None
    with fh:
        reader = csv.reader(fh)
        for cells in reader:
            line = reader.line_num
            cells = [c.strip() for c in cells]
            if not cells or cells == [""]:
                continue
            if header is None and not rows and not all(_is_number(c) for c in cells):
                header, width = cells, len(cells)
                continue
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise InputError(f"{path}: ragged row at line {line}: {len(cells)} fields, expected {width}")
            try:
                rows.append([float(c) for c in cells])
            except ValueError:
                bad = next(i for i, c in enumerate(cells) if not _is_number(c))
                raise InputError(f"{path}: non-numeric value {cells[bad]!r} at line {line}, column {bad + 1}") from None
    if not rows:
        raise InputError(f"{path}: no numeric rows")
    M = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(M)):
        raise InputError(f"{path}: non-finite values")
    return M, header


def parse_matrix_csv(path) -> np.ndarray:
    return read_csv_table(path)[0]


def parse_vector_csv(path) -> np.ndarray:
    """A response vector stored as one column or one row."""
    M = parse_matrix_csv(path)
    if M.shape[1] == 1:
        return M[:, 0]
    if M.shape[0] == 1:
        return M[0]
    raise InputError(f"{path}: expected a single column or row, got shape {M.shape}")


def format_float(x: float) -> str:
    return format(float(x), ".17g")


def write_matrix_csv(path, M, header: Optional[Sequence[str]] = None) -> None:
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    lines = []
    if header is not None:
        if len(header) != M.shape[1]:
            raise ValueError("header length does not match the number of columns")
        lines.append(",".join(header))
    lines.extend(",".join(format_float(v) for v in row) for row in M)
    atomic_write_text(path, "\n".join(lines) + "\n")


# --- configs -----------------------------------------------------------------

def _check_fields(cls, data: dict, where: str) -> None:
    if not isinstance(data, dict):
        raise InputError(f"{where}: expected an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise InputError(f"{where}: unknown field(s) {', '.join(unknown)}")


def engine_config_from_dict(data: dict, where: str = "engine") -> EngineConfig:
    _check_fields(EngineConfig, data, where)
    try:
        return EngineConfig(**data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: {exc}") from exc


def scenario_spec_from_dict(data: dict, where: str = "scenario") -> ScenarioSpec:
    _check_fields(ScenarioSpec, data, where)
    data = dict(data)
    if "engine" in data:
        data["engine"] = engine_config_from_dict(data["engine"], f"{where}.engine")
    missing = [f for f in ("design", "n", "p") if f not in data]
    if missing:
        raise InputError(f"{where}: missing required field(s) {', '.join(missing)}")
    try:
        return ScenarioSpec(**data)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{where}: {exc}") from exc


def load_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc


def to_jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dump_json(obj) -> str:
    # repr-based float output is the shortest string that round-trips exactly
    return json.dumps(to_jsonable(obj), indent=2, sort_keys=False) + "\n"


# --- results -----------------------------------------------------------------

def result_records(result: HierTestResult, alpha: Optional[float] = None) -> List[dict]:
    """One record per tree node; variables are reported 1-based."""
    det = significant_clusters(result, alpha)
    rejected = set(det.rejected.tolist())
    minimal = set(det.minimal.tolist())
    tree = result.tree
    records = []
    for node in tree.nodes:
        records.append({
            "id": node.id,
            "parent": node.parent,
            "variables": [v + 1 for v in node.variables],
            "size": node.size,
            "p_c": float(result.p_c[node.id]),
            "p_h": float(result.p_h[node.id]),
            "rejected": node.id in rejected,
            "minimal": node.id in minimal,
        })
    return records


def significant_csv(records: Sequence[dict]) -> str:
    lines = ["id,size,p_h,minimal,variables"]
    for r in records:
        if r["rejected"]:
            vars_ = " ".join(str(v) for v in r["variables"])
            lines.append(f"{r['id']},{r['size']},{r['p_h']:.6g},{int(r['minimal'])},{vars_}")
    return "\n".join(lines) + "\n"


def dendrogram_svg(tree: ClusterTree, p_h: Optional[np.ndarray] = None, alpha: float = 0.05) -> str:
    """Elbow dendrogram; rejected clusters drawn solid and labeled with p_h."""
    leaves = [c for c in tree.preorder.tolist() if tree[c].is_leaf]
    spacing, margin, plot_h = 18.0, 40.0, 320.0
    width = margin * 2 + spacing * max(len(leaves) - 1, 1)
    height = plot_h + margin * 2 + 20
    hmax = max((n.height for n in tree.nodes), default=0.0) or 1.0
    x = np.zeros(tree.n_nodes)
    for i, c in enumerate(leaves):
        x[c] = margin + spacing * i
    for c in tree.preorder[::-1].tolist():
        kids = tree[c].children
        if kids:
            x[c] = float(np.mean([x[k] for k in kids]))

    def ypos(c):
        return margin + (1.0 - tree[c].height / hmax) * plot_h

    rejected = np.zeros(tree.n_nodes, dtype=bool) if p_h is None else np.asarray(p_h) <= alpha
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0f}" height="{height:.0f}" '
        f'viewBox="0 0 {width:.0f} {height:.0f}" font-family="sans-serif" font-size="10">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for c in tree.preorder.tolist():
        node = tree[c]
        if rejected[c]:
            style = 'stroke="black" stroke-width="2"'
        else:
            style = 'stroke="#999999" stroke-width="1" stroke-dasharray="3,2"'
        if node.children:
            xs = [x[k] for k in node.children]
            parts.append(f'<line x1="{min(xs):.1f}" y1="{ypos(c):.1f}" x2="{max(xs):.1f}" '
                         f'y2="{ypos(c):.1f}" {style}/>')
        if node.parent is not None:
            parts.append(f'<line x1="{x[c]:.1f}" y1="{ypos(c):.1f}" x2="{x[c]:.1f}" '
                         f'y2="{ypos(node.parent):.1f}" {style}/>')
        if rejected[c]:
            parts.append(f'<text x="{x[c] + 3:.1f}" y="{ypos(c) - 3:.1f}">{p_h[c]:.3g}</text>')
        if node.is_leaf:
            parts.append(f'<text x="{x[c]:.1f}" y="{margin + plot_h + 14:.1f}" '
                         f'text-anchor="middle">{node.variables[0] + 1}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
