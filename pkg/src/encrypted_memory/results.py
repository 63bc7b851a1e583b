"""Result files and run manifests.

Time series and tables go to CSV at 17 significant digits with ``#`` header
lines carrying the unit convention; density-matrix snapshots go to an npz
container at full precision; metrics and the manifest go to JSON. Files are
staged in a temporary directory and moved into place only when every file
has been written.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import shutil
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from ._version import __version__
from .dynamics_lambda import SimResult, config_hash
from .grid import UNITS
from .harness import AttackReport, HeatmapTable, KeytestReport, ShiftSweep
from .solver import AtomicState

CSV_VERSION = 1


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.17g}"
    return str(v)


def write_csv(path, columns, rows, meta: Optional[dict] = None) -> Path:
    path = Path(path)
    head = {"units": UNITS, "csv_version": CSV_VERSION, **(meta or {})}
    lines = [f"# {k}={v}" for k, v in head.items()]
    lines.append(",".join(columns))
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_csv(path):
    """(meta, columns, rows) with numeric cells parsed as floats."""
    meta, columns, rows = {}, None, []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif columns is None:
            columns = line.split(",")
        elif line:
            rows.append([_parse(c) for c in line.split(",")])
    return meta, columns, rows


def _parse(cell: str):
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError:
        return cell


def read_series(path) -> dict:
    """Columns of a numeric CSV as float arrays."""
    _, cols, rows = read_csv(path)
    arr = np.array(rows, dtype=float).reshape(len(rows), len(cols))
    return {c: arr[:, i] for i, c in enumerate(cols)}


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if not math.isfinite(f) else f
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, data) -> Path:
    path = Path(path)
    path.write_text(json.dumps(_clean(data), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def save_snapshots(path, snapshots: dict, final: Optional[AtomicState] = None) -> Path:
    times = sorted(snapshots)
    arrays = {"times": np.array(times, dtype=float)}
    n_levels = None
    for i, t in enumerate(times):
        arrays[f"s{i}"] = snapshots[t].entries
        n_levels = snapshots[t].n_levels
    if final is not None:
        arrays["final"] = final.entries
        n_levels = final.n_levels
    arrays["n_levels"] = np.array(n_levels or 0)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return Path(path)


def load_snapshots(path):
    """(snapshots dict keyed by time, final state or None)."""
    with np.load(path, allow_pickle=False) as data:
        n = int(data["n_levels"])
        snaps = {float(t): AtomicState(data[f"s{i}"].copy(), n) for i, t in enumerate(data["times"])}
        final = AtomicState(data["final"].copy(), n) if "final" in data.files else None
    return snaps, final


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# --- per-result writers ---------------------------------------------------------

def _series_rows(t, cols):
    return list(zip(t, *cols))


def _write_sim(res: SimResult, d: Path) -> dict:
    write_csv(d / "output.csv", ["t", "input_re", "input_im", "output_re", "output_im"],
              _series_rows(res.t, [res.input.real, res.input.imag, res.output.real, res.output.imag]),
              {"z_input": 0, "z_output": "L"})
    write_json(d / "metrics.json", {**res.metrics.to_dict(), "invariants": res.invariants})
    save_snapshots(d / "snapshots.npz", res.snapshots, res.final_state)
    cfg = res.manifest["config"]
    return {"run": cfg, "run_hash": res.manifest["config_hash"], "grid": cfg.get("grid"),
            "seeds": {k: (cfg.get(k) or {}).get("seed") for k in ("encrypt_key", "decrypt_key")}}


def _write_keytest(rep: KeytestReport, d: Path) -> dict:
    names = list(rep.traces)
    cols = ["t", "input_re", "input_im"]
    data = [rep.input.real, rep.input.imag]
    for n in names:
        cols += [f"{n}_re", f"{n}_im"]
        data += [rep.traces[n].output.real, rep.traces[n].output.imag]
    write_csv(d / "traces.csv", cols, _series_rows(rep.t, data), {"scheme": rep.scheme})
    c, rows = rep.table()
    write_csv(d / "metrics.csv", c, rows, {"reference": rep.reference})
    write_json(d / "metrics.json", {n: {**r.metrics.to_dict(), "invariants": r.invariants}
                                    for n, r in rep.traces.items()})
    first = rep.traces[names[0]]
    return {"grid": first.manifest["config"].get("grid"),
            "trials": {n: r.manifest["config_hash"] for n, r in rep.traces.items()}}


def _write_table(obj, d: Path, name: str, summary: dict) -> dict:
    c, rows = obj.table()
    write_csv(d / f"{name}.csv", c, rows)
    write_json(d / "summary.json", summary)
    return {}


def write_results(result, out_dir, config: Optional[dict] = None, master_seed: Optional[int] = None,
                  wall_time: Optional[float] = None) -> dict:
    """Write artifacts for a SimResult or an experiment report plus ``manifest.json``.

    ``config`` is the fully defaulted configuration echo. Returns the
    manifest. Nothing is left in ``out_dir`` if writing fails.
    """
    out = Path(out_dir)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".staging-", dir=out.parent))
    try:
        if isinstance(result, SimResult):
            info = _write_sim(result, stage)
            wall = result.manifest.get("wall_time_s") if wall_time is None else wall_time
        elif isinstance(result, KeytestReport):
            info = _write_keytest(result, stage)
            wall = wall_time
        elif isinstance(result, HeatmapTable):
            info = _write_table(result, stage, "heatmap", {"failures": result.failures,
                                                             "kappa": result.duration})
            wall = wall_time
        elif isinstance(result, ShiftSweep):
            info = _write_table(result, stage, "shift_sweep", {
                "scheme": result.scheme,
                "window_width": {f"{c.sigma:.17g}": c.window_width for c in result.curves},
                "tail_level": {f"{c.sigma:.17g}": c.tail_level for c in result.curves},
            })
            wall = wall_time
        elif isinstance(result, AttackReport):
            info = _write_table(result, stage, "attacks", result.summary())
            wall = wall_time
        else:
            raise TypeError(f"cannot write results of type {type(result).__name__}")
        files = {p.name: sha256(p) for p in sorted(stage.iterdir())}
        manifest = {
            "version": __version__,
            "units": UNITS,
            "master_seed": master_seed,
            "wall_time_s": wall,
            "files": files,
            **info,
        }
        if config is not None:
            manifest["config"] = config
            manifest["config_hash"] = config_hash(config)
        write_json(stage / "manifest.json", manifest)
        out.mkdir(parents=True, exist_ok=True)
        for p in stage.iterdir():
            os.replace(p, out / p.name)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    shutil.rmtree(stage, ignore_errors=True)
    return manifest


def verify_manifest(out_dir) -> bool:
    """True when every file listed in the manifest still has its checksum."""
    out = Path(out_dir)
    man = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    return all(sha256(out / name) == digest for name, digest in man["files"].items())
