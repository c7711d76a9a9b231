"""
Artifact writers and readers

Tables are CSV (optionally also parquet) with the resolved config and code
version echoed as leading '# ' comment lines. Floats are written with 17
significant digits so a CSV reads back bit-exactly. Runtime metadata lives
only in JSON sidecars, keeping CSV output deterministic.
"""

import json
import os
import struct
from typing import Any, Dict, Iterable, Optional

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.parquet as pq

from src.pointwave import __version__
from src.pointwave.errors import ExportError
from src.pointwave.fdtd import BoxGeometry, WaveField
from src.pointwave.report import REPORT_COLUMNS, ErrorReport

FLOAT_FORMAT = "%.17g"

# Snapshot header: three int64 dims, then h_g and t as float64 (little endian)
SNAPSHOT_HEADER = struct.Struct("<3q2d")


def _ensure_parent(path: str) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    try:
        os.makedirs(parent, exist_ok=True)
    except OSError as exc:
        raise ExportError(f"Cannot create directory ({exc.strerror})", parent)


def header_lines(config: Optional[Dict[str, Any]] = None) -> Iterable[str]:
    yield f"# pointwave {__version__}"
    if config:
        yield "# config " + json.dumps(config, sort_keys=True, separators=(",", ":"))


def parquet_metadata(config: Optional[Dict[str, Any]] = None) -> Dict[bytes, bytes]:
    """Version and config echo as parquet key-value metadata"""
    metadata = {b"pointwave": __version__.encode("utf-8")}
    if config:
        metadata[b"config"] = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return metadata


def write_table(frame: pd.DataFrame, path: str, config: Optional[Dict[str, Any]] = None,
                formats: Iterable[str] = ("csv",)) -> Dict[str, str]:
    """
    Write a table as CSV (config echo in comment lines) and/or parquet

    Returns:
        Dict[str, str]: format -> written path
    """
    written = {}
    stem, _ = os.path.splitext(path)
    _ensure_parent(path)
    for fmt in formats:
        target = f"{stem}.{fmt}"
        try:
            if fmt == "csv":
                with open(target, "w", encoding="utf-8", newline="") as handle:
                    for line in header_lines(config):
                        handle.write(line + "\n")
                    frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
            elif fmt == "parquet":
                table = pa.Table.from_pandas(frame, preserve_index=False)
                metadata = dict(table.schema.metadata or {})
                metadata.update(parquet_metadata(config))
                pq.write_table(table.replace_schema_metadata(metadata), target)
            else:
                raise ExportError(f"Unknown table format '{fmt}'", target)
        except OSError as exc:
            raise ExportError(f"Cannot write table ({exc.strerror})", target)
        written[fmt] = target
    return written


def read_table(path: str) -> pd.DataFrame:
    """Read a table written by write_table (comment lines skipped)"""
    try:
        if path.endswith(".parquet"):
            return pd.read_parquet(path)
        return pd.read_csv(path, comment="#", float_precision="round_trip")
    except OSError as exc:
        raise ExportError(f"Cannot read table ({exc.strerror})", path)


def read_header(path: str) -> Dict[str, Any]:
    """Version and config echoed by a CSV (comment lines) or parquet (key-value metadata) artifact"""
    info: Dict[str, Any] = {}
    try:
        if path.endswith(".parquet"):
            metadata = pq.read_schema(path).metadata or {}
            if b"pointwave" in metadata:
                info["pointwave"] = metadata[b"pointwave"].decode("utf-8")
            if b"config" in metadata:
                info["config"] = json.loads(metadata[b"config"])
            return info
        with open(path, encoding="utf-8") as handle:
            for line in handle:
                if not line.startswith("# "):
                    break
                key, _, value = line[2:].rstrip("\n").partition(" ")
                info[key] = json.loads(value) if key == "config" else value
    except OSError as exc:
        raise ExportError(f"Cannot read header ({exc.strerror})", path)
    return info


def write_json(payload: Dict[str, Any], path: str) -> str:
    _ensure_parent(path)
    try:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2, sort_keys=True, default=_json_default)
            handle.write("\n")
    except OSError as exc:
        raise ExportError(f"Cannot write JSON ({exc.strerror})", path)
    return path


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"{type(value).__name__} is not JSON serializable")


# ============================================================================
# SNAPSHOTS
# ============================================================================

def write_snapshot(field_: WaveField, path: str, config: Optional[Dict[str, Any]] = None) -> Dict[str, str]:
    """Flat binary (header + C-order float64 values) plus a JSON sidecar"""
    _ensure_parent(path)
    dims = field_.values.shape
    try:
        with open(path, "wb") as handle:
            handle.write(SNAPSHOT_HEADER.pack(*dims, field_.geometry.h, field_.time))
            handle.write(np.ascontiguousarray(field_.values, dtype="<f8").tobytes())
    except OSError as exc:
        raise ExportError(f"Cannot write snapshot ({exc.strerror})", path)

    sidecar = os.path.splitext(path)[0] + ".json"
    write_json({
        "version": __version__,
        "dims": list(dims),
        "h": field_.geometry.h,
        "time": field_.time,
        "dtype": "<f8",
        "order": "C",
        "origin_index": field_.geometry.n,
        "config": config or {},
    }, sidecar)
    return {"binary": path, "json": sidecar}


def read_snapshot(path: str) -> WaveField:
    try:
        with open(path, "rb") as handle:
            nx, ny, nz, h, t = SNAPSHOT_HEADER.unpack(handle.read(SNAPSHOT_HEADER.size))
            values = np.frombuffer(handle.read(), dtype="<f8").reshape(nx, ny, nz)
    except (OSError, struct.error, ValueError) as exc:
        raise ExportError(f"Cannot read snapshot ({exc})", path)
    geometry = BoxGeometry(h=h, n=(nx - 1) // 2)
    return WaveField(time=t, geometry=geometry, values=values.astype(float))


# ============================================================================
# REPORTS
# ============================================================================

GNUPLOT_TEMPLATE = """# pointwave {version}: error against eps, log-log
set datafile separator ','
set datafile commentschars '#'
set logscale xy
set xlabel 'eps'
set ylabel 'sup_t L2 error'
set key top left
set grid
set terminal pngcairo size 900,600
set output '{png}'
plot '{csv}' using 1:2 skip {skip} with linespoints title 'E_free', \\
     '{csv}' using 1:3 skip {skip} with linespoints title 'E_eff', \\
     '{csv}' using 1:4 skip {skip} with linespoints title 'E_free (excl)', \\
     '{csv}' using 1:5 skip {skip} with linespoints title 'E_eff (excl)'
"""


def write_plot_script(csv_path: str, path: str, skip: int = 1) -> str:
    """gnuplot script for the error-vs-ε figure of a report CSV

    skip counts the raw lines ahead of the first data row (comment lines and
    the column header).
    """
    _ensure_parent(path)
    stem = os.path.splitext(os.path.basename(csv_path))[0]
    try:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(GNUPLOT_TEMPLATE.format(version=__version__, csv=os.path.basename(csv_path),
                                                 png=f"{stem}_gnuplot.png", skip=skip))
    except OSError as exc:
        raise ExportError(f"Cannot write plot script ({exc.strerror})", path)
    return path


def write_figure(report: ErrorReport, path: str) -> str:
    """matplotlib log-log figure of the report"""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    _ensure_parent(path)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for column, style in (("E_free_excl", "o-"), ("E_eff_excl", "s-"), ("E_free", "o--"), ("E_eff", "s--")):
        values = report.table[column]
        ax.loglog(report.table["eps"], values, style, label=column)
    ax.set_xlabel("ε")
    ax.set_ylabel("sup_t ‖·‖ over comparison region")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    try:
        fig.savefig(path, dpi=120, bbox_inches="tight")
    except OSError as exc:
        raise ExportError(f"Cannot write figure ({exc.strerror})", path)
    finally:
        plt.close(fig)
    return path


def write_report(report: ErrorReport, directory: str, formats: Iterable[str] = ("csv",),
                 figure: bool = False, runtime: Optional[Dict[str, Any]] = None,
                 name: str = "report") -> Dict[str, str]:
    """
    Report table, JSON sidecar (slopes, per-run details, runtime) and plot script

    Returns:
        Dict[str, str]: artifact name -> path
    """
    base = os.path.join(directory, f"{name}.csv")
    written = {f"{name}.{fmt}": p for fmt, p in write_table(report.table, base, report.config, formats).items()}

    slopes = {col: (fit.to_dict() if fit is not None else None) for col, fit in report.slopes.items()}
    sidecar = os.path.join(directory, f"{name}.json")
    written[f"{name}.json"] = write_json({
        "version": report.version or __version__,
        "columns": REPORT_COLUMNS,
        "slopes": slopes,
        "runs": report.runs,
        "runtime": runtime or {},
        "config": report.config,
    }, sidecar)

    skip = len(list(header_lines(report.config))) + 1
    written[f"{name}.gp"] = write_plot_script(base, os.path.join(directory, f"{name}.gp"), skip)
    if figure and len(report) > 0:
        written[f"{name}.png"] = write_figure(report, os.path.join(directory, f"{name}.png"))
    return written


def read_report(path: str) -> ErrorReport:
    """Re-import a report CSV (and its JSON sidecar when present)"""
    table = read_table(path)
    header = read_header(path)
    sidecar = os.path.splitext(path)[0] + ".json"
    runs = []
    if os.path.exists(sidecar):
        try:
            with open(sidecar, encoding="utf-8") as handle:
                runs = json.load(handle).get("runs", [])
        except (OSError, ValueError) as exc:
            raise ExportError(f"Cannot read report sidecar ({exc})", sidecar)
    return ErrorReport(table, runs=runs, config=header.get("config", {}),
                       version=header.get("pointwave", ""))
