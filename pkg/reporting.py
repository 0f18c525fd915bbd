"""Output files: write-then-rename, CSVs with a metadata comment header, gnuplot stubs."""

import csv
import io
import logging
import os
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional

import pytz

logger = logging.getLogger(__name__)

GNUPLOT_STUBS = {
    "snr_vs_elevation.gp": ("snr_db", "SNR [dB]"),
    "qber_vs_elevation.gp": ("qber", "QBER"),
    "skr_vs_elevation.gp": ("skr_bits_s", "SKR [bit/s]"),
    "cost_vs_elevation.gp": ("cost", "cost F"),
}


def atomic_write_text(path, text: str) -> Path:
    """Write a file so readers never observe a partial result"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def utc_timestamp() -> str:
    return datetime.now(pytz.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def metadata_lines(metadata: Dict[str, Any], timestamp: bool = True) -> List[str]:
    lines = [f"# {key}={_format_value(value)}" for key, value in metadata.items()]
    if timestamp:
        lines.append(f"# generated_at={utc_timestamp()}")
    return lines


def render_csv(fieldnames: List[str], rows: Iterable[Dict[str, Any]], metadata: Optional[Dict[str, Any]] = None,
               timestamp: bool = True) -> str:
    buffer = io.StringIO()
    for line in metadata_lines(metadata or {}, timestamp):
        buffer.write(line + "\n")
    writer = csv.DictWriter(buffer, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({key: _format_value(row.get(key)) for key in fieldnames})
    return buffer.getvalue()


def write_csv(path, fieldnames: List[str], rows: Iterable[Dict[str, Any]],
              metadata: Optional[Dict[str, Any]] = None, timestamp: bool = True) -> Path:
    written = atomic_write_text(path, render_csv(fieldnames, rows, metadata, timestamp))
    logger.info(f"wrote {written}")
    return written


def read_csv(path) -> List[Dict[str, str]]:
    """Rows of a CSV written by write_csv, skipping the comment header"""
    with open(path, encoding="utf-8") as handle:
        body = [line for line in handle if not line.startswith("#")]
    return list(csv.DictReader(body))


def write_gnuplot_stubs(directory, csv_name: str = "sweep.csv") -> List[Path]:
    written = []
    for script, (column, label) in GNUPLOT_STUBS.items():
        text = "\n".join([
            "set datafile separator ','",
            "set datafile commentschars '#'",
            "set key autotitle columnhead",
            "set xlabel 'elevation [deg]'",
            f"set ylabel '{label}'",
            f"# one curve per RIS size; rows are grouped by n_elements in {csv_name}",
            f"plot for [n in '0 128 265 512'] '{csv_name}' using "
            f"(column('n_elements') == n+0 ? column('elevation_deg') : 1/0):'{column}' "
            "with linespoints title 'N='.n",
            "",
        ])
        written.append(atomic_write_text(Path(directory) / script, text))
    return written


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)
