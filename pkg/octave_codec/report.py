"""
Rate-distortion reports: per-image rows, per-operating-point means, and the
CSV/JSON files `eval` writes and `bd` reads.
"""

import csv
import json
import logging
from collections.abc import Sequence
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np

from octave_codec.exceptions import ConfigError
from octave_codec.metrics import FitMethod, RDPoint, bd_psnr, bd_rate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImageResult:
    image: str
    bits: int
    quality: int
    bpp: float
    base_bpp: float
    enhancement_bpp: float
    enhancement_share: float
    psnr: float
    psnr_yuv: float
    msssim: float
    base_psnr: float
    encoder_seconds: float
    decoder_seconds: float


COLUMNS = tuple(f.name for f in fields(ImageResult))
_AVERAGED = COLUMNS[3:]


@dataclass
class RDReport:
    rows: list[ImageResult]
    metadata: dict[str, Any]

    def operating_points(self) -> list[tuple[int, int]]:
        seen: dict[tuple[int, int], None] = {}
        for row in self.rows:
            seen.setdefault((row.bits, row.quality))
        return list(seen)

    def aggregate(self) -> list[dict[str, Any]]:
        """Arithmetic mean over images for each (bits, quality) point, in first-seen order."""
        summary = []
        for bits, quality in self.operating_points():
            rows = [r for r in self.rows if (r.bits, r.quality) == (bits, quality)]
            entry: dict[str, Any] = {"bits": bits, "quality": quality, "images": len(rows)}
            for name in _AVERAGED:
                entry[name] = float(np.mean([getattr(r, name) for r in rows]))
            summary.append(entry)
        return summary

    def rd_points(self) -> list[RDPoint]:
        return _points_from_means(self.aggregate())

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=COLUMNS)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(asdict(row))
        return path

    def write_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        body = {"metadata": self.metadata, "aggregate": self.aggregate()}
        path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _points_from_means(entries: Sequence[dict[str, Any]]) -> list[RDPoint]:
    points = [
        RDPoint(
            bpp=float(e["bpp"]),
            psnr=float(e["psnr"]),
            msssim=float(e.get("msssim", 0.0)),
            psnr_yuv=float(e["psnr_yuv"]) if e.get("psnr_yuv") not in (None, "") else None,
        )
        for e in entries
    ]
    return sorted(points, key=lambda p: p.bpp)


def read_rd_csv(path: Union[str, Path]) -> list[RDPoint]:
    """
    RD points from a report CSV. Rows that carry `bits`/`quality` columns are
    averaged per operating point; otherwise every row is one point (anchor
    curves measured elsewhere need only `bpp` and `psnr`).
    """
    path = Path(path)
    with path.open(newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ConfigError(f"{path} holds no RD rows")
    missing = {"bpp", "psnr"} - set(rows[0])
    if missing:
        raise ConfigError(f"{path} lacks columns {sorted(missing)}")
    try:
        if "bits" in rows[0] and "quality" in rows[0]:
            groups: dict[tuple[str, str], list[dict[str, str]]] = {}
            for row in rows:
                groups.setdefault((row["bits"], row["quality"]), []).append(row)
            entries = []
            for members in groups.values():
                entry: dict[str, Any] = {}
                for key in ("bpp", "psnr", "msssim", "psnr_yuv"):
                    if key in members[0] and members[0][key] != "":
                        entry[key] = float(np.mean([float(m[key]) for m in members]))
                entries.append(entry)
        else:
            entries = [{k: float(v) for k, v in row.items() if k in ("bpp", "psnr", "msssim", "psnr_yuv") and v} for row in rows]
    except ValueError as e:
        raise ConfigError(f"{path}: non-numeric RD value ({e})") from e
    return _points_from_means(entries)


@dataclass(frozen=True)
class BDResult:
    metric: str
    bd_rate: float
    bd_psnr: float


def bd_table(
    anchor: Sequence[RDPoint],
    test: Sequence[RDPoint],
    method: FitMethod = "polyfit",
    metrics: Optional[Sequence[str]] = None,
) -> list[BDResult]:
    if metrics is None:
        metrics = ["psnr"]
        if all(p.psnr_yuv is not None for p in list(anchor) + list(test)):
            metrics.append("psnr_yuv")
    results = []
    for metric in metrics:
        results.append(
            BDResult(
                metric=metric,
                bd_rate=bd_rate(anchor, test, metric=metric, method=method),  # type: ignore[arg-type]
                bd_psnr=bd_psnr(anchor, test, metric=metric, method=method),  # type: ignore[arg-type]
            )
        )
    return results


def format_bd_table(results: Sequence[BDResult]) -> str:
    lines = [f"{'metric':<10}{'BD-Rate (%)':>14}{'BD-PSNR (dB)':>14}"]
    for r in results:
        lines.append(f"{r.metric:<10}{r.bd_rate:>14.4f}{r.bd_psnr:>14.4f}")
    return "\n".join(lines)
