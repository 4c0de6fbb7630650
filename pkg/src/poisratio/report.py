"""Banded risk maps and tabular exports.

Bands are signed integers. Band 0 holds risks within a factor of the first
threshold of nominal; ``+k`` is inflated risk beyond ``thresholds[k-1]``,
``-k`` deflated risk (ratio ``alpha / actual``) beyond it. A risk exactly on
a threshold falls in the band nearer nominal.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .coverage import RiskPair
from .errors import DomainError
from .sweep import CSV_HEADER, Surface, _atomic_write, _fmt_risk, parse_surface, surface_header

__all__ = [
    "BandSpec",
    "DEFAULT_PALETTE",
    "INVALID_COLOR",
    "classify_band",
    "band_matrix",
    "render_surface",
    "write_image",
    "export_table",
    "read_table",
]


@dataclass(frozen=True)
class BandSpec:
    thresholds: tuple = (1.25, 1.5, 2.0, 10.0)

    def __post_init__(self):
        t = tuple(float(x) for x in self.thresholds)
        if not t:
            raise DomainError("at least one threshold is required")
        if any(x <= 1.0 for x in t):
            raise DomainError(f"thresholds must all exceed 1, got {t}")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise DomainError(f"thresholds must be strictly increasing, got {t}")
        object.__setattr__(self, "thresholds", t)

    @property
    def n_bands(self) -> int:
        return len(self.thresholds)


def classify_band(actual: float, nominal_alpha: float, bands: BandSpec = BandSpec()) -> int:
    """Signed band index of ``actual`` relative to ``nominal_alpha``.

    >>> classify_band(0.04, 0.025)
    2
    >>> classify_band(0.0, 0.025)
    -4
    """
    if not 0.0 < nominal_alpha < 0.5:
        raise DomainError(f"nominal alpha must lie in (0, 0.5), got {nominal_alpha!r}")
    if actual < 0.0 or actual != actual:
        raise DomainError(f"risk must be a probability, got {actual!r}")
    if actual == 0.0:
        return -bands.n_bands
    # compare against the band edges themselves so alpha * t lands inward
    k = 0
    if actual > nominal_alpha:
        sign = 1
        for t in bands.thresholds:
            if actual > nominal_alpha * t:
                k += 1
            else:
                break
    else:
        sign = -1
        for t in bands.thresholds:
            if actual < nominal_alpha / t:
                k += 1
            else:
                break
    return sign * k


def band_matrix(surface: Surface, side: str, bands: BandSpec = BandSpec()) -> np.ndarray:
    """Band index per cell for ``side`` (``lower`` or ``upper``); invalid cells hold 0."""
    risks = _side(surface, side)
    alpha = surface.spec.alpha
    out = np.zeros(risks.shape, dtype=np.int64)
    for idx in np.ndindex(risks.shape):
        if surface.valid[idx]:
            out[idx] = classify_band(float(risks[idx]), alpha, bands)
    return out


def _side(surface: Surface, side: str) -> np.ndarray:
    if side == "lower":
        return surface.alpha_l
    if side == "upper":
        return surface.alpha_u
    raise DomainError(f"side must be 'lower' or 'upper', got {side!r}")


# white for nominal, yellow / light blue for the next tolerated bands,
# then darker hues further out
DEFAULT_PALETTE = {
    0: (255, 255, 255),
    1: (255, 255, 128),
    2: (255, 170, 0),
    3: (230, 60, 0),
    4: (120, 0, 0),
    -1: (170, 210, 255),
    -2: (80, 140, 230),
    -3: (20, 60, 180),
    -4: (0, 0, 90),
}
INVALID_COLOR = (128, 128, 128)


def render_surface(surface: Surface, side: str, bands: BandSpec = BandSpec(),
                   palette: dict | None = None) -> bytes:
    """Binary PPM image, one pixel per cell, lambda1 across and the largest
    lambda2 on the top row."""
    palette = DEFAULT_PALETTE if palette is None else palette
    bm = band_matrix(surface, side, bands)
    n1, n2 = bm.shape
    for b in range(-bands.n_bands, bands.n_bands + 1):
        if b not in palette:
            raise DomainError(f"palette has no color for band {b}")
    lut = {b: bytes(int(c) for c in rgb) for b, rgb in palette.items()}
    invalid = bytes(INVALID_COLOR)
    body = bytearray()
    for j in range(n2 - 1, -1, -1):
        for i in range(n1):
            body += lut[int(bm[i, j])] if surface.valid[i, j] else invalid
    return f"P6\n{n1} {n2}\n255\n".encode("ascii") + bytes(body)


def write_image(data: bytes, path) -> None:
    path = os.fspath(path)
    tmp = path + ".part"
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise OSError(exc.errno, f"cannot write image {path}: {exc.strerror}") from exc


def table_text(surface: Surface, bands: BandSpec = BandSpec()) -> str:
    bl = band_matrix(surface, "lower", bands)
    bu = band_matrix(surface, "upper", bands)
    lines = surface_header(surface)
    lines.append("# bands " + ",".join(repr(t) for t in bands.thresholds))
    lines.append(CSV_HEADER + ",band_l,band_u")
    p1, p2 = surface.grid1.points(), surface.grid2.points()
    for i, l1 in enumerate(p1):
        for j, l2 in enumerate(p2):
            lines.append(f"{float(l1)!r},{float(l2)!r},{_fmt_risk(surface.alpha_l[i, j])},"
                         f"{_fmt_risk(surface.alpha_u[i, j])},{int(surface.valid[i, j])},"
                         f"{bl[i, j]},{bu[i, j]}")
    return "\n".join(lines) + "\n"


def export_table(surface: Surface, path, bands: BandSpec = BandSpec()) -> None:
    """Surface CSV plus ``band_l`` and ``band_u`` columns."""
    try:
        _atomic_write(path, table_text(surface, bands))
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write table {os.fspath(path)}: {exc.strerror}") from exc


def read_table(path):
    """Inverse of :func:`export_table`: returns ``(surface, bands, band_l, band_u)``."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    bands = BandSpec()
    kept = []
    for line in lines:
        if line.startswith("# bands "):
            bands = BandSpec(tuple(float(x) for x in line[8:].split(",")))
        else:
            kept.append(line)
    surface, extra = parse_surface(kept, extra_columns=2)
    n1, n2 = surface.shape
    band_l = np.array([[int(extra[i][j][0]) for j in range(n2)] for i in range(n1)],
                      dtype=np.int64).reshape(n1, n2)
    band_u = np.array([[int(extra[i][j][1]) for j in range(n2)] for i in range(n1)],
                      dtype=np.int64).reshape(n1, n2)
    return surface, bands, band_l, band_u


def risk_bands(pair: RiskPair, nominal_alpha: float, bands: BandSpec = BandSpec()) -> tuple[int, int]:
    return (classify_band(pair.alpha_l, nominal_alpha, bands),
            classify_band(pair.alpha_u, nominal_alpha, bands))
