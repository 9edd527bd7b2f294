"""Per-cell aggregation, performance gain, OLS R^2 and Shapley S-Scores.

Regression arithmetic is exact: inputs are converted to ``Fraction`` and the
normal equations are solved by Gaussian elimination, so algebraic identities
(Shapley efficiency, orthogonal-design collapse) hold without rounding error
until the final conversion to float.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

from .errors import ParameterError

MIN_SHAPLEY_CELLS = 4


@dataclass(frozen=True)
class CellMetrics:
    """Mean per-task score of each system in one (depth, width) cell.

    ``gain`` is ``None`` when ``single_score`` is zero or either system has
    no scored records.  Failed records (backend errors) are not scored and
    are counted in ``n_failed``.
    """

    depth: int
    width: int
    n_single: int
    n_multi: int
    single_score: float | None
    multi_score: float | None
    gain: float | None
    n_failed: int = 0
    mean_entropy: float | None = None

    @property
    def gain_defined(self) -> bool:
        return self.gain is not None

    def to_dict(self) -> dict:
        return asdict(self)


def relative_gain(single: float, multi: float) -> float | None:
    """(multi - single) / single, or ``None`` when single is zero."""
    if single == 0:
        return None
    return (multi - single) / single


def aggregate_cells(records: Iterable[dict], cells: Sequence[tuple[int, int]] | None = None) -> list[CellMetrics]:
    """Group result records by (depth, width) and average per system.

    Parameters
    ----------
    records
        Dicts with ``task_id``, ``depth``, ``width``, ``system`` and ``score``
        (``None`` or ``status == "failed"`` marks a failed task).
    cells
        Optional list of expected cells; records outside it are rejected.

    Returns
    -------
    list of CellMetrics
        Sorted by (depth, width).  Sums use ``math.fsum`` so the result does
        not depend on record order.
    """
    scores = defaultdict(lambda: {"single": [], "multi": []})
    failed = defaultdict(int)
    entropy = defaultdict(dict)
    allowed = None if cells is None else {tuple(c) for c in cells}
    unknown = []
    for rec in records:
        key = (int(rec["depth"]), int(rec["width"]))
        if allowed is not None and key not in allowed:
            unknown.append(rec.get("task_id"))
            continue
        system = rec["system"]
        if system not in ("single", "multi"):
            raise ParameterError(f"unknown system {system!r} in record {rec.get('task_id')}")
        if rec.get("entropy_norm") is not None:
            entropy[key][rec["task_id"]] = float(rec["entropy_norm"])
        if rec.get("status", "ok") != "ok" or rec.get("score") is None:
            failed[key] += 1
            continue
        scores[key][system].append(float(rec["score"]))
    if unknown:
        raise ParameterError(f"records outside the declared cells: {sorted(map(str, unknown))}")

    out = []
    for key in sorted(set(scores) | set(failed)):
        s, m = scores[key]["single"], scores[key]["multi"]
        single = math.fsum(s) / len(s) if s else None
        multi = math.fsum(m) / len(m) if m else None
        gain = relative_gain(single, multi) if single is not None and multi is not None else None
        ent = entropy.get(key)
        out.append(
            CellMetrics(
                depth=key[0],
                width=key[1],
                n_single=len(s),
                n_multi=len(m),
                single_score=single,
                multi_score=multi,
                gain=gain,
                n_failed=failed[key],
                mean_entropy=math.fsum(ent.values()) / len(ent) if ent else None,
            )
        )
    return out


# ---------------------------------------------------------------------------
# exact least squares


@dataclass(frozen=True)
class OLSFit:
    coef: tuple  # intercept first
    r2: float
    sst_zero: bool


def _solve(a: list[list[Fraction]], b: list[Fraction]) -> list[Fraction]:
    n = len(b)
    m = [row[:] + [rhs] for row, rhs in zip(a, b)]
    for col in range(n):
        pivot = next((r for r in range(col, n) if m[r][col] != 0), None)
        if pivot is None:
            raise ParameterError("predictor matrix is singular (constant or collinear predictors)")
        m[col], m[pivot] = m[pivot], m[col]
        for r in range(n):
            if r != col and m[r][col] != 0:
                factor = m[r][col] / m[col][col]
                m[r] = [x - factor * y for x, y in zip(m[r], m[col])]
    return [m[i][n] / m[i][i] for i in range(n)]


def _r2_exact(X: Sequence[Sequence], y: Sequence) -> tuple[Fraction, list[Fraction], bool]:
    yf = [Fraction(v) for v in y]
    n = len(yf)
    k = len(X[0]) if len(X) else 0
    if len(X) != n:
        raise ParameterError("X and y have different numbers of rows")
    if n < k + 2:
        raise ParameterError(f"need at least {k + 2} observations for {k} predictors plus intercept")
    rows = [[Fraction(1)] + [Fraction(v) for v in row] for row in X]
    ybar = sum(yf, Fraction(0)) / n
    sst = sum(((v - ybar) ** 2 for v in yf), Fraction(0))
    xtx = [[sum((r[i] * r[j] for r in rows), Fraction(0)) for j in range(k + 1)] for i in range(k + 1)]
    xty = [sum((r[i] * v for r, v in zip(rows, yf)), Fraction(0)) for i in range(k + 1)]
    beta = _solve(xtx, xty)
    if sst == 0:
        return Fraction(0), beta, True
    ssr = sum(((v - sum((b * x for b, x in zip(beta, r)), Fraction(0))) ** 2 for r, v in zip(rows, yf)), Fraction(0))
    return 1 - ssr / sst, beta, False


def ols_fit(X: Sequence[Sequence[float]], y: Sequence[float]) -> OLSFit:
    """Least-squares fit with intercept; R^2 = 1 - SSR/SST.

    A constant response (SST = 0) gives R^2 = 0 with ``sst_zero`` set.
    Constant or collinear predictor columns raise :class:`ParameterError`.
    """
    r2, beta, flag = _r2_exact(X, y)
    return OLSFit(coef=tuple(float(b) for b in beta), r2=float(r2), sst_zero=flag)


def ols_r2(X: Sequence[Sequence[float]], y: Sequence[float]) -> float:
    if len(X) and len(X[0]) == 0:
        return 0.0
    return ols_fit(X, y).r2


# ---------------------------------------------------------------------------
# Shapley decomposition


@dataclass(frozen=True)
class ShapleyResult:
    r2_empty: float
    r2_depth: float
    r2_width: float
    r2_full: float
    s_depth: float
    s_width: float
    n_cells: int
    n_excluded: int
    width_predictor: str
    sst_zero: bool = False

    @property
    def dominant(self) -> str:
        if self.s_depth > self.s_width:
            return "depth"
        if self.s_width > self.s_depth:
            return "width"
        return "tie"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["dominant"] = self.dominant
        return out


def shapley_from_table(depth: Sequence, width: Sequence, gain: Sequence, *, width_predictor: str = "level",
                       n_excluded: int = 0) -> ShapleyResult:
    """Two-player Shapley decomposition of the full-model R^2.

    S(x) = 1/2 (R^2({x}) - R^2(empty)) + 1/2 (R^2({depth, width}) - R^2({other}))
    with R^2(empty) = 0.  All four fits and both scores are computed in
    exact rational arithmetic, so s_depth + s_width equals r2_full.
    """
    n = len(gain)
    if n < MIN_SHAPLEY_CELLS:
        raise ParameterError(
            f"Shapley decomposition needs at least {MIN_SHAPLEY_CELLS} cells with defined gain, got {n}"
        )
    r2_d, _, flag = _r2_exact([[d] for d in depth], gain)
    r2_w, _, _ = _r2_exact([[w] for w in width], gain)
    r2_f, _, _ = _r2_exact([[d, w] for d, w in zip(depth, width)], gain)
    half = Fraction(1, 2)
    s_d = half * r2_d + half * (r2_f - r2_w)
    s_w = half * r2_w + half * (r2_f - r2_d)
    return ShapleyResult(
        r2_empty=0.0,
        r2_depth=float(r2_d),
        r2_width=float(r2_w),
        r2_full=float(r2_f),
        s_depth=float(s_d),
        s_width=float(s_w),
        n_cells=n,
        n_excluded=n_excluded,
        width_predictor=width_predictor,
        sst_zero=flag,
    )


def shapley_scores(cells: Sequence[CellMetrics], width_predictor: str = "level") -> ShapleyResult:
    """S-Scores of depth and width for the per-cell gain.

    ``width_predictor`` is ``"level"`` (the width index, or quintile for
    writing) or ``"mean_entropy"`` (the cell's mean normalized entropy).
    Cells with undefined gain are excluded and counted.
    """
    if width_predictor not in ("level", "mean_entropy"):
        raise ParameterError(f"unknown width predictor {width_predictor!r}")
    used = [c for c in cells if c.gain is not None]
    if width_predictor == "mean_entropy" and any(c.mean_entropy is None for c in used):
        raise ParameterError("mean_entropy width predictor needs writing cells with entropy")
    width = [c.width if width_predictor == "level" else c.mean_entropy for c in used]
    return shapley_from_table(
        [c.depth for c in used], width, [c.gain for c in used],
        width_predictor=width_predictor, n_excluded=len(cells) - len(used),
    )


# ---------------------------------------------------------------------------
# tables and figures

CELL_FIELDS = [
    "depth", "width", "n_single", "n_multi", "n_failed",
    "single_score", "multi_score", "gain", "mean_entropy",
]


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_cells_csv(cells: Sequence[CellMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(CELL_FIELDS)
        for c in cells:
            wr.writerow([_fmt(getattr(c, f)) for f in CELL_FIELDS])


def cell_matrix(cells: Sequence[CellMetrics], value: str = "gain"):
    """Rows = sorted depths, columns = sorted widths, entries or ``None``."""
    depths = sorted({c.depth for c in cells})
    widths = sorted({c.width for c in cells})
    lookup = {(c.depth, c.width): getattr(c, value) for c in cells}
    return depths, widths, [[lookup.get((d, w)) for w in widths] for d in depths]


def _colour(t: float) -> str:
    # linear white -> dark blue
    lo, hi = (255, 255, 255), (8, 48, 107)
    r, g, b = (round(a + (z - a) * t) for a, z in zip(lo, hi))
    return f"#{r:02x}{g:02x}{b:02x}"


def emit_heatmap(cells: Sequence[CellMetrics], path, value: str = "gain", write_csv: bool = True,
                 title: str | None = None) -> list[str]:
    """Write an SVG heatmap of ``value`` (and optionally a CSV matrix beside it).

    The colour scale is linear between the min and max over defined cells;
    undefined cells are grey and labelled ``NA``.  Output bytes depend only
    on the input.  Returns the written paths.
    """
    if not cells:
        raise ParameterError("cannot draw a heatmap of zero cells")
    depths, widths, mat = cell_matrix(cells, value)
    path = str(path)
    written = []
    if write_csv:
        csv_path = path[:-4] + ".csv" if path.endswith(".svg") else path + ".csv"
        with open(csv_path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["depth\\width"] + [str(w) for w in widths])
            for d, row in zip(depths, mat):
                wr.writerow([str(d)] + [_fmt(v) for v in row])
        written.append(csv_path)

    defined = [v for row in mat for v in row if v is not None]
    vmin, vmax = (min(defined), max(defined)) if defined else (0.0, 0.0)
    cw, ch, left, top = 80, 50, 70, 50
    width_px = left + cw * len(widths) + 20
    height_px = top + ch * len(depths) + 50
    title = title or f"{value} by depth and width"
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width_px}" height="{height_px}" '
        f'font-family="sans-serif" font-size="12">',
        f'<text x="{width_px / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    for i, (d, row) in enumerate(zip(depths, mat)):
        y = top + i * ch
        parts.append(f'<text x="{left - 8}" y="{y + ch / 2 + 4:.1f}" text-anchor="end">d={d}</text>')
        for j, v in enumerate(row):
            x = left + j * cw
            if v is None:
                fill, label, ink = "#bdbdbd", "NA", "#000000"
            else:
                t = 0.0 if vmax == vmin else (v - vmin) / (vmax - vmin)
                fill, label, ink = _colour(t), f"{v:.3f}", "#ffffff" if t > 0.55 else "#000000"
            parts.append(f'<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}" stroke="#ffffff"/>')
            parts.append(
                f'<text x="{x + cw / 2:.1f}" y="{y + ch / 2 + 4:.1f}" text-anchor="middle" fill="{ink}">{label}</text>'
            )
    yb = top + ch * len(depths) + 20
    for j, w in enumerate(widths):
        parts.append(f'<text x="{left + j * cw + cw / 2:.1f}" y="{yb}" text-anchor="middle">w={w}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    written.append(path)
    return written


def emit_sscore_chart(result: ShapleyResult, path) -> str:
    """Two-bar SVG of the depth and width S-Scores."""
    bars = [("depth", result.s_depth), ("width", result.s_width)]
    scale = max(1e-12, max(abs(v) for _, v in bars))
    parts = [
        '<svg xmlns="http://www.w3.org/2000/svg" width="320" height="220" font-family="sans-serif" font-size="12">',
        '<text x="160" y="20" text-anchor="middle" font-size="14">S-Score</text>',
        '<line x1="40" y1="180" x2="300" y2="180" stroke="#000000"/>',
    ]
    for i, (name, v) in enumerate(bars):
        h = 140 * abs(v) / scale
        x = 70 + i * 130
        y = 180 - h if v >= 0 else 180
        parts.append(f'<rect x="{x}" y="{y:.2f}" width="60" height="{h:.2f}" fill="{"#08306b" if i == 0 else "#6baed6"}"/>')
        parts.append(f'<text x="{x + 30}" y="{max(y - 6, 34):.2f}" text-anchor="middle">{v:.4f}</text>')
        parts.append(f'<text x="{x + 30}" y="198" text-anchor="middle">{name}</text>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return str(path)
