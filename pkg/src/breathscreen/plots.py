"""Minimal SVG writers for report figures (text output, byte-stable)."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

WIDTH, HEIGHT = 640, 360
MARGIN = 50
COLORS = {"positive": "#c0392b", "negative": "#2471a3"}


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ramp(t: float) -> str:
    """Linear dark-blue to light-yellow colour ramp, t in [0, 1]."""
    lo = np.array([20, 24, 82])
    hi = np.array([250, 235, 120])
    c = np.round(lo + (hi - lo) * float(np.clip(t, 0.0, 1.0))).astype(int)
    return f"#{c[0]:02x}{c[1]:02x}{c[2]:02x}"


def _frame(title: str, body: list[str], xlabel: str = "", ylabel: str = "") -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
    ]
    if xlabel:
        head.append(f'<text x="{WIDTH / 2}" y="{HEIGHT - 8}" text-anchor="middle" font-size="11">{escape(xlabel)}</text>')
    if ylabel:
        head.append(f'<text x="14" y="{HEIGHT / 2}" text-anchor="middle" font-size="11" '
                    f'transform="rotate(-90 14 {HEIGHT / 2})">{escape(ylabel)}</text>')
    return "\n".join(head + body + ["</svg>"]) + "\n"


def heatmap_svg(M, title: str, xlabel: str = "", ylabel: str = "", vmin=None, vmax=None,
                per_row: bool = False) -> str:
    """Cells of M (rows drawn top to bottom) coloured on a linear ramp.

    With ``per_row`` each row gets its own range; a constant row is mid-ramp.
    """
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    rows, cols = M.shape
    if per_row:
        lo = M.min(axis=1)
        hi = M.max(axis=1)
    else:
        lo = np.full(rows, float(np.min(M)) if vmin is None else vmin)
        hi = np.full(rows, float(np.max(M)) if vmax is None else vmax)
    span = hi - lo
    cw = (WIDTH - 2 * MARGIN) / max(cols, 1)
    ch = (HEIGHT - 2 * MARGIN) / max(rows, 1)
    body = []
    for i in range(rows):
        for j in range(cols):
            t = (M[i, j] - lo[i]) / span[i] if span[i] > 0 else 0.5
            body.append(
                f'<rect class="cell" x="{_fmt(MARGIN + j * cw)}" y="{_fmt(MARGIN + i * ch)}" '
                f'width="{_fmt(cw)}" height="{_fmt(ch)}" fill="{_ramp(t)}"/>'
            )
    return _frame(title, body, xlabel, ylabel)


def labelled_heatmap_svg(M, labels, title: str) -> str:
    """Square matrix with row/column labels and printed values (correlation maps)."""
    M = np.asarray(M, dtype=np.float64)
    n = M.shape[0]
    left = 170
    size = min(WIDTH - left - 10, HEIGHT - 2 * MARGIN)
    cell = size / max(n, 1)
    body = []
    for i in range(n):
        body.append(f'<text x="{left - 4}" y="{_fmt(MARGIN + (i + 0.6) * cell)}" text-anchor="end" '
                    f'font-size="9">{escape(labels[i])}</text>')
        for j in range(n):
            x, y = left + j * cell, MARGIN + i * cell
            body.append(f'<rect class="cell" x="{_fmt(x)}" y="{_fmt(y)}" width="{_fmt(cell)}" '
                        f'height="{_fmt(cell)}" fill="{_ramp((M[i, j] + 1) / 2)}"/>')
            body.append(f'<text x="{_fmt(x + cell / 2)}" y="{_fmt(y + cell * 0.6)}" text-anchor="middle" '
                        f'font-size="8">{M[i, j]:.2f}</text>')
    return _frame(title, body)


def line_svg(series, title: str, xlabel: str = "", ylabel: str = "", y_range=None) -> str:
    """``series``: list of (name, x, y, colour).  NaNs break a line into pieces."""
    pts = [(np.asarray(x, float), np.asarray(y, float)) for _, x, y, _ in series]
    finite = [(x[np.isfinite(y)], y[np.isfinite(y)]) for x, y in pts]
    xs = np.concatenate([x for x, _ in finite]) if finite else np.zeros(0)
    ys = np.concatenate([y for _, y in finite]) if finite else np.zeros(0)
    body = [
        f'<line x1="{MARGIN}" y1="{HEIGHT - MARGIN}" x2="{WIDTH - MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
        f'<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{HEIGHT - MARGIN}" stroke="black"/>',
    ]
    if xs.size:
        x0, x1 = float(xs.min()), float(xs.max())
        y0, y1 = y_range if y_range is not None else (float(ys.min()), float(ys.max()))
        if x1 == x0:
            x1 = x0 + 1.0
        if y1 == y0:
            y0, y1 = y0 - 1.0, y1 + 1.0
        sx = (WIDTH - 2 * MARGIN) / (x1 - x0)
        sy = (HEIGHT - 2 * MARGIN) / (y1 - y0)
        body.append(f'<text x="{MARGIN - 4}" y="{MARGIN + 4}" text-anchor="end" font-size="9">{y1:.0f}</text>')
        body.append(f'<text x="{MARGIN - 4}" y="{HEIGHT - MARGIN}" text-anchor="end" font-size="9">{y0:.0f}</text>')
        for (name, _, _, colour), (x, y) in zip(series, pts):
            ok = np.isfinite(y)
            # split into contiguous finite runs
            breaks = np.flatnonzero(np.diff(ok.astype(int)) != 0) + 1
            for seg in np.split(np.arange(y.size), breaks):
                seg = seg[ok[seg]]
                if seg.size == 0:
                    continue
                coords = " ".join(
                    f"{_fmt(MARGIN + (x[i] - x0) * sx)},{_fmt(HEIGHT - MARGIN - (y[i] - y0) * sy)}" for i in seg
                )
                body.append(f'<polyline class="series" data-name="{escape(name)}" fill="none" '
                            f'stroke="{colour}" stroke-width="1.5" points="{coords}"/>')
    for k, (name, _, _, colour) in enumerate(series):
        body.append(f'<text x="{WIDTH - MARGIN}" y="{MARGIN + 12 * k}" text-anchor="end" font-size="10" '
                    f'fill="{colour}">{escape(name)}</text>')
    return _frame(title, body, xlabel, ylabel)


# --------------------------------------------------------------------------- #
# Report figures.  Each returns (svg_text, data) so tests can check the data.
# --------------------------------------------------------------------------- #

def mfcc_heatmap(tracks, title: str = "MFCC map"):
    """Coefficients on the vertical axis (c0 at the bottom), frames left to right.

    Each coefficient is coloured on its own range so c0 does not swamp the rest.
    """
    M = np.asarray(tracks.mfcc, dtype=np.float64).T[::-1]
    return heatmap_svg(M, title, xlabel="frame", ylabel="coefficient", per_row=True), M


def f0_curve(tracks, title: str = "Fundamental frequency"):
    """Per-frame F0 on voiced frames; NaN elsewhere, so silence plots no line."""
    f0 = np.where(tracks.voiced.astype(bool), tracks.f0_frames, np.nan)
    t = np.arange(f0.size) * tracks.frame_hop_s
    svg = line_svg([("F0", t, f0, "#1b4f72")], title, xlabel="time (s)", ylabel="Hz")
    return svg, (t, f0)


def class_f0_curves(tracks_list, labels, hop_s: float = 0.01, title: str = "Mean F0 by class"):
    """Frame-wise mean voiced F0 for each class; frames with no voiced clip are NaN."""
    n = min(tr.n_frames for tr in tracks_list)
    curves = {}
    for name, lab in (("negative", 0), ("positive", 1)):
        rows = [np.where(tr.voiced[:n].astype(bool), tr.f0_frames[:n], np.nan)
                for tr, y in zip(tracks_list, labels) if y == lab]
        if not rows:
            continue
        R = np.vstack(rows)
        cnt = np.sum(np.isfinite(R), axis=0)
        tot = np.nansum(R, axis=0)
        curves[name] = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
    t = np.arange(n) * hop_s
    series = [(k, t, v, COLORS[k]) for k, v in curves.items()]
    return line_svg(series, title, xlabel="time (s)", ylabel="Hz"), curves


def correlation_heatmap(fm, k: int = 8, title: str = "Top correlated features"):
    """Pearson matrix of the k columns most correlated with the label, plus the label."""
    from .select import correlation_select

    k = min(k, fm.d)
    sel = correlation_select(fm, k)
    idx = np.asarray(sel.selected)
    names = [fm.column_names[i] for i in idx] + ["label"]
    A = np.column_stack([fm.X[:, idx], fm.y.astype(np.float64)])
    sd = A.std(axis=0)
    Ac = (A - A.mean(axis=0)) / np.where(sd > 0, sd, 1.0)
    C = Ac.T @ Ac / A.shape[0]
    C[:, sd == 0] = 0.0
    C[sd == 0, :] = 0.0
    np.fill_diagonal(C, 1.0)
    C = np.clip(C, -1.0, 1.0)
    return labelled_heatmap_svg(C, names, title), (names, C)
