"""Accuracy metrics against reference IV data and the source-drain
symmetry sweep.

Percent errors are evaluated only where the reference magnitude clears a
relative floor; relative error at currents ten decades below the on-state
is numerically meaningless and the floor is reported alongside the stats.
"""

import json
from dataclasses import dataclass

import numpy as np

from .core import BiasPoint, core_current, core_current_dir
from .dataset import grid_gradient, _grid_from_biases
from .network import (TrainedModel, directional_derivative, drain_current,
                      feature_tangent, forward, symmetric_features)

DEFAULT_HIST_EDGES = np.concatenate([[0.0], np.logspace(-3, 2, 21)])


def format_float(x) -> str:
    """17-significant-digit decimal: exact double round trip."""
    return f"{float(x):.17g}"

@dataclass(frozen=True)
class ReferencePoint:
    """Reference row: bias, current, and grid-FD conductances."""

    bias: BiasPoint
    i_ds: float
    g_m: float
    g_ds: float


def reference_from_grid(samples) -> list:
    """Derive g_m and g_ds from a rectangular IV grid by finite differences
    (source grounded), mirroring how reference data is post-processed when
    only tabulated currents are available."""
    v_g = np.array([s.bias.v_gs for s in samples])
    v_d = np.array([s.bias.v_ds for s in samples])
    i = np.array([s.i_ds for s in samples])
    g_ax, d_ax, g_idx, d_idx = _grid_from_biases(v_g, v_d)
    grid = np.empty((g_ax.size, d_ax.size))
    grid[g_idx, d_idx] = i
    g_m = grid_gradient(grid, g_ax, axis=0)
    g_ds = grid_gradient(grid, d_ax, axis=1)
    return [ReferencePoint(s.bias, s.i_ds, float(g_m[a, b]), float(g_ds[a, b]))
            for s, a, b in zip(samples, g_idx, d_idx)]


@dataclass(frozen=True)
class QuantityErrors:
    name: str
    max_pct: float
    rms_pct: float
    count: int
    abs_threshold: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray


@dataclass(frozen=True)
class ErrorReport:
    quantities: dict  # name -> QuantityErrors, keys i_ds, g_m, g_ds


def _quantity_errors(name, model_vals, ref_vals, floor, hist_edges):
    threshold = floor * np.max(np.abs(ref_vals))
    mask = np.abs(ref_vals) > threshold
    pct = 100.0 * np.abs(model_vals[mask] - ref_vals[mask]) / np.abs(ref_vals[mask])
    counts, edges = np.histogram(pct, bins=hist_edges)
    return QuantityErrors(name, float(pct.max()), float(np.sqrt(np.mean(pct**2))),
                          int(mask.sum()), float(threshold), edges, counts)


def error_metrics(model: TrainedModel, reference, floor=1e-3,
                  hist_edges=None) -> ErrorReport:
    """Percent-error statistics of i_ds, g_m, g_ds against reference points."""
    if not reference:
        raise ValueError("empty reference set")
    if hist_edges is None:
        hist_edges = DEFAULT_HIST_EDGES
    v_gs = np.array([r.bias.v_gs for r in reference])
    v_gd = np.array([r.bias.v_gd for r in reference])
    i, g_m, g_ds = drain_current(model, v_gs, v_gd)
    refs = {
        "i_ds": (i, np.array([r.i_ds for r in reference])),
        "g_m": (g_m, np.array([r.g_m for r in reference])),
        "g_ds": (g_ds, np.array([r.g_ds for r in reference])),
    }
    quantities = {name: _quantity_errors(name, mod, ref, floor, hist_edges)
                  for name, (mod, ref) in refs.items()}
    return ErrorReport(quantities)


@dataclass(frozen=True)
class GummelReport:
    """Source at -v_x, drain at +v_x, gate fixed: the classic symmetry test.

    The second derivative comes from central differences of the analytic
    first derivative (one order less truncation error than FD-of-FD); the
    discontinuity metric compares it just left and right of v_x = 0.
    """

    v_g: float
    v_x: np.ndarray
    i_ds: np.ndarray
    di_dvx: np.ndarray
    d2i_dvx2: np.ndarray
    discontinuity: float


def _gummel_current_and_slope(model, v_g, v_x):
    """I and its analytic derivative along v_x (source -v_x, drain +v_x).

    v_gs = v_g + v_x and v_gd = v_g - v_x, so d/dv_x is the bias-space
    direction (1, -1).
    """
    v_gs = v_g + v_x
    v_gd = v_g - v_x
    u, v = symmetric_features(v_gs, v_gd)
    eps, cache = forward(model.net, np.stack([u, v]))
    du, dv = feature_tangent(v_gs, v_gd, 1.0, -1.0)
    du, dv = np.broadcast_arrays(du, dv)
    d_eps = directional_derivative(model.net, cache, np.stack([du, dv]))
    i_core = core_current(v_gs, v_gd, model.core)
    d_core = core_current_dir(v_gs, v_gd, 1.0, -1.0, model.core)
    return i_core * eps, d_core * eps + i_core * d_eps


def gummel_sweep(model: TrainedModel, v_g=0.5, v_x_max=0.1, points=201) -> GummelReport:
    """Sweep v_x symmetrically through 0 and probe I and its derivatives."""
    if points % 2 == 0:
        raise ValueError("points must be odd so that v_x = 0 is sampled")
    if v_x_max <= 0:
        raise ValueError("v_x_max must be positive")
    half = np.linspace(0.0, v_x_max, (points + 1) // 2)[1:]
    v_x = np.concatenate([-half[::-1], [0.0], half])  # bit-exact mirror
    h = v_x_max / half.size

    i, d1 = _gummel_current_and_slope(model, v_g, v_x)
    _, d1_plus = _gummel_current_and_slope(model, v_g, v_x + h)
    _, d1_minus = _gummel_current_and_slope(model, v_g, v_x - h)
    d2 = (d1_plus - d1_minus) / (2.0 * h)

    k0 = points // 2
    scale = np.max(np.abs(d2))
    disc = abs(d2[k0 + 1] - d2[k0 - 1]) / scale if scale > 0 else 0.0
    return GummelReport(v_g, v_x, i, d1, d2, float(disc))


def export_report(report, path, fmt="csv"):
    """Serialize an ErrorReport or GummelReport deterministically."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unknown report format '{fmt}' (use csv or json)")
    if isinstance(report, ErrorReport):
        _export_error_report(report, path, fmt)
    elif isinstance(report, GummelReport):
        _export_gummel_report(report, path, fmt)
    else:
        raise TypeError(f"cannot export {type(report).__name__}")


def _export_error_report(report, path, fmt):
    if fmt == "json":
        payload = {name: {
            "max_pct": q.max_pct, "rms_pct": q.rms_pct, "count": q.count,
            "abs_threshold": q.abs_threshold,
            "hist_edges": list(q.hist_edges), "hist_counts": [int(c) for c in q.hist_counts],
        } for name, q in report.quantities.items()}
        with open(path, "w", newline="\n") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        return
    with open(path, "w", newline="\n") as f:
        f.write("# percent-error summary; histogram rows follow the stats\n")
        f.write("quantity,max_pct,rms_pct,count,abs_threshold\n")
        for name in ("i_ds", "g_m", "g_ds"):
            q = report.quantities[name]
            f.write(f"{name},{format_float(q.max_pct)},{format_float(q.rms_pct)},"
                    f"{q.count},{format_float(q.abs_threshold)}\n")
        f.write("# histogram: quantity,bin_lo_pct,bin_hi_pct,count\n")
        for name in ("i_ds", "g_m", "g_ds"):
            q = report.quantities[name]
            for lo, hi, c in zip(q.hist_edges[:-1], q.hist_edges[1:], q.hist_counts):
                f.write(f"{name},{format_float(lo)},{format_float(hi)},{int(c)}\n")


def _export_gummel_report(report, path, fmt):
    if fmt == "json":
        payload = {
            "v_g": report.v_g,
            "discontinuity": report.discontinuity,
            "v_x": list(report.v_x),
            "i_ds": list(report.i_ds),
            "dI_dVx": list(report.di_dvx),
            "d2I_dVx2": list(report.d2i_dvx2),
        }
        with open(path, "w", newline="\n") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
            f.write("\n")
        return
    with open(path, "w", newline="\n") as f:
        f.write(f"# gummel sweep: v_g={format_float(report.v_g)} V, "
                f"discontinuity={format_float(report.discontinuity)}\n")
        f.write("v_x,i_ds,dI_dVx,d2I_dVx2\n")
        for k in range(report.v_x.size):
            f.write(f"{format_float(report.v_x[k])},{format_float(report.i_ds[k])},"
                    f"{format_float(report.di_dvx[k])},{format_float(report.d2i_dvx2[k])}\n")
