"""Training data production: synthetic device oracle, bias grids,
correction targets with finite-difference derivative columns, and CSV IO.

The oracle stands in for an external device simulator.  It multiplies the
analytic core by a smooth, strictly positive shape function of the
swap-invariant features, so it satisfies the zero-crossing, antisymmetry
and smoothness requirements exactly while its correction and correction
derivatives stay analytically available for convergence tests.
"""

from dataclasses import dataclass

import numpy as np

from .core import BiasPoint, CoreParams, IVSample, core_current, sigmoid
from .network import feature_tangent, symmetric_features

MIN_VDS_FOR_TARGETS = 1e-3  # correction targets are undefined at v_ds -> 0
CORE_CURRENT_FLOOR = 1e-30  # below this the normalization is meaningless


@dataclass(frozen=True)
class CorrectionSample:
    """One training row: bias, correction value, and its two derivatives."""

    bias: BiasPoint
    corr: float
    d_corr_dvg: float
    d_corr_dvd: float


@dataclass(frozen=True)
class GridSpec:
    """Rectangular (v_gs, v_ds) grid with optional low-bias densification.

    Each axis gets `count` points between lo and hi; when densify_factor > 1
    the points below densify_below volts are packed `densify_factor` times
    denser than the rest, keeping the total count exact.
    """

    v_gs: tuple
    v_gs_count: int
    v_ds: tuple
    v_ds_count: int
    densify_below: float = 0.2
    densify_factor: int = 3

    def __post_init__(self):
        for name, (lo, hi), n in (("v_gs", self.v_gs, self.v_gs_count),
                                  ("v_ds", self.v_ds, self.v_ds_count)):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
                raise ValueError(f"{name} range must satisfy lo < hi, got ({lo}, {hi})")
            if n < 2:
                raise ValueError(f"{name} count must be >= 2, got {n}")
        if self.densify_factor < 1:
            raise ValueError("densify_factor must be >= 1")

    def vgs_axis(self):
        return _axis(*self.v_gs, self.v_gs_count, self.densify_below, self.densify_factor)

    def vds_axis(self):
        return _axis(*self.v_ds, self.v_ds_count, self.densify_below, self.densify_factor)

    @property
    def n_points(self):
        return self.v_gs_count * self.v_ds_count


def _axis(lo, hi, count, threshold, factor):
    if factor <= 1 or lo >= threshold or threshold >= hi:
        return np.linspace(lo, hi, count)
    frac = (threshold - lo) / (hi - lo)
    share = factor * frac / (factor * frac + (1.0 - frac))
    n_low = int(np.clip(round(count * share), 2, count - 2))
    low = np.linspace(lo, threshold, n_low)
    high = np.linspace(threshold, hi, count - n_low + 1)[1:]
    return np.concatenate([low, high])


@dataclass(frozen=True)
class OracleParams:
    """Synthetic device: analytic core times a smooth positive correction.

    The true correction over features (u, v) = (v_gs + v_gd, v_ds^2) is
        1 + vds_gain * v * (1 + gate_gain * sigmoid(u / gate_scale))
    which grows with |v_ds| (the regime where the bare core is worst) and
    is modulated by the gate drive.
    """

    base: CoreParams
    gate_scale: float = 0.5
    vds_gain: float = 2.0
    gate_gain: float = 1.0

    def __post_init__(self):
        if self.gate_scale <= 0:
            raise ValueError("gate_scale must be positive")


def oracle_correction(u, v, p: OracleParams):
    """The oracle's true correction as a function of the symmetric features."""
    return 1.0 + p.vds_gain * np.asarray(v) * (
        1.0 + p.gate_gain * sigmoid(np.asarray(u) / p.gate_scale))


def oracle_correction_feature_grad(u, v, p: OracleParams):
    """Analytic (d/du, d/dv) of the oracle correction."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    s = sigmoid(u / p.gate_scale)
    d_du = p.vds_gain * v * p.gate_gain * s * (1.0 - s) / p.gate_scale
    d_dv = p.vds_gain * (1.0 + p.gate_gain * s)
    return d_du, d_dv


def oracle_correction_bias_grad(v_gs, v_gd, p: OracleParams):
    """Analytic (d/dV_G, d/dV_D) of the oracle correction at a bias."""
    u, v = symmetric_features(v_gs, v_gd)
    d_du, d_dv = oracle_correction_feature_grad(u, v, p)
    grads = []
    for d in ((1.0, 1.0), (0.0, -1.0)):
        du, dv = feature_tangent(v_gs, v_gd, d[0], d[1])
        grads.append(d_du * du + d_dv * dv)
    return tuple(grads)


def oracle_current(v_gs, v_gd, p: OracleParams):
    """Synthetic device current: core times the true correction."""
    u, v = symmetric_features(v_gs, v_gd)
    return core_current(v_gs, v_gd, p.base) * oracle_correction(u, v, p)


def generate_grid(spec: GridSpec, current) -> list:
    """Evaluate a current source callable (v_gs, v_gd) -> i_ds on the grid.

    Row-major ordering: v_gs outer, v_ds inner.  Deterministic for a given
    spec and source.
    """
    vgs_ax = spec.vgs_axis()
    vds_ax = spec.vds_axis()
    vgs = np.repeat(vgs_ax, vds_ax.size)
    vds = np.tile(vds_ax, vgs_ax.size)
    vgd = vgs - vds
    i = np.asarray(current(vgs, vgd), dtype=float)
    return [IVSample(BiasPoint(g, d), c) for g, d, c in zip(vgs, vgd, i)]


def correction_values(samples, core: CoreParams) -> list:
    """Normalize measured currents by the core: (bias, i/i_core) pairs.

    Requires |v_ds| >= 1 mV on every sample; at smaller drain bias the
    normalization approaches 0/0 and the physics is enforced structurally
    by the multiplicative model instead.
    """
    v_gs = np.array([s.bias.v_gs for s in samples])
    v_gd = np.array([s.bias.v_gd for s in samples])
    i_ds = np.array([s.i_ds for s in samples])
    v_ds = v_gs - v_gd

    bad = np.abs(v_ds) < MIN_VDS_FOR_TARGETS
    if bad.any():
        k = int(np.argmax(bad))
        raise ValueError(
            f"correction target undefined at v_gs={v_gs[k]:g}, v_gd={v_gd[k]:g}: "
            f"|v_ds| {abs(v_ds[k]):g} V is below {MIN_VDS_FOR_TARGETS:g} V")

    denom = core_current(v_gs, v_gd, core)
    tiny = np.abs(denom) < CORE_CURRENT_FLOOR
    if tiny.any():
        k = int(np.argmax(tiny))
        raise ValueError(
            f"core current below {CORE_CURRENT_FLOOR:g} A at "
            f"v_gs={v_gs[k]:g}, v_gd={v_gd[k]:g}; cannot normalize")

    eps = i_ds / denom
    return [(s.bias, float(e)) for s, e in zip(samples, eps)]


def _grid_from_biases(v_g, v_d):
    """Recover (axes, index arrays) from flat grid coordinates, or fail."""
    g_ax, g_idx = np.unique(v_g, return_inverse=True)
    d_ax, d_idx = np.unique(v_d, return_inverse=True)
    if g_ax.size < 3 or d_ax.size < 3:
        raise ValueError("derivative targets need at least 3 points per axis")
    if v_g.size != g_ax.size * d_ax.size:
        raise ValueError("samples do not form a rectangular grid")
    seen = np.zeros((g_ax.size, d_ax.size), dtype=bool)
    seen[g_idx, d_idx] = True
    if not seen.all():
        raise ValueError("samples do not form a rectangular grid "
                         "(missing or duplicate points)")
    return g_ax, d_ax, g_idx, d_idx


def grid_gradient(values, coords, axis):
    """Second-order finite differences along one axis of a 2-D grid.

    Central three-point stencils on the interior, one-sided three-point
    stencils at the edges; exact for quadratics even on non-uniform axes.
    """
    f = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    x = np.asarray(coords, dtype=float)
    if f.shape[0] != x.size:
        raise ValueError("coordinate count does not match grid axis")
    out = np.empty_like(f)
    h0 = x[1:-1] - x[:-2]
    h1 = x[2:] - x[1:-1]
    a = (-h1 / (h0 * (h0 + h1)))[:, None]
    b = ((h1 - h0) / (h0 * h1))[:, None]
    c = (h0 / (h1 * (h0 + h1)))[:, None]
    out[1:-1] = a * f[:-2] + b * f[1:-1] + c * f[2:]
    ha, hb = x[1] - x[0], x[2] - x[1]
    out[0] = (-(2 * ha + hb) / (ha * (ha + hb)) * f[0]
              + (ha + hb) / (ha * hb) * f[1]
              - ha / (hb * (ha + hb)) * f[2])
    ha, hb = x[-2] - x[-3], x[-1] - x[-2]
    out[-1] = ((2 * hb + ha) / (hb * (ha + hb)) * f[-1]
               - (ha + hb) / (ha * hb) * f[-2]
               + hb / (ha * (ha + hb)) * f[-3])
    return np.moveaxis(out, 0, axis)


def derivative_targets(pairs) -> list:
    """Finite-difference the correction on its (V_G, V_D) grid.

    `pairs` is the output of correction_values on grid samples with the
    source grounded (so V_G = v_gs and V_D = v_ds).  Returns one
    CorrectionSample per input pair, in input order.
    """
    v_g = np.array([b.v_gs for b, _ in pairs])
    v_d = np.array([b.v_gs - b.v_gd for b, _ in pairs])
    eps = np.array([e for _, e in pairs])

    g_ax, d_ax, g_idx, d_idx = _grid_from_biases(v_g, v_d)
    grid = np.empty((g_ax.size, d_ax.size))
    grid[g_idx, d_idx] = eps

    d_dvg = grid_gradient(grid, g_ax, axis=0)
    d_dvd = grid_gradient(grid, d_ax, axis=1)

    return [CorrectionSample(bias, e, float(d_dvg[i, j]), float(d_dvd[i, j]))
            for (bias, e), i, j in zip(pairs, g_idx, d_idx)]


CSV_HEADER = "v_gs,v_ds,i_ds"


def save_csv(path, samples):
    """Write IV samples as `v_gs,v_ds,i_ds` with round-trip-exact decimals."""
    with open(path, "w", newline="\n") as f:
        f.write(CSV_HEADER + "\n")
        for s in samples:
            f.write(f"{s.bias.v_gs:.17g},{s.bias.v_ds:.17g},{s.i_ds:.17g}\n")


def load_csv(path) -> list:
    """Read IV samples; validates the header, numeric fields and finiteness.

    Lines starting with '#' are comments.  Internally v_gd = v_gs - v_ds.
    """
    samples = []
    with open(path) as f:
        header = None
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                if line != CSV_HEADER:
                    raise ValueError(
                        f"{path}:{lineno}: expected header '{CSV_HEADER}', got '{line}'")
                header = line
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 fields, got {len(parts)}")
            try:
                v_gs, v_ds, i_ds = (float(p) for p in parts)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field in '{line}'") from None
            if not all(np.isfinite(x) for x in (v_gs, v_ds, i_ds)):
                raise ValueError(f"{path}:{lineno}: non-finite value in '{line}'")
            samples.append(IVSample(BiasPoint.from_vgs_vds(v_gs, v_ds), i_ds))
    if header is None:
        raise ValueError(f"{path}: empty file")
    if not samples:
        raise ValueError(f"{path}: no data rows")
    return samples
