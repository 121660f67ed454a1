"""EKV-style analytic core IV model and core parameter extraction.

The core current is P * (phi(v_gs)^beta - phi(v_gd)^beta) with
phi(v) = v_slope * softplus((v - v_th) / v_slope).  Written as a difference
of identical source- and drain-side terms, the current is zero at v_ds = 0
and antisymmetric under source/drain swap by construction.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize


@dataclass(frozen=True)
class CoreParams:
    """The four analytic core parameters, SI units."""

    prefactor: float  # P, A/V^beta
    v_slope: float    # subthreshold slope voltage, V
    v_th: float       # threshold voltage, V
    beta: float = 2.0

    def __post_init__(self):
        vals = (self.prefactor, self.v_slope, self.v_th, self.beta)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError(f"non-finite core parameter: {self}")
        if self.prefactor <= 0 or self.v_slope <= 0 or self.beta <= 0:
            raise ValueError(f"core parameters out of range: {self}")


@dataclass(frozen=True)
class BiasPoint:
    """Operating point stored as (v_gs, v_gd); v_ds is always derived."""

    v_gs: float
    v_gd: float

    @property
    def v_ds(self) -> float:
        return self.v_gs - self.v_gd

    @classmethod
    def from_vgs_vds(cls, v_gs: float, v_ds: float) -> "BiasPoint":
        return cls(v_gs, v_gs - v_ds)

    def swapped(self) -> "BiasPoint":
        return BiasPoint(self.v_gd, self.v_gs)


@dataclass(frozen=True)
class IVSample:
    bias: BiasPoint
    i_ds: float


def _check_finite(name, x):
    if not np.all(np.isfinite(x)):
        raise ValueError(f"non-finite value in {name}")


def softplus(x):
    """Overflow-safe softplus: max(x, 0) + log1p(exp(-|x|))."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    """Logistic function, the derivative of softplus."""
    x = np.asarray(x, dtype=float)
    # evaluate through exp(-|x|) so neither branch overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0.0, 1.0 / (1.0 + e), e / (1.0 + e))


def overdrive(v_gx, core: CoreParams):
    """Smoothed gate overdrive phi(v_gx); strictly positive, increasing."""
    _check_finite("v_gx", v_gx)
    x = (np.asarray(v_gx, dtype=float) - core.v_th) / core.v_slope
    return core.v_slope * softplus(x)


def overdrive_slope(v_gx, core: CoreParams):
    """d phi / d v_gx, a logistic in the normalized overdrive; in (0, 1)."""
    _check_finite("v_gx", v_gx)
    x = (np.asarray(v_gx, dtype=float) - core.v_th) / core.v_slope
    return sigmoid(x)


def core_current(v_gs, v_gd, core: CoreParams):
    """Core drain current; exactly 0 at v_gs == v_gd, antisymmetric on swap."""
    ps = overdrive(v_gs, core)
    pd = overdrive(v_gd, core)
    return core.prefactor * (ps**core.beta - pd**core.beta)


def core_current_dir(v_gs, v_gd, d_vgs, d_vgd, core: CoreParams):
    """Directional derivative of core_current along (d_vgs, d_vgd), A/V."""
    ps = overdrive(v_gs, core)
    pd = overdrive(v_gd, core)
    ss = overdrive_slope(v_gs, core)
    sd = overdrive_slope(v_gd, core)
    b = core.beta
    return core.prefactor * b * (ps ** (b - 1.0) * ss * np.asarray(d_vgs)
                                 - pd ** (b - 1.0) * sd * np.asarray(d_vgd))


@dataclass(frozen=True)
class FitConfig:
    """Settings for core parameter extraction from low-v_ds IV data."""

    vds_max: float = 0.05       # only |v_ds| <= vds_max enters the fit
    log_floor: float = 1e-30    # additive floor inside log|i|
    beta: float = 2.0           # held fixed, not fitted
    restarts: int = 3
    seed: int = 0
    maxiter: int = 4000
    xatol: float = 1e-10
    fatol: float = 1e-14


def _initial_guess(v_gs, v_gd, log_i, cfg):
    """Heuristic (P, v_slope, v_th) start from the data itself."""
    order = np.argsort(v_gs)
    vg, li = v_gs[order], log_i[order]
    lo, hi = li.min(), li.max()

    # subthreshold slope from the lowest-current third: d(ln i)/d v_gs ~ beta/v_slope
    mask = li <= lo + (hi - lo) / 3.0
    if mask.sum() >= 2 and np.ptp(vg[mask]) > 0:
        slope = np.polyfit(vg[mask], li[mask], 1)[0]
    else:
        slope = 0.0
    v_slope0 = cfg.beta / slope if slope > 1.0 else 0.1
    v_slope0 = float(np.clip(v_slope0, 5e-3, 0.5))

    # threshold near the gate voltage of the mid-log current
    v_th0 = float(vg[np.argmin(np.abs(li - 0.5 * (lo + hi)))])

    trial = CoreParams(1.0, v_slope0, v_th0, cfg.beta)
    model_log = np.log(np.abs(core_current(v_gs, v_gd, trial)) + cfg.log_floor)
    log_p0 = float(np.median(log_i - model_log))
    return log_p0, v_slope0, v_th0


def fit_core(samples, cfg: FitConfig = FitConfig()) -> CoreParams:
    """Extract (P, v_slope, v_th) from IV samples by simplex minimization
    of the mean squared log-current error, beta held fixed.

    Only samples with |v_ds| <= cfg.vds_max are used; the core model is an
    accurate description of the device only near v_ds = 0.  Deterministic
    for a fixed cfg.seed.
    """
    if not samples:
        raise ValueError("fit_core: empty sample list")
    v_gs = np.array([s.bias.v_gs for s in samples])
    v_gd = np.array([s.bias.v_gd for s in samples])
    i_ds = np.array([s.i_ds for s in samples])
    _check_finite("samples", np.concatenate([v_gs, v_gd, i_ds]))

    keep = np.abs(v_gs - v_gd) <= cfg.vds_max
    v_gs, v_gd, i_ds = v_gs[keep], v_gd[keep], i_ds[keep]
    if v_gs.size < 20:
        raise ValueError(
            f"fit_core: only {v_gs.size} samples with |v_ds| <= {cfg.vds_max} V "
            "(need at least 20)")

    log_i = np.log(np.abs(i_ds) + cfg.log_floor)
    if np.ptp(log_i) < np.log(10.0):
        raise ValueError("fit_core: currents span less than one decade; "
                         "data cannot constrain the core parameters")

    def cost(theta):
        log_p, log_vss, v_th = theta
        core = CoreParams(np.exp(log_p), np.exp(log_vss), v_th, cfg.beta)
        model = np.log(np.abs(core_current(v_gs, v_gd, core)) + cfg.log_floor)
        return float(np.mean((model - log_i) ** 2))

    log_p0, v_slope0, v_th0 = _initial_guess(v_gs, v_gd, log_i, cfg)
    x0 = np.array([log_p0, np.log(v_slope0), v_th0])

    rng = np.random.default_rng(cfg.seed)
    best = None
    start = x0
    for _ in range(max(1, cfg.restarts)):
        res = minimize(cost, start, method="Nelder-Mead",
                       options={"maxiter": cfg.maxiter, "xatol": cfg.xatol,
                                "fatol": cfg.fatol})
        if best is None or res.fun < best.fun:
            best = res
        # restart from a jittered copy of the best point found so far
        start = best.x + rng.normal(scale=[0.05, 0.05, 0.01], size=3)

    log_p, log_vss, v_th = best.x
    return CoreParams(float(np.exp(log_p)), float(np.exp(log_vss)),
                      float(v_th), cfg.beta)
