"""Gradient-matched training of the correction network.

The cost is the mean squared mismatch of the correction value plus weighted
mean squared mismatches of its two bias derivatives.  The derivative terms
are produced by the tangent network, so the weight gradient of the cost has
to be propagated back through that tangent pass as well; that second-order
reverse pass is derived by hand below and pinned by a finite-difference
test over every parameter.
"""

import hashlib
import logging
import time
from dataclasses import dataclass

import numpy as np

from .core import CoreParams
from .network import Mlp, TrainedModel, feature_tangent, init_mlp, symmetric_features

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch, cost):
        super().__init__(f"non-finite cost at epoch {epoch}: {cost}")
        self.epoch = epoch


@dataclass(frozen=True)
class TrainConfig:
    layer_sizes: tuple = (2, 10, 20, 1)
    dvg_weight: float = 0.5     # weight on the d/dV_G mismatch term
    dvd_weight: float = 1e-3    # weight on the d/dV_D mismatch term
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 20000
    target_cost: float = 0.0    # <= 0 disables the early-stop target
    seed: int = 0

    def __post_init__(self):
        if self.dvg_weight < 0 or self.dvd_weight < 0:
            raise ValueError("derivative weights must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam moment decays must lie in [0, 1)")
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be >= 0")
        object.__setattr__(self, "layer_sizes", tuple(self.layer_sizes))


@dataclass
class TrainReport:
    cost_history: np.ndarray
    final_cost: float
    epochs_run: int
    wall_time_s: float

    def save_history_csv(self, path):
        """Two-column epoch/cost trace for plotting convergence curves."""
        with open(path, "w", newline="\n") as f:
            f.write("epoch,cost\n")
            for i, c in enumerate(self.cost_history):
                f.write(f"{i},{c:.17g}\n")


@dataclass(frozen=True)
class _Batch:
    """Sample arrays laid out for the vectorized passes (features x m)."""

    x: np.ndarray        # (2, m) symmetric features
    tan_g: np.ndarray    # (2, m) feature tangent of the gate direction
    tan_d: np.ndarray    # (2, m) feature tangent of the drain direction
    corr: np.ndarray     # (m,)
    d_dvg: np.ndarray    # (m,)
    d_dvd: np.ndarray    # (m,)


def _pack(samples) -> _Batch:
    if not samples:
        raise ValueError("empty training set")
    v_gs = np.array([s.bias.v_gs for s in samples])
    v_gd = np.array([s.bias.v_gd for s in samples])
    u, v = symmetric_features(v_gs, v_gd)
    tg = np.stack(np.broadcast_arrays(*feature_tangent(v_gs, v_gd, 1.0, 1.0)))
    td = np.stack(np.broadcast_arrays(*feature_tangent(v_gs, v_gd, 0.0, -1.0)))
    return _Batch(np.stack([u, v]), tg, td,
                  np.array([s.corr for s in samples]),
                  np.array([s.d_corr_dvg for s in samples]),
                  np.array([s.d_corr_dvd for s in samples]))


def dataset_fingerprint(samples) -> str:
    b = _pack(samples)
    h = hashlib.sha256()
    for a in (b.x, b.tan_g, b.tan_d, b.corr, b.d_dvg, b.d_dvd):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


def _cost_and_grad(weights, biases, batch: _Batch, cfg: TrainConfig, want_grad=True):
    """One fused pass: cost, and optionally its gradient w.r.t. every
    weight and bias.

    Forward:  a_l = tanh(W_l a_{l-1} + b_l), affine output y.
    Tangent (per direction k): d_l = s_l * (W_l d_{l-1}), output W_L d_H,
    where s_l = 1 - a_l^2 is the activation slope.
    Reverse: the cost depends on z_l both through a_l and through the
    slopes s_l inside the tangent pass, so each layer's adjoint picks up a
    curvature term q_l = -2 a_l s_l from the latter.
    """
    m = batch.corr.size
    n_hidden = len(weights) - 1

    acts = [batch.x]
    for w, b in zip(weights[:-1], biases[:-1]):
        acts.append(np.tanh(w @ acts[-1] + b[:, None]))
    y = (weights[-1] @ acts[-1] + biases[-1][:, None])[0]

    tangents = []
    for t0 in (batch.tan_g, batch.tan_d):
        d_layers, u_layers = [t0], []
        for w, a in zip(weights[:-1], acts[1:]):
            u = w @ d_layers[-1]
            u_layers.append(u)
            d_layers.append((1.0 - a * a) * u)
        dy = (weights[-1] @ d_layers[-1])[0]
        tangents.append((d_layers, u_layers, dy))

    res0 = y - batch.corr
    res_g = tangents[0][2] - batch.d_dvg
    res_d = tangents[1][2] - batch.d_dvd
    cost = float(np.mean(res0**2) + cfg.dvg_weight * np.mean(res_g**2)
                 + cfg.dvd_weight * np.mean(res_d**2))
    if not want_grad:
        return cost, None

    r0 = (2.0 / m) * res0
    rks = [(2.0 / m) * cfg.dvg_weight * res_g,
           (2.0 / m) * cfg.dvd_weight * res_d]

    g_w = [None] * len(weights)
    g_b = [None] * len(biases)
    g_w[-1] = r0[None, :] @ acts[-1].T
    for rk, (d_layers, _, _) in zip(rks, tangents):
        g_w[-1] += rk[None, :] @ d_layers[-1].T
    g_b[-1] = np.array([r0.sum()])

    a_bar = weights[-1].T @ r0[None, :]
    d_bars = [weights[-1].T @ rk[None, :] for rk in rks]

    for l in range(n_hidden, 0, -1):
        a = acts[l]
        s = 1.0 - a * a
        q = -2.0 * a * s
        z_bar = a_bar * s
        for (d_layers, u_layers, _), d_bar in zip(tangents, d_bars):
            z_bar += d_bar * u_layers[l - 1] * q
        g_w[l - 1] = z_bar @ acts[l - 1].T
        for (d_layers, _, _), d_bar in zip(tangents, d_bars):
            g_w[l - 1] += (d_bar * s) @ d_layers[l - 1].T
        g_b[l - 1] = z_bar.sum(axis=1)
        if l > 1:
            a_bar = weights[l - 1].T @ z_bar
            d_bars = [weights[l - 1].T @ (d_bar * s) for d_bar in d_bars]

    return cost, (g_w, g_b)


def sobolev_loss(samples, net: Mlp, cfg: TrainConfig) -> float:
    """Mean squared correction error plus weighted derivative errors."""
    cost, _ = _cost_and_grad(list(net.weights), list(net.biases),
                             _pack(samples), cfg, want_grad=False)
    return cost


def sobolev_loss_grad(samples, net: Mlp, cfg: TrainConfig):
    """Exact analytic gradient of the cost: (weight grads, bias grads)."""
    _, grads = _cost_and_grad(list(net.weights), list(net.biases),
                              _pack(samples), cfg)
    return grads


@dataclass
class AdamState:
    step: int
    m1: list
    m2: list

    @classmethod
    def zeros(cls, params):
        return cls(0, [np.zeros_like(p) for p in params],
                   [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update; returns (new params, new state)."""
    if len(params) != len(grads) or len(params) != len(state.m1):
        raise ValueError("parameter/gradient/state lengths differ")
    for p, g in zip(params, grads):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match "
                             f"parameter shape {p.shape}")
    t = state.step + 1
    c1 = 1.0 - cfg.beta1**t
    c2 = 1.0 - cfg.beta2**t
    new_params, m1, m2 = [], [], []
    for p, g, a, b in zip(params, grads, state.m1, state.m2):
        a = cfg.beta1 * a + (1.0 - cfg.beta1) * g
        b = cfg.beta2 * b + (1.0 - cfg.beta2) * g * g
        m1.append(a)
        m2.append(b)
        new_params.append(p - cfg.learning_rate * (a / c1)
                          / (np.sqrt(b / c2) + cfg.adam_eps))
    return new_params, AdamState(t, m1, m2)


def _split(params, n_layers):
    return params[:n_layers], params[n_layers:]


def train(samples, cfg: TrainConfig, core: CoreParams = None):
    """Full-batch training loop: fresh seeded init, Adam until max_epochs
    or target_cost.  Deterministic for a given (samples, cfg).

    Returns (TrainedModel, TrainReport); `core` is packaged into the model
    and defaults to a placeholder when training is studied in isolation.
    """
    batch = _pack(samples)
    net0 = init_mlp(cfg.layer_sizes, cfg.seed)
    n_layers = len(net0.weights)
    params = [w.copy() for w in net0.weights] + [b.copy() for b in net0.biases]
    state = AdamState.zeros(params)

    history = np.empty(cfg.max_epochs)
    epochs = 0
    t0 = time.perf_counter()
    for epoch in range(cfg.max_epochs):
        ws, bs = _split(params, n_layers)
        cost, (g_w, g_b) = _cost_and_grad(ws, bs, batch, cfg)
        if not np.isfinite(cost):
            raise TrainingDiverged(epoch, cost)
        history[epoch] = cost
        epochs = epoch + 1
        if cfg.target_cost > 0 and cost <= cfg.target_cost:
            break
        params, state = adam_step(params, g_w + g_b, state, cfg)
        if epoch % 1000 == 0:
            log.info("epoch %d: cost %.3e", epoch, cost)
    wall = time.perf_counter() - t0
    history = history[:epochs]

    ws, bs = _split(params, n_layers)
    final_cost, _ = _cost_and_grad(ws, bs, batch, cfg, want_grad=False)
    net = Mlp(tuple(ws), tuple(bs))

    _warn_if_not_settling(history)

    if core is None:
        core = CoreParams(1.0, 0.026, 0.0, 2.0)
    model = TrainedModel(core, net, metadata={
        "seed": cfg.seed,
        "epochs": epochs,
        "final_cost": final_cost,
        "dataset_fingerprint": dataset_fingerprint(samples),
    })
    return model, TrainReport(history, final_cost, epochs, wall)


def _warn_if_not_settling(history, start=500, window=100):
    """Soft sanity check: past the burn-in, cost should not rise over any
    100-epoch window.  Logged, never raised."""
    if history.size <= start + window:
        return
    h = history[start:]
    rises = int(np.sum(h[window:] > h[:-window]))
    if rises:
        log.warning("cost rose over %d of the %d post-burn-in 100-epoch windows",
                    rises, h.size - window)
