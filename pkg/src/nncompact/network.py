"""Symmetric multiplicative correction network.

The correction is a small tanh MLP evaluated on swap-invariant features
(v_gs + v_gd, v_ds^2), which makes it symmetric under source/drain exchange
bit-for-bit.  A companion tangent pass propagates an input-space direction
through the same weights (activations replaced by their slopes), giving
exact first derivatives with respect to the terminal voltages.
"""

from dataclasses import dataclass, field

import numpy as np

from .core import CoreParams, core_current, core_current_dir

# differentiation directions in (v_gs, v_gd) space for the three terminals
DIR_GATE = (1.0, 1.0)
DIR_DRAIN = (0.0, -1.0)
DIR_SOURCE = (-1.0, 0.0)


@dataclass(frozen=True)
class Mlp:
    """Tanh hidden layers, affine output.  Immutable after construction.

    weights[l] has shape (n_out, n_in); biases[l] has shape (n_out,).
    """

    weights: tuple
    biases: tuple

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=float) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=float) for b in self.biases)
        if len(ws) != len(bs) or not ws:
            raise ValueError("weights and biases must pair up, one per layer")
        for i, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {i}: inconsistent shapes {w.shape} / {b.shape}")
            if i > 0 and w.shape[1] != ws[i - 1].shape[0]:
                raise ValueError(f"layer {i}: input width {w.shape[1]} does not "
                                 f"chain from previous width {ws[i - 1].shape[0]}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i}: non-finite parameters")
        for a in ws + bs:
            a.flags.writeable = False
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def layer_sizes(self):
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def n_params(self):
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))


@dataclass(frozen=True)
class TrainedModel:
    """Analytic core plus trained correction net; the exportable artifact."""

    core: CoreParams
    net: Mlp
    metadata: dict = field(default_factory=dict)


def init_mlp(layer_sizes, seed=0) -> Mlp:
    """Glorot-uniform weights, zero hidden biases, output bias 1.0.

    The unit output bias makes a fresh net start near correction == 1,
    i.e. the untrained model degrades to the bare analytic core.
    """
    sizes = list(layer_sizes)
    if len(sizes) < 2 or sizes[0] != 2 or sizes[-1] != 1:
        raise ValueError(f"layer_sizes must run from 2 inputs to 1 output, got {sizes}")
    if any(int(n) != n or n < 1 for n in sizes):
        raise ValueError(f"layer sizes must be positive integers, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    biases[-1] = np.array([1.0])
    return Mlp(tuple(weights), tuple(biases))


def identity_mlp(layer_sizes) -> Mlp:
    """All-zero weights with unit output bias: correction identically 1."""
    net = init_mlp(layer_sizes, seed=0)
    return Mlp(tuple(np.zeros_like(w) for w in net.weights), net.biases)


def symmetric_features(v_gs, v_gd):
    """Map a bias to the swap-invariant pair (v_gs + v_gd, v_ds^2).

    Addition commutes and the square kills the sign of v_gs - v_gd, so the
    result is bit-identical under argument exchange.
    """
    v_gs = np.asarray(v_gs, dtype=float)
    v_gd = np.asarray(v_gd, dtype=float)
    d = v_gs - v_gd
    return v_gs + v_gd, d * d


def feature_tangent(v_gs, v_gd, d_vgs, d_vgd):
    """Jacobian of symmetric_features applied to a direction in bias space."""
    v_gs = np.asarray(v_gs, dtype=float)
    v_gd = np.asarray(v_gd, dtype=float)
    d_vgs = np.asarray(d_vgs, dtype=float)
    d_vgd = np.asarray(d_vgd, dtype=float)
    du = d_vgs + d_vgd
    dv = 2.0 * (v_gs - v_gd) * (d_vgs - d_vgd)
    return du, dv


@dataclass(frozen=True)
class ForwardCache:
    """Input and hidden activations retained for the tangent pass."""

    x: np.ndarray            # (2,) or (2, m)
    hidden: tuple            # tanh activations per hidden layer


def forward(net: Mlp, x):
    """Evaluate the MLP on features x (shape (2,) or (2, m)).

    Returns (output, cache); output is a scalar for a single point or a
    length-m vector for a batch.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[0] != net.weights[0].shape[1]:
        raise ValueError(f"input width {x.shape[0]} does not match net "
                         f"({net.weights[0].shape[1]})")
    single = x.ndim == 1
    a = x[:, None] if single else x
    hidden = []
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        a = np.tanh(w @ a + b[:, None])
        hidden.append(a)
    y = (net.weights[-1] @ a + net.biases[-1][:, None])[0]
    cache = ForwardCache(x, tuple(hidden))
    return (float(y[0]) if single else y), cache


def directional_derivative(net: Mlp, cache: ForwardCache, dx):
    """Propagate a feature-space direction dx through the tangent network.

    Hidden layers apply d -> (1 - a^2) * (W d); the affine output applies
    its weights only.  Biases contribute nothing.
    """
    if len(cache.hidden) != len(net.weights) - 1:
        raise ValueError("cache depth does not match network")
    dx = np.asarray(dx, dtype=float)
    if dx.shape != cache.x.shape:
        raise ValueError(f"direction shape {dx.shape} does not match cached "
                         f"input {cache.x.shape}")
    single = dx.ndim == 1
    d = dx[:, None] if single else dx
    for w, a in zip(net.weights[:-1], cache.hidden):
        if w.shape[0] != a.shape[0]:
            raise ValueError("cache does not belong to this network")
        d = (1.0 - a * a) * (w @ d)
    dy = (net.weights[-1] @ d)[0]
    return float(dy[0]) if single else dy


def correction(net: Mlp, v_gs, v_gd):
    """The correction factor at a bias; symmetric under swap, bit-exact."""
    u, v = symmetric_features(v_gs, v_gd)
    y, _ = forward(net, np.stack([u, v]))
    return y


def correction_grad(net: Mlp, v_gs, v_gd):
    """Partial derivatives of the correction w.r.t. (V_G, V_D, V_S).

    One forward pass feeds three tangent passes.  The components sum to
    zero because the correction depends only on voltage differences.
    """
    u, v = symmetric_features(v_gs, v_gd)
    _, cache = forward(net, np.stack([u, v]))
    out = []
    for d in (DIR_GATE, DIR_DRAIN, DIR_SOURCE):
        du, dv = feature_tangent(v_gs, v_gd, d[0], d[1])
        du, dv = np.broadcast_arrays(du, dv)
        out.append(directional_derivative(net, cache, np.stack([du, dv])))
    return tuple(out)


def drain_current(model: TrainedModel, v_gs, v_gd):
    """Full model current and conductances: (i_ds, g_m, g_ds).

    i_ds = core * correction; derivatives by the product rule combining the
    analytic core derivative with the tangent network.  i_ds is exactly 0
    on the v_gs == v_gd line and antisymmetric under swap.
    """
    i_core = core_current(v_gs, v_gd, model.core)
    u, v = symmetric_features(v_gs, v_gd)
    eps, cache = forward(model.net, np.stack([u, v]))

    out = []
    for d in (DIR_GATE, DIR_DRAIN):
        du, dv = feature_tangent(v_gs, v_gd, d[0], d[1])
        du, dv = np.broadcast_arrays(du, dv)
        d_eps = directional_derivative(model.net, cache, np.stack([du, dv]))
        d_core = core_current_dir(v_gs, v_gd, d[0], d[1], model.core)
        out.append(d_core * eps + i_core * d_eps)
    g_m, g_ds = out
    return i_core * eps, g_m, g_ds
