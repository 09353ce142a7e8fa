"""The field-regression network: a conditioned MLP plus a per-entity
latent table, with exact reverse-mode gradients and Adam, in plain numpy.

The conditioning vector c = [positional features, latent code] is
re-concatenated onto the hidden state at every layer, so each layer sees
both the running activation and the raw conditioning.  Layer 0 receives
[c, c] (its "hidden state" is c itself).  The final layer is affine with
a single scalar output and no activation.

Training state is float32 by default so checkpoints round-trip the live
state exactly; gradient-check fixtures use float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .seeding import spawn_rng

__all__ = [
    "MlpParams",
    "LatentTable",
    "LossConfig",
    "OptimizerState",
    "BatchGradients",
    "init",
    "forward",
    "forward_batch",
    "loss",
    "loss_batch",
    "batch_gradients",
    "adam_step",
]


@dataclass
class MlpParams:
    """Layer weights/biases.  weights[k] has shape (in_k, out_k) where
    in_k = previous hidden width + conditioning width."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    hidden: tuple[int, ...]
    cond_width: int
    negative_slope: float = 0.01

    @property
    def dtype(self):
        return self.weights[0].dtype


@dataclass
class LatentTable:
    """Entity id -> latent row."""

    ids: tuple[str, ...]
    values: np.ndarray  # (n, d)

    def __post_init__(self):
        self.index = {eid: i for i, eid in enumerate(self.ids)}
        if len(self.index) != len(self.ids):
            raise ValueError("latent table ids must be unique")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def vector(self, eid: str) -> np.ndarray:
        return self.values[self.index[eid]]


@dataclass(frozen=True)
class LossConfig:
    """clamp None -> plain L1; otherwise both sides are clamped to
    [-clamp, +clamp] first.  gamma scales the latent prior term
    (gamma / sigma_z^2) * ||z||^2, counted once per entity per batch."""

    clamp: float | None = None
    gamma: float = 0.0
    sigma_z: float = 0.1

    def __post_init__(self):
        if self.clamp is not None and self.clamp <= 0:
            raise ValueError("clamp must be > 0 when set")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.sigma_z <= 0:
            raise ValueError("sigma_z must be > 0")


@dataclass
class OptimizerState:
    """Adam moments mirroring every trainable tensor."""

    m_weights: list[np.ndarray]
    v_weights: list[np.ndarray]
    m_biases: list[np.ndarray]
    v_biases: list[np.ndarray]
    m_latents: np.ndarray
    v_latents: np.ndarray
    step: int = 0
    lr_net: float = 1e-4
    lr_latent: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class BatchGradients:
    d_weights: list[np.ndarray]
    d_biases: list[np.ndarray]
    d_latents: dict[int, np.ndarray]  # latent row -> gradient
    objective: float


def _layer_dims(hidden: tuple[int, ...], cond_width: int) -> list[tuple[int, int]]:
    dims = []
    prev = cond_width
    for w in hidden:
        dims.append((prev + cond_width, w))
        prev = w
    dims.append((prev + cond_width, 1))
    return dims


def init(hidden: tuple[int, ...], pe_width: int, latent_dim: int,
         entity_ids, sigma_z: float, seed: int = 0,
         dtype=np.float32) -> tuple[MlpParams, LatentTable, OptimizerState]:
    """Fan-in-scaled uniform weights, zero biases, N(0, sigma_z^2) latents."""
    if sigma_z <= 0:
        raise ValueError("sigma_z must be > 0")
    if pe_width < 1 or latent_dim < 1 or any(w < 1 for w in hidden):
        raise ValueError("widths must be positive")
    rng = spawn_rng(seed, "init")
    cond = pe_width + latent_dim
    weights, biases = [], []
    for fan_in, fan_out in _layer_dims(tuple(hidden), cond):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    params = MlpParams(weights, biases, tuple(hidden), cond)
    ids = tuple(entity_ids)
    latents = rng.normal(0.0, sigma_z, (len(ids), latent_dim)).astype(dtype)
    table = LatentTable(ids, latents)
    opt = OptimizerState(
        m_weights=[np.zeros_like(w) for w in weights],
        v_weights=[np.zeros_like(w) for w in weights],
        m_biases=[np.zeros_like(b) for b in biases],
        v_biases=[np.zeros_like(b) for b in biases],
        m_latents=np.zeros_like(latents),
        v_latents=np.zeros_like(latents),
    )
    return params, table, opt


def _leaky(a: np.ndarray, slope: float) -> np.ndarray:
    return np.where(a >= 0, a, slope * a)


def _forward_pass(params: MlpParams, cond: np.ndarray):
    """Returns (outputs (B,), cached layer inputs, cached preactivations)."""
    h = cond
    inputs, preacts = [], []
    last = len(params.weights) - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        inp = np.concatenate([h, cond], axis=1)
        inputs.append(inp)
        a = inp @ w + b
        if k < last:
            preacts.append(a)
            h = _leaky(a, params.negative_slope)
    return a[:, 0], inputs, preacts


def forward_batch(params: MlpParams, latent_rows: np.ndarray,
                  features: np.ndarray) -> np.ndarray:
    """Predicted signed distances for a batch.  latent_rows (B, d) pairs
    with features (B, F); both are concatenated into the conditioning."""
    cond = np.concatenate([features, latent_rows], axis=1)
    if cond.shape[1] != params.cond_width:
        raise ValueError(f"conditioning width {cond.shape[1]} != "
                         f"expected {params.cond_width}")
    out, _, _ = _forward_pass(params, cond.astype(params.dtype, copy=False))
    return out


def forward(params: MlpParams, z: np.ndarray, features: np.ndarray) -> float:
    """Single-sample predicted signed distance."""
    return float(forward_batch(params, np.atleast_2d(z), np.atleast_2d(features))[0])


def _clamp(x, limit):
    return np.clip(x, -limit, limit)


def loss_batch(pred: np.ndarray, target: np.ndarray, cfg: LossConfig) -> np.ndarray:
    if cfg.clamp is None:
        return np.abs(pred - target)
    return np.abs(_clamp(pred, cfg.clamp) - _clamp(target, cfg.clamp))


def loss(pred: float, target: float, cfg: LossConfig) -> float:
    return float(loss_batch(np.asarray([pred]), np.asarray([target]), cfg)[0])


def _loss_grad(pred: np.ndarray, target: np.ndarray, cfg: LossConfig) -> np.ndarray:
    """d loss / d pred.  The L1 subgradient at 0 is taken as 0, and a
    clamped prediction beyond the limit gets no gradient."""
    if cfg.clamp is None:
        return np.sign(pred - target)
    g = np.sign(_clamp(pred, cfg.clamp) - _clamp(target, cfg.clamp))
    return g * (np.abs(pred) < cfg.clamp)


def batch_gradients(params: MlpParams, table: LatentTable,
                    features: np.ndarray, targets: np.ndarray,
                    latent_rows: np.ndarray, cfg: LossConfig) -> BatchGradients:
    """Exact gradients of sum(loss) + (gamma/sigma_z^2) * sum_z ||z||^2
    over one batch.  latent_rows holds each sample's row index into the
    table; only touched rows appear in d_latents."""
    if features.shape[0] == 0:
        raise ValueError("empty batch")
    dtype = params.dtype
    feats = features.astype(dtype, copy=False)
    rows = np.asarray(latent_rows)
    z = table.values[rows]
    cond = np.concatenate([feats, z], axis=1)
    pred, inputs, preacts = _forward_pass(params, cond)

    targ = targets.astype(dtype, copy=False)
    data_loss = float(loss_batch(pred, targ, cfg).sum())
    g_out = _loss_grad(pred, targ, cfg).astype(dtype)[:, None]  # (B, 1)

    d_weights = [np.empty(0)] * len(params.weights)
    d_biases = [np.empty(0)] * len(params.biases)
    d_cond = np.zeros_like(cond)
    slope = dtype.type(params.negative_slope)

    delta = g_out
    for k in range(len(params.weights) - 1, -1, -1):
        d_weights[k] = inputs[k].T @ delta
        d_biases[k] = delta.sum(axis=0)
        d_inp = delta @ params.weights[k].T
        hidden_w = inputs[k].shape[1] - params.cond_width
        d_cond += d_inp[:, hidden_w:]
        d_hidden = d_inp[:, :hidden_w]
        if k == 0:
            d_cond += d_hidden  # layer 0's hidden state is the conditioning
        else:
            a = preacts[k - 1]
            delta = d_hidden * np.where(a >= 0, dtype.type(1.0), slope)

    feat_width = feats.shape[1]
    d_z_rows = d_cond[:, feat_width:]
    touched = np.unique(rows)
    acc = np.zeros((len(touched), table.dim), dtype=dtype)
    np.add.at(acc, np.searchsorted(touched, rows), d_z_rows)

    objective = data_loss
    d_latents = {}
    reg_coef = 2.0 * cfg.gamma / cfg.sigma_z**2
    for j, row in enumerate(touched):
        dz = acc[j]
        if cfg.gamma > 0.0:
            zr = table.values[row]
            objective += float(cfg.gamma / cfg.sigma_z**2 * np.dot(zr, zr))
            dz = dz + dtype.type(reg_coef) * zr
        d_latents[int(row)] = dz
    return BatchGradients(d_weights, d_biases, d_latents, objective)


def _adam_update(p, g, m, v, lr, state: OptimizerState):
    b1, b2 = state.beta1, state.beta2
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * np.square(g)
    mhat = m / (1.0 - b1**state.step)
    vhat = v / (1.0 - b2**state.step)
    p -= (lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype, copy=False)


def adam_step(params: MlpParams, table: LatentTable,
              grads: BatchGradients, state: OptimizerState) -> None:
    """One Adam update in place.  Network tensors use lr_net, touched
    latent rows use lr_latent; untouched rows (moments included) do not
    move.  Bias correction uses the shared step counter."""
    state.step += 1
    for k in range(len(params.weights)):
        _adam_update(params.weights[k], grads.d_weights[k],
                     state.m_weights[k], state.v_weights[k], state.lr_net, state)
        _adam_update(params.biases[k], grads.d_biases[k],
                     state.m_biases[k], state.v_biases[k], state.lr_net, state)
    for row, dz in grads.d_latents.items():
        _adam_update(table.values[row], dz,
                     state.m_latents[row], state.v_latents[row],
                     state.lr_latent, state)
