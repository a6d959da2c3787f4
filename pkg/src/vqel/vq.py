"""Vector-quantisation codebook: the agent's vocabulary.

Codes are learned outside the gradient path by exponential moving averages
of the encoder outputs assigned to them. Gradients reach the encoder through
the straight-through copy and the commitment term.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DegenerateInputError, DimensionError, ParameterError
from .numcore import Tensor


class Metric(str, Enum):
    COSINE = "Cosine"
    EUCLIDEAN = "Euclidean"


@dataclass
class AssignmentBatch:
    inputs: np.ndarray  # (N, d) quantiser inputs (normalised in cosine mode)
    chosen: np.ndarray  # (N,) code indices
    distances: np.ndarray  # (N, K)
    log_probs: np.ndarray | None = None


def _unit_rows(x: np.ndarray) -> np.ndarray:
    norm = np.sqrt((x * x).sum(axis=-1, keepdims=True))
    if np.any(norm <= nc.NORM_EPS):
        raise DegenerateInputError("cannot normalise a (near-)zero vector")
    return x / norm


class Codebook:
    def __init__(
        self,
        num_codes: int,
        dim: int,
        metric: Metric | str = Metric.COSINE,
        decay: float = 0.99,
        eps: float = 1e-5,
        rng: np.random.Generator | None = None,
        expiry_threshold: float | None = None,
        expiry_every: int = 100,
        expiry_warmup: int = 200,
    ):
        if num_codes < 2 or dim < 1:
            raise ParameterError(f"need K >= 2 and d >= 1, got K={num_codes}, d={dim}")
        self.K = num_codes
        self.d = dim
        self.metric = Metric(metric)
        self.decay = decay
        self.eps = eps
        self.expiry_threshold = 1.0 / (4 * num_codes) if expiry_threshold is None else expiry_threshold
        self.expiry_every = expiry_every
        self.expiry_warmup = expiry_warmup
        self.updates = 0
        rng = np.random.default_rng() if rng is None else rng
        if self.metric is Metric.COSINE:
            codes = _unit_rows(rng.standard_normal((num_codes, dim)))
        else:
            codes = rng.standard_normal((num_codes, dim)) / np.sqrt(dim)
        self.codes = codes
        self.ema_cluster_size = np.ones(num_codes)
        self.ema_embed_sum = codes.copy()
        self.usage_ema = np.zeros(num_codes)

    # -- input preparation -------------------------------------------------

    def prepare(self, z: Tensor) -> Tensor:
        """Map encoder output into quantiser space (the unit sphere in cosine mode)."""
        if self.metric is Metric.COSINE:
            return nc.l2_normalize(z)
        return z

    # -- distances and assignment -----------------------------------------

    def distances(self, z: np.ndarray) -> np.ndarray:
        """Distances from each row of ``z`` to every code, shape (N, K).

        Cosine mode returns ``1 - cos(z, e_k)``; Euclidean mode the squared
        L2 distance.
        """
        z = np.asarray(z, dtype=np.float64)
        single = z.ndim == 1
        z2 = np.atleast_2d(z)
        if z2.shape[-1] != self.d:
            raise DimensionError(f"expected vectors of size {self.d}, got {z2.shape[-1]}")
        if self.metric is Metric.COSINE:
            out = 1.0 - _unit_rows(z2) @ self.codes.T
        else:
            diff = z2[:, None, :] - self.codes[None, :, :]
            out = (diff * diff).sum(axis=-1)
        return out[0] if single else out

    def distance_tensor(self, z: Tensor) -> Tensor:
        """Differentiable distances from prepared inputs ``z`` to the (constant) codes."""
        codes_t = Tensor(self.codes.T)
        if self.metric is Metric.COSINE:
            return nc.scale(nc.matmul(z, codes_t), -1.0) + 1.0
        zz = nc.sum_(nc.square(z), axis=1, keepdims=True)
        ee = Tensor((self.codes * self.codes).sum(axis=1)[None, :])
        return zz - nc.scale(nc.matmul(z, codes_t), 2.0) + ee

    def assign_hard(self, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Nearest code (lowest index on ties) and its vector."""
        dist = self.distances(z)
        idx = np.argmin(dist, axis=-1)
        return idx, self.codes[idx]

    def assign_soft(
        self, z: Tensor, temperature: float, rng: np.random.Generator
    ) -> tuple[np.ndarray, Tensor, Tensor]:
        """Sample codes from softmax(-distance / temperature).

        Returns the sampled indices, the log-probability of each sample
        (differentiable w.r.t. ``z``) and the full log-distribution.
        """
        if not temperature > 0.0:
            raise ParameterError(f"sampling temperature must be positive, got {temperature}")
        if self.metric is Metric.COSINE:
            _check_nondegenerate(z.data)
        logp = nc.log_softmax(nc.scale(self.distance_tensor(z), -1.0), temperature)
        idx = sample_categorical(np.exp(logp.data), rng)
        return idx, nc.pick(logp, idx), logp

    def quantize_st(self, z: Tensor) -> tuple[np.ndarray, Tensor]:
        """Hard-assign ``z`` and return the code with straight-through gradient to ``z``."""
        idx, codes = self.assign_hard(z.data)
        return idx, nc.straight_through(codes, z)

    # -- learning ------------------------------------------------------------

    def ema_update(self, assignments: AssignmentBatch) -> None:
        z = np.asarray(assignments.inputs, dtype=np.float64).reshape(-1, self.d)
        idx = np.asarray(assignments.chosen).reshape(-1)
        onehot = np.zeros((idx.size, self.K))
        onehot[np.arange(idx.size), idx] = 1.0
        counts = onehot.sum(axis=0)
        g = self.decay
        self.ema_cluster_size = g * self.ema_cluster_size + (1.0 - g) * counts
        self.ema_embed_sum = g * self.ema_embed_sum + (1.0 - g) * (onehot.T @ z)
        self.usage_ema = g * self.usage_ema + (1.0 - g) * (counts > 0)
        n = self.ema_cluster_size.sum()
        smoothed = (self.ema_cluster_size + self.eps) / (n + self.K * self.eps) * n
        codes = self.ema_embed_sum / smoothed[:, None]
        if self.metric is Metric.COSINE:
            codes = _unit_rows(codes)
        self.codes = codes

    def learn(self, assignments: AssignmentBatch, rng: np.random.Generator) -> int:
        """EMA update, then the periodic stale-code check. Returns codes replaced."""
        self.ema_update(assignments)
        self.updates += 1
        if (self.expiry_every > 0 and self.updates >= self.expiry_warmup
                and self.updates % self.expiry_every == 0):
            return self.expire_stale(assignments.inputs, rng)
        return 0

    def expire_stale(self, pool: np.ndarray, rng: np.random.Generator) -> int:
        """Re-seed codes whose usage fell below the threshold from ``pool`` rows."""
        stale = np.flatnonzero(self.usage_ema < self.expiry_threshold)
        if stale.size == 0:
            return 0
        pool = np.asarray(pool, dtype=np.float64).reshape(-1, self.d)
        if pool.shape[0] == 0:
            raise ConfigError("stale codes need replacing but the replacement pool is empty")
        replace = pool.shape[0] < stale.size
        picks = pool[rng.choice(pool.shape[0], size=stale.size, replace=replace)]
        if self.metric is Metric.COSINE:
            picks = _unit_rows(picks)
        codes = self.codes.copy()
        codes[stale] = picks
        self.codes = codes
        cluster = self.ema_cluster_size.copy()
        cluster[stale] = 1.0
        self.ema_cluster_size = cluster
        embed = self.ema_embed_sum.copy()
        embed[stale] = picks
        self.ema_embed_sum = embed
        usage = self.usage_ema.copy()
        usage[stale] = 1.0 / self.K
        self.usage_ema = usage
        return int(stale.size)

    # -- persistence -----------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {
            "codes": self.codes.copy(),
            "ema_cluster_size": self.ema_cluster_size.copy(),
            "ema_embed_sum": self.ema_embed_sum.copy(),
            "usage_ema": self.usage_ema.copy(),
            "updates": np.array(self.updates),
        }

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for key in ("codes", "ema_cluster_size", "ema_embed_sum", "usage_ema"):
            value = np.array(state[key], dtype=np.float64)
            if value.shape != getattr(self, key).shape:
                raise DimensionError(f"codebook state {key!r} has shape {value.shape}")
            setattr(self, key, value)
        self.updates = int(state.get("updates", 0))


def commitment_loss(z: Tensor, chosen_code) -> Tensor:
    """Per-row ``||z - sg(e)||^2``; the code side never receives gradient."""
    code = chosen_code.data if isinstance(chosen_code, Tensor) else np.asarray(chosen_code)
    if code.shape != z.shape:
        raise DimensionError(f"commitment_loss: shapes differ {z.shape} vs {code.shape}")
    diff = z - Tensor(code)
    return nc.sum_(nc.square(diff), axis=-1)


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row of ``probs`` by inverse-CDF with a single uniform each."""
    probs = np.atleast_2d(probs)
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cdf[:, -1]
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def _check_nondegenerate(z: np.ndarray) -> None:
    norm = np.sqrt((z * z).sum(axis=-1))
    if np.any(norm <= nc.NORM_EPS):
        raise DegenerateInputError("cosine distance undefined for a (near-)zero vector")
