"""Agent modules: object perception, message generation, message perception."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import numcore as nc
from .errors import DimensionError, InputError, UsageError
from .numcore import Tensor
from .vq import Codebook, Metric, commitment_loss

N_ATTRIBUTES = 4
N_VALUES = 10
OBJECT_DIM = N_ATTRIBUTES * N_VALUES


def _uniform(rng: np.random.Generator, shape, bound: float, name: str) -> Tensor:
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


class Linear:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, bias: bool = True,
                 bound: float | None = None, name: str = "linear"):
        bound = 1.0 / np.sqrt(n_out) if bound is None else bound
        self.weight = _uniform(rng, (n_in, n_out), bound, f"{name}.weight")
        self.bias = _uniform(rng, (n_out,), bound, f"{name}.bias") if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = nc.matmul(x, self.weight)
        return y if self.bias is None else y + self.bias

    def parameters(self) -> dict[str, Tensor]:
        out = {"weight": self.weight}
        if self.bias is not None:
            out["bias"] = self.bias
        return out


class GRUCell:
    """Gated recurrent unit, gates ordered (reset, update, candidate).

    ``h' = (1 - u) * n + u * h`` with
    ``r = sigmoid(x Wr + br + h Ur + cr)``, ``u = sigmoid(x Wu + bu + h Uu + cu)``,
    ``n = tanh(x Wn + bn + r * (h Un + cn))``. The three input matrices and the
    three hidden matrices are stored side by side in ``w_x`` and ``w_h``.
    """

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator, name: str = "gru"):
        bound = 1.0 / np.sqrt(hidden)
        self.hidden = hidden
        self.w_x = _uniform(rng, (n_in, 3 * hidden), bound, f"{name}.w_x")
        self.w_h = _uniform(rng, (hidden, 3 * hidden), bound, f"{name}.w_h")
        self.b_x = _uniform(rng, (3 * hidden,), bound, f"{name}.b_x")
        self.b_h = _uniform(rng, (3 * hidden,), bound, f"{name}.b_h")

    def __call__(self, h: Tensor, x: Tensor) -> Tensor:
        return gru_cell(h, x, self.w_x, self.w_h, self.b_x, self.b_h)

    def parameters(self) -> dict[str, Tensor]:
        return {"w_x": self.w_x, "w_h": self.w_h, "b_x": self.b_x, "b_h": self.b_h}


def gru_cell(h: Tensor, x: Tensor, w_x: Tensor, w_h: Tensor, b_x: Tensor, b_h: Tensor) -> Tensor:
    """One fused GRU step with a hand-written backward rule."""
    d = w_h.shape[0]
    if h.shape[-1] != d or x.shape[-1] != w_x.shape[0]:
        raise DimensionError(f"gru_cell: h {h.shape} / x {x.shape} do not fit weights")
    hd, xd = h.data, x.data
    gx = xd @ w_x.data + b_x.data
    gh = hd @ w_h.data + b_h.data
    r = nc._sigmoid(gx[:, :d] + gh[:, :d])
    u = nc._sigmoid(gx[:, d:2 * d] + gh[:, d:2 * d])
    hn = gh[:, 2 * d:]
    n = np.tanh(gx[:, 2 * d:] + r * hn)
    out = n + u * (hd - n)

    def bw(g):
        dn = g * (1.0 - u)
        du = g * (hd - n)
        dh = g * u
        dan = dn * (1.0 - n * n)
        dar = dan * hn * r * (1.0 - r)
        dau = du * u * (1.0 - u)
        dgx = np.concatenate([dar, dau, dan], axis=1)
        dgh = np.concatenate([dar, dau, dan * r], axis=1)
        if x.requires_grad:
            nc._accum(x, dgx @ w_x.data.T)
        if h.requires_grad:
            nc._accum(h, dh + dgh @ w_h.data.T)
        if w_x.requires_grad:
            nc._accum(w_x, xd.T @ dgx)
        if w_h.requires_grad:
            nc._accum(w_h, hd.T @ dgh)
        if b_x.requires_grad:
            nc._accum(b_x, dgx.sum(axis=0))
        if b_h.requires_grad:
            nc._accum(b_h, dgh.sum(axis=0))

    return nc._make(out, (h, x, w_x, w_h, b_x, b_h), bw, "gru_cell")


class GenerationMode(str, Enum):
    HARD = "Hard"
    SOFT = "Soft"


class InputKind(str, Enum):
    DISCRETE = "Discrete"
    SYMBOLIC = "Symbolic"


@dataclass
class Message:
    """A batch of messages: symbols (B, L) plus the code vectors they name."""

    symbols: np.ndarray
    discrete: list[Tensor]
    step_log_probs: list[Tensor] | None = None
    step_commitments: list[Tensor] = field(default_factory=list)
    latents: list[Tensor] = field(default_factory=list)
    # relaxed one-hot vectors (B, K) per step; only the Gumbel-Softmax sender fills these
    relaxed: list[Tensor] | None = None

    @property
    def length(self) -> int:
        return self.symbols.shape[1]

    def commitment(self) -> Tensor:
        """Mean over steps and batch of the per-step commitment terms."""
        total = self.step_commitments[0]
        for c in self.step_commitments[1:]:
            total = total + c
        return nc.scale(nc.mean(total), 1.0 / len(self.step_commitments))

    def sum_log_probs(self) -> Tensor:
        if self.step_log_probs is None:
            raise UsageError("message was generated without log-probabilities")
        total = self.step_log_probs[0]
        for lp in self.step_log_probs[1:]:
            total = total + lp
        return total


def validate_one_hot(x: np.ndarray) -> None:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[-1] != OBJECT_DIM:
        raise InputError(f"object vectors must have {OBJECT_DIM} entries, got {x.shape[-1]}")
    blocks = x.reshape(x.shape[0], N_ATTRIBUTES, N_VALUES)
    if not (np.all((blocks == 0.0) | (blocks == 1.0)) and np.all(blocks.sum(axis=-1) == 1.0)):
        raise InputError("object vector is not a concatenation of four one-hot blocks")


class Agent:
    """A VQEL agent. Fills the sender role, the receiver role, or both in self-play."""

    method = "VQEL"

    def __init__(self, rng: np.random.Generator, dim: int = 64, vocab_size: int = 10,
                 message_length: int = 4, metric: Metric | str = Metric.COSINE,
                 ema_decay: float = 0.99, ema_eps: float = 1e-5,
                 expiry_threshold: float | None = None):
        self.dim = dim
        self.K = vocab_size
        self.L = message_length
        bound = 1.0 / np.sqrt(dim)
        self.object_embed = Linear(OBJECT_DIM, dim, rng, bias=False, bound=bound, name="object_embed")
        self.gen_gru = GRUCell(dim, dim, rng, name="gen_gru")
        self.proj_g = Linear(dim, dim, rng, bias=True, bound=bound, name="proj_g")
        self.bos = _uniform(rng, (dim,), bound, "bos")
        self.percep_gru = GRUCell(dim, dim, rng, name="percep_gru")
        self.symbol_embed = _uniform(rng, (vocab_size, dim), bound, "symbol_embed")
        self.codebook = Codebook(vocab_size, dim, metric=metric, decay=ema_decay, eps=ema_eps,
                                 rng=rng, expiry_threshold=expiry_threshold)

    # -- parameters ---------------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for prefix, module in (("object_embed", self.object_embed), ("gen_gru", self.gen_gru),
                               ("proj_g", self.proj_g), ("percep_gru", self.percep_gru)):
            for k, v in module.parameters().items():
                out[f"{prefix}.{k}"] = v
        out["bos"] = self.bos
        out["symbol_embed"] = self.symbol_embed
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data.copy() for k, v in self.named_parameters().items()}
        state.update({f"codebook.{k}": v for k, v in self.codebook.state_dict().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.named_parameters().items():
            value = np.array(state[k], dtype=np.float64)
            if value.shape != p.shape:
                raise DimensionError(f"parameter {k!r}: expected {p.shape}, got {value.shape}")
            p.data = value
        self.codebook.load_state_dict(
            {k.split(".", 1)[1]: v for k, v in state.items() if k.startswith("codebook.")})

    # -- modules ------------------------------------------------------------

    def perceive_object(self, one_hot, validate: bool = True) -> Tensor:
        x = np.atleast_2d(np.asarray(one_hot, dtype=np.float64))
        if validate:
            validate_one_hot(x)
        return self.object_embed(Tensor(x))

    def generate_message(self, v_o: Tensor, mode: GenerationMode | str = GenerationMode.HARD,
                         temperature: float = 1.0,
                         rng: np.random.Generator | None = None) -> Message:
        """Unroll the recurrent generator for L steps, quantising each output.

        Every step feeds the previous step's straight-through code back in;
        in Soft mode the fed-back code is a constant instead, so the
        log-probabilities are those of the sampled sequence.
        """
        mode = GenerationMode(mode)
        if v_o.shape[-1] != self.dim:
            raise DimensionError(f"v_o must have size {self.dim}, got {v_o.shape[-1]}")
        batch = v_o.shape[0]
        h = v_o
        last = nc.add(Tensor(np.zeros((batch, self.dim))), self.bos)
        symbols = np.zeros((batch, self.L), dtype=np.int64)
        discrete, commits, latents = [], [], []
        log_probs = [] if mode is GenerationMode.SOFT else None
        cb = self.codebook
        for t in range(self.L):
            h = self.gen_gru(h, last)
            z = cb.prepare(self.proj_g(h))
            if mode is GenerationMode.HARD:
                idx, _ = cb.assign_hard(z.data)
            else:
                if rng is None:
                    raise ValueError("Soft generation needs an RNG stream")
                idx, lp, _ = cb.assign_soft(z, temperature, rng)
                log_probs.append(lp)
            code = cb.codes[idx]
            q = nc.straight_through(code, z)
            symbols[:, t] = idx
            discrete.append(q)
            latents.append(z)
            commits.append(commitment_loss(z, code))
            last = q if mode is GenerationMode.HARD else Tensor(code)
        return Message(symbols=symbols, discrete=discrete, step_log_probs=log_probs,
                       step_commitments=commits, latents=latents)

    def perceive_message(self, msg: Message, kind: InputKind | str = InputKind.DISCRETE) -> Tensor:
        kind = InputKind(kind)
        symbols = np.asarray(msg.symbols)
        if symbols.size and (symbols.min() < 0 or symbols.max() >= self.K):
            raise DimensionError(f"symbol index out of range [0, {self.K})")
        if kind is InputKind.DISCRETE:
            inputs = msg.discrete
        else:
            inputs = [nc.take_rows(self.symbol_embed, symbols[:, t]) for t in range(symbols.shape[1])]
        return self.read_sequence(inputs)

    def read_sequence(self, inputs: list[Tensor]) -> Tensor:
        h = Tensor(np.zeros((inputs[0].shape[0], self.dim)))
        for x in inputs:
            h = self.percep_gru(h, x)
        return h

    def clone(self) -> Agent:
        """Independent deep copy with gradients cleared."""
        twin = copy.deepcopy(self)
        for p in twin.parameters():
            p.grad = None
        return twin
