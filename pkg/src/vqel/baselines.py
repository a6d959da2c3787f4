"""Comparison senders without a quantiser: REINFORCE and Gumbel-Softmax ST.

Both keep the VQEL sender's object perception, recurrent generator and BOS
vector. The codebook is replaced by a K x d vocabulary table: symbol logits
are ``proj(h_t) @ table.T`` and the table row of the emitted symbol is fed
back as the next generator input.
"""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .agent import OBJECT_DIM, GenerationMode, GRUCell, Linear, Message, _uniform, validate_one_hot
from .errors import ParameterError
from .numcore import Tensor
from .vq import sample_categorical

GUMBEL_CLAMP = 1e-20


def gumbel_noise(shape, rng: np.random.Generator) -> np.ndarray:
    u = np.clip(rng.random(shape), GUMBEL_CLAMP, 1.0)
    return -np.log(np.clip(-np.log(u), GUMBEL_CLAMP, None))


class _TableSender:
    method = ""

    def __init__(self, rng: np.random.Generator, dim: int = 64, vocab_size: int = 10,
                 message_length: int = 4, proj_bias: bool = True):
        self.dim = dim
        self.K = vocab_size
        self.L = message_length
        bound = 1.0 / np.sqrt(dim)
        self.object_embed = Linear(OBJECT_DIM, dim, rng, bias=False, bound=bound, name="object_embed")
        self.gen_gru = GRUCell(dim, dim, rng, name="gen_gru")
        self.proj = Linear(dim, dim, rng, bias=proj_bias, bound=bound, name="proj")
        self.bos = _uniform(rng, (dim,), bound, "bos")
        self.vocab = _uniform(rng, (vocab_size, dim), bound, "vocab")

    def named_parameters(self) -> dict[str, Tensor]:
        out = {f"object_embed.{k}": v for k, v in self.object_embed.parameters().items()}
        out.update({f"gen_gru.{k}": v for k, v in self.gen_gru.parameters().items()})
        out.update({f"proj.{k}": v for k, v in self.proj.parameters().items()})
        out["bos"] = self.bos
        out["vocab"] = self.vocab
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for k, p in self.named_parameters().items():
            p.data = np.array(state[k], dtype=np.float64)

    def perceive_object(self, one_hot, validate: bool = True) -> Tensor:
        x = np.atleast_2d(np.asarray(one_hot, dtype=np.float64))
        if validate:
            validate_one_hot(x)
        return self.object_embed(Tensor(x))

    def logits(self, h: Tensor) -> Tensor:
        return nc.matmul(self.proj(h), nc.transpose(self.vocab))

    def _start(self, v_o: Tensor) -> Tensor:
        return nc.add(Tensor(np.zeros((v_o.shape[0], self.dim))), self.bos)


class ReinforceSender(_TableSender):
    method = "REINFORCE"

    def generate_message(self, v_o: Tensor, mode=GenerationMode.SOFT, temperature: float = 1.0,
                         rng: np.random.Generator | None = None) -> Message:
        """Sample (Soft) or greedily decode (Hard) L symbols."""
        mode = GenerationMode(mode)
        h, last = v_o, self._start(v_o)
        symbols = np.zeros((v_o.shape[0], self.L), dtype=np.int64)
        discrete, log_probs = [], []
        for t in range(self.L):
            h = self.gen_gru(h, last)
            logp = nc.log_softmax(self.logits(h), temperature)
            if mode is GenerationMode.HARD:
                idx = np.argmax(logp.data, axis=1)
            else:
                if rng is None:
                    raise ValueError("sampling needs an RNG stream")
                idx = sample_categorical(np.exp(logp.data), rng)
            log_probs.append(nc.pick(logp, idx))
            symbols[:, t] = idx
            last = nc.take_rows(self.vocab, idx)
            discrete.append(last)
        return Message(symbols=symbols, discrete=discrete, step_log_probs=log_probs)


class GumbelSender(_TableSender):
    """Gumbel-Softmax sender with a learned per-step inverse temperature.

    The projection carries no bias; its d weights are spent on the
    temperature vector instead, which keeps the sender the same size as the
    VQEL and REINFORCE senders.
    """

    method = "GS_ST"

    def __init__(self, rng: np.random.Generator, dim: int = 64, vocab_size: int = 10,
                 message_length: int = 4, tau0: float = 1.0):
        super().__init__(rng, dim, vocab_size, message_length, proj_bias=False)
        if not tau0 > 0.0:
            raise ParameterError(f"tau0 must be positive, got {tau0}")
        self.tau0 = tau0
        self.w_tau = _uniform(rng, (dim, 1), 1.0 / np.sqrt(dim), "w_tau")

    def named_parameters(self) -> dict[str, Tensor]:
        out = super().named_parameters()
        out["w_tau"] = self.w_tau
        return out

    def inverse_temperature(self, h: Tensor) -> Tensor:
        """softplus(w . h) + tau0, shape (B, 1)."""
        return nc.softplus(nc.matmul(h, self.w_tau)) + self.tau0

    def gs_temperature(self, h: Tensor) -> np.ndarray:
        return 1.0 / self.inverse_temperature(h).data[:, 0]

    def generate_message(self, v_o: Tensor, mode=GenerationMode.SOFT, temperature: float = 1.0,
                         rng: np.random.Generator | None = None,
                         noise: list[np.ndarray] | None = None) -> Message:
        """Soft mode draws relaxed straight-through one-hots; Hard mode decodes greedily.

        ``noise`` (one (B, K) array per step) replaces the Gumbel draws; it is a
        hook for tests that need a fixed perturbation.
        """
        mode = GenerationMode(mode)
        batch = v_o.shape[0]
        h, last = v_o, self._start(v_o)
        symbols = np.zeros((batch, self.L), dtype=np.int64)
        discrete, relaxed = [], []
        for t in range(self.L):
            h = self.gen_gru(h, last)
            logits = self.logits(h)
            if mode is GenerationMode.HARD:
                idx = np.argmax(logits.data, axis=1)
                last = nc.take_rows(self.vocab, idx)
            else:
                if noise is not None:
                    g = noise[t]
                elif rng is not None:
                    g = gumbel_noise((batch, self.K), rng)
                else:
                    raise ValueError("sampling needs an RNG stream or explicit noise")
                y = nc.softmax(nc.mul(logits + Tensor(g), self.inverse_temperature(h)))
                idx = np.argmax(y.data, axis=1)
                hard = np.zeros_like(y.data)
                hard[np.arange(batch), idx] = 1.0
                y_st = nc.straight_through(hard, y)
                relaxed.append(y_st)
                last = nc.matmul(y_st, self.vocab)
            symbols[:, t] = idx
            discrete.append(last)
        return Message(symbols=symbols, discrete=discrete,
                       relaxed=relaxed if mode is GenerationMode.SOFT else None)


def count_sender_parameters(sender) -> int:
    """Scalars on the sending path: object perception plus message generation.

    VQEL: object_embed, gen_gru, proj_g (weights + bias), bos, codebook.
    REINFORCE: object_embed, gen_gru, proj (weights + bias), bos, vocab table.
    GS-ST: object_embed, gen_gru, proj (weights only), bos, vocab table, w_tau.
    Receiving modules (percep_gru, symbol_embed) are excluded; baseline
    senders do not carry them.
    """
    if getattr(sender, "method", "") == "VQEL":
        params = [sender.object_embed.weight, sender.bos, *sender.gen_gru.parameters().values(),
                  *sender.proj_g.parameters().values()]
        return sum(p.size for p in params) + sender.codebook.codes.size
    return sum(p.size for p in sender.parameters())
