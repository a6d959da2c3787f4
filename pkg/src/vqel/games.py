"""Referential games: self-play and mutual-play training steps, and evaluation."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import numcore as nc
from .agent import Agent, GenerationMode, InputKind, Message
from .data import CandidateSet, attribute_table, eval_batches, one_hot_table
from .errors import ParameterError, UsageError
from .metrics import Transcript
from .numcore import Tensor
from .vq import AssignmentBatch


class SenderUpdate(str, Enum):
    FROZEN = "Frozen"
    RL = "RL"
    RL_PRES = "RLPres"


class ReceiverUpdate(str, Enum):
    FROZEN = "Frozen"
    FINE_TUNED = "FineTuned"


@dataclass
class TrainStepReport:
    contrastive: float
    commitment: float
    rl: float | None
    total: float
    batch_accuracy: float
    preservation: float | None = None


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def similarity_logits(v_m: Tensor, candidates: Tensor, t_sim: float) -> Tensor:
    """Cosine similarity of every message row to every candidate, divided by t_sim."""
    if not t_sim > 0.0:
        raise ParameterError(f"similarity temperature must be positive, got {t_sim}")
    a = nc.l2_normalize(v_m)
    b = nc.l2_normalize(candidates)
    return nc.scale(nc.matmul(a, nc.transpose(b)), 1.0 / t_sim)


def contrastive_terms(v_m: Tensor, candidates: Tensor, targets, t_sim: float = 0.1
                      ) -> tuple[Tensor, np.ndarray]:
    """Per-row cross-entropy of picking the target candidate, plus the raw logits."""
    logits = similarity_logits(v_m, candidates, t_sim)
    per_row = nc.scale(nc.pick(nc.log_softmax(logits), targets), -1.0)
    return per_row, logits.data


def contrastive_loss(v_m: Tensor, candidates: Tensor, targets, t_sim: float = 0.1) -> Tensor:
    per_row, _ = contrastive_terms(v_m, candidates, targets, t_sim)
    return nc.mean(per_row)


def reinforce_loss(step_log_probs: list[Tensor] | None, reward: np.ndarray,
                   baseline: bool = False) -> Tensor:
    """``-mean_i (R_i - b) * sum_t log p(w_it)`` with ``b`` the batch-mean reward if enabled."""
    if step_log_probs is None:
        raise UsageError("REINFORCE needs per-step log-probabilities (Soft-mode generation)")
    reward = np.asarray(reward, dtype=np.float64)
    adv = reward - reward.mean() if baseline else reward
    total = step_log_probs[0]
    for lp in step_log_probs[1:]:
        total = total + lp
    return nc.scale(nc.mean(nc.mul(total, Tensor(adv))), -1.0)


def _accuracy(logits: np.ndarray, targets: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == targets))


def _codebook_assignments(agent: Agent, msg: Message, hard: bool = False) -> AssignmentBatch:
    z = np.concatenate([lat.data for lat in msg.latents])
    if hard:
        chosen = np.argmin(agent.codebook.distances(z), axis=1)
    else:
        chosen = np.concatenate([msg.symbols[:, t] for t in range(msg.length)])
    return AssignmentBatch(inputs=z, chosen=chosen, distances=np.empty((0, agent.K)))


# ---------------------------------------------------------------------------
# self-play
# ---------------------------------------------------------------------------


def self_play_forward(agent: Agent, batch: CandidateSet, beta: float, t_sim: float = 0.1):
    """Forward pass of one self-play game; returns (total, contrastive, commitment, logits, msg)."""
    v_o = agent.perceive_object(batch.one_hot, validate=False)
    msg = agent.generate_message(v_o, GenerationMode.HARD)
    v_m = agent.perceive_message(msg, InputKind.DISCRETE)
    per_row, logits = contrastive_terms(v_m, v_o, batch.target_index, t_sim)
    con = nc.mean(per_row)
    com = msg.commitment()
    total = con if beta == 0 else con + nc.scale(com, beta)
    return total, con, com, logits, msg


def self_play_step(agent: Agent, batch: CandidateSet, beta: float, optimizer: nc.Adam,
                   rng: np.random.Generator, t_sim: float = 0.1,
                   update_codebook: bool = True) -> TrainStepReport:
    """One self-play update: gradient step on all modules, then the codebook EMA."""
    total, con, com, logits, msg = self_play_forward(agent, batch, beta, t_sim)
    optimizer.zero_grad()
    nc.backward(total)
    optimizer.step()
    if update_codebook:
        agent.codebook.learn(_codebook_assignments(agent, msg), rng)
    return TrainStepReport(contrastive=con.item(), commitment=com.item(), rl=None,
                           total=total.item(), batch_accuracy=_accuracy(logits, batch.target_index))


# ---------------------------------------------------------------------------
# mutual play
# ---------------------------------------------------------------------------


def mutual_play_step(sender, receiver: Agent, batch: CandidateSet, beta: float,
                     sender_mode: SenderUpdate | str, rng: np.random.Generator,
                     sender_opt: nc.Adam | None = None, receiver_opt: nc.Adam | None = None,
                     receiver_update: ReceiverUpdate | str = ReceiverUpdate.FINE_TUNED,
                     temperature: float = 1.0, t_sim: float = 0.1,
                     rl_baseline: bool = True) -> TrainStepReport:
    """One mutual-play game between two distinct agents.

    The receiver learns from the contrastive loss alone. A VQEL or
    REINFORCE sender learns from the score-function loss on the receiver's
    per-sample reward (plus commitment, plus its own self-play loss in
    RLPres mode); nothing crosses the symbol channel. A Gumbel-Softmax
    sender instead receives the receiver's gradient through its relaxed
    one-hots.
    """
    if sender is receiver:
        raise UsageError("mutual play needs two distinct agents")
    sender_mode = SenderUpdate(sender_mode)
    receiver_update = ReceiverUpdate(receiver_update)
    method = getattr(sender, "method", "VQEL")
    train_sender = sender_mode is not SenderUpdate.FROZEN
    train_receiver = receiver_update is ReceiverUpdate.FINE_TUNED
    targets = batch.target_index
    x = batch.one_hot

    with _grad_if(train_sender):
        v_o = sender.perceive_object(x, validate=False)
        msg = sender.generate_message(v_o, GenerationMode.SOFT, temperature=temperature, rng=rng)

    relaxed_channel = method == "GS_ST"
    with _grad_if(train_receiver or (relaxed_channel and train_sender)):
        if relaxed_channel:
            v_m = receiver.read_sequence([nc.matmul(y, receiver.symbol_embed) for y in msg.relaxed])
        else:
            v_m = receiver.perceive_message(msg, InputKind.SYMBOLIC)
        cand = receiver.perceive_object(x, validate=False)
        per_row, logits = contrastive_terms(v_m, cand, targets, t_sim)
        con = nc.mean(per_row)

    parts: list[Tensor] = []
    if train_receiver or relaxed_channel:
        parts.append(con)
    rl_value = com_value = pres_value = None
    if train_sender and not relaxed_channel:
        rl = reinforce_loss(msg.step_log_probs, -per_row.data, baseline=rl_baseline)
        parts.append(rl)
        rl_value = rl.item()
        if method == "VQEL":
            com = msg.commitment()
            parts.append(nc.scale(com, beta))
            com_value = com.item()
            if sender_mode is SenderUpdate.RL_PRES:
                sp_total, *_ = self_play_forward(sender, batch, beta, t_sim)
                parts.append(sp_total)
                pres_value = sp_total.item()
    elif method == "VQEL":
        com_value = msg.commitment().item()

    total = parts[0] if parts else None
    for p in parts[1:]:
        total = total + p
    for opt in (sender_opt if train_sender else None, receiver_opt if train_receiver else None):
        if opt is not None:
            opt.zero_grad()
    if total is not None and total.requires_grad:
        nc.backward(total)
    if train_receiver and receiver_opt is not None:
        receiver_opt.step()
    if train_sender and sender_opt is not None:
        sender_opt.step()
    if train_sender and method == "VQEL":
        sender.codebook.learn(_codebook_assignments(sender, msg, hard=True), rng)

    return TrainStepReport(
        contrastive=con.item(), commitment=com_value if com_value is not None else 0.0,
        rl=rl_value, total=total.item() if total is not None else con.item(),
        batch_accuracy=_accuracy(logits, targets), preservation=pres_value)


def _grad_if(enabled: bool):
    return contextlib.nullcontext() if enabled else nc.no_grad()


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def encode_messages(sender, ids: np.ndarray, chunk: int = 1000
                    ) -> tuple[np.ndarray, np.ndarray | None]:
    """Greedy (Hard-mode) symbols (N, L) and code vectors (N, L, d) for the given ids."""
    symbols, discrete = [], []
    with nc.no_grad():
        for start in range(0, ids.size, chunk):
            part = ids[start:start + chunk]
            v_o = sender.perceive_object(one_hot_table()[part], validate=False)
            msg = sender.generate_message(v_o, GenerationMode.HARD)
            symbols.append(msg.symbols)
            if msg.discrete:
                discrete.append(np.stack([q.data for q in msg.discrete], axis=1))
    return np.concatenate(symbols), np.concatenate(discrete) if discrete else None


def evaluate(sender, receiver: Agent | None, ids: np.ndarray,
             candidates: int) -> tuple[float, Transcript]:
    """Accuracy over consecutive batches of ``candidates`` objects, every row a target.

    ``receiver=None`` evaluates the sender's internal language: its own
    perception module reads the Discrete message.
    """
    ids = np.asarray(ids)
    if ids.size < candidates:
        raise ParameterError(f"evaluation set of {ids.size} is smaller than {candidates} candidates")
    symbols, discrete = encode_messages(sender, ids)
    reader = sender if receiver is None else receiver
    with nc.no_grad():
        v_o = reader.perceive_object(one_hot_table()[ids], validate=False).data
        if receiver is None:
            v_m = reader.read_sequence([Tensor(discrete[:, t]) for t in range(discrete.shape[1])]).data
        else:
            fake = Message(symbols=symbols, discrete=[])
            v_m = reader.perceive_message(fake, InputKind.SYMBOLIC).data
    v_m = v_m / np.linalg.norm(v_m, axis=1, keepdims=True)
    v_o = v_o / np.linalg.norm(v_o, axis=1, keepdims=True)
    pos = {int(i): n for n, i in enumerate(ids)}
    predicted, true, rows = [], [], []
    for batch in eval_batches(ids, candidates):
        idx = np.array([pos[int(i)] for i in batch.ids])
        sims = v_m[idx] @ v_o[idx].T
        predicted.append(np.argmax(sims, axis=1))
        true.append(batch.target_index)
        rows.append(idx)
    rows = np.concatenate(rows)
    transcript = Transcript(
        concepts=attribute_table()[ids[rows]],
        messages=symbols[rows],
        predicted=np.concatenate(predicted),
        true=np.concatenate(true),
    )
    return float(np.mean(transcript.predicted == transcript.true)), transcript
