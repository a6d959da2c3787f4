"""Experiment orchestration: phase schedules, seeds, sweeps, grids, export."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import itertools
import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .agent import Agent
from .baselines import GumbelSender, ReinforceSender, count_sender_parameters
from .config import ExperimentConfig, Variant
from .data import DatasetSplit, iter_epoch, split
from .errors import NumericalError, ParameterError
from .games import evaluate, mutual_play_step, self_play_step
from .metrics import summarize

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
METRIC_KEYS = ("acc", "aw", "topsim", "hcm", "unique")

# independent RNG streams per seed: one per purpose, so phases can be reused
_STREAMS = {
    "init_sender": 10,
    "init_receiver": 11,
    "data_sp_sender": 1,
    "data_sp_receiver": 2,
    "data_mp": 3,
    "play_sp_sender": 4,
    "play_sp_receiver": 5,
    "play_mp": 6,
}


def stream(seed: int, purpose: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), _STREAMS[purpose]]))


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    phases: dict[str, dict]
    final: dict
    curves: dict[str, list[dict]]
    sender_params: int


@dataclass
class RunResult:
    config: dict
    fingerprint: str
    per_seed: list[SeedResult]
    aggregate: dict[str, dict]
    wall_clock: float = field(default=0.0, compare=False)

    def to_dict(self) -> dict:
        return to_jsonable(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, raw: dict) -> RunResult:
        seeds = [SeedResult(**s) for s in raw["per_seed"]]
        return cls(config=raw["config"], fingerprint=raw["fingerprint"], per_seed=seeds,
                   aggregate=raw["aggregate"], wall_clock=raw.get("wall_clock", 0.0))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> RunResult:
        return cls.from_dict(json.loads(text))

    def mean(self, key: str = "acc") -> float:
        return self.aggregate[key]["mean"]

    def values(self, key: str = "acc", phase: str | None = None) -> list[float]:
        if phase is None:
            return [s.final[key] for s in self.per_seed]
        return [s.phases[phase][key] for s in self.per_seed]


def to_jsonable(obj):
    """JSON-safe copy: numpy scalars to Python, NaN to None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def aggregate(per_seed: list[SeedResult]) -> dict[str, dict]:
    out = {}
    for key in METRIC_KEYS + ("valid_acc",):
        vals = np.array([s.final[key] for s in per_seed if s.final.get(key) is not None], dtype=float)
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            out[key] = {"mean": None, "std": None}
            continue
        std = float(np.std(vals, ddof=1)) if vals.size >= 2 else None
        out[key] = {"mean": float(vals.mean()), "std": std}
    return out


# ---------------------------------------------------------------------------
# model construction
# ---------------------------------------------------------------------------


def make_agent(cfg: ExperimentConfig, rng: np.random.Generator) -> Agent:
    return Agent(rng, dim=cfg.d, vocab_size=cfg.K, message_length=cfg.L, metric=cfg.metric,
                 ema_decay=cfg.ema_decay, ema_eps=cfg.ema_eps,
                 expiry_threshold=cfg.expiry_threshold)


def _configure_expiry(agent: Agent, cfg: ExperimentConfig) -> None:
    agent.codebook.expiry_every = cfg.expiry_every
    agent.codebook.expiry_warmup = cfg.expiry_warmup


def make_sender(cfg: ExperimentConfig, rng: np.random.Generator):
    if cfg.method == "GS_ST":
        return GumbelSender(rng, dim=cfg.d, vocab_size=cfg.K, message_length=cfg.L, tau0=cfg.tau0)
    if cfg.method == "REINFORCE":
        return ReinforceSender(rng, dim=cfg.d, vocab_size=cfg.K, message_length=cfg.L)
    agent = make_agent(cfg, rng)
    _configure_expiry(agent, cfg)
    return agent


# ---------------------------------------------------------------------------
# phases
# ---------------------------------------------------------------------------


def _check(report, phase: str, epoch: int, step: int) -> None:
    if not math.isfinite(report.total):
        raise NumericalError(
            f"non-finite loss in {phase} at epoch {epoch}, step {step}: "
            f"contrastive={report.contrastive}, commitment={report.commitment}, rl={report.rl}")


def _epoch_summary(reports) -> dict:
    out = {}
    for key in ("contrastive", "commitment", "rl", "total", "batch_accuracy"):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        out[key] = float(np.mean(vals)) if vals else None
    return out


def train_self_play(agent: Agent, cfg: ExperimentConfig, ids: np.ndarray, epochs: int,
                    data_rng: np.random.Generator, play_rng: np.random.Generator,
                    phase: str = "sp") -> list[dict]:
    opt = nc.Adam(agent.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    curve = []
    for epoch in range(epochs):
        reports = []
        for step, batch in enumerate(iter_epoch(ids, cfg.batch, data_rng)):
            rep = self_play_step(agent, batch, cfg.beta, opt, play_rng, t_sim=cfg.t_sim)
            _check(rep, phase, epoch, step)
            reports.append(rep)
        curve.append(_epoch_summary(reports))
        log.info("%s epoch %d: %s", phase, epoch, curve[-1])
    return curve


def train_mutual(sender, receiver: Agent, cfg: ExperimentConfig, ids: np.ndarray, epochs: int,
                 data_rng: np.random.Generator, play_rng: np.random.Generator,
                 sender_update: str, receiver_update: str) -> list[dict]:
    lr = cfg.mutual_lr
    sender_opt = nc.Adam(sender.parameters(), lr=lr, weight_decay=cfg.weight_decay)
    receiver_opt = nc.Adam(receiver.parameters(), lr=lr, weight_decay=cfg.weight_decay)
    curve = []
    for epoch in range(epochs):
        reports = []
        for step, batch in enumerate(iter_epoch(ids, cfg.batch, data_rng)):
            rep = mutual_play_step(sender, receiver, batch, cfg.beta, sender_update, play_rng,
                                   sender_opt=sender_opt, receiver_opt=receiver_opt,
                                   receiver_update=receiver_update, temperature=cfg.tau_sample,
                                   t_sim=cfg.t_sim, rl_baseline=cfg.rl_baseline)
            _check(rep, "mp", epoch, step)
            reports.append(rep)
        curve.append(_epoch_summary(reports))
        log.info("mp epoch %d: %s", epoch, curve[-1])
    return curve


def phase_metrics(sender, receiver, cfg: ExperimentConfig, data: DatasetSplit,
                  seed: int) -> dict:
    acc, transcript = evaluate(sender, receiver, data.test, cfg.eval_batch)
    out = summarize(transcript, cfg.K, cfg.topsim_sample, seed=seed)
    out["valid_acc"], _ = evaluate(sender, receiver, data.valid, cfg.eval_batch)
    return out


class PhaseCache:
    """On-disk store of finished self-play phases, keyed by everything they depend on."""

    _KEYS = ("method", "metric", "K", "L", "d", "beta", "lr", "weight_decay", "t_sim",
             "epochs_self", "batch", "eval_batch", "split_seed", "ema_decay", "ema_eps",
             "expiry_threshold", "expiry_every", "expiry_warmup", "topsim_sample")

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def key(self, cfg: ExperimentConfig, role: str, seed: int) -> str:
        payload = {k: getattr(cfg, k) for k in self._KEYS}
        payload.update(role=role, seed=int(seed), version=CHECKPOINT_VERSION)
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:20]

    def get(self, key: str, agent: Agent):
        meta = self.root / f"{key}.json"
        weights = self.root / f"{key}.npz"
        if not (meta.exists() and weights.exists()):
            return None
        with np.load(weights) as z:
            agent.load_state_dict({k: z[k] for k in z.files})
        return json.loads(meta.read_text())

    def put(self, key: str, agent: Agent, info: dict) -> None:
        atomic_write_npz(self.root / f"{key}.npz", agent.state_dict())
        atomic_write_text(self.root / f"{key}.json", json.dumps(to_jsonable(info)))


def _self_play_phase(agent: Agent, cfg: ExperimentConfig, data: DatasetSplit, seed: int,
                     role: str, cache: PhaseCache | None) -> tuple[dict, list[dict]]:
    key = cache.key(cfg, role, seed) if cache else None
    if cache is not None:
        hit = cache.get(key, agent)
        if hit is not None:
            return hit["metrics"], hit["curve"]
    curve = train_self_play(agent, cfg, data.train, cfg.epochs_self,
                            stream(seed, f"data_sp_{role}"), stream(seed, f"play_sp_{role}"),
                            phase=f"sp_{role}")
    metrics = phase_metrics(agent, None, cfg, data, seed)
    if cache is not None:
        cache.put(key, agent, {"metrics": metrics, "curve": curve})
    return metrics, curve


@dataclass
class TrainedPair:
    sender: object
    receiver: Agent | None


def run_seed(cfg: ExperimentConfig, seed: int, cache: PhaseCache | None = None
             ) -> tuple[SeedResult, TrainedPair]:
    """The full phase schedule of ``cfg.variant`` for one seed."""
    data = split(cfg.split_seed)
    variant = Variant(cfg.variant)
    sender = make_sender(cfg, stream(seed, "init_sender"))
    receiver = make_agent(cfg, stream(seed, "init_receiver"))
    _configure_expiry(receiver, cfg)
    phases: dict[str, dict] = {}
    curves: dict[str, list[dict]] = {}

    if cfg.method == "VQEL":
        if variant.sender_self_play:
            phases["sp_sender"], curves["sp_sender"] = _self_play_phase(
                sender, cfg, data, seed, "sender", cache)
        if variant.receiver_self_play:
            phases["sp_receiver"], curves["sp_receiver"] = _self_play_phase(
                receiver, cfg, data, seed, "receiver", cache)
        mp_epochs = cfg.epochs_self + cfg.epochs_mutual if variant is Variant.MP_ONLY else cfg.epochs_mutual
    else:
        mp_epochs = cfg.epochs_baseline

    if variant.mutual_play:
        curves["mp"] = train_mutual(sender, receiver, cfg, data.train, mp_epochs,
                                    stream(seed, "data_mp"), stream(seed, "play_mp"),
                                    cfg.sender_update, cfg.receiver_update)
        phases["mp"] = phase_metrics(sender, receiver, cfg, data, seed)
        final = phases["mp"]
        pair = TrainedPair(sender, receiver)
    elif variant is Variant.SP_R:
        final = phases["sp_receiver"]
        pair = TrainedPair(receiver, None)
    else:
        final = phases["sp_sender"]
        pair = TrainedPair(sender, None)

    result = SeedResult(seed=int(seed), phases=phases, final=final, curves=curves,
                        sender_params=count_sender_parameters(sender))
    return result, pair


def run(cfg: ExperimentConfig, cache_dir: str | Path | None = None,
        checkpoint_dir: str | Path | None = None,
        keep_models: bool = False) -> RunResult | tuple[RunResult, list[TrainedPair]]:
    """Train and evaluate every seed of ``cfg``; deterministic given (config, seeds)."""
    start = time.perf_counter()
    cache = PhaseCache(cache_dir) if cache_dir else None
    per_seed, models = [], []
    for seed in cfg.seeds:
        res, pair = run_seed(cfg, seed, cache)
        per_seed.append(res)
        if checkpoint_dir is not None:
            save_checkpoint(Path(checkpoint_dir) / f"{cfg.fingerprint()}_seed{seed}.npz",
                            pair, cfg, seed)
        if keep_models:
            models.append(pair)
    result = RunResult(config=cfg.to_dict(), fingerprint=cfg.fingerprint(), per_seed=per_seed,
                       aggregate=aggregate(per_seed), wall_clock=time.perf_counter() - start)
    return (result, models) if keep_models else result


# ---------------------------------------------------------------------------
# sweeps and grids
# ---------------------------------------------------------------------------


def sweep_candidates(pair: TrainedPair, ids: np.ndarray, candidate_counts) -> list[tuple[int, float]]:
    """Test accuracy of one trained model at each number of candidates."""
    ids = np.asarray(ids)
    rows = []
    for b in candidate_counts:
        b = int(b)
        if b < 1 or b > ids.size:
            raise ParameterError(f"{b} candidates do not fit an evaluation set of {ids.size}")
        acc, _ = evaluate(pair.sender, pair.receiver, ids, b)
        rows.append((b, acc))
    return rows


def candidates_csv(rows: list[tuple[int, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["B", "ACC"])
    for b, acc in rows:
        w.writerow([b, f"{acc:.4f}"])
    return buf.getvalue()


def default_grid() -> dict[str, list[float]]:
    """Search ranges: ten log-uniform points for lr and sampling temperature, tau0 in 0.1 steps."""
    return {
        "lr": [float(v) for v in np.logspace(-6, -3, 10)],
        "tau_sample": [float(v) for v in np.logspace(-5, 0, 10)],
        "tau0": [round(0.1 * i, 1) for i in range(1, 16)],
    }


def grid_search(cfg: ExperimentConfig, grid: dict[str, list]) -> tuple[ExperimentConfig, list[dict]]:
    """Train every grid point and keep the one with the best mean validation accuracy."""
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ParameterError("grid must name at least one value per searched field")
    names = sorted(grid)
    table, best, best_acc = [], None, -np.inf
    for values in itertools.product(*(grid[n] for n in names)):
        point = cfg.replace(**dict(zip(names, values)))
        result = run(point)
        row = dict(zip(names, values))
        row["valid_acc"] = result.aggregate["valid_acc"]["mean"]
        row["test_acc"] = result.aggregate["acc"]["mean"]
        table.append(row)
        if row["valid_acc"] > best_acc:
            best, best_acc = point, row["valid_acc"]
    return best, table


# ---------------------------------------------------------------------------
# serialisation
# ---------------------------------------------------------------------------


def atomic_write_text(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_npz(path: Path, arrays: dict[str, np.ndarray]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".npz")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


SUMMARY_COLUMNS = ("method", "variant", "sender_update", "ACC_mean", "ACC_std", "AW", "TopSim", "HCM")


def _fmt(x) -> str:
    return "" if x is None else f"{x:.4f}"


def summary_csv(results: list[RunResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SUMMARY_COLUMNS)
    for r in results:
        agg = r.aggregate
        w.writerow([r.config["method"], r.config["variant"], r.config["sender_update"],
                    _fmt(agg["acc"]["mean"]), _fmt(agg["acc"]["std"]), _fmt(agg["aw"]["mean"]),
                    _fmt(agg["topsim"]["mean"]), _fmt(agg["hcm"]["mean"])])
    return buf.getvalue()


def export(results: list[RunResult], output_dir: str | Path) -> dict[str, Path]:
    """Write results.json and summary.csv under ``output_dir``."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = [r.to_dict() for r in results]
    paths = {"results": out / "results.json", "summary": out / "summary.csv"}
    atomic_write_text(paths["results"], json.dumps(payload, indent=2, sort_keys=True))
    atomic_write_text(paths["summary"], summary_csv(results))
    return paths


def load_results(path: str | Path) -> list[RunResult]:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return [RunResult.from_dict(r) for r in raw]


def save_checkpoint(path: str | Path, pair: TrainedPair, cfg: ExperimentConfig, seed: int,
                    rng_states: dict | None = None) -> Path:
    """Parameters, codebook EMA state and RNG state of a trained pair in one .npz file."""
    arrays = {f"sender/{k}": v for k, v in pair.sender.state_dict().items()}
    if pair.receiver is not None:
        arrays.update({f"receiver/{k}": v for k, v in pair.receiver.state_dict().items()})
    meta = {"version": CHECKPOINT_VERSION, "config": cfg.to_dict(), "seed": int(seed),
            "sender_method": getattr(pair.sender, "method", "VQEL"),
            "has_receiver": pair.receiver is not None, "rng_states": rng_states or {}}
    arrays["meta"] = np.array(json.dumps(to_jsonable(meta)))
    atomic_write_npz(Path(path), arrays)
    return Path(path)


def load_checkpoint(path: str | Path) -> tuple[TrainedPair, ExperimentConfig, dict]:
    with np.load(path) as z:
        meta = json.loads(str(z["meta"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ParameterError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = ExperimentConfig.from_dict(meta["config"])
        rng = np.random.default_rng(0)
        sender = make_sender(cfg, rng)
        sender.load_state_dict({k[7:]: z[k] for k in z.files if k.startswith("sender/")})
        receiver = None
        if meta["has_receiver"]:
            receiver = make_agent(cfg, rng)
            receiver.load_state_dict({k[9:]: z[k] for k in z.files if k.startswith("receiver/")})
    return TrainedPair(sender, receiver), cfg, meta
