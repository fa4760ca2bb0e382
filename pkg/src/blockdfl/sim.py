"""Round-loop simulator, FedAvg baseline, metrics, export and chain replay.

Each round runs role selection, local training, aggregation and
verification/consensus in lockstep over a reliable instant broadcast. Every
participant keeps its own chain replica and model; both are checked for
agreement after every block.

Seed splitting
--------------
Every stochastic choice draws from ``child_seed(master, round, participant, tag)``,
the first 8 bytes (big-endian) of
``SHA-256(master:8 | round:8 | participant:8 | tag:utf-8)`` with all integers
signed big-endian. Setup draws use ``round = -1``; draws not tied to a
participant use ``participant = -1``.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .adversary import AdversaryConfig, assign_malicious, malicious_aggregate, poison_dataset
from .aggregation import AggregatorConfig, InsufficientUpdates, LocalUpdateMsg, run_aggregator
from .chain import (DEFAULT_INITIAL_STAKE, DEFAULT_STAKE_INCREMENT, Block, Chain, ChainParams,
                    HmacSigner, StakeLedger, hash_block, read_chain_log, write_chain_log)
from .compression import (MNIST_SCHEDULE, SparseUpdate, accumulate, sparsity_for_round,
                          stepped_schedule, top_k_sparsify)
from .consensus import build_block, run_consensus
from .learner import (Dataset, LearnerConfig, TrainingDiverged, apply_update, compute_update,
                      eval_subset, evaluate, init_model, load_csv, load_idx, local_train,
                      make_synthetic_dataset, partition, sample_subset, split_holdout)

log = logging.getLogger(__name__)

PROCESSES = ("role_selection", "local_training", "aggregation", "verification")
TIMING_COLUMNS = (*PROCESSES, "round_total", *(f"{p}_critical" for p in PROCESSES))
CSV_COLUMNS = ("round", "accuracy", "empty_block", "poisoned_block", "malicious_stake_share",
               "aggregator_id", "n_local_updates", "n_candidates", "candidates_examined",
               "suppressed")


class ConfigError(ValueError):
    pass


class ForkDetected(RuntimeError):
    pass


def child_seed(master: int, round_idx: int, participant: int, tag: str) -> int:
    raw = struct.pack(">qqq", master, round_idx, participant) + tag.encode()
    return int.from_bytes(hashlib.sha256(raw).digest()[:8], "big")


# ----------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DataConfig:
    source: str = "synthetic"  # synthetic | idx | csv
    classes: int = 10
    per_class: int = 500
    dim: int = 20
    spread: float = 1.0
    separation: float = 1.0
    images: str | None = None
    labels: str | None = None
    path: str | None = None
    test_fraction: float = 0.2


@dataclass(frozen=True)
class SimConfig:
    n_participants: int = 50
    n_aggregators: int = 8
    n_verifiers: int = 7
    c: int = 5
    rounds: int = 200
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    sparsity_schedule: tuple[tuple[int, float], ...] | None = MNIST_SCHEDULE
    initial_stake: int = DEFAULT_INITIAL_STAKE
    stake_increment: int = DEFAULT_STAKE_INCREMENT
    eval_fraction: float = 0.2
    eval_size: int | None = None
    resample_eval_subset: bool = False
    persist_residuals: bool = True
    min_local_updates: int | None = None
    krum_f: float = 0.0
    adversary: AdversaryConfig = field(default_factory=AdversaryConfig)
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    eval_every: int = 1

    def validate(self) -> None:
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.n_aggregators < 4:
            # with three distinct candidates the two mutually nearest always tie,
            # so no candidate is strictly better than two others
            raise ConfigError("need at least 4 aggregators; fewer can never approve an update")
        if self.n_verifiers < 1:
            raise ConfigError("need at least one verifier")
        if self.n_aggregators + self.n_verifiers >= self.n_participants:
            raise ConfigError("n_aggregators + n_verifiers must be below n_participants")
        if self.c < 1:
            raise ConfigError("c must be >= 1")
        required = 3 * self.c if self.min_local_updates is None else self.min_local_updates
        providers = self.n_participants - self.n_aggregators - self.n_verifiers
        if providers < max(required, 3 * self.c):
            raise ConfigError(f"{providers} update providers cannot supply {required} updates")
        if self.initial_stake < 1 or self.stake_increment < 0:
            raise ConfigError("initial_stake must be >= 1 and stake_increment >= 0")
        if not 0 < self.eval_fraction <= 1:
            raise ConfigError("eval_fraction must lie in (0, 1]")
        if not 0 <= self.krum_f < 1:
            raise ConfigError("krum_f must lie in [0, 1)")
        adv = self.adversary
        if self.data.source == "synthetic" and adv.malicious_fraction > 0 and any(
                not (0 <= a < self.data.classes and 0 <= b < self.data.classes)
                for a, b in adv.flip_pairs):
            raise ConfigError(f"flip pairs must name classes below {self.data.classes}")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        if self.sparsity_schedule is not None:
            if not self.sparsity_schedule:
                raise ConfigError("sparsity_schedule must be non-empty or null")
            starts = [s for s, _ in self.sparsity_schedule]
            if starts != sorted(starts):
                raise ConfigError("sparsity_schedule must be sorted by start round")
            if any(not 0 <= s < 1 for _, s in self.sparsity_schedule):
                raise ConfigError("sparsities must lie in [0, 1)")

    def replace(self, **changes) -> SimConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["learner"]["model_kind"] = self.learner.model_kind.value
        if self.sparsity_schedule is not None:
            d["sparsity_schedule"] = [list(x) for x in self.sparsity_schedule]
        d["adversary"]["flip_pairs"] = [list(x) for x in self.adversary.flip_pairs]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SimConfig:
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            if "learner" in d:
                d["learner"] = LearnerConfig(**d["learner"])
            if "adversary" in d:
                d["adversary"] = AdversaryConfig(**d["adversary"])
            if "data" in d:
                d["data"] = DataConfig(**d["data"])
            if d.get("sparsity_schedule") is not None:
                d["sparsity_schedule"] = tuple((int(a), float(b)) for a, b in d["sparsity_schedule"])
            return cls(**d)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc


def desk_config(**changes) -> SimConfig:
    """Laptop-scale setting: 30 participants, 6 aggregators, 7 verifiers, c = 3, 60 rounds.

    Softmax regression on 10-class Gaussian blobs (about 530 training samples
    per participant) with the MNIST sparsity levels compressed to 15-round
    steps so that the four levels span the run as they do over 200 rounds.
    """
    base = SimConfig(
        n_participants=30, n_aggregators=6, n_verifiers=7, c=3, rounds=60,
        learner=LearnerConfig(learning_rate=0.1, decay=0.99, batch_size=64, local_epochs=5),
        sparsity_schedule=stepped_schedule((0.90, 0.925, 0.95, 0.975), 15),
        data=DataConfig(classes=10, per_class=2000, dim=20, spread=1.0),
    )
    return base.replace(**changes)


PRESETS = {"full": SimConfig, "desk": desk_config}


def read_config_dict(path) -> dict:
    """Raw mapping from a JSON or TOML file (by suffix). TOML writes ``sparsity_schedule = false`` for none."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            raw = tomllib.loads(text)
            if raw.get("sparsity_schedule") is False:
                raw["sparsity_schedule"] = None
        else:
            raw = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a table/object")
    return raw


def merge_config(base: SimConfig, overrides: dict) -> SimConfig:
    """Apply a (possibly partial) nested mapping on top of ``base``."""
    merged = base.to_dict()
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return SimConfig.from_dict(merged)


def load_config(path, base: SimConfig | None = None) -> SimConfig:
    return merge_config(base or SimConfig(), read_config_dict(path))


# ----------------------------------------------------------------------------
# metrics


@dataclass
class RoundMetrics:
    round: int
    accuracy: float | None
    empty_block: bool
    poisoned_block: bool
    malicious_stake_share: float | None
    aggregator_id: int = -1
    n_local_updates: int = 0
    n_candidates: int = 0
    candidates_examined: int = 0
    suppressed: bool = False
    timings: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.poisoned_block and self.empty_block:
            raise ValueError("an empty block cannot be poisoned")


@dataclass
class MetricsLog:
    config: dict
    rounds: list[RoundMetrics] = field(default_factory=list)
    kind: str = "blockdfl"
    artifacts: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def summary(self) -> dict:
        return summarize(self)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "config": self.config,
                "rounds": [dataclasses.asdict(r) for r in self.rounds],
                "summary": self.summary}

    @classmethod
    def from_dict(cls, d: dict) -> MetricsLog:
        return cls(d["config"], [RoundMetrics(**r) for r in d["rounds"]], d.get("kind", "blockdfl"))


def summary_window(n_rounds: int) -> int:
    return math.ceil(0.2 * n_rounds - 1e-12)


def summarize(log: MetricsLog) -> dict:
    """Last-20%-rounds accuracy (mean, std), attack ratio; empty-block share overall."""
    if not log.rounds:
        raise ValueError("empty metrics log")
    window = log.rounds[-summary_window(len(log.rounds)):]
    acc = np.array([r.accuracy for r in window if r.accuracy is not None], dtype=float)
    non_empty = [r for r in window if not r.empty_block]
    poisoned = sum(r.poisoned_block for r in non_empty)
    return {
        "window": len(window),
        "mean_accuracy": float(acc.mean()) if acc.size else None,
        "std_accuracy": float(acc.std()) if acc.size else None,
        "attack_ratio": poisoned / len(non_empty) if non_empty else 0.0,
        "attack_ratio_defined": bool(non_empty),
        "empty_block_pct": 100.0 * sum(r.empty_block for r in log.rounds) / len(log.rounds),
        "final_malicious_stake_share": log.rounds[-1].malicious_stake_share,
    }


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return str(int(v))
    return repr(v) if isinstance(v, float) else str(v)


def metrics_csv(log: MetricsLog) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in log.rounds:
        w.writerow([_csv_cell(getattr(r, c)) for c in CSV_COLUMNS])
    return buf.getvalue()


def read_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def export(log: MetricsLog, out_dir, formats=("csv", "json")) -> list[Path]:
    """Write ``metrics.csv`` (deterministic columns), ``metrics.json`` and ``timings.csv``."""
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            p = out / "metrics.csv"
            p.write_text(metrics_csv(log))
            written.append(p)
            p = out / "timings.csv"
            with open(p, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(("round", *TIMING_COLUMNS))
                for r in log.rounds:
                    w.writerow([r.round] + [r.timings.get(k, "") for k in TIMING_COLUMNS])
            written.append(p)
        if "json" in formats:
            p = out / "metrics.json"
            p.write_text(json.dumps(log.to_dict(), indent=1))
            written.append(p)
    except OSError as exc:
        raise OSError(f"exporting metrics to {out}: {exc}") from exc
    return written


def load_metrics_json(path) -> MetricsLog:
    return MetricsLog.from_dict(json.loads(Path(path).read_text()))


# ----------------------------------------------------------------------------
# setup shared by the simulator and the baseline


def load_source(cfg: SimConfig) -> Dataset:
    d = cfg.data
    if d.source == "synthetic":
        return make_synthetic_dataset(child_seed(cfg.seed, -1, -1, "data"), d.classes,
                                      d.per_class, d.dim, d.spread, d.separation)
    if d.source == "idx":
        return load_idx(d.images, d.labels, classes=d.classes)
    if d.source == "csv":
        return load_csv(d.path, classes=d.classes)
    raise ConfigError(f"unknown data source {d.source!r}")


@dataclass
class Participant:
    pid: int
    train: Dataset
    train_used: Dataset
    eval_subset: Dataset
    model: np.ndarray
    residual: np.ndarray
    malicious: bool
    chain: Chain | None = None


@dataclass
class Setup:
    train: Dataset
    test: Dataset
    participants: list[Participant]
    malicious: frozenset[int]
    initial_model: np.ndarray
    signer: HmacSigner


def _eval_set(cfg: SimConfig, data: Dataset, seed: int) -> Dataset:
    if cfg.eval_size is not None:
        return sample_subset(data, min(cfg.eval_size, len(data)), seed)
    return eval_subset(data, cfg.eval_fraction, seed)


def build_setup(cfg: SimConfig) -> Setup:
    source = load_source(cfg)
    train, test = split_holdout(source, cfg.data.test_fraction,
                                child_seed(cfg.seed, -1, -1, "holdout"))
    n = cfg.n_participants
    parts = partition(train, n, child_seed(cfg.seed, -1, -1, "partition"))
    adv = cfg.adversary
    malicious = assign_malicious(n, adv.malicious_fraction, child_seed(cfg.seed, -1, -1, "malicious"))
    lc = cfg.learner
    w0 = init_model(child_seed(cfg.seed, -1, -1, "init"), train.dim, train.classes,
                    lc.model_kind, lc.hidden)
    signer = HmacSigner(n, cfg.seed)
    people = []
    for pid, part in enumerate(parts):
        bad = pid in malicious
        used = poison_dataset(part, adv.flip_pairs) if bad and adv.poison_providers else part
        people.append(Participant(pid, part, used,
                                  _eval_set(cfg, part, child_seed(cfg.seed, -1, pid, "eval")),
                                  w0.copy(), np.zeros_like(w0), bad))
    return Setup(train, test, people, malicious, w0, signer)


def initial_model(cfg: SimConfig) -> np.ndarray:
    source = load_source(cfg)
    lc = cfg.learner
    return init_model(child_seed(cfg.seed, -1, -1, "init"), source.dim, source.classes,
                      lc.model_kind, lc.hidden)


def _evaluate_round(cfg, t, w, test):
    if t % cfg.eval_every == 0 or t == cfg.rounds - 1:
        return evaluate(w, test)
    return None


def _timings(sequential, total, parallel) -> dict:
    """Per-process seconds as simulated (one after another) and as critical path.

    The critical path assumes every provider, aggregator and replica works
    concurrently: the slowest provider, the slowest aggregator, and consensus
    plus the slowest replica's block validation.
    """
    out = dict(zip(PROCESSES, sequential))
    out["round_total"] = total
    out.update({f"{k}_critical": v for k, v in zip(PROCESSES, parallel)})
    return out


# ----------------------------------------------------------------------------
# BlockDFL


def run_simulation(cfg: SimConfig, progress=None) -> MetricsLog:
    """Run ``cfg.rounds`` rounds; returns the metrics with run artifacts attached.

    ``log.artifacts`` holds ``blocks`` (the agreed chain), ``initial_model``,
    ``models`` (every participant's final model), ``malicious`` and
    ``stake_history`` (malicious share after every round).
    """
    cfg.validate()
    st = build_setup(cfg)
    signer = st.signer
    people = st.participants
    adv = cfg.adversary
    params = ChainParams(cfg.n_aggregators, cfg.n_verifiers, cfg.stake_increment)
    for p in people:
        p.chain = Chain(params, signer, StakeLedger.uniform(cfg.n_participants, cfg.initial_stake))
    agg_cfg = AggregatorConfig(cfg.c, cfg.min_local_updates)
    bad_voters = st.malicious if adv.contrarian_verifiers else frozenset()
    mlog = MetricsLog(cfg.to_dict(), kind="blockdfl")
    ref = people[0]

    for t in range(cfg.rounds):
        t0 = time.perf_counter()
        # role selection
        assignment = ref.chain.roles()
        tip = ref.chain.tip_hash
        t1 = time.perf_counter()

        # local training, sparsification, signed broadcast
        inbox = []
        slowest = {k: 0.0 for k in PROCESSES[1:]}
        s = None if cfg.sparsity_schedule is None else sparsity_for_round(t, cfg.sparsity_schedule)
        for pid in assignment.providers:
            start = time.perf_counter()
            p = people[pid]
            try:
                w_new = local_train(p.model, p.train_used, cfg.learner, t,
                                    child_seed(cfg.seed, t, pid, "train"))
            except TrainingDiverged as exc:
                log.warning("round %d provider %d sends nothing: %s", t, pid, exc)
                continue
            d = compute_update(w_new, p.model)
            if s is None:
                sparse = SparseUpdate.from_dense(d)
            else:
                sparse, p.residual = top_k_sparsify(accumulate(p.residual, d), s)
            inbox.append(LocalUpdateMsg(pid, t, sparse).signed(signer))
            slowest["local_training"] = max(slowest["local_training"],
                                            time.perf_counter() - start)
        if not cfg.persist_residuals:
            providers = set(assignment.providers)
            for p in people:
                if p.pid not in providers:
                    p.residual[:] = 0.0
        t2 = time.perf_counter()

        # aggregation
        candidates = []
        for aid in assignment.aggregators:
            start = time.perf_counter()
            a = people[aid]
            subset = a.eval_subset
            if cfg.resample_eval_subset:
                subset = _eval_set(cfg, a.train, child_seed(cfg.seed, t, aid, "eval"))
            seed = child_seed(cfg.seed, t, aid, "aggregate")
            try:
                if a.malicious and adv.poison_aggregators:
                    cand = malicious_aggregate(inbox, cfg.c, a.model, subset, seed,
                                               aggregator_id=aid, round_idx=t, signer=signer,
                                               cfg=agg_cfg)
                else:
                    cand = run_aggregator(inbox, a.model, a.chain.ledger, agg_cfg, seed,
                                          aggregator_id=aid, round_idx=t, subset=subset,
                                          signer=signer)
            except InsufficientUpdates as exc:
                log.warning("round %d aggregator %d produced no candidate: %s", t, aid, exc)
                continue
            finally:
                slowest["aggregation"] = max(slowest["aggregation"], time.perf_counter() - start)
            candidates.append(cand)
        t3 = time.perf_counter()

        # verification and consensus
        leader = assignment.leader
        outcome = run_consensus(
            t, candidates, assignment.verifiers, cfg.krum_f, signer, malicious=bad_voters,
            malicious_leader=leader in st.malicious and adv.obstructive_leader)
        block = build_block(t, tip, outcome, leader, cfg.stake_increment, signer)
        consensus_time = time.perf_counter() - t3
        replica_time = 0.0
        for p in people:
            start = time.perf_counter()
            p.chain.append(block)
            if block.payload is not None:
                p.model = apply_update(p.model, block.payload.global_update)
            replica_time = max(replica_time, time.perf_counter() - start)
        slowest["verification"] = consensus_time + replica_time
        if len({p.chain.tip_hash for p in people}) != 1:
            raise ForkDetected(f"round {t}: replicas disagree on the tip")
        if any(not np.array_equal(p.model, ref.model) for p in people):
            raise ForkDetected(f"round {t}: participant models diverged")
        t4 = time.perf_counter()

        poisoned = block.payload is not None and bool(
            set(block.payload.provider_ids) & st.malicious)
        accuracy = _evaluate_round(cfg, t, ref.model, st.test)
        t5 = time.perf_counter()
        mlog.rounds.append(RoundMetrics(
            round=t,
            accuracy=accuracy,
            empty_block=block.payload is None,
            poisoned_block=poisoned,
            malicious_stake_share=ref.chain.ledger.share(st.malicious),
            aggregator_id=-1 if block.payload is None else block.payload.aggregator_id,
            n_local_updates=len(inbox),
            n_candidates=len(candidates),
            candidates_examined=outcome.candidates_examined,
            suppressed=outcome.suppressed,
            timings=_timings((t1 - t0, t2 - t1, t3 - t2, t4 - t3), t5 - t0,
                             (t1 - t0, *slowest.values())),
        ))
        if progress is not None:
            progress(mlog.rounds[-1])

    mlog.artifacts = {
        "blocks": list(ref.chain.blocks),
        "initial_model": st.initial_model,
        "models": {p.pid: p.model for p in people},
        "malicious": st.malicious,
        "ledger": ref.chain.ledger.as_dict(),
    }
    return mlog


# ----------------------------------------------------------------------------
# centralized FedAvg baseline


def run_fedavg_baseline(cfg: SimConfig, progress=None) -> MetricsLog:
    """Trusted server averaging every participant's dense update each round."""
    st = build_setup(cfg)
    w = st.initial_model.copy()
    mlog = MetricsLog(cfg.to_dict(), kind="fedavg")
    share = len(st.malicious) / cfg.n_participants
    for t in range(cfg.rounds):
        t0 = time.perf_counter()
        updates, slowest = [], 0.0
        for p in st.participants:
            start = time.perf_counter()
            try:
                w_new = local_train(w, p.train_used, cfg.learner, t,
                                    child_seed(cfg.seed, t, p.pid, "train"))
            except TrainingDiverged as exc:
                log.warning("round %d participant %d left out: %s", t, p.pid, exc)
                continue
            updates.append(compute_update(w_new, w))
            slowest = max(slowest, time.perf_counter() - start)
        t1 = time.perf_counter()
        if updates:
            w = apply_update(w, np.mean(np.stack(updates), axis=0))
        t2 = time.perf_counter()
        accuracy = _evaluate_round(cfg, t, w, st.test)
        t3 = time.perf_counter()
        mlog.rounds.append(RoundMetrics(
            round=t, accuracy=accuracy, empty_block=False,
            poisoned_block=bool(st.malicious), malicious_stake_share=share,
            n_local_updates=len(updates), n_candidates=1, candidates_examined=1,
            timings=_timings((0.0, t1 - t0, t2 - t1, 0.0), t3 - t0,
                             (0.0, slowest, t2 - t1, 0.0))))
        if progress is not None:
            progress(mlog.rounds[-1])
    mlog.artifacts = {"initial_model": st.initial_model, "final_model": w,
                      "malicious": st.malicious}
    return mlog


# ----------------------------------------------------------------------------
# replay


def replay_chain(blocks, initial: np.ndarray, cfg: SimConfig) -> np.ndarray:
    """Re-validate ``blocks`` from genesis and fold their approved updates onto ``initial``.

    Uses only the chain and the public protocol parameters (stake settings,
    role counts, signer registry seed).
    """
    blocks = list(blocks)
    if not blocks or blocks[0] != Block(round=-1, prev_hash=bytes(32)):
        raise ValueError("chain must start at the genesis block")
    chain = Chain(ChainParams(cfg.n_aggregators, cfg.n_verifiers, cfg.stake_increment),
                  HmacSigner(cfg.n_participants, cfg.seed),
                  StakeLedger.uniform(cfg.n_participants, cfg.initial_stake))
    w = np.array(initial, dtype=np.float64, copy=True)
    for b in blocks[1:]:
        chain.append(b)
        if b.payload is not None:
            w = w + b.payload.global_update
    return w


def write_run(mlog: MetricsLog, out_dir) -> list[Path]:
    """Export metrics plus, for BlockDFL runs, ``chain.bin``, ``chain.json`` and ``final_model.npy``."""
    from .chain import dump_chain_json

    out = Path(out_dir)
    written = export(mlog, out)
    (out / "config.json").write_text(json.dumps(mlog.config, indent=1))
    written.append(out / "config.json")
    if "blocks" in mlog.artifacts:
        write_chain_log(mlog.artifacts["blocks"], out / "chain.bin")
        dump_chain_json(mlog.artifacts["blocks"], out / "chain.json")
        written += [out / "chain.bin", out / "chain.json"]
    final = mlog.artifacts.get("final_model")
    if final is None and "models" in mlog.artifacts:
        final = mlog.artifacts["models"][0]
    if final is not None:
        np.save(out / "final_model.npy", final)
        written.append(out / "final_model.npy")
    return written


def replay_dir(out_dir) -> tuple[np.ndarray, bool | None]:
    """Replay ``out_dir/chain.bin``; compare with ``final_model.npy`` when present."""
    out = Path(out_dir)
    cfg = SimConfig.from_dict(json.loads((out / "config.json").read_text()))
    w = replay_chain(read_chain_log(out / "chain.bin"), initial_model(cfg), cfg)
    saved = out / "final_model.npy"
    match = bool(np.array_equal(np.load(saved), w)) if saved.exists() else None
    return w, match


def tip_hash(blocks) -> bytes:
    return hash_block(list(blocks)[-1])
