"""Experiment loop: single training runs and rank sweeps."""

from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from basis import seeding
from basis.data import BatchSpec, CharCorpus, sample_lm_batch
from basis.diagnostics import MemoryReport, memory_audit
from basis.models import MLP, NumericError, TinyTransformer
from basis.optim import MomentumState, sgd_momentum_step
from basis.sketch import DEFAULT_EPSILON

log = logging.getLogger(__name__)

CSV_HEADER = ("step", "train_loss", "val_loss", "rank", "mode")
FULL_SCALE_STEPS = 50_000
# Logit rows per evaluation chunk; bounds memory for very wide heads.
_EVAL_CHUNK_ELEMS = 1 << 22


@dataclass(frozen=True)
class TrainConfig:
    model: str = "transformer"
    d_model: int = 64
    n_heads: int = 2
    n_layers: int = 2
    vocab_size: int = 0  # 0: use the corpus vocabulary
    seq_len: int = 64
    batch_size: int = 1
    mode: str = "exact"
    rank: int = 64
    lam: float = 0.0
    epsilon: float = DEFAULT_EPSILON
    lr: float = 0.01
    momentum: float = 0.9
    steps: int = 5000
    eval_interval: int = 50
    eval_batches: int = 32
    seed: int = 0
    layer_modes: dict = field(default_factory=dict)

    def __post_init__(self):
        problems = []
        if self.model not in ("transformer", "mlp"):
            problems.append(f"model must be 'transformer' or 'mlp', got {self.model!r}")
        if self.mode not in ("exact", "basis"):
            problems.append(f"mode must be 'exact' or 'basis', got {self.mode!r}")
        for name in ("d_model", "n_heads", "n_layers", "seq_len", "batch_size", "eval_interval", "eval_batches", "rank"):
            if getattr(self, name) < 1:
                problems.append(f"{name} must be positive")
        if self.steps < 0 or self.vocab_size < 0:
            problems.append("steps and vocab_size must be non-negative")
        if self.model == "transformer" and self.d_model % self.n_heads:
            problems.append(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if not 0.0 <= self.lam < 1.0:
            problems.append(f"lam must lie in [0, 1), got {self.lam}")
        if not self.epsilon > 0 or not self.lr > 0 or not 0.0 <= self.momentum < 1.0:
            problems.append("epsilon and lr must be positive and momentum in [0, 1)")
        for pattern, m in self.layer_modes.items():
            if m not in ("exact", "basis"):
                problems.append(f"layer mode for {pattern!r} must be 'exact' or 'basis', got {m!r}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def tokens_per_batch(self) -> int:
        return self.batch_size * self.seq_len

    @property
    def label(self) -> str:
        return "exact" if self.mode == "exact" else f"basis R={self.rank}"


@dataclass(frozen=True)
class EvalRecord:
    step: int
    train_loss: float
    val_loss: float


@dataclass
class RunReport:
    config: TrainConfig
    records: list
    memory: MemoryReport
    corpus_digest: str
    wall_time: float = 0.0

    @property
    def final(self) -> EvalRecord:
        return self.records[-1]

    def csv_rows(self):
        rank = self.config.rank if self.config.mode == "basis" else "NA"
        for r in self.records:
            yield (r.step, repr(r.train_loss), repr(r.val_loss), rank, self.config.mode)

    def to_csv(self) -> str:
        return rows_to_csv(self.csv_rows())

    def render(self, include_time: bool = True) -> str:
        c = self.config
        lines = ["run report", "==========", "", "config:"]
        for key, value in asdict(c).items():
            lines.append(f"  {key} = {value}")
        lines += [
            "",
            f"corpus sha256: {self.corpus_digest}",
            f"validation: mean loss over {c.eval_batches} fixed seeded batches "
            f"of {c.batch_size}x{c.seq_len} tokens from the held-out split; "
            "train loss uses the same protocol on the training split",
            "",
            f"{'step':>8} {'train_loss':>12} {'val_loss':>12}",
        ]
        lines += [f"{r.step:>8} {r.train_loss:>12.6f} {r.val_loss:>12.6f}" for r in self.records]
        lines += [
            "",
            f"final train loss: {self.final.train_loss:.6f}",
            f"final val loss:   {self.final.val_loss:.6f}",
            "",
            self.memory.render(),
        ]
        if include_time:
            lines += ["", f"wall time: {self.wall_time:.1f} s"]
        return "\n".join(lines) + "\n"


def rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(rows)
    return buf.getvalue()


def build_model(config: TrainConfig, vocab_size: int):
    if config.model == "transformer":
        model = TinyTransformer(vocab_size, config.d_model, config.n_heads, config.n_layers,
                                config.seq_len, seed=config.seed)
    else:
        dims = [config.d_model] + [4 * config.d_model] * config.n_layers + [vocab_size]
        model = MLP(dims, activation="gelu", loss="ce", vocab_size=vocab_size, seed=config.seed)
    return model.configure(config.mode, config.rank, config.lam, config.epsilon, config.layer_modes)


def resolve_vocab(config: TrainConfig, corpus: CharCorpus) -> int:
    if config.vocab_size == 0:
        return corpus.vocab_size
    if config.vocab_size < corpus.vocab_size:
        raise ValueError(f"vocab_size {config.vocab_size} is smaller than the corpus vocabulary {corpus.vocab_size}")
    return config.vocab_size


def _eval_set(ids, config: TrainConfig, key: int):
    spec = BatchSpec(config.eval_batches * config.batch_size, config.seq_len, config.seed)
    return sample_lm_batch(ids, spec, key, stream=seeding.VALIDATION)


def mean_loss(model, inputs, targets, vocab_size: int) -> float:
    rows_per_seq = inputs.shape[1]
    chunk = max(1, _EVAL_CHUNK_ELEMS // (rows_per_seq * vocab_size))
    total = 0.0
    for i in range(0, len(inputs), chunk):
        x, y = inputs[i : i + chunk], targets[i : i + chunk]
        total += model.loss(x, y) * len(x)
    return total / len(inputs)


def run_training(config: TrainConfig, corpus: CharCorpus, progress=None) -> RunReport:
    """Train one model and evaluate it every ``eval_interval`` steps (and at the end).

    Data batches depend only on ``(seed, step)``; sketch plans come from a
    separate stream keyed by ``(seed, step, layer)``, so exact and sketched
    runs see the same data.
    """
    start = time.perf_counter()
    vocab = resolve_vocab(config, corpus)
    model = build_model(config, vocab)
    state = MomentumState(config.lr, config.momentum)
    spec = BatchSpec(config.batch_size, config.seq_len, config.seed)
    train_eval = _eval_set(corpus.train, config, 1)
    val_eval = _eval_set(corpus.val, config, 0)

    def evaluate(step):
        rec = EvalRecord(step, mean_loss(model, *train_eval, vocab), mean_loss(model, *val_eval, vocab))
        if not (np.isfinite(rec.train_loss) and np.isfinite(rec.val_loss)):
            layer = model.locate_nonfinite(val_eval[0])
            raise NumericError(f"non-finite evaluation loss at step {step} (layer {layer})", layer, step)
        if progress:
            progress(config, rec)
        return rec

    records = [evaluate(0)]
    for step in range(config.steps):
        inputs, targets = sample_lm_batch(corpus.train, spec, step)
        tape = model.forward(inputs, targets, seeding.derive(config.seed, seeding.PLANS, step))
        if not np.isfinite(tape.loss):
            layer = model.locate_nonfinite(inputs)
            raise NumericError(f"non-finite training loss at step {step} (layer {layer})", layer, step)
        grads = model.backward(tape)
        try:
            sgd_momentum_step(model.params, grads, state)
        except FloatingPointError as err:
            raise NumericError(f"step {step}: {err}", step=step) from err
        done = step + 1
        if done % config.eval_interval == 0 or done == config.steps:
            records.append(evaluate(done))

    memory = memory_audit(model, (config.batch_size, config.seq_len), seed=config.seed)
    return RunReport(config, records, memory, corpus.digest, time.perf_counter() - start)


def _run_one(args):
    config, corpus = args
    return run_training(config, corpus)


@dataclass
class SweepResult:
    reports: list

    def to_csv(self) -> str:
        return rows_to_csv(row for r in self.reports for row in r.csv_rows())

    def table(self) -> str:
        header = ("Method", "Rank (R)", "Seq. Memory Compression", "Final Train Loss", "Final Val Loss")
        rows = []
        for r in self.reports:
            c = r.config
            if c.mode == "exact":
                rows.append(("Exact Backpropagation", "N/A", "1x (None)"))
            else:
                r_safe = min(c.rank, c.tokens_per_batch)
                ratio = c.tokens_per_batch / r_safe
                rows.append(("BASIS", str(c.rank), f"{ratio:g}x"))
            rows[-1] += (f"{r.final.train_loss:.3f}", f"{r.final.val_loss:.3f}")
        widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
        fmt = "  ".join(f"{{:<{w}}}" for w in widths)
        lines = [fmt.format(*header), "  ".join("-" * w for w in widths)]
        lines += [fmt.format(*row) for row in rows]
        return "\n".join(lines) + "\n"


def run_rank_sweep(base: TrainConfig, ranks, corpus: CharCorpus, jobs: int = 1) -> SweepResult:
    """Exact baseline first, then one sketched run per rank, all on the same seeds."""
    ranks = list(ranks)
    if not ranks:
        raise ValueError("rank sweep needs at least one rank")
    configs = [replace(base, mode="exact")] + [replace(base, mode="basis", rank=int(r)) for r in ranks]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_one, [(c, corpus) for c in configs]))
    else:
        reports = [run_training(c, corpus) for c in configs]
    return SweepResult(reports)


def moving_average(records, window_steps: int):
    """Trailing mean of val loss over evals within ``window_steps`` steps of each eval."""
    steps = np.array([r.step for r in records])
    vals = np.array([r.val_loss for r in records])
    out = []
    for i, s in enumerate(steps):
        sel = (steps > s - window_steps) & (steps <= s)
        out.append((int(s), float(vals[sel].mean())))
    return out


def fit_linear_task(task, mode="exact", rank=1, lr=0.1, momentum=0.9, steps=1000, seed=0):
    """Fit a bias-free linear layer to ``task`` by full-batch SGD; returns the loss per step."""
    n, m = task.w_true.shape
    model = MLP([n, m], loss="mse", seed=seed, bias=False).configure(mode, rank)
    model.params["fc0.weight"][...] = 0.0
    state = MomentumState(lr, momentum)
    losses = []
    for step in range(steps):
        tape = model.forward(task.x, task.y, seeding.derive(seed, seeding.PLANS, step))
        losses.append(tape.loss)
        sgd_momentum_step(model.params, model.backward(tape), state)
    return np.array(losses)
