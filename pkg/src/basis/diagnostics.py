"""Monte Carlo and accounting checks for the sketched estimator.

Every routine is deterministic given its seed; trial ``t`` always uses the
seed ``derive(seed, t)`` so results do not depend on evaluation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from basis import seeding
from basis.layers.dense import BasisCache
from basis.models import MLP, TinyTransformer
from basis.sketch import DEFAULT_EPSILON, apply_sketch, build_plan, invariant_scale
from basis.tensor import frobenius_norm, matmul, transpose


@dataclass(frozen=True)
class EstimatorStats:
    mean_abs_bias: float
    per_entry_variance: float
    trials: int
    hashing_mode: str
    scaling_mode: str = "raw"


@dataclass(frozen=True)
class StsEstimate:
    mean: np.ndarray
    trials: int
    diagonal_always_one: bool

    @property
    def max_off_diagonal(self) -> float:
        off = self.mean - np.diag(np.diag(self.mean))
        return float(np.abs(off).max()) if off.size > 1 else 0.0


def sketch_matrix(plan) -> np.ndarray:
    """``S`` recovered by sketching the identity."""
    return apply_sketch(np.eye(plan.batch_card), plan)


def estimate_sts_mean(batch_card: int, rank: int, trials: int, seed: int = 0) -> StsEstimate:
    if trials < 1:
        raise ValueError("trials must be at least 1")
    total = np.zeros((batch_card, batch_card))
    diag_ok = True
    for t in range(trials):
        S = sketch_matrix(build_plan(batch_card, rank, seeding.derive(seed, seeding.TRIALS, t)))
        P = matmul(transpose(S), S)
        diag_ok &= bool(np.all(np.diag(P) == 1.0))
        total += P
    return StsEstimate(total / trials, trials, diag_ok)


def _stats(estimates: np.ndarray, exact: np.ndarray, mode: str) -> EstimatorStats:
    # Variance is taken about the first trial (shifted data) so that a run of
    # identical estimates yields exactly zero.
    shifted = estimates - estimates[0]
    mean_shift = shifted.mean(axis=0)
    var = np.maximum((shifted * shifted).mean(axis=0) - mean_shift * mean_shift, 0.0)
    bias = np.abs(estimates[0] + mean_shift - exact)
    return EstimatorStats(float(bias.mean()), float(var.mean()), len(estimates), mode)


def compare_hashing_variance(x, dy, rank: int, trials: int, seed: int = 0,
                             modes=("balanced", "uniform")) -> dict:
    """Spread of the raw estimator ``x^T S^T S dy`` under each bin-assignment scheme.

    Trial ``t`` uses the same seed for every mode, hence the same signs; only
    the bin assignment differs.
    """
    B = x.shape[0]
    exact = matmul(transpose(x), dy)
    out = {}
    for mode in modes:
        P = np.empty((trials, B, B))
        for t in range(trials):
            S = sketch_matrix(build_plan(B, rank, seeding.derive(seed, seeding.TRIALS, t), hashing=mode))
            P[t] = matmul(transpose(S), S)
        est = transpose(x)[None] @ (P @ dy[None])
        out[mode] = _stats(est, exact, mode)
    return out


@dataclass(frozen=True)
class NormReport:
    source_norm: float
    sketch_norm: float
    scaled_norm: float
    gamma: float
    epsilon: float
    identity_holds: bool
    ceiling_holds: bool

    @property
    def gap(self) -> float:
        if self.source_norm == 0:
            return 0.0
        return 1.0 - self.scaled_norm / self.source_norm


def check_norm_invariance(x, rank: int, seed: int = 0, epsilon: float = DEFAULT_EPSILON) -> NormReport:
    plan = build_plan(x.shape[0], rank, seed)
    raw = apply_sketch(x, plan)
    x_norm, raw_norm = frobenius_norm(x), frobenius_norm(raw)
    scaled = invariant_scale(x_norm, raw, epsilon)
    s_norm = frobenius_norm(scaled.values)
    expected = x_norm * raw_norm / (raw_norm + epsilon) if x_norm else 0.0
    identity = bool(np.isclose(s_norm, expected, rtol=1e-12, atol=0.0))
    return NormReport(x_norm, raw_norm, s_norm, scaled.gamma, epsilon, identity, s_norm <= x_norm)


_FD_FLOOR = 1e-6


@dataclass(frozen=True)
class GradCheck:
    name: str
    rel_error: float
    coords: int
    passed: bool


def finite_difference_check(model, batch, tolerance: float, h: float = 1e-5, coords: int = 20,
                            seed: int = 0, plan_seed: int = 0) -> list:
    """Central differences on ``coords`` random entries of every parameter tensor.

    The analytic gradient comes from the model's own forward/backward (so a
    sketched model is checked through its sketched path); the numeric one
    uses inference-only losses. Error per tensor is
    ``||g - g_fd|| / max(||g||, ||g_fd||, 1e-6)`` over the sampled entries;
    the floor keeps identically-zero gradients (e.g. attention key biases)
    from turning rounding noise into a large relative error.
    """
    inputs, targets = batch
    grads = model.backward(model.forward(inputs, targets, plan_seed))
    rng = seeding.rng(seed, seeding.TRIALS)
    results = []
    for name, p in model.params.items():
        flat = p.reshape(-1)
        k = min(coords, flat.size)
        idx = rng.choice(flat.size, size=k, replace=False)
        analytic = grads[name].reshape(-1)[idx]
        numeric = np.empty(k)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            up = model.loss(inputs, targets)
            flat[i] = orig - h
            down = model.loss(inputs, targets)
            flat[i] = orig
            numeric[j] = (up - down) / (2 * h)
        denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), _FD_FLOOR)
        err = float(np.linalg.norm(analytic - numeric) / denom)
        results.append(GradCheck(name, err, k, err < tolerance))
    return results


@dataclass
class MemoryReport:
    per_layer_cached_floats: list
    total_activation_floats: int
    mode: str
    theoretical: int
    plan_index_ints: int = 0
    flops: dict = field(default_factory=dict)

    @property
    def consistent(self) -> bool:
        return self.total_activation_floats == self.theoretical == sum(n for _, n in self.per_layer_cached_floats)

    def render(self) -> str:
        lines = [
            f"activation memory ({self.mode} mode)",
            f"  {'layer':<16} {'cached floats':>14}",
        ]
        lines += [f"  {name:<16} {n:>14}" for name, n in self.per_layer_cached_floats]
        lines += [
            f"  {'total':<16} {self.total_activation_floats:>14}",
            f"  expected (sum over layers of rows kept x N): {self.theoretical}",
            f"  plan index integers (bins + signs, not counted above): {self.plan_index_ints}",
        ]
        if self.flops:
            lines.append("  backward FLOPs:")
            lines += [f"    {k}: {v}" for k, v in self.flops.items()]
        return "\n".join(lines)


def _dummy_batch(model, batch_shape, seed):
    rng = seeding.rng(seed, seeding.DATA)
    if isinstance(model, TinyTransformer) or (isinstance(model, MLP) and model.vocab_size):
        vocab = model.vocab_size
        ids = rng.integers(0, vocab, size=batch_shape)
        return ids, rng.integers(0, vocab, size=batch_shape)
    rows = int(np.prod(batch_shape))
    n_in = model.stack[0].in_features
    n_out = model.stack[-1].params.weight.shape[1]
    return rng.normal(size=(rows, n_in)), rng.normal(size=(rows, n_out))


def memory_audit(model, batch_shape, seed: int = 0) -> MemoryReport:
    """Run one forward pass and count the activation floats each dense layer keeps.

    Only the payload of dense-layer caches is counted (the input for exact
    layers, the scaled sketch for sketched ones). Plan index vectors are
    reported separately. Backward FLOPs are the analytic multiply-add counts
    ``2*rows*N*M`` for each product plus one add per element for the
    gradient sketch.
    """
    inputs, targets = _dummy_batch(model, batch_shape, seed)
    tape = model.forward(inputs, targets, seeding.derive(seed, seeding.PLANS, 0))
    B = int(np.prod(batch_shape))
    per_layer, expected, index_ints = [], 0, 0
    flops = {"dX": 0, "dW exact-equivalent": 0, "dW product": 0, "dY sketch": 0}
    for name, cache in tape.dense_caches():
        per_layer.append((name, cache.cached_floats))
        if isinstance(cache, BasisCache):
            index_ints += cache.index_ints
    for layer in model.layers.values():
        n, m = layer.params.weight.shape
        rows = min(layer.rank, B) if layer.mode == "basis" else B
        expected += rows * n
        flops["dX"] += 2 * B * n * m
        flops["dW exact-equivalent"] += 2 * B * n * m
        flops["dW product"] += 2 * rows * n * m
        if layer.mode == "basis":
            flops["dY sketch"] += B * m
    modes = {layer.mode for layer in model.layers.values()}
    mode = modes.pop() if len(modes) == 1 else "mixed"
    total = sum(c for _, c in per_layer)
    return MemoryReport(per_layer, total, mode, expected, index_ints, flops)


@dataclass(frozen=True)
class DiagSettings:
    seed: int = 0
    sts_batch: int = 8
    sts_rank: int = 4
    sts_trials: int = 20_000
    var_batch: int = 16
    var_rank: int = 4
    var_features: int = 8
    var_trials: int = 10_000
    var_instances: int = 10
    hashing: str = "both"
    norm_batch: int = 64
    norm_features: int = 16
    norm_ranks: str = "1,2,8,64"
    norm_instances: int = 100
    fd_h: float = 1e-5
    fd_coords: int = 20
    fd_tol_mlp: float = 1e-4
    fd_tol_transformer: float = 1e-3

    def __post_init__(self):
        if self.hashing not in ("both", "balanced", "uniform"):
            raise ValueError(f"hashing must be 'both', 'balanced' or 'uniform', got {self.hashing!r}")
        try:
            ranks = [int(r) for r in self.norm_ranks.split(",")]
        except ValueError:
            raise ValueError(f"norm_ranks must be a comma-separated list of integers, got {self.norm_ranks!r}") from None
        if not ranks or min(ranks) < 1:
            raise ValueError("norm_ranks must hold positive integers")


@dataclass(frozen=True)
class Check:
    claim: str
    measured: str
    bound: str
    status: str  # PASS, FAIL or CONTROL

    def line(self) -> str:
        return f"[{self.status}] {self.claim}\n    measured: {self.measured}\n    bound:    {self.bound}"


def _status(ok: bool) -> str:
    return "PASS" if ok else "FAIL"


def check_sts(s: DiagSettings):
    est = estimate_sts_mean(s.sts_batch, s.sts_rank, s.sts_trials, s.seed)
    bound = 4 / np.sqrt(s.sts_trials)
    yield Check(
        f"diag(S^T S) is exactly 1 in every trial (B={s.sts_batch}, R={s.sts_rank}, T={s.sts_trials})",
        "all ones" if est.diagonal_always_one else "deviation found",
        "exactly 1", _status(est.diagonal_always_one),
    )
    yield Check(
        "mean of S^T S converges to the identity off the diagonal",
        f"max |off-diagonal| = {est.max_off_diagonal:.6f}",
        f"< 4/sqrt(T) = {bound:.6f}", _status(est.max_off_diagonal < bound),
    )


def check_variance(s: DiagSettings):
    modes = ("balanced", "uniform") if s.hashing == "both" else (s.hashing,)
    B, n = s.var_batch, s.var_features
    wins, lines = 0, []
    zero_regime = s.var_rank >= B
    zero_ok = True
    for i in range(s.var_instances):
        rng = seeding.rng(s.seed, seeding.DATA, i)
        x, dy = rng.normal(size=(B, n)), rng.normal(size=(B, n))
        stats = compare_hashing_variance(x, dy, s.var_rank, s.var_trials, seeding.derive(s.seed, i), modes)
        lines.append(", ".join(f"{m}={stats[m].per_entry_variance:.6g}" for m in modes))
        if len(modes) == 2:
            wins += stats["balanced"].per_entry_variance <= stats["uniform"].per_entry_variance
        if "balanced" in stats and zero_regime:
            zero_ok &= stats["balanced"].per_entry_variance == 0.0
    shape = f"B={B}, R={s.var_rank}, N=M={n}, T={s.var_trials}"
    if len(modes) == 2:
        yield Check(
            f"balanced hashing variance <= uniform hashing variance ({shape})",
            f"{wins}/{s.var_instances} instances; " + "; ".join(lines),
            f"{s.var_instances}/{s.var_instances}", _status(wins == s.var_instances),
        )
    else:
        yield Check(f"{modes[0]} hashing variance, control measurement ({shape})",
                    "; ".join(lines), "none (single arm)", "CONTROL")
    if zero_regime and "balanced" in modes:
        yield Check("balanced hashing with R >= B has zero estimator variance",
                    "all zero" if zero_ok else "non-zero variance", "exactly 0", _status(zero_ok))


def check_norms(s: DiagSettings):
    ranks = [int(r) for r in s.norm_ranks.split(",")]
    worst_gap, ceiling, identity, count = 0.0, True, True, 0
    for i in range(s.norm_instances):
        x = seeding.rng(s.seed, seeding.DATA, 10_000 + i).normal(size=(s.norm_batch, s.norm_features))
        for r in ranks:
            rep = check_norm_invariance(x, r, seeding.derive(s.seed, i, r))
            ceiling &= rep.ceiling_holds
            identity &= rep.identity_holds
            if rep.sketch_norm >= 1e-2:
                worst_gap = max(worst_gap, abs(rep.gap))
                count += 1
    yield Check(f"||X_hat|| <= ||X|| ({s.norm_instances} matrices x ranks {ranks})",
                "holds" if ceiling else "violated", "always", _status(ceiling))
    yield Check("||X_hat|| == ||X|| ||X~|| / (||X~|| + eps)",
                "holds" if identity else "violated", "relative 1e-12", _status(identity))
    yield Check("relative norm gap 1 - ||X_hat||/||X|| when ||X~|| >= 1e-2",
                f"max {worst_gap:.3e} over {count} cases", "<= 1e-6", _status(worst_gap <= 1e-6))


def check_gradients(s: DiagSettings):
    rng = seeding.rng(s.seed, seeding.DATA, 20_000)
    mlp = MLP([8, 16, 4], activation="gelu", loss="mse", seed=s.seed)
    batch = (rng.normal(size=(6, 8)), rng.normal(size=(6, 4)))
    cases = [("2-layer MLP, exact", mlp, batch, s.fd_tol_mlp)]
    vocab, T = 11, 8
    ids = rng.integers(0, vocab, size=(2, T + 1))
    lm_batch = (ids[:, :-1], ids[:, 1:])
    tf = TinyTransformer(vocab, d_model=8, n_heads=2, n_layers=2, seq_len=T, seed=s.seed, init_std=0.3)
    cases.append(("tiny transformer, exact", tf, lm_batch, s.fd_tol_transformer))
    tf_basis = TinyTransformer(vocab, d_model=8, n_heads=2, n_layers=2, seq_len=T, seed=s.seed, init_std=0.3)
    tf_basis.configure("basis", rank=2 * T)
    cases.append((f"tiny transformer, sketched R=B={2 * T}", tf_basis, lm_batch, s.fd_tol_transformer))
    for label, model, b, tol in cases:
        res = finite_difference_check(model, b, tol, s.fd_h, s.fd_coords, s.seed)
        worst = max(res, key=lambda r: r.rel_error)
        yield Check(f"finite differences agree with backprop: {label}",
                    f"worst tensor {worst.name}: {worst.rel_error:.2e}", f"< {tol:g}",
                    _status(all(r.passed for r in res)))


def check_memory(train_config, vocab_size: int):
    from basis.train import build_model  # train imports this module

    shape = (train_config.batch_size, train_config.seq_len)
    exact = memory_audit(build_model(replace(train_config, mode="exact"), vocab_size), shape)
    sketched = memory_audit(build_model(replace(train_config, mode="basis"), vocab_size), shape)
    yield Check("exact mode caches sum of B*N over dense layers",
                f"{exact.total_activation_floats}", f"{exact.theoretical}", _status(exact.consistent))
    yield Check(f"sketched mode caches sum of min(R,B)*N over dense layers (R={train_config.rank})",
                f"{sketched.total_activation_floats}", f"{sketched.theoretical}", _status(sketched.consistent))
    other_batch = 4 if train_config.batch_size != 4 else 1
    alt = memory_audit(build_model(replace(train_config, mode="basis", batch_size=other_batch), vocab_size),
                       (other_batch, train_config.seq_len))
    decoupled = alt.total_activation_floats == sketched.total_activation_floats
    if train_config.rank > train_config.seq_len * min(other_batch, train_config.batch_size):
        label = "skipped: rank exceeds the smaller token count"
        yield Check("sketched cache size does not depend on batch size", label, "equal totals", "CONTROL")
    else:
        yield Check(f"sketched cache size does not depend on batch size ({train_config.batch_size} vs {other_batch})",
                    f"{sketched.total_activation_floats} vs {alt.total_activation_floats}", "equal",
                    _status(decoupled))


def run_suite(settings: DiagSettings, train_config, vocab_size: int = 96) -> list:
    checks = []
    for group in (check_sts(settings), check_variance(settings), check_norms(settings),
                  check_gradients(settings), check_memory(train_config, vocab_size)):
        checks.extend(group)
    return checks


def render_checks(checks) -> str:
    failed = sum(c.status == "FAIL" for c in checks)
    lines = ["diagnostics report", "==================", ""]
    lines += [c.line() for c in checks]
    lines += ["", f"{len(checks) - failed}/{len(checks)} checks without failure"]
    return "\n".join(lines) + "\n"
