"""Small models assembled from hand-differentiated layers.

A model owns a flat ``name -> ndarray`` parameter dict. Dense layers hold
views onto those arrays, so optimizers update in place and layers see the
change. Every dense projection can be switched between exact and sketched
weight gradients; embeddings and layer norms are always exact.
"""

from __future__ import annotations

import fnmatch
import math
from dataclasses import dataclass, field

import numpy as np

from basis import seeding
from basis.layers import ops
from basis.layers.attention import CausalSelfAttention
from basis.layers.dense import Dense, DenseParams
from basis.sketch import DEFAULT_EPSILON


class NumericError(ArithmeticError):
    def __init__(self, message: str, layer: str | None = None, step: int | None = None):
        super().__init__(message)
        self.layer = layer
        self.step = step


@dataclass
class Tape:
    """Everything one forward pass leaves behind for its backward pass."""

    loss: float
    dense: dict = field(default_factory=dict)
    state: dict = field(default_factory=dict)

    def dense_caches(self):
        return list(self.dense.items())


def _check(name, z):
    if not np.all(np.isfinite(z)):
        raise NumericError(f"non-finite output from layer {name}", layer=name)


class Model:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.layers: dict[str, Dense] = {}

    def _dense(self, name, n_in, n_out, rng, std, bias=True):
        w = rng.normal(0.0, std, size=(n_in, n_out))
        self.params[name + ".weight"] = w
        b = None
        if bias:
            b = np.zeros(n_out)
            self.params[name + ".bias"] = b
        layer = Dense(name, DenseParams(w, b))
        self.layers[name] = layer
        return layer

    def configure(self, mode="exact", rank=1, lam=0.0, epsilon=DEFAULT_EPSILON, overrides=None):
        """Set every dense layer's mode; ``overrides`` maps glob patterns on layer names to modes."""
        for name, layer in self.layers.items():
            layer.mode = mode
            for pattern, m in (overrides or {}).items():
                if fnmatch.fnmatchcase(name, pattern):
                    layer.mode = m
            if layer.mode not in ("exact", "basis"):
                raise ValueError(f"layer {name}: unknown mode {layer.mode!r}")
            layer.rank, layer.lam, layer.epsilon = rank, lam, epsilon
        return self

    def layer_seeds(self, plan_seed: int):
        return {name: seeding.derive(plan_seed, i) for i, name in enumerate(self.layers)}

    def locate_nonfinite(self, inputs):
        """Name of the first dense layer producing a non-finite output, if any."""
        try:
            self.forward_infer(inputs, check=True)
        except NumericError as err:
            return err.layer
        return None


class MLP(Model):
    """Feed-forward stack ``dims[0] -> ... -> dims[-1]``.

    With ``vocab_size`` set, inputs are token ids embedded into ``dims[0]``
    features (a bigram-style language model); otherwise inputs are rows.
    ``loss`` is ``"mse"`` against a target matrix or ``"ce"`` against ids.
    """

    def __init__(self, dims, activation="relu", loss="mse", vocab_size=None, seed=0, bias=True):
        super().__init__()
        if len(dims) < 2:
            raise ValueError("an MLP needs at least input and output widths")
        rng = seeding.rng(seed, seeding.INIT)
        self.activation = activation
        self.loss_kind = loss
        self.vocab_size = vocab_size
        if vocab_size is not None:
            self.params["wte"] = rng.normal(0.0, 1.0, size=(vocab_size, dims[0]))
        self.stack = [
            self._dense(f"fc{i}", n_in, n_out, rng, 1.0 / math.sqrt(n_in), bias)
            for i, (n_in, n_out) in enumerate(zip(dims[:-1], dims[1:]))
        ]

    def _act(self):
        if self.activation == "relu":
            return ops.relu_forward, ops.relu_backward
        return ops.gelu_forward, ops.gelu_backward

    def _embed(self, inputs):
        if self.vocab_size is None:
            return np.asarray(inputs, dtype=float)
        return self.params["wte"][np.asarray(inputs).reshape(-1)]

    def _loss(self, out, targets):
        if self.loss_kind == "ce":
            return ops.softmax_cross_entropy(out, np.asarray(targets).reshape(-1))
        return ops.mse_loss(out, targets)

    def forward(self, inputs, targets, plan_seed=0) -> Tape:
        seeds = self.layer_seeds(plan_seed)
        act, _ = self._act()
        h = self._embed(inputs)
        tape = Tape(0.0, state={"inputs": inputs, "acts": []})
        for i, layer in enumerate(self.stack):
            h, tape.dense[layer.name] = layer(h, seeds[layer.name])
            if i < len(self.stack) - 1:
                h, c = act(h)
                tape.state["acts"].append(c)
        tape.loss, tape.state["dout"] = self._loss(h, targets)
        return tape

    def backward(self, tape: Tape) -> dict:
        _, act_back = self._act()
        grads = {}
        d = tape.state["dout"]
        for i in reversed(range(len(self.stack))):
            layer = self.stack[i]
            d, grads[layer.name + ".weight"], db = Dense.backward(d, tape.dense[layer.name])
            if db is not None:
                grads[layer.name + ".bias"] = db
            if i > 0:
                d = act_back(d, tape.state["acts"][i - 1])
        if self.vocab_size is not None:
            ids = np.asarray(tape.state["inputs"]).reshape(-1)
            grads["wte"] = ops.embedding_backward(d, ids, self.vocab_size)
        return grads

    def forward_infer(self, inputs, check=False):
        act, _ = self._act()
        h = self._embed(inputs)
        for i, layer in enumerate(self.stack):
            h = layer.infer(h)
            if check:
                _check(layer.name, h)
            if i < len(self.stack) - 1:
                h, _ = act(h)
        return h

    def loss(self, inputs, targets) -> float:
        return self._loss(self.forward_infer(inputs), targets)[0]


class TinyTransformer(Model):
    """Pre-norm GPT: token + learned position embeddings, ``n_layers`` blocks of
    causal attention and a GELU MLP (width ``4*d_model``), final layer norm,
    and a bias-free vocabulary head."""

    def __init__(self, vocab_size, d_model=64, n_heads=2, n_layers=2, seq_len=64, seed=0, init_std=0.02):
        super().__init__()
        rng = seeding.rng(seed, seeding.INIT)
        self.vocab_size, self.d_model, self.seq_len = vocab_size, d_model, seq_len
        self.n_layers = n_layers
        d = d_model
        resid_std = init_std / math.sqrt(2 * n_layers)
        p = self.params
        p["wte"] = rng.normal(0.0, init_std, size=(vocab_size, d))
        p["wpe"] = rng.normal(0.0, init_std, size=(seq_len, d))
        self.blocks = []
        for i in range(n_layers):
            pre = f"h{i}"
            for ln in ("ln1", "ln2"):
                p[f"{pre}.{ln}.scale"] = np.ones(d)
                p[f"{pre}.{ln}.shift"] = np.zeros(d)
            attn = CausalSelfAttention(
                self._dense(f"{pre}.attn.q", d, d, rng, init_std),
                self._dense(f"{pre}.attn.k", d, d, rng, init_std),
                self._dense(f"{pre}.attn.v", d, d, rng, init_std),
                self._dense(f"{pre}.attn.out", d, d, rng, resid_std),
                n_heads,
            )
            fc = self._dense(f"{pre}.mlp.fc", d, 4 * d, rng, init_std)
            proj = self._dense(f"{pre}.mlp.proj", 4 * d, d, rng, resid_std)
            self.blocks.append((pre, attn, fc, proj))
        p["lnf.scale"] = np.ones(d)
        p["lnf.shift"] = np.zeros(d)
        self.head = self._dense("head", d, vocab_size, rng, init_std, bias=False)

    def _ln(self, x, name):
        return ops.layernorm_forward(x, self.params[name + ".scale"], self.params[name + ".shift"])

    def _embed(self, ids):
        ids = np.asarray(ids)
        batch, T = ids.shape
        if T > self.seq_len:
            raise ValueError(f"sequence length {T} exceeds the model's {self.seq_len}")
        tok, _ = ops.embedding_forward(ids, self.params["wte"])
        return (tok + self.params["wpe"][:T]).reshape(batch * T, self.d_model)

    def forward(self, ids, targets, plan_seed=0) -> Tape:
        ids = np.asarray(ids)
        batch, T = ids.shape
        seeds = self.layer_seeds(plan_seed)
        tape = Tape(0.0, state={"ids": ids, "blocks": []})
        x = self._embed(ids)
        for pre, attn, fc, proj in self.blocks:
            h, ln1 = self._ln(x, pre + ".ln1")
            a, attn_cache = attn(h, batch, T, [seeds[p.name] for p in attn.projections])
            tape.dense.update(attn_cache.caches)
            x = x + a
            h, ln2 = self._ln(x, pre + ".ln2")
            f, tape.dense[fc.name] = fc(h, seeds[fc.name])
            g, gelu_cache = ops.gelu_forward(f)
            m, tape.dense[proj.name] = proj(g, seeds[proj.name])
            x = x + m
            tape.state["blocks"].append((ln1, attn_cache, ln2, gelu_cache))
        h, tape.state["lnf"] = self._ln(x, "lnf")
        logits, tape.dense["head"] = self.head(h, seeds["head"])
        tape.loss, tape.state["dlogits"] = ops.softmax_cross_entropy(logits, np.asarray(targets).reshape(-1))
        return tape

    def backward(self, tape: Tape) -> dict:
        grads = {}
        dh, grads["head.weight"], _ = Dense.backward(tape.state["dlogits"], tape.dense["head"])
        dx, grads["lnf.scale"], grads["lnf.shift"] = ops.layernorm_backward(dh, tape.state["lnf"])
        for (pre, attn, fc, proj), (ln1, attn_cache, ln2, gelu_cache) in zip(
            reversed(self.blocks), reversed(tape.state["blocks"])
        ):
            dg, grads[proj.name + ".weight"], grads[proj.name + ".bias"] = Dense.backward(dx, tape.dense[proj.name])
            df = ops.gelu_backward(dg, gelu_cache)
            dh, grads[fc.name + ".weight"], grads[fc.name + ".bias"] = Dense.backward(df, tape.dense[fc.name])
            dres, grads[pre + ".ln2.scale"], grads[pre + ".ln2.shift"] = ops.layernorm_backward(dh, ln2)
            dx = dx + dres
            dh = attn.backward(dx, attn_cache, grads)
            dres, grads[pre + ".ln1.scale"], grads[pre + ".ln1.shift"] = ops.layernorm_backward(dh, ln1)
            dx = dx + dres
        ids = tape.state["ids"]
        batch, T = ids.shape
        dx3 = dx.reshape(batch, T, self.d_model)
        grads["wte"] = ops.embedding_backward(dx3, ids, self.vocab_size)
        dpe = np.zeros_like(self.params["wpe"])
        dpe[:T] = dx3.sum(axis=0)
        grads["wpe"] = dpe
        return grads

    def forward_infer(self, ids, check=False):
        ids = np.asarray(ids)
        batch, T = ids.shape
        x = self._embed(ids)
        for pre, attn, fc, proj in self.blocks:
            h, _ = self._ln(x, pre + ".ln1")
            a = attn.infer(h, batch, T)
            if check:
                _check(attn.out.name, a)
            x = x + a
            h, _ = self._ln(x, pre + ".ln2")
            f = fc.infer(h)
            if check:
                _check(fc.name, f)
            m = proj.infer(ops.gelu_forward(f)[0])
            if check:
                _check(proj.name, m)
            x = x + m
        logits = self.head.infer(self._ln(x, "lnf")[0])
        if check:
            _check("head", logits)
        return logits

    def loss(self, ids, targets) -> float:
        return ops.softmax_cross_entropy(self.forward_infer(ids), np.asarray(targets).reshape(-1))[0]
