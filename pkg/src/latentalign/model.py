"""The toy decoder-only predictor, projectors, latent target tokens, and
checkpoint persistence.

The predictor runs pre-layernorm transformer blocks under an arbitrary
attention permission matrix and exposes the hidden states leaving a chosen
block (the "tap"), which a second projector maps into the target encoder's
embedding space.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import CONTEXT, TARGET, TEXT, TokenRole
from .autodiff import Tensor

# trainable modules start near zero; the frozen predictor needs fan-in
# scaling or visual information cannot reach the caption logits at all
INIT_STD = 0.02


def tap_layer_default(L: int) -> int:
    """Index of the block at one fourth of the depth (1-based)."""
    if L < 1:
        raise ValueError("layer count must be positive")
    return -(-L // 4)


@dataclass
class PredictorConfig:
    d: int = 32
    L: int = 4
    H: int = 4
    V: int = 64
    max_seq: int = 256
    tap_layer: int | None = None

    def __post_init__(self):
        if self.d % self.H:
            raise ValueError("d must be divisible by H")
        if self.d % 4:
            raise ValueError("d must be divisible by 4 for 2-D position codes")
        if self.tap_layer is None:
            self.tap_layer = tap_layer_default(self.L)
        if not 1 <= self.tap_layer <= self.L:
            raise ValueError("tap layer out of range")

    def to_json_obj(self) -> dict:
        return {"d": self.d, "L": self.L, "H": self.H, "V": self.V,
                "max_seq": self.max_seq, "tap_layer": self.tap_layer}


def sincos_1d(n: int, d: int) -> np.ndarray:
    if d % 2:
        raise ValueError("1-D sinusoidal table needs an even width")
    pos = np.arange(n)[:, None]
    omega = 1.0 / (10000.0 ** (np.arange(d // 2) / (d / 2.0)))
    ang = pos * omega[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


def sincos_2d(rows: int, cols: int, d: int) -> np.ndarray:
    """Fixed 2-D table over (row, col), half the dims per axis."""
    if d % 4:
        raise ValueError("2-D sinusoidal table needs d divisible by 4")
    row_tab = sincos_1d(rows, d // 2)
    col_tab = sincos_1d(cols, d // 2)
    out = np.zeros((rows * cols, d))
    for r in range(rows):
        for c in range(cols):
            out[r * cols + c, : d // 2] = row_tab[r]
            out[r * cols + c, d // 2:] = col_tab[c]
    return out


def _param(rng, shape, std=INIT_STD) -> Tensor:
    return Tensor(rng.normal(0.0, std, size=shape), requires_grad=True)


def _fan_in_param(rng, shape) -> Tensor:
    return _param(rng, shape, std=1.0 / math.sqrt(shape[0]))


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class Projector:
    """Linear map or two-layer MLP with a GELU between (hidden = out_dim)."""

    def __init__(self, kind: str, in_dim: int, out_dim: int, seed: int = 0):
        if kind not in ("linear", "mlp"):
            raise ValueError(f"unknown projector kind: {kind}")
        rng = np.random.default_rng([seed, 0x9107])
        self.kind = kind
        self.in_dim = in_dim
        self.out_dim = out_dim
        if kind == "linear":
            self.w = _param(rng, (in_dim, out_dim))
            self.b = _zeros(out_dim)
        else:
            self.w1 = _param(rng, (in_dim, out_dim))
            self.b1 = _zeros(out_dim)
            self.w2 = _param(rng, (out_dim, out_dim))
            self.b2 = _zeros(out_dim)

    def __call__(self, x: Tensor) -> Tensor:
        if self.kind == "linear":
            return x @ self.w + self.b
        return ad.gelu(x @ self.w1 + self.b1) @ self.w2 + self.b2

    def named_parameters(self) -> dict:
        if self.kind == "linear":
            return {"w": self.w, "b": self.b}
        return {"w1": self.w1, "b1": self.b1, "w2": self.w2, "b2": self.b2}


class LatentTarget:
    """Shared learnable vector plus a fixed 2-D positional table."""

    def __init__(self, d: int, rows: int, cols: int, seed: int = 0):
        rng = np.random.default_rng([seed, 0x2A7])
        self.z = _param(rng, (1, d))
        self.phi = sincos_2d(rows, cols, d)

    def tokens(self, patch_indices) -> Tensor:
        idx = np.asarray(sorted(patch_indices), dtype=np.int64)
        return self.z + Tensor(self.phi[idx])

    def named_parameters(self) -> dict:
        return {"z": self.z}


class Predictor:
    """Small pre-layernorm transformer with a custom mask and a layer tap."""

    def __init__(self, cfg: PredictorConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng([seed, 0xD0DE])
        d = cfg.d
        # token identity must stay visible next to the positional code, but
        # small enough that attention output carries real weight at text rows
        self.tok_emb = _param(rng, (cfg.V, d), std=0.5)
        self.seq_pos = sincos_1d(cfg.max_seq, d)
        self.blocks = []
        for _ in range(cfg.L):
            self.blocks.append({
                "ln1_g": _ones(d), "ln1_b": _zeros(d),
                "wq": _fan_in_param(rng, (d, d)), "bq": _zeros(d),
                "wk": _fan_in_param(rng, (d, d)), "bk": _zeros(d),
                "wv": _fan_in_param(rng, (d, d)), "bv": _zeros(d),
                "wo": _fan_in_param(rng, (d, d)), "bo": _zeros(d),
                "ln2_g": _ones(d), "ln2_b": _zeros(d),
                "w_up": _fan_in_param(rng, (d, 4 * d)), "b_up": _zeros(4 * d),
                "w_down": _fan_in_param(rng, (4 * d, d)), "b_down": _zeros(d),
            })
        self.lnf_g = _ones(d)
        self.lnf_b = _zeros(d)
        self.head_w = _fan_in_param(rng, (d, cfg.V))
        self.head_b = _zeros(cfg.V)

    def named_parameters(self) -> dict:
        params = {"tok_emb": self.tok_emb}
        for i, blk in enumerate(self.blocks):
            for name, p in blk.items():
                params[f"block{i}.{name}"] = p
        params["lnf_g"] = self.lnf_g
        params["lnf_b"] = self.lnf_b
        params["head_w"] = self.head_w
        params["head_b"] = self.head_b
        return params

    def _attend(self, x: Tensor, blk: dict, allow: np.ndarray) -> Tensor:
        d, h = self.cfg.d, self.cfg.H
        dh = d // h
        q = x @ blk["wq"] + blk["bq"]
        k = x @ blk["wk"] + blk["bk"]
        v = x @ blk["wv"] + blk["bv"]
        heads = []
        for i in range(h):
            qh = ad.slice_cols(q, i * dh, (i + 1) * dh)
            kh = ad.slice_cols(k, i * dh, (i + 1) * dh)
            vh = ad.slice_cols(v, i * dh, (i + 1) * dh)
            scores = (qh @ ad.transpose(kh)) * (1.0 / math.sqrt(dh))
            probs = ad.softmax_masked(scores, allow)
            heads.append(probs @ vh)
        return ad.concat(heads, axis=1) @ blk["wo"] + blk["bo"]

    def forward(self, seq, allow: np.ndarray):
        """Returns (logits over all positions, hidden states after the tap)."""
        s = len(seq.roles)
        if s > self.cfg.max_seq:
            raise ValueError(f"sequence of {s} exceeds max_seq={self.cfg.max_seq}")
        x = seq.tokens + Tensor(self.seq_pos[:s])
        tap = None
        for i, blk in enumerate(self.blocks):
            a = self._attend(ad.layernorm(x, blk["ln1_g"], blk["ln1_b"]),
                             blk, allow)
            x = x + a
            m = ad.gelu(ad.layernorm(x, blk["ln2_g"], blk["ln2_b"])
                        @ blk["w_up"] + blk["b_up"]) @ blk["w_down"] + blk["b_down"]
            x = x + m
            if i + 1 == self.cfg.tap_layer:
                tap = x
        logits = ad.layernorm(x, self.lnf_g, self.lnf_b) @ self.head_w + self.head_b
        return logits, tap


@dataclass
class PackedSequence:
    tokens: Tensor      # S x d
    roles: list = field(default_factory=list)

    @property
    def text_positions(self) -> list:
        return [i for i, r in enumerate(self.roles) if r.kind == TEXT]

    @property
    def target_positions(self) -> list:
        return [i for i, r in enumerate(self.roles) if r.kind == TARGET]

    @property
    def visual_positions(self) -> list:
        return [i for i, r in enumerate(self.roles) if r.kind != TEXT]


def pack(mask_spec, ctx_emb: np.ndarray, grid, caption, proj: Projector,
         lat: LatentTarget | None, tok_emb: Tensor) -> PackedSequence:
    """Assemble [projected context, latent targets, text] in raster order.

    ``mask_spec`` may be None for the unmasked path: every patch is context
    and no latent tokens are inserted.
    """
    n = grid.n
    if ctx_emb.shape[0] != n:
        raise ValueError("context embeddings must cover every patch")
    caption = np.asarray(caption, dtype=np.int64)

    if mask_spec is None:
        ctx_sorted = list(range(n))
        tgt_sorted: list[int] = []
        block_of: dict[int, frozenset] = {}
    else:
        if not mask_spec.context:
            raise ValueError("empty context")
        ctx_sorted = sorted(mask_spec.context)
        tgt_sorted = sorted(mask_spec.target_union)
        block_of = {}
        for bid, tset in enumerate(mask_spec.targets):
            for i in tset:
                block_of[i] = block_of.get(i, frozenset()) | {bid}

    parts = [proj(Tensor(ctx_emb[ctx_sorted]))]
    if tgt_sorted:
        parts.append(lat.tokens(tgt_sorted))
    if caption.size:
        parts.append(ad.gather_rows(tok_emb, caption))
    source = ad.concat(parts, axis=0)

    # map packed position -> row in [context rows, target rows, text rows]
    roles: list[TokenRole] = []
    perm: list[int] = []
    ctx_row = {p: r for r, p in enumerate(ctx_sorted)}
    tgt_row = {p: len(ctx_sorted) + r for r, p in enumerate(tgt_sorted)}
    for i in range(n):
        if i in ctx_row:
            perm.append(ctx_row[i])
            roles.append(TokenRole(CONTEXT, patch_index=i))
        elif i in tgt_row:
            perm.append(tgt_row[i])
            roles.append(TokenRole(TARGET, patch_index=i, blocks=block_of[i]))
    base = len(ctx_sorted) + len(tgt_sorted)
    for t in range(caption.size):
        perm.append(base + t)
        roles.append(TokenRole(TEXT, text_position=t))
    return PackedSequence(tokens=ad.gather_rows(source, np.array(perm)),
                          roles=roles)


def project_tap(proj_tgt: Projector, tap: Tensor, positions, roles) -> Tensor:
    for p in positions:
        if roles[p].kind != TARGET:
            raise ValueError(f"position {p} is not a target token")
    return proj_tgt(ad.gather_rows(tap, np.asarray(positions, dtype=np.int64)))


# checkpoint persistence ---------------------------------------------


def save_checkpoint(path, step: int, config: dict, named_params: dict) -> None:
    """JSON header line followed by little-endian float64 payload."""
    header = {
        "format": "latentalign-ckpt",
        "version": 1,
        "step": step,
        "config": config,
        "params": [[name, list(p.data.shape)] for name, p in named_params.items()],
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        for p in named_params.values():
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (header dict, {name: float64 array})."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        if header.get("format") != "latentalign-ckpt":
            raise ValueError("not a checkpoint file")
        params = {}
        for name, shape in header["params"]:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError("checkpoint payload truncated")
            params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    return header, params


def load_into(named_params: dict, loaded: dict) -> None:
    if set(named_params) != set(loaded):
        missing = set(named_params) ^ set(loaded)
        raise ValueError(f"checkpoint/config mismatch on: {sorted(missing)}")
    for name, p in named_params.items():
        if tuple(p.data.shape) != tuple(loaded[name].shape):
            raise ValueError(f"shape mismatch for {name}")
        p.data[...] = loaded[name]
