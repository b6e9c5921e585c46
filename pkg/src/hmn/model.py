"""Full classifier: patch embedding, block stack, attention pooling, head.

Also the versioned binary checkpoint format. Parameters are stored as
little-endian float32; loading widens back to float64, so a checkpoint
saved again after loading is byte-identical (quantization is idempotent).
"""

import json
import struct
from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from .blocks import HMNBlock
from .config import config_from_dict
from .memory import MemoryBank

MAGIC = b"HMN1"
VERSION = 1


class Model:
    def __init__(self, cfg, rng=None):
        cfg.validate()
        self.cfg = cfg
        # parameter draws come off this one stream in declaration order, so
        # a seed pins every weight
        rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        p, c_in, d_e = cfg.patch_size, cfg.in_channels, cfg.d_emb
        fan = p * p * c_in
        self.patch_proj = ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan), size=(fan, d_e)),
                                    requires_grad=True)
        self.patch_bias = ad.Tensor(np.zeros(d_e), requires_grad=True)
        self.pos_embed = ad.Tensor(rng.normal(0.0, 0.02, size=(cfg.n_tokens, d_e)),
                                   requires_grad=True)
        self.blocks = [HMNBlock(cfg, rng) for _ in range(cfg.n_blocks)]
        self.W_att = ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_e), size=(d_e, 1)),
                               requires_grad=True)
        # zero head makes the initial loss exactly ln(num_classes)
        self.head_w = ad.Tensor(np.zeros((d_e, cfg.num_classes)), requires_grad=True)
        self.head_b = ad.Tensor(np.zeros(cfg.num_classes), requires_grad=True)

    def parameters(self):
        out = OrderedDict()
        out["patch_proj"] = self.patch_proj
        out["patch_bias"] = self.patch_bias
        out["pos_embed"] = self.pos_embed
        for i, blk in enumerate(self.blocks):
            out.update(blk.parameters(f"block{i}"))
        out["W_att"] = self.W_att
        out["head_w"] = self.head_w
        out["head_b"] = self.head_b
        return out

    def banks(self):
        out = OrderedDict()
        for i, blk in enumerate(self.blocks):
            out[f"block{i}.local"] = blk.bank_local
            out[f"block{i}.global"] = blk.bank_global
        return out

    def set_frozen(self, flag):
        for bank in self.banks().values():
            bank.freeze() if flag else bank.thaw()

    def param_counts(self):
        learnable = sum(t.value.size for t in self.parameters().values())
        slots = sum(b.slots.size for b in self.banks().values())
        return {"learnable": int(learnable), "bank_slots": int(slots),
                "total": int(learnable + slots)}

    def _patchify(self, images):
        """(B, C, H, W) -> (B·N, P²·C); each patch flattened (C, P, P) row-major."""
        b, c, h, w = images.shape
        p = self.cfg.patch_size
        if c != self.cfg.in_channels or (h, w) != tuple(self.cfg.image_size):
            raise ValueError(f"input shape {images.shape[1:]} does not match config")
        hp, wp = h // p, w // p
        x = images.reshape(b, c, hp, p, wp, p).transpose(0, 2, 4, 1, 3, 5)
        return np.ascontiguousarray(x).reshape(b * hp * wp, c * p * p)

    def forward(self, images, mode="eval", labels=None, rng=None,
                t_override=None, capture=None):
        """Logits for a standardized image batch.

        eval mode freezes the banks and is pure; train mode thaws them and
        writes per-block queries under the given labels. capture, when a
        dict, receives last-block retrieval weights and pooling weights.
        """
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be train or eval, got {mode!r}")
        self.set_frozen(mode == "eval")
        t_steps = self.cfg.t_steps if t_override is None else int(t_override)
        images = np.asarray(images, dtype=np.float64)
        if images.ndim == 3:
            images = images[None]
        b = images.shape[0]
        n = self.cfg.n_tokens
        tok = ad.add_bias(ad.matmul(ad.Tensor(self._patchify(images)),
                                    self.patch_proj, groups=b), self.patch_bias)
        tok = ad.add(tok, ad.tile_rows(self.pos_embed, b))
        last = len(self.blocks) - 1
        for i, blk in enumerate(self.blocks):
            cap = capture if (capture is not None and i == last) else None
            tok = blk.forward(tok, groups=b, t_steps=t_steps, mode=mode,
                              labels=labels, rng=rng, capture=cap)
        scores = ad.reshape(ad.matmul(tok, self.W_att, groups=b), (b, n))
        pool = ad.softmax_rows(scores)
        v = ad.group_weighted_sum(pool, tok, groups=b)
        logits = ad.add_bias(ad.matmul(v, self.head_w, groups=b), self.head_b)
        if capture is not None:
            capture["pool_weights"] = pool.value.copy()
        return logits


# ------------------------------------------------------------- checkpoint IO

_DTYPES = {0: "<f4", 1: "<i8"}
_CODES = {"<f4": 0, "<i8": 1}


def _pack_record(name, arr, dtype):
    raw = name.encode("utf-8")
    parts = [struct.pack("<H", len(raw)), raw,
             struct.pack("<BB", _CODES[dtype], arr.ndim)]
    parts += [struct.pack("<Q", d) for d in arr.shape]
    parts.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, blob):
        self.blob = blob
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.blob):
            raise ValueError("truncated checkpoint file")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def _rng_state_to_meta(rng):
    st = rng.bit_generator.state
    return {"bit_generator": st["bit_generator"],
            "state": str(st["state"]["state"]), "inc": str(st["state"]["inc"]),
            "has_uint32": int(st["has_uint32"]), "uinteger": int(st["uinteger"])}


def _rng_from_meta(meta):
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": meta["bit_generator"],
        "state": {"state": int(meta["state"]), "inc": int(meta["inc"])},
        "has_uint32": int(meta["has_uint32"]), "uinteger": int(meta["uinteger"])}
    return rng


def save_checkpoint(model, path, rng=None, extra=None, optimizer=None):
    records = []
    for name, t in model.parameters().items():
        records.append((name, t.value, "<f4"))
    for bname, bank in model.banks().items():
        st = bank.state_dict()
        records.append((f"bank.{bname}.slots", st["slots"], "<f4"))
        records.append((f"bank.{bname}.cursor", st["cursor"], "<i8"))
        records.append((f"bank.{bname}.filled", st["filled"], "<i8"))
        records.append((f"bank.{bname}.frozen", st["frozen"], "<i8"))
    if optimizer is not None:
        for name, arr in optimizer.state_records():
            records.append((name, arr, "<f4" if arr.dtype.kind == "f" else "<i8"))
    meta = {"extra": extra or {}}
    if rng is not None:
        meta["rng"] = _rng_state_to_meta(rng)
    cfg_blob = model.cfg.to_json().encode("utf-8")
    meta_blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<Q", len(meta_blob)))
        fh.write(meta_blob)
        fh.write(struct.pack("<I", len(records)))
        for name, arr, dtype in records:
            fh.write(_pack_record(name, np.asarray(arr), dtype))


def load_checkpoint(path):
    """-> (model, meta dict, rng or None). Rejects bad magic, version skew,
    truncation, and trailing bytes."""
    with open(path, "rb") as fh:
        blob = fh.read()
    r = _Reader(blob)
    if r.take(4) != MAGIC:
        raise ValueError("not a checkpoint: bad magic")
    version = r.u("<I")
    if version != VERSION:
        raise ValueError(f"checkpoint version {version} unsupported (want {VERSION})")
    cfg = config_from_dict(json.loads(r.take(r.u("<Q")).decode("utf-8")))
    meta = json.loads(r.take(r.u("<Q")).decode("utf-8"))
    n_records = r.u("<I")
    records = {}
    for _ in range(n_records):
        name = r.take(r.u("<H")).decode("utf-8")
        code, ndim = r.u("<B"), r.u("<B")
        if code not in _DTYPES:
            raise ValueError(f"unknown dtype code {code} in record {name!r}")
        shape = tuple(r.u("<Q") for _ in range(ndim))
        dt = np.dtype(_DTYPES[code])
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        arr = np.frombuffer(r.take(count * dt.itemsize), dtype=dt).reshape(shape)
        records[name] = arr
    if r.pos != len(blob):
        raise ValueError(f"{len(blob) - r.pos} trailing bytes after last record")

    model = Model(cfg)
    for name, t in model.parameters().items():
        if name not in records:
            raise ValueError(f"checkpoint missing parameter {name!r}")
        if records[name].shape != t.value.shape:
            raise ValueError(f"parameter {name!r} shape mismatch")
        t.value = np.ascontiguousarray(records[name], dtype=np.float64)
    for bname, bank in model.banks().items():
        state = {"num_classes": bank.num_classes, "total_slots": bank.total_slots,
                 "dim": bank.dim}
        for field in ("slots", "cursor", "filled", "frozen"):
            key = f"bank.{bname}.{field}"
            if key not in records:
                raise ValueError(f"checkpoint missing bank record {key!r}")
            state[field] = np.ascontiguousarray(
                records[key], dtype=np.float64 if field == "slots" else np.int64)
        new_bank = MemoryBank.from_state(state)
        blk_idx = int(bname.split(".")[0][len("block"):])
        blk = model.blocks[blk_idx]
        if bname.endswith("local"):
            blk.bank_local = new_bank
        else:
            blk.bank_global = new_bank
    rng = _rng_from_meta(meta["rng"]) if "rng" in meta else None
    return model, meta.get("extra", {}), rng
