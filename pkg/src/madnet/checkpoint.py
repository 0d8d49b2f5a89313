"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MADN" | u32 version | u64 manifest length | manifest (UTF-8 JSON)
    | parameter blobs | Adam first moments | Adam second moments

Blobs are raw little-endian floats in the manifest's ``dtype`` (float32 by
default), in the order of ``manifest["params"]``.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import ModelConfig, build_model
from .train import AdamState

MAGIC = b"MADN"
VERSION = 1


class CheckpointError(IOError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    dtype: str
    params: dict
    adam: AdamState
    iteration: int
    seed: int
    extra: dict

    def build_model(self):
        model = build_model(self.config, seed=0, dtype=np.dtype(self.dtype))
        model.load_state_dict(self.params)
        return model


def _manifest(cfg, dtype, names, shapes, adam, iteration, seed, extra):
    return {
        "format_version": VERSION,
        "config": cfg.to_dict(),
        "dtype": np.dtype(dtype).name,
        "params": [[n, list(s)] for n, s in zip(names, shapes)],
        "adam": {"t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps},
        "iteration": int(iteration),
        "seed": int(seed),
        "extra": extra or {},
    }


def save_checkpoint(path, model, adam, iteration, seed, extra=None):
    named = list(model.named_parameters())
    names = [n for n, _ in named]
    dt = np.dtype(model.dtype).newbyteorder("<")
    man = _manifest(model.cfg, model.dtype, names, [p.shape for _, p in named], adam, iteration, seed, extra)
    text = json.dumps(man, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(text)))
        fh.write(text)
        for source in ([p.data for _, p in named], [adam.m[n] for n in names], [adam.v[n] for n in names]):
            for arr in source:
                fh.write(np.ascontiguousarray(arr, dtype=dt).tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise BadMagicError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
    if len(raw) < 16:
        raise TruncatedCheckpointError(f"{path}: truncated header")
    (version,) = struct.unpack("<I", raw[4:8])
    if version != VERSION:
        raise VersionMismatchError(f"{path}: format version {version}, this build reads {VERSION}")
    (mlen,) = struct.unpack("<Q", raw[8:16])
    if len(raw) < 16 + mlen:
        raise TruncatedCheckpointError(f"{path}: truncated manifest")
    try:
        man = json.loads(raw[16 : 16 + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from exc
    dt = np.dtype(man["dtype"]).newbyteorder("<")
    pos = 16 + mlen

    def take(shape):
        nonlocal pos
        n = int(np.prod(shape)) * dt.itemsize
        if pos + n > len(raw):
            raise TruncatedCheckpointError(f"{path}: truncated blob data")
        arr = np.frombuffer(raw, dtype=dt, count=int(np.prod(shape)), offset=pos).reshape(shape)
        pos += n
        return arr.astype(man["dtype"])

    entries = [(n, tuple(s)) for n, s in man["params"]]
    params = {n: take(s) for n, s in entries}
    a = man["adam"]
    adam = AdamState(t=a["t"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
    adam.m = {n: take(s) for n, s in entries}
    adam.v = {n: take(s) for n, s in entries}
    if pos != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - pos} trailing bytes")
    return Checkpoint(
        config=ModelConfig.from_dict(man["config"]),
        dtype=man["dtype"],
        params=params,
        adam=adam,
        iteration=man["iteration"],
        seed=man["seed"],
        extra=man["extra"],
    )


def save_trainer(path, trainer):
    save_checkpoint(
        path,
        trainer.model,
        trainer.adam,
        trainer.iteration,
        trainer.dataset.manifest.seed if trainer.dataset is not None else 0,
        extra=trainer.state(),
    )


def restore_trainer(ckpt, dataset=None):
    """Rebuild a ``Trainer`` that continues exactly where ``ckpt`` stopped."""
    from .data import Dataset, DatasetManifest
    from .losses import LossConfig
    from .train import Schedule, Trainer

    extra = ckpt.extra
    if dataset is None and extra.get("manifest"):
        dataset = Dataset(DatasetManifest.from_kv(extra["manifest"]))
    model = ckpt.build_model()
    trainer = Trainer(
        model,
        dataset,
        LossConfig(**extra["loss"]),
        Schedule(**extra["schedule"]),
        batch=extra["batch"],
        clip_norm=extra.get("clip_norm"),
        adam=ckpt.adam,
    )
    trainer.iteration = ckpt.iteration
    return trainer
