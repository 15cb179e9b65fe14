"""Checkpoint container for trainers of either model kind.

Layout (all integers big-endian)::

    8 bytes   magic  b"EVGNCKPT"
    4 bytes   format version (uint32, currently 1)
    8 bytes   header length H (uint64)
    H bytes   UTF-8 JSON header (sorted keys, no whitespace)
    ...       raw array payload, little-endian, concatenated

The header records the model kind, config, epoch counter, generator and
sampler RNG states, Adam scalars, free-form ``extra`` metadata, and an
``arrays`` table of ``{name, dtype, shape, offset, nbytes}`` into the
payload. Nothing time-dependent is stored, so identical training runs
produce identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acgan import AcganModel
from .evasion import EvaganModel
from .networks import GanConfig, GanModel
from .training import BatchSampler, Trainer, restore_rng

MAGIC = b"EVGNCKPT"
VERSION = 1
MODEL_KINDS = {"evagan": EvaganModel, "acgan": AcganModel}


class CheckpointError(ValueError):
    pass


def _model_arrays(model: GanModel) -> dict[str, np.ndarray]:
    arrays = {}
    for prefix, net, opt in (
        ("g", model.generator, model.g_optimizer),
        ("d", model.discriminator, model.d_optimizer),
    ):
        for name, p in net.named_parameters():
            arrays[f"{prefix}.param.{name}"] = p.value
        for name, buf in net.named_buffers().items():
            arrays[f"{prefix}.buffer.{name}"] = buf
        if opt.state.t:
            for name, m, v in zip(opt.names, opt.state.m, opt.state.v):
                arrays[f"{prefix}.adam_m.{name}"] = m
                arrays[f"{prefix}.adam_v.{name}"] = v
    return arrays


def _adam_scalars(opt) -> dict:
    s = opt.state
    return {"lr": s.lr, "beta1": s.beta1, "beta2": s.beta2, "epsilon": s.epsilon, "t": s.t}


def save_checkpoint(path, trainer: Trainer, extra: dict | None = None) -> Path:
    model = trainer.model
    sampler_meta, sampler_arrays = trainer.sampler.state()
    arrays = _model_arrays(model)
    arrays.update({f"sampler.{k}": v for k, v in sampler_arrays.items()})

    table, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        raw = a.tobytes()
        table.append({"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)

    header = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "epoch": trainer.epoch,
        "seed": trainer.seed,
        "rng": trainer.rng.bit_generator.state,
        "sampler": sampler_meta,
        "adam": {"g": _adam_scalars(model.g_optimizer), "d": _adam_scalars(model.d_optimizer)},
        "extra": extra or {},
        "arrays": table,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC + struct.pack(">IQ", VERSION, len(hb)) + hb)
        for raw in blobs:
            fh.write(raw)
    return path


@dataclass
class Checkpoint:
    model: GanModel
    epoch: int
    seed: int
    rng: np.random.Generator
    sampler: BatchSampler
    extra: dict

    def trainer(self, data) -> Trainer:
        """Trainer that continues exactly where the saved one stopped."""
        return Trainer(self.model, data, self.seed, sampler=self.sampler, rng=self.rng, epoch=self.epoch)


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no such checkpoint: {path}")
    data = path.read_bytes()
    if data[:8] != MAGIC or len(data) < 20:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack(">IQ", data[8:20])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[20 : 20 + hlen].decode("utf-8"))
    payload = memoryview(data)[20 + hlen :]
    arrays = {}
    for e in header["arrays"]:
        if e["offset"] + e["nbytes"] > len(payload):
            raise CheckpointError(f"{path}: truncated payload for {e['name']}")
        buf = payload[e["offset"] : e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()

    kind = header["kind"]
    if kind not in MODEL_KINDS:
        raise CheckpointError(f"{path}: unknown model kind {kind!r}")
    config = GanConfig.from_dict(header["config"])
    model = MODEL_KINDS[kind](config, np.random.default_rng(0))
    for prefix, net, opt in (
        ("g", model.generator, model.g_optimizer),
        ("d", model.discriminator, model.d_optimizer),
    ):
        for name, p in net.named_parameters():
            p.value[...] = arrays[f"{prefix}.param.{name}"]
        net.load_buffers({k.split(".buffer.", 1)[1]: v for k, v in arrays.items() if k.startswith(f"{prefix}.buffer.")})
        scal = header["adam"][prefix]
        st = opt.state
        st.lr, st.beta1, st.beta2, st.epsilon, st.t = scal["lr"], scal["beta1"], scal["beta2"], scal["epsilon"], scal["t"]
        if st.t:
            st.m = [arrays[f"{prefix}.adam_m.{n}"] for n in opt.names]
            st.v = [arrays[f"{prefix}.adam_v.{n}"] for n in opt.names]

    sampler_arrays = {k[len("sampler."):]: v for k, v in arrays.items() if k.startswith("sampler.")}
    return Checkpoint(
        model=model,
        epoch=header["epoch"],
        seed=header["seed"],
        rng=restore_rng(header["rng"]),
        sampler=BatchSampler.from_state(header["sampler"], sampler_arrays),
        extra=header["extra"],
    )
