"""Versioned binary checkpoints with bit-exact round-trips.

Layout: magic "PNSC", u16 format version, u32 manifest byte length, the
manifest (canonical JSON: sorted keys, no whitespace), then the numeric
blocks named by the manifest, concatenated as little-endian float64.
The manifest carries the architecture descriptor, hyperparameters, the
epoch counter, and the run seed; batch order is a pure function of
(seed, epoch), so seed plus epoch IS the generator state and resuming
from a checkpoint reproduces an uninterrupted run bitwise.
"""

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import UsageError
from .network import from_manifest, to_manifest
from .optim import Hyperparams, ModelState

MAGIC = b"PNSC"
VERSION = 1
_HEAD = struct.Struct("<4sHI")


@dataclass(frozen=True)
class Checkpoint:
    net: object
    state: ModelState
    hp: Hyperparams
    epoch: int
    seed: int
    extra: dict


def _blocks_of(state):
    blocks = [
        ("w", state.w),
        ("gamma", state.gamma),
        ("xi", state.xi),
        ("running_mean", state.running_mean),
        ("running_var", state.running_var),
    ]
    if state.vel_w is not None:
        blocks.append(("vel_w", state.vel_w))
    if state.vel_gamma is not None:
        blocks.append(("vel_gamma", state.vel_gamma))
    return blocks


def save_checkpoint(path, net, state, hp, epoch, seed, extra=None):
    blocks = _blocks_of(state)
    manifest = {
        "arch": to_manifest(net),
        "hyper": asdict(hp),
        "epoch": int(epoch),
        "seed": int(seed),
        "extra": extra or {},
        "blocks": [[name, int(arr.size)] for name, arr in blocks],
    }
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_HEAD.pack(MAGIC, VERSION, len(blob)))
        fh.write(blob)
        for _, arr in blocks:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEAD.size)
        if len(head) < _HEAD.size:
            raise UsageError(f"{path}: truncated checkpoint header")
        magic, version, mlen = _HEAD.unpack(head)
        if magic != MAGIC:
            raise UsageError(f"{path}: not a checkpoint file")
        if version != VERSION:
            raise UsageError(f"{path}: unsupported checkpoint version {version}")
        manifest = json.loads(fh.read(mlen).decode())
        raw = fh.read()
    total = sum(n for _, n in manifest["blocks"])
    if len(raw) != 8 * total:
        raise UsageError(
            f"{path}: expected {8 * total} block bytes, got {len(raw)}"
        )
    data = np.frombuffer(raw, dtype="<f8")
    values = {}
    pos = 0
    for name, n in manifest["blocks"]:
        values[name] = data[pos : pos + n].astype(np.float64)
        pos += n
    hyper = dict(manifest["hyper"])
    if hyper.get("alpha_schedule") is not None:
        hyper["alpha_schedule"] = tuple(tuple(p) for p in hyper["alpha_schedule"])
    state = ModelState(
        w=values["w"],
        gamma=values["gamma"],
        xi=values["xi"],
        running_mean=values["running_mean"],
        running_var=values["running_var"],
        vel_w=values.get("vel_w"),
        vel_gamma=values.get("vel_gamma"),
    )
    return Checkpoint(
        net=from_manifest(manifest["arch"]),
        state=state,
        hp=Hyperparams(**hyper),
        epoch=int(manifest["epoch"]),
        seed=int(manifest["seed"]),
        extra=manifest.get("extra", {}),
    )
