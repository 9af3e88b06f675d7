"""Binary checkpoints for both model types.

Layout (little-endian)::

    b"QCCK" | u8 version=1 | u8 model tag (1=qcnn, 2=cnn)
    u32 K | K x u32 architecture fields
    u32 epoch | u64 optimizer step count
    f64 eta | f64 alpha | f64 epsilon
    u64 P | P x f64 parameters | P x f64 optimizer sq_avg

Architecture fields:

    qcnn: H, W, classes, L, L x (filter, stride, padding, depth), dropout ppm
    cnn:  H, W, classes, L, L x channels, filter, padding, pool, dropout ppm
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .baseline import build_cnn, cnn_descriptor
from .errors import FormatError, TruncatedFileError
from .network import Network, build_qcnn
from .training import RmsPropState

MAGIC = b"QCCK"
VERSION = 1
TAGS = {"qcnn": 1, "cnn": 2}


@dataclass
class Checkpoint:
    kind: str
    descriptor: list[int]
    params: np.ndarray
    optimizer: RmsPropState
    epoch: int = 0


def describe(network: Network) -> list[int]:
    return cnn_descriptor(network) if network.kind == "cnn" else network.descriptor()


def build_from_descriptor(kind: str, fields: list[int]) -> Network:
    """Rebuild an (uninitialised) network from checkpoint architecture fields.

    Raises ``FormatError`` for a malformed field list and
    ``ConfigurationError`` if the fields describe an invalid shape chain.
    """
    n_layers = fields[3] if len(fields) >= 4 else -1
    expected = 4 * n_layers + 5 if kind == "qcnn" else n_layers + 8
    if n_layers < 0 or len(fields) != expected:
        raise FormatError(f"malformed {kind} architecture descriptor {fields}", 10)
    h, w, classes = fields[:3]
    rest = fields[4:]
    dropout = rest[-1] / 1_000_000
    if kind == "qcnn":
        convs = [rest[4 * i : 4 * i + 4] for i in range(n_layers)]
        filters, strides, pads, depths = (list(col) for col in zip(*convs)) if convs else ([], [], [], [])
        return build_qcnn((h, w), filters, strides, depths, pads, num_classes=classes, dropout=dropout)
    channels = rest[:n_layers]
    f, p, pool = rest[n_layers : n_layers + 3]
    return build_cnn((h, w), channels, f, p, pool, num_classes=classes, dropout=dropout)


def from_network(network: Network, optimizer: RmsPropState, epoch: int) -> Checkpoint:
    return Checkpoint(network.kind, describe(network), network.get_params().copy(), optimizer, epoch)


def to_network(ckpt: Checkpoint) -> Network:
    network = build_from_descriptor(ckpt.kind, ckpt.descriptor)
    network.set_params(ckpt.params)
    return network


def checkpoint_to_bytes(ckpt: Checkpoint) -> bytes:
    opt = ckpt.optimizer
    params = np.asarray(ckpt.params, dtype="<f8")
    return b"".join(
        [
            MAGIC,
            bytes([VERSION, TAGS[ckpt.kind]]),
            struct.pack(f"<I{len(ckpt.descriptor)}I", len(ckpt.descriptor), *ckpt.descriptor),
            struct.pack("<IQ3dQ", ckpt.epoch, opt.step_count, opt.eta, opt.alpha_smooth, opt.epsilon, params.size),
            params.tobytes(),
            np.asarray(opt.sq_avg, dtype="<f8").tobytes(),
        ]
    )


def checkpoint_from_bytes(buf: bytes) -> Checkpoint:
    def need(offset, count, what):
        if offset + count > len(buf):
            raise TruncatedFileError(f"checkpoint truncated while reading {what}", len(buf))

    need(0, 6, "header")
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    if buf[4] != VERSION:
        raise FormatError(f"unsupported checkpoint version {buf[4]}", 4)
    kinds = {v: k for k, v in TAGS.items()}
    if buf[5] not in kinds:
        raise FormatError(f"unknown model tag {buf[5]}", 5)
    kind = kinds[buf[5]]
    need(6, 4, "descriptor length")
    (k,) = struct.unpack_from("<I", buf, 6)
    pos = 10
    need(pos, 4 * k, "descriptor")
    fields = list(struct.unpack_from(f"<{k}I", buf, pos))
    pos += 4 * k
    trailer = struct.calcsize("<IQ3dQ")
    need(pos, trailer, "optimizer header")
    epoch, steps, eta, alpha, eps, count = struct.unpack_from("<IQ3dQ", buf, pos)
    pos += trailer
    need(pos, 16 * count, "parameters")
    params = np.frombuffer(buf, dtype="<f8", count=count, offset=pos).astype(np.float64)
    sq_avg = np.frombuffer(buf, dtype="<f8", count=count, offset=pos + 8 * count).astype(np.float64)
    pos += 16 * count
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} unexpected trailing bytes", pos)
    opt = RmsPropState(int(count), eta, alpha, eps, sq_avg=sq_avg, step_count=steps)
    return Checkpoint(kind, fields, params, opt, epoch)


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_to_bytes(ckpt))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(Path(path).read_bytes())
