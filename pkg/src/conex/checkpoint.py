"""Versioned binary checkpoint format.

Layout::

    KGECKPT1\\n
    key=value\\n ...        metadata, one per line
    \\n                     blank line ends the header
    <float64 little-endian payload>

Payload order: entity re-plane, entity im-plane, relation re, relation im,
then for ConEx the kernels, W (row-major), b, and for each of bn0, bn1, bn2:
weight, bias, running mean, running variance. DistMult stores its (zero)
imaginary planes too so every model shares one layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import ModelKind, ModelParams, count_parameters, parameter_count
from .tensorcore import BatchNorm, ConvParams

MAGIC = b"KGECKPT1\n"
FORMAT_VERSION = 1
_DTYPE = np.dtype("<f8")


class CheckpointError(ValueError):
    code = "checkpoint-error"

    def __str__(self):
        return f"{self.code}: {super().__str__()}"


class BadMagicError(CheckpointError):
    code = "bad-magic"


class BadHeaderError(CheckpointError):
    code = "bad-header"


class TruncatedPayloadError(CheckpointError):
    code = "truncated-payload"


class ShapeMismatchError(CheckpointError):
    code = "shape-mismatch"


class VocabMismatchError(CheckpointError):
    code = "vocab-mismatch"


@dataclass
class Checkpoint:
    params: ModelParams
    metadata: dict[str, str] = field(default_factory=dict)

    @property
    def vocab_hash(self) -> str:
        return self.metadata.get("vocab_hash", "")

    def check_vocab(self, digest: str) -> None:
        if self.vocab_hash != digest:
            raise VocabMismatchError(
                f"checkpoint was trained on vocabulary {self.vocab_hash[:12]}..., "
                f"dataset has {digest[:12]}..."
            )


def layout(kind, num_entities: int, num_relations: int, d: int, c: int) -> list[tuple[str, tuple[int, ...]]]:
    kind = ModelKind.parse(kind)
    out = [
        ("entity.re", (num_entities, d)), ("entity.im", (num_entities, d)),
        ("relation.re", (num_relations, d)), ("relation.im", (num_relations, d)),
    ]
    if kind is ModelKind.CONEX:
        out += [("conv.kernels", (c, 3, 3)), ("conv.W", (c * 4 * d, 2 * d)), ("conv.b", (2 * d,))]
        for bn, n in (("bn0", 1), ("bn1", c), ("bn2", 2 * d)):
            out += [(f"conv.{bn}.{part}", (n,)) for part in ("weight", "bias", "running_mean", "running_var")]
    return out


def _arrays(params: ModelParams) -> dict[str, np.ndarray]:
    arrays = {"entity.re": params.ent_re, "entity.im": params.ent_im,
              "relation.re": params.rel_re, "relation.im": params.rel_im}
    if params.conv is not None:
        conv = params.conv
        arrays.update({"conv.kernels": conv.kernels, "conv.W": conv.W, "conv.b": conv.b})
        for name in ("bn0", "bn1", "bn2"):
            bn = getattr(conv, name)
            for part in ("weight", "bias", "running_mean", "running_var"):
                arrays[f"conv.{name}.{part}"] = getattr(bn, part)
    return arrays


def save_checkpoint(path: str | Path, params: ModelParams, metadata: dict | None = None) -> None:
    d, c = params.dim, params.channels
    shapes = layout(params.kind, params.num_entities, params.num_relations, d, c)
    header = {
        "format_version": FORMAT_VERSION,
        "kind": params.kind.value,
        "d": d,
        "c": c,
        "num_entities": params.num_entities,
        "num_relations": params.num_relations,
        "n_parameters": count_parameters(params),
        "payload_scalars": sum(int(np.prod(s)) for _, s in shapes),
    }
    for key, value in (metadata or {}).items():
        if key in header:
            continue
        text = str(value)
        if "\n" in text or "=" in str(key):
            raise ValueError(f"metadata {key!r} cannot be stored in a line-oriented header")
        header[key] = text
    arrays = _arrays(params)
    with open(path, "wb") as f:
        f.write(MAGIC)
        for key, value in header.items():
            f.write(f"{key}={value}\n".encode())
        f.write(b"\n")
        for name, shape in shapes:
            a = np.ascontiguousarray(arrays[name], dtype=_DTYPE)
            assert a.shape == shape, (name, a.shape, shape)
            f.write(a.tobytes(order="C"))


def _read_header(f) -> dict[str, str]:
    if f.read(len(MAGIC)) != MAGIC:
        raise BadMagicError("not a checkpoint file (magic mismatch)")
    meta: dict[str, str] = {}
    while True:
        line = f.readline()
        if not line:
            raise TruncatedPayloadError("header not terminated")
        line = line.decode("utf-8").rstrip("\n")
        if not line:
            return meta
        key, sep, value = line.partition("=")
        if not sep:
            raise BadHeaderError(f"malformed header line {line!r}")
        meta[key] = value


def read_metadata(path: str | Path) -> dict[str, str]:
    with open(path, "rb") as f:
        return _read_header(f)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as f:
        meta = _read_header(f)
        payload = f.read()
    try:
        version = int(meta["format_version"])
        kind = ModelKind.parse(meta["kind"])
        d, c = int(meta["d"]), int(meta["c"])
        n_ent, n_rel = int(meta["num_entities"]), int(meta["num_relations"])
        declared = int(meta["payload_scalars"])
    except (KeyError, ValueError) as e:
        raise BadHeaderError(f"missing or invalid header field: {e}") from None
    if version != FORMAT_VERSION:
        raise BadHeaderError(f"unsupported format version {version}")
    shapes = layout(kind, n_ent, n_rel, d, c)
    expected = sum(int(np.prod(s)) for _, s in shapes)
    if declared != expected:
        raise ShapeMismatchError(f"header declares {declared} scalars, shapes imply {expected}")
    if "n_parameters" in meta and int(meta["n_parameters"]) != parameter_count(kind, n_ent, n_rel, d, c):
        raise ShapeMismatchError("parameter count in header disagrees with shapes")
    nbytes = expected * _DTYPE.itemsize
    if len(payload) < nbytes:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, expected {nbytes}")
    if len(payload) > nbytes:
        raise ShapeMismatchError(f"{len(payload) - nbytes} unexpected trailing bytes")

    values = np.frombuffer(payload, dtype=_DTYPE).astype(np.float64)
    arrays = {}
    offset = 0
    for name, shape in shapes:
        size = int(np.prod(shape))
        arrays[name] = values[offset : offset + size].reshape(shape).copy()
        offset += size
    conv = None
    if kind is ModelKind.CONEX:
        bns = [BatchNorm(*(arrays[f"conv.{bn}.{part}"] for part in ("weight", "bias", "running_mean", "running_var")))
               for bn in ("bn0", "bn1", "bn2")]
        conv = ConvParams(arrays["conv.kernels"], arrays["conv.W"], arrays["conv.b"], *bns)
    params = ModelParams(kind, arrays["entity.re"], arrays["entity.im"],
                         arrays["relation.re"], arrays["relation.im"], conv)
    return Checkpoint(params, meta)
