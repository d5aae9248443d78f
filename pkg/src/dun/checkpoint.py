"""Checkpoint container: magic "DUNCKPT1", key=value header, raw float64 payload.

Layout: the 8-byte magic, an 8-byte little-endian header length, the UTF-8
header (architecture fields plus the seed, one key=value per line), then all
parameter tensors as little-endian float64 in declaration order: input block
(weight, bias), each hidden block (weight, bias, then scale/shift/running mean
/running var when batch norm is on), output block (weight, bias), prior
logits, variational logits, noise log-std. Ensembles are directories of member
checkpoints plus a manifest.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from dun.blocks import ArchitectureConfig
from dun.model import DunModel, build_dun

MAGIC = b"DUNCKPT1"


def _payload_arrays(model: DunModel) -> list[np.ndarray]:
    arrays = [model.input_block.weight, model.input_block.bias]
    for blk in model.hidden:
        arrays += [blk.lin.weight, blk.lin.bias]
        if blk.bn is not None:
            arrays += [blk.bn.scale, blk.bn.shift, blk.bn.running_mean, blk.bn.running_var]
    arrays += [model.output_block.weight, model.output_block.bias]
    arrays += [model.prior.logits, model.q_logits, model.noise_log_std]
    return arrays


def save_checkpoint(model: DunModel, path) -> None:
    cfg = model.config
    header_lines = [
        f"input_dim={cfg.input_dim}",
        f"hidden_width={cfg.hidden_width}",
        f"max_depth={cfg.max_depth}",
        f"output_dim={cfg.output_dim}",
        f"residual={str(cfg.residual).lower()}",
        f"batchnorm={str(cfg.batchnorm).lower()}",
        f"task={cfg.task}",
        f"dropout_p={cfg.dropout_p!r}",
        f"seed={model.seed}",
    ]
    header = ("\n".join(header_lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for a in _payload_arrays(model):
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path) -> DunModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint (bad magic {magic!r})")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        fields = {}
        for line in fh.read(header_len).decode("utf-8").splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                fields[key.strip()] = value.strip()
        payload = np.frombuffer(fh.read(), dtype="<f8")

    config = ArchitectureConfig(
        input_dim=int(fields["input_dim"]),
        hidden_width=int(fields["hidden_width"]),
        max_depth=int(fields["max_depth"]),
        output_dim=int(fields["output_dim"]),
        residual=fields["residual"] == "true",
        batchnorm=fields["batchnorm"] == "true",
        task=fields["task"],
        dropout_p=float(fields["dropout_p"]),
    )
    model = build_dun(config, seed=int(fields["seed"]))
    offset = 0
    for a in _payload_arrays(model):
        chunk = payload[offset : offset + a.size]
        if chunk.size != a.size:
            raise ValueError(f"{path}: truncated payload")
        a[...] = chunk.reshape(a.shape)
        offset += a.size
    if offset != payload.size:
        raise ValueError(f"{path}: trailing payload bytes")
    return model


def save_ensemble(ens, path) -> None:
    from dun.baselines import EnsembleModel  # noqa: F401  (type reference)

    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for k, member in enumerate(ens.members):
        save_checkpoint(member, root / f"member_{k}.ckpt")
    lines = [
        f"kind={ens.kind}",
        f"count={len(ens.members)}",
        "seeds=" + ",".join(str(s) for s in ens.seeds),
        "depths=" + ",".join(str(d) for d in ens.depths),
    ]
    (root / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_ensemble(path):
    from dun.baselines import EnsembleModel

    root = Path(path)
    manifest = {}
    for line in (root / "manifest.txt").read_text().splitlines():
        if line.strip():
            key, _, value = line.partition("=")
            manifest[key.strip()] = value.strip()
    count = int(manifest["count"])
    members = [load_checkpoint(root / f"member_{k}.ckpt") for k in range(count)]
    seeds = [int(s) for s in manifest["seeds"].split(",")]
    return EnsembleModel(manifest["kind"], members, seeds)
