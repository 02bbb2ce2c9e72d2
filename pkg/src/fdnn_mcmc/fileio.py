"""Self-describing binary containers for snapshots, POD bases and checkpoints.

Layout (all three kinds)::

    <MAGIC> <version>\\n
    key = value\\n          (one per line, UTF-8, order preserved)
    ...
    payload_bytes = <int>\\n
    END\\n
    <payload: float64 little-endian blocks, concatenated>

Each kind fixes the order and memory layout of its payload blocks; see the
``write_*`` functions below. Readers validate the magic line, the version,
and that ``payload_bytes`` matches the dimensions declared in the header.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
SNAPSHOT_MAGIC = "FDNN-SNAPSHOTS"
BASIS_MAGIC = "FDNN-POD-BASIS"
CHECKPOINT_MAGIC = "FDNN-CHECKPOINT"

_LE = np.dtype("<f8")


class FormatError(ValueError):
    pass


def _write(path, magic: str, header: dict, blocks: list[bytes]) -> None:
    payload = b"".join(blocks)
    lines = [f"{magic} {FORMAT_VERSION}"]
    for key, value in header.items():
        text = str(value)
        if "\n" in text or "=" in key:
            raise ValueError(f"header entry {key!r} is not representable")
        lines.append(f"{key} = {text}")
    lines.append(f"payload_bytes = {len(payload)}")
    lines.append("END")
    with open(path, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode())
        fh.write(payload)


def _read(path, magic: str) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    header = {}
    pos = 0
    lineno = 0
    while True:
        end = data.find(b"\n", pos)
        if end < 0:
            raise FormatError(f"{path}: header not terminated by END")
        try:
            line = data[pos:end].decode()
        except UnicodeDecodeError:
            raise FormatError(f"{path}:{lineno + 1}: header is not text") from None
        pos = end + 1
        lineno += 1
        if lineno == 1:
            parts = line.split()
            if len(parts) != 2 or parts[0] != magic:
                raise FormatError(f"{path}: expected a {magic} file, found {line[:40]!r}")
            if parts[1] != str(FORMAT_VERSION):
                raise FormatError(f"{path}: unsupported format version {parts[1]}")
            continue
        if line == "END":
            break
        key, sep, value = line.partition(" = ")
        if not sep:
            raise FormatError(f"{path}:{lineno}: malformed header line {line!r}")
        header[key] = value
    payload = data[pos:]
    if int(header.get("payload_bytes", -1)) != len(payload):
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header says {header.get('payload_bytes')}")
    return header, payload


def _blocks(payload: bytes, sizes: list[int], path) -> list[np.ndarray]:
    if sum(sizes) * 8 != len(payload):
        raise FormatError(f"{path}: payload size does not match header dimensions")
    arr = np.frombuffer(payload, dtype=_LE).astype(float)
    out, pos = [], 0
    for n in sizes:
        out.append(arr[pos:pos + n].copy())
        pos += n
    return out


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# snapshots: parameters (N_s x N_xi, row-major) then S (N_x x N_s, column-major)

def write_snapshots(path, parameters: np.ndarray, snapshots: np.ndarray, meta: dict | None = None) -> None:
    parameters = np.asarray(parameters, dtype=float)
    snapshots = np.asarray(snapshots, dtype=float)
    n_x, n_s = snapshots.shape
    if parameters.shape[0] != n_s:
        raise ValueError("one parameter vector per snapshot column required")
    header = {"N_x": n_x, "N_s": n_s, "N_xi": parameters.shape[1]}
    header.update(meta or {})
    _write(path, SNAPSHOT_MAGIC, header, [
        np.ascontiguousarray(parameters, dtype=_LE).tobytes(order="C"),
        np.asarray(snapshots, dtype=_LE).tobytes(order="F"),
    ])


def read_snapshots(path):
    header, payload = _read(path, SNAPSHOT_MAGIC)
    n_x, n_s, n_xi = int(header["N_x"]), int(header["N_s"]), int(header["N_xi"])
    p, s = _blocks(payload, [n_s * n_xi, n_x * n_s], path)
    return p.reshape(n_s, n_xi), s.reshape(n_x, n_s, order="F"), header


# basis: V (N_x x k, column-major) then all singular values

def write_basis(path, V: np.ndarray, singular_values: np.ndarray, meta: dict | None = None) -> None:
    n_x, k = V.shape
    header = {"N_x": n_x, "k": k, "n_singular_values": len(singular_values)}
    header.update(meta or {})
    _write(path, BASIS_MAGIC, header, [
        np.asarray(V, dtype=_LE).tobytes(order="F"),
        np.asarray(singular_values, dtype=_LE).tobytes(),
    ])


def read_basis(path):
    header, payload = _read(path, BASIS_MAGIC)
    n_x, k, r = int(header["N_x"]), int(header["k"]), int(header["n_singular_values"])
    V, sv = _blocks(payload, [n_x * k, r], path)
    return V.reshape(n_x, k, order="F"), sv, header


# checkpoint: W_0..W_{L-1} (row-major) then b_0..b_{L-2}

def write_checkpoint(path, theta, cfg, meta: dict | None = None) -> None:
    header = {
        "L": cfg.L, "input_dim": cfg.input_dim, "hidden_width": cfg.hidden_width,
        "output_dim": cfg.output_dim, "gamma": repr(cfg.gamma), "h": repr(cfg.h),
        "epsilon": repr(cfg.activation.epsilon), "lambda": repr(cfg.lam),
    }
    header.update(meta or {})
    theta.check(cfg)
    _write(path, CHECKPOINT_MAGIC, header,
           [np.ascontiguousarray(a, dtype=_LE).tobytes(order="C") for a in theta.arrays()])


def read_checkpoint(path):
    from .fracnet import ActivationSpec, FracNetConfig, Theta

    header, payload = _read(path, CHECKPOINT_MAGIC)
    try:
        cfg = FracNetConfig(
            L=int(header["L"]), input_dim=int(header["input_dim"]),
            hidden_width=int(header["hidden_width"]), output_dim=int(header["output_dim"]),
            gamma=float(header["gamma"]), h=float(header["h"]), lam=float(header["lambda"]),
            activation=ActivationSpec(float(header["epsilon"])),
        )
    except KeyError as exc:
        raise FormatError(f"{path}: checkpoint header lacks {exc}") from None
    (flat,) = _blocks(payload, [cfg.n_params], path)
    return Theta.from_flat(flat, cfg), cfg, header
