"""Binary container for trained models and optimizer checkpoints.

Layout: magic "RLRM", version u16, kind u16, four u64 dims, activation id
u16, then the raw float64 little-endian payload arrays in a fixed order per
kind. Round trips are bit-exact, which the persistence tests rely on.
"""

from __future__ import annotations

import struct

import numpy as np

from .activations import ACTIVATION_FROM_ID, ACTIVATION_IDS, get_activation
from .models import RFModel, TwoLayerModel

MAGIC = b"RLRM"
VERSION = 1

KIND_RF = 0
KIND_TWO_LAYER = 1
KIND_RECON_STATE = 2

_HEADER = struct.Struct("<4sHH4QH")


class ContainerFormatError(ValueError):
    """Malformed or unsupported model container."""


def _write(path, kind, dims, activation_id, arrays):
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, kind, *dims, activation_id))
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read(path):
    with open(path, "rb") as fh:
        header = fh.read(_HEADER.size)
        if len(header) != _HEADER.size:
            raise ContainerFormatError(f"{path}: truncated header")
        magic, version, kind, d0, d1, d2, d3, act_id = _HEADER.unpack(header)
        if magic != MAGIC:
            raise ContainerFormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise ContainerFormatError(f"{path}: unsupported version {version}")
        payload = fh.read()
    return kind, (d0, d1, d2, d3), act_id, payload


def _take(payload, offset, shape):
    count = int(np.prod(shape))
    nbytes = count * 8
    if offset + nbytes > len(payload):
        raise ContainerFormatError("container payload shorter than declared dims")
    arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
    return arr.astype(np.float64).reshape(shape), offset + nbytes


def save_model(path, model):
    """Persist an RFModel or TwoLayerModel."""
    if isinstance(model, RFModel):
        act_id = ACTIVATION_IDS.get(model.activation.name)
        if act_id is None:
            raise ContainerFormatError(
                f"activation {model.activation.name!r} has no persistent id"
            )
        dims = (model.d, model.p, 0, model.k)
        _write(path, KIND_RF, dims, act_id, [model.V, model.theta_star])
    elif isinstance(model, TwoLayerModel):
        act_id = ACTIVATION_IDS.get(model.activation.name)
        if act_id is None:
            raise ContainerFormatError(
                f"activation {model.activation.name!r} has no persistent id"
            )
        dims = (model.d, model.p_last, model.h, model.k)
        _write(path, KIND_TWO_LAYER, dims, act_id,
               [model.theta1, model.theta2, model.theta2_init])
    else:
        raise ContainerFormatError(f"cannot persist object of type {type(model)!r}")


def load_model(path):
    kind, dims, act_id, payload = _read(path)
    if act_id not in ACTIVATION_FROM_ID:
        raise ContainerFormatError(f"{path}: unknown activation id {act_id}")
    activation = get_activation(ACTIVATION_FROM_ID[act_id])
    d, p, h, k = dims
    if kind == KIND_RF:
        v, off = _take(payload, 0, (p, d))
        theta, off = _take(payload, off, (p, k))
        return RFModel(V=v, activation=activation, theta_star=theta)
    if kind == KIND_TWO_LAYER:
        theta1, off = _take(payload, 0, (h, d))
        theta2, off = _take(payload, off, (k, h))
        theta2_init, off = _take(payload, off, (k, h))
        return TwoLayerModel(theta1, theta2, theta2_init, activation)
    raise ContainerFormatError(f"{path}: kind {kind} is not a model container")


def save_recon_state(path, x_hat, momentum, iteration):
    """Checkpoint a reconstruction optimizer (candidates + momentum buffer)."""
    n, d = x_hat.shape
    _write(path, KIND_RECON_STATE, (d, n, 0, 0), 0,
           [x_hat, momentum, np.array([float(iteration)])])


def load_recon_state(path):
    kind, dims, _act_id, payload = _read(path)
    if kind != KIND_RECON_STATE:
        raise ContainerFormatError(f"{path}: kind {kind} is not a recon-state container")
    d, n, _, _ = dims
    x_hat, off = _take(payload, 0, (n, d))
    momentum, off = _take(payload, off, (n, d))
    iteration, _ = _take(payload, off, (1,))
    return x_hat, momentum, int(iteration[0])
