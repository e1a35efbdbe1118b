"""Content-addressed external memory with one read and one write head."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

COSINE_EPS = 1e-8
INIT_VALUE = 1e-6


@dataclass
class MemoryInterface:
    write_key: Tensor
    write_strength: Tensor  # (..., 1), > 0
    erase: Tensor  # (..., m), in (0, 1)
    add: Tensor
    read_key: Tensor
    read_strength: Tensor  # (..., 1), > 0


def interface_width(slot_dim: int) -> int:
    """Packed interface size: four slot-width vectors plus two strengths."""
    return 4 * slot_dim + 2


def init_memory(n_slots: int, slot_dim: int, batch=None) -> Tensor:
    shape = (n_slots, slot_dim) if batch is None else (batch, n_slots, slot_dim)
    return Tensor(np.full(shape, INIT_VALUE))


def split_interface(packed: Tensor, slot_dim: int) -> MemoryInterface:
    """Unpack a raw interface vector, constraining strengths and erase gates."""
    m = slot_dim
    if packed.shape[-1] != interface_width(m):
        raise ad.ShapeError(f"interface vector width {packed.shape[-1]} != {interface_width(m)}")
    return MemoryInterface(
        write_key=ad.slice_(packed, 0, m),
        write_strength=1.0 + ad.softplus(ad.slice_(packed, m, m + 1)),
        erase=ad.sigmoid(ad.slice_(packed, m + 1, 2 * m + 1)),
        add=ad.slice_(packed, 2 * m + 1, 3 * m + 1),
        read_key=ad.slice_(packed, 3 * m + 1, 4 * m + 1),
        read_strength=1.0 + ad.softplus(ad.slice_(packed, 4 * m + 1, 4 * m + 2)),
    )


def content_address(key: Tensor, strength, mem: Tensor) -> Tensor:
    """softmax over slots of strength * cosine(key, slot).

    ``key`` is (..., m), ``strength`` broadcastable to (..., 1), ``mem`` is
    (..., n, m).  Returns (..., n).
    """
    if key.shape[-1] != mem.shape[-1]:
        raise ad.ShapeError(f"content_address: key {key.shape} vs memory {mem.shape}")
    lead, m = key.shape[:-1], key.shape[-1]
    n = mem.shape[-2]
    dots = ad.reshape(ad.matmul(mem, ad.reshape(key, lead + (m, 1))), lead + (n,))
    denom = ad.norm(mem) * ad.norm(key, keepdims=True) + COSINE_EPS
    return ad.softmax((dots / denom) * strength)


def memory_write(iface: MemoryInterface, mem_prev: Tensor) -> Tensor:
    """Erase-then-add write at the content-addressed write weighting."""
    w = content_address(iface.write_key, iface.write_strength, mem_prev)
    lead, n, m = w.shape[:-1], w.shape[-1], mem_prev.shape[-1]
    w_col = ad.reshape(w, lead + (n, 1))
    erase = ad.reshape(iface.erase, lead + (1, m))
    add = ad.reshape(iface.add, lead + (1, m))
    return mem_prev * (1.0 - w_col * erase) + w_col * add


def memory_read(iface: MemoryInterface, mem: Tensor) -> Tensor:
    w = content_address(iface.read_key, iface.read_strength, mem)
    lead, n, m = w.shape[:-1], w.shape[-1], mem.shape[-1]
    return ad.reshape(ad.matmul(ad.reshape(w, lead + (1, n)), mem), lead + (m,))
