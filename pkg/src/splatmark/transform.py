"""Orthonormal 1-D DCT over the flattened SH vector, and the keyed mid-band carrier pool."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.fft

from splatmark.gsmodel import DimensionError
from splatmark.keying import KeySet, derive_permutation

DEFAULT_BAND = (0.10, 0.18)


class CarrierConfigError(ValueError):
    pass


def dct_forward(x) -> np.ndarray:
    """Orthonormal DCT-II."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] < 1:
        raise ValueError("dct_forward expects a non-empty 1-D vector")
    return scipy.fft.dct(x, type=2, norm="ortho")


def dct_inverse(X) -> np.ndarray:
    """Orthonormal DCT-III, the inverse of :func:`dct_forward`."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 1 or X.shape[0] < 1:
        raise ValueError("dct_inverse expects a non-empty 1-D vector")
    return scipy.fft.idct(X, type=2, norm="ortho")


def band_limits(L: int, band=DEFAULT_BAND) -> tuple[int, int]:
    """Absolute [lo, hi] indices for a fractional band, half-open convention
    lo = ceil(band_lo * L), hi = floor(band_hi * L) - 1."""
    blo, bhi = (float(b) for b in band)
    if not 0.0 <= blo < bhi <= 1.0:
        raise CarrierConfigError(f"band must satisfy 0 <= lo < hi <= 1, got {band}")
    # round() keeps e.g. 0.18 * 100 = 18.000000000000004 from spilling over
    lo = math.ceil(round(blo * L, 9))
    hi = math.floor(round(bhi * L, 9)) - 1
    if hi < lo:
        raise CarrierConfigError(f"band {band} is empty for L={L}")
    return lo, hi


@dataclass(frozen=True, eq=False)
class CarrierPool:
    lo: int
    hi: int
    band: tuple[float, float]
    permuted_order: np.ndarray

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    T = size

    def absolute_indices(self) -> np.ndarray:
        """Absolute DCT index for each slot t: lo + permuted_order[t]."""
        return self.lo + np.asarray(self.permuted_order, dtype=np.int64)


def build_carrier_pool(L: int, band=DEFAULT_BAND, keys: KeySet | None = None, claim=None) -> CarrierPool:
    lo, hi = band_limits(L, band)
    T = hi - lo + 1
    if keys is None:
        order = np.arange(T, dtype=np.int64)
    else:
        order = derive_permutation(keys, claim, T)
    return CarrierPool(lo=lo, hi=hi, band=(float(band[0]), float(band[1])), permuted_order=order)


def read_carriers(X, pool: CarrierPool) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] <= pool.hi:
        raise DimensionError(f"DCT vector of length {X.shape[0]} too short for pool ending at {pool.hi}")
    return X[pool.absolute_indices()]


def write_carriers(X, pool: CarrierPool, values) -> np.ndarray:
    """Copy of X with the pool's carrier slots replaced by ``values``."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (pool.size,):
        raise DimensionError(f"expected {pool.size} carrier values, got {values.shape}")
    out = np.array(X, dtype=np.float64, copy=True)
    if out.shape[0] <= pool.hi:
        raise DimensionError(f"DCT vector of length {out.shape[0]} too short for pool ending at {pool.hi}")
    out[pool.absolute_indices()] = values
    return out
