"""Channel-by-channel batch packing and plaintext encodings.

One ciphertext carries one channel for the whole batch: image ``j``'s
channel data sits, row-major flattened, in the contiguous slot segment
``[j*m, (j+1)*m)`` with ``m = H*W``. Everything here is a pure function of
immutable inputs.

Convolution border handling is zero padding, realized entirely inside the
encoded kernel taps: a tap plaintext carries the tap weight at every slot
whose shifted source pixel stays inside the image, and exactly zero
elsewhere. This also prevents bleed between adjacent batch segments, since
an out-of-image read after rotation always lands in a neighbouring row or
segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import CipherVec, PlainVec, VectorEngine
from .errors import (
    LengthExceedsSlots,
    OverlappingRanges,
    ShapeMismatch,
    SlotConstraintViolated,
)


@dataclass(frozen=True)
class PackingLayout:
    """Slot geometry of one pipeline stage.

    n: ciphertext slot count
    H, W: spatial height and width of a channel
    b: batch segments per ciphertext
    p: channel count at this stage (informational for planning)
    """

    n: int
    H: int
    W: int
    b: int
    p: int = 1

    def __post_init__(self) -> None:
        if min(self.n, self.H, self.W, self.b, self.p) < 1:
            raise ShapeMismatch(f"layout fields must be positive: {self}")
        if self.m * self.b > self.n:
            raise SlotConstraintViolated(
                f"m*b = {self.m}*{self.b} = {self.m * self.b} exceeds n = {self.n}"
            )

    @property
    def m(self) -> int:
        """Slots per image channel."""
        return self.H * self.W

    @property
    def occupied(self) -> int:
        return self.m * self.b

    def slot(self, image: int, y: int, x: int) -> int:
        return image * self.m + y * self.W + x

    def strided(self, r: int = 2) -> "PackingLayout":
        """Layout after stride-``r`` downsampling and compaction."""
        if self.H % r or self.W % r:
            raise ShapeMismatch(f"{self.H}x{self.W} not divisible by stride {r}")
        return PackingLayout(n=self.n, H=self.H // r, W=self.W // r, b=self.b, p=self.p)

    def with_batch(self, b: int) -> "PackingLayout":
        return PackingLayout(n=self.n, H=self.H, W=self.W, b=b, p=self.p)

    def with_channels(self, p: int) -> "PackingLayout":
        return PackingLayout(n=self.n, H=self.H, W=self.W, b=self.b, p=p)


@dataclass(frozen=True)
class TapOffset:
    """Spatial kernel offset; (0, 0) is the kernel center."""

    dy: int
    dx: int


@dataclass(frozen=True)
class EncodedKernelTap:
    """One kernel tap replicated across all batch segments, border-masked."""

    plain: PlainVec


@dataclass(frozen=True)
class SegmentMask:
    """0/1 plaintext supported on a union of slot intervals."""

    plain: PlainVec


def pack_inputs(
    engine: VectorEngine, batch: Sequence[np.ndarray], layout: PackingLayout
) -> list[CipherVec]:
    """Encrypt a batch of (p, H, W) images into p channel ciphertexts.

    Ciphertext i carries channel i of image j in segment j; slots beyond
    ``b*m`` are zero.
    """
    if len(batch) != layout.b:
        raise ShapeMismatch(f"batch size {len(batch)} != layout segments {layout.b}")
    images = [np.asarray(img, dtype=np.float64) for img in batch]
    for img in images:
        if img.shape != (layout.p, layout.H, layout.W):
            raise ShapeMismatch(
                f"image shape {img.shape} != ({layout.p}, {layout.H}, {layout.W})"
            )
    cts = []
    for i in range(layout.p):
        flat = np.concatenate([img[i].ravel() for img in images])
        cts.append(engine.encrypt(flat))
    return cts


def unpack_outputs(slots: np.ndarray | CipherVec, layout: PackingLayout, *,
                   engine: VectorEngine | None = None) -> list[np.ndarray]:
    """Split a decrypted slot vector back into b per-image vectors of length m."""
    if isinstance(slots, CipherVec):
        if engine is None:
            raise ValueError("decrypting a CipherVec requires the engine")
        slots = engine.decrypt(slots)
    slots = np.asarray(slots, dtype=np.float64)
    m = layout.m
    return [slots[j * m : (j + 1) * m].copy() for j in range(layout.b)]


def tap_valid_mask(tap: TapOffset, layout: PackingLayout) -> np.ndarray:
    """Single-segment 0/1 mask of output pixels whose tap read stays in-image."""
    ys = np.arange(layout.H)[:, None] + tap.dy
    xs = np.arange(layout.W)[None, :] + tap.dx
    valid = (ys >= 0) & (ys < layout.H) & (xs >= 0) & (xs < layout.W)
    return valid.astype(np.float64).ravel()


def encode_kernel_tap(w: float, tap: TapOffset, layout: PackingLayout) -> EncodedKernelTap:
    """Encode one scalar tap weight, border-zeroed and batch-replicated."""
    segment = float(w) * tap_valid_mask(tap, layout)
    slots = np.zeros(layout.n, dtype=np.float64)
    slots[: layout.occupied] = np.tile(segment, layout.b)
    return EncodedKernelTap(plain=PlainVec(slots=slots))


def encode_replicated(
    vec: Sequence[float], stride: int, n: int, copies: int | None = None
) -> PlainVec:
    """Place ``vec`` at offsets 0, stride, 2*stride, ...; zeros elsewhere.

    With ``copies=None`` the pattern fills every whole stride window in n.
    """
    vec = np.asarray(vec, dtype=np.float64).ravel()
    d = vec.shape[0]
    if d > stride:
        raise LengthExceedsSlots(f"vector length {d} > stride {stride}")
    if copies is None:
        copies = n // stride
    if copies * stride > n:
        raise LengthExceedsSlots(f"{copies} copies at stride {stride} exceed {n} slots")
    slots = np.zeros(n, dtype=np.float64)
    for c in range(copies):
        slots[c * stride : c * stride + d] = vec
    return PlainVec(slots=slots)


def make_segment_mask(ranges: Sequence[tuple[int, int]], n: int) -> SegmentMask:
    """1 on the union of [start, end) intervals, 0 elsewhere."""
    slots = np.zeros(n, dtype=np.float64)
    for start, end in ranges:
        if not (0 <= start <= end <= n):
            raise OverlappingRanges(f"interval [{start}, {end}) outside [0, {n})")
        if np.any(slots[start:end]):
            raise OverlappingRanges(f"interval [{start}, {end}) overlaps an earlier one")
        slots[start:end] = 1.0
    return SegmentMask(plain=PlainVec(slots=slots))
