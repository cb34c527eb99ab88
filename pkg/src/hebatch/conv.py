"""Batched homomorphic convolution.

A 3x3 layer aligns each input-channel ciphertext into the nine spatial
shifts using only the four rotation keys {-1, +1, -W, +W}: the two unit
rotations are applied first, then each of the three resulting ciphertexts
(including the input itself) is re-rotated by +-W. That is exactly 8
counted rotations per input channel, and the aligned set is shared across
all output channels, so a full layer costs 8*p rotations and k^2*p*q
plaintext multiplications regardless of q.

Tap-to-rotation correspondence: the output pixel (y, x) reads the input
pixel (y+dy, x+dx), which lives at slot offset +(dy*W + dx); tap (dy, dx)
therefore consumes ``rotate(input, dy*W + dx)``, and border validity is
baked into the encoded tap plaintext (zero padding).

Stride-2 output compaction is a three-phase mask-rotate-add log-gather:
columns within each kept row, then kept rows into a per-image contiguous
block, then per-image blocks down to the reduced segment stride. Offsets
are deterministic functions of the layout so the planner can register them
per stage.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .engine import CipherVec, PlainVec, VectorEngine
from .errors import ShapeMismatch, UnsupportedKernel, UnsupportedStride
from .packing import PackingLayout, TapOffset, encode_kernel_tap

AlignedSet = dict[tuple[int, int], CipherVec]


@dataclass(frozen=True)
class ConvSpec:
    """One convolution layer: weights (q, p, k, k), bias (q,), input layout."""

    weights: np.ndarray
    bias: np.ndarray
    layout: PackingLayout
    stride: int = 1

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeMismatch(f"conv weights must be (q, p, k, k), got {w.shape}")
        if w.shape[2] not in (1, 3):
            raise UnsupportedKernel(f"kernel size {w.shape[2]} not supported")
        if b.shape != (w.shape[0],):
            raise ShapeMismatch(f"bias shape {b.shape} != ({w.shape[0]},)")
        if self.stride not in (1, 2):
            raise UnsupportedStride(f"stride {self.stride} not supported")

    @property
    def q(self) -> int:
        return self.weights.shape[0]

    @property
    def p(self) -> int:
        return self.weights.shape[1]

    @property
    def k(self) -> int:
        return self.weights.shape[2]

    @property
    def out_layout(self) -> PackingLayout:
        base = self.layout.with_channels(self.q)
        return base.strided(self.stride) if self.stride == 2 else base


def conv_keys(layout: PackingLayout, k: int = 3) -> frozenset[int]:
    """Rotation offsets a kernel-k convolution needs for input alignment."""
    if k == 1:
        return frozenset()
    if k != 3:
        raise UnsupportedKernel(f"alignment is defined for 3x3 (and 1x1) kernels, got {k}")
    return frozenset({-1, 1, -layout.W, layout.W})


def align_inputs(engine: VectorEngine, ct: CipherVec, layout: PackingLayout) -> AlignedSet:
    """Produce the nine tap-aligned ciphertexts for a 3x3 window.

    The center entry is the input ciphertext itself (not a copy); callers
    releasing the set must keep the center alive if they do not own it.
    """
    W = layout.W
    base = {-1: engine.rotate(ct, -1), 0: ct, 1: engine.rotate(ct, 1)}
    aligned: AlignedSet = {}
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            aligned[(dy, dx)] = base[dx] if dy == 0 else engine.rotate(base[dx], dy * W)
    return aligned


def release_aligned(engine: VectorEngine, aligned: AlignedSet) -> None:
    """Drop every aligned ciphertext except the center (caller-owned input)."""
    for key, ct in aligned.items():
        if key != (0, 0):
            engine.release(ct)


def conv_forward(
    engine: VectorEngine,
    inputs: list[CipherVec],
    spec: ConvSpec,
    workers: int = 1,
) -> list[CipherVec]:
    """Evaluate one convolution layer over packed channel ciphertexts.

    Output channel o accumulates, over every input channel i and tap l, the
    aligned ciphertext times the encoded tap weight; channel accumulation is
    plain addition (no rotations beyond alignment). Bias is one add_plain
    per output channel; stride 2 compacts each output afterwards.
    """
    p, q, k = spec.p, spec.q, spec.k
    if len(inputs) != p:
        raise ShapeMismatch(f"got {len(inputs)} input ciphertexts for p = {p}")
    layout = spec.layout
    half = k // 2
    taps = [TapOffset(dy, dx) for dy in range(-half, half + 1) for dx in range(-half, half + 1)]
    encoded = {
        (o, i, t): encode_kernel_tap(spec.weights[o, i, t.dy + half, t.dx + half], t, layout).plain
        for o in range(q)
        for i in range(p)
        for t in taps
    }

    accs: list[CipherVec | None] = [None] * q

    def fold_channel(o: int, i: int, aligned: AlignedSet) -> None:
        acc = accs[o]
        for t in taps:
            term = engine.mult_plain(aligned[(t.dy, t.dx)], encoded[(o, i, t)])
            if acc is None:
                acc = term
            else:
                nxt = engine.add(acc, term)
                engine.release(acc, term)
                acc = nxt
        accs[o] = acc

    for i, ct in enumerate(inputs):
        aligned = align_inputs(engine, ct, layout) if k == 3 else {(0, 0): ct}
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                list(pool.map(lambda o: fold_channel(o, i, aligned), range(q)))
        else:
            for o in range(q):
                fold_channel(o, i, aligned)
        if k == 3:
            release_aligned(engine, aligned)

    occupied = layout.occupied
    outs: list[CipherVec] = []
    for o in range(q):
        bias_plain = PlainVec(slots=_span_constant(layout.n, occupied, spec.bias[o]))
        acc = accs[o]
        assert acc is not None
        out = engine.add_plain(acc, bias_plain)
        engine.release(acc)
        if spec.stride == 2:
            compacted = compact_strided(engine, out, layout, 2)
            engine.release(out)
            out = compacted
        outs.append(out)
    return outs


def _span_constant(n: int, span: int, value: float) -> np.ndarray:
    slots = np.zeros(n, dtype=np.float64)
    slots[:span] = float(value)
    return slots


# -- strided compaction -------------------------------------------------------


def _compaction_phases(layout: PackingLayout) -> list[tuple[int, np.ndarray, np.ndarray]]:
    """(unit, sources, targets) for the three stride-2 gather phases.

    Phase 1 packs kept (even) columns within each kept row; phase 2 lifts
    kept rows into a per-image contiguous block (offsets are multiples of
    W/2); phase 3 closes the inter-image gaps down to the m/4 stride.
    """
    H, W, b, m = layout.H, layout.W, layout.b, layout.m
    Hp, Wp = H // 2, W // 2
    mp = Hp * Wp

    j = np.arange(b)[:, None, None]
    y = np.arange(Hp)[None, :, None]
    x = np.arange(Wp)[None, None, :]

    src1 = (j * m + 2 * y * W + 2 * x).ravel()
    tgt1 = (j * m + 2 * y * W + x).ravel()

    src2 = tgt1
    tgt2 = (j * m + y * Wp + x).ravel()

    src3 = tgt2
    tgt3 = (j * mp + y * Wp + x).ravel()

    return [(1, src1, tgt1), (3 * Wp, src2, tgt2), (3 * mp, src3, tgt3)]


def compaction_offsets(layout: PackingLayout, r: int = 2) -> frozenset[int]:
    """Rotation offsets compact_strided will use on this layout."""
    if r != 2:
        raise UnsupportedStride(f"stride {r} not supported")
    offsets: set[int] = set()
    for unit, src, tgt in _compaction_phases(layout):
        t = (src - tgt) // unit
        bit = 0
        while np.any(t):
            if np.any(t & 1):
                offsets.add(unit << bit)
            t = t >> 1
            bit += 1
    return frozenset(offsets)


def compaction_rounds(layout: PackingLayout, r: int = 2) -> int:
    """Multiplicative depth compact_strided consumes on this layout."""
    return max(1, len(compaction_offsets(layout, r)))


def compact_strided(
    engine: VectorEngine, ct: CipherVec, layout: PackingLayout, r: int = 2
) -> CipherVec:
    """Gather stride-2 sampled pixels into contiguous m/4-slot segments.

    Values at even (y, x) move to row-major order at W' = W/2, image j's
    block landing at slots [j*m', (j+1)*m'); every other slot is zero. The
    caller keeps ownership of ``ct``.
    """
    if r != 2:
        raise UnsupportedStride(f"stride {r} not supported")
    if layout.H % 2 or layout.W % 2:
        raise ShapeMismatch(f"{layout.H}x{layout.W} spatial dims must be even")
    n = layout.n

    work = ct
    owned = False
    rounds_run = 0
    for unit, src, tgt in _compaction_phases(layout):
        t = (src - tgt) // unit
        if np.any(t * unit != (src - tgt)):
            raise AssertionError("gather deltas not aligned to phase unit")
        cur = src.copy()
        bit = 0
        while np.any(t):
            movers = (t & 1) == 1
            if np.any(movers):
                step = unit << bit
                move_mask = np.zeros(n)
                move_mask[cur[movers]] = 1.0
                moved = engine.rotate(engine.mult_plain(work, PlainVec(slots=move_mask)), step)
                stayers = ~movers
                if np.any(stayers):
                    stay_mask = np.zeros(n)
                    stay_mask[cur[stayers]] = 1.0
                    stayed = engine.mult_plain(work, PlainVec(slots=stay_mask))
                    merged = engine.add(moved, stayed)
                    engine.release(moved, stayed)
                else:
                    merged = moved
                # the pre-rotation product handle
                engine.release(_last_product(engine, moved))
                if owned:
                    engine.release(work)
                work, owned = merged, True
                cur[movers] -= step
                rounds_run += 1
            t = t >> 1
            bit += 1

    if rounds_run == 0:
        mask = np.zeros(n)
        mask[_compaction_phases(layout)[-1][1]] = 1.0
        return engine.mult_plain(work, PlainVec(slots=mask))
    return work


def _last_product(engine: VectorEngine, moved: CipherVec) -> CipherVec:
    raise NotImplementedError
