"""Homomorphic SIMD vector engine and its reference simulator backend.

The engine exposes the slot-vector operation surface that every layer is
written against: encrypt/decrypt, keyed cyclic rotations, slot-wise
addition and multiplication against plaintext or ciphertext operands, and
bootstrapping. The :class:`SimulatorEngine` backend carries no cryptography;
it enforces the *semantics* that real ciphertexts impose — rotations refuse
to run without a registered key, every multiplication consumes one level of
a finite budget, bootstrapping resets that budget at a cost counter — so
layer and pipeline behaviour (operation counts, key residency, live
ciphertext pressure) is measurable and testable exactly.

Rotation direction convention: ``rotate(ct, k)`` with positive ``k`` shifts
slot contents toward lower indices, i.e. output slot ``i`` holds input slot
``(i + k) mod n``.
"""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol

import numpy as np

from .errors import (
    ContextMismatch,
    HebatchError,
    LengthExceedsSlots,
    LevelExhausted,
    MissingRotationKey,
)


@dataclass(frozen=True)
class EngineContext:
    """Static parameters of a simulated encryption context.

    ``first_modulus_bits``, ``rescale_bits`` and ``key_switch_digits`` are
    carried for configuration fidelity only; they have no behavioural
    meaning in the simulator.
    """

    n: int
    max_level: int = 25
    mult_level_cost: int = 1
    noise_sigma: float = 0.0
    bootstrap_reserve: int = 10
    first_modulus_bits: int = 50
    rescale_bits: int = 46
    key_switch_digits: int = 4
    noise_seed: int = 0

    def __post_init__(self) -> None:
        if self.n < 1 or (self.n & (self.n - 1)) != 0:
            raise ValueError(f"slot count must be a power of two, got {self.n}")
        if not (0 < self.bootstrap_reserve < self.max_level):
            raise ValueError("bootstrap_reserve must lie in (0, max_level)")
        if self.mult_level_cost < 1:
            raise ValueError("mult_level_cost must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")


@dataclass(frozen=True)
class CipherVec:
    """A simulated ciphertext: slot vector, level budget, and identity.

    Instances are immutable; every engine operation returns a fresh handle.
    ``slots`` must never be mutated in place.
    """

    slots: np.ndarray
    level: int
    scale_bits: int
    id: int

    def __len__(self) -> int:
        return self.slots.shape[0]


@dataclass(frozen=True)
class PlainVec:
    """An encoded plaintext vector, full slot width."""

    slots: np.ndarray

    def __len__(self) -> int:
        return self.slots.shape[0]


class RotationKeySet:
    """Resident rotation keys, canonicalized modulo the slot count.

    Offset 0 is never stored. ``generation_count`` counts every key that was
    ever registered (loads), not the currently resident set.
    """

    def __init__(self, n: int):
        self._n = n
        self._offsets: set[int] = set()
        self.generation_count = 0

    def canonical(self, offset: int) -> int:
        return offset % self._n

    def register(self, offsets: Iterable[int]) -> int:
        """Add keys; returns how many were newly resident (idempotent)."""
        added = 0
        for off in offsets:
            c = self.canonical(off)
            if c == 0:
                continue
            if c not in self._offsets:
                self._offsets.add(c)
                added += 1
        self.generation_count += added
        return added

    def unload(self, offsets: Iterable[int]) -> None:
        for off in offsets:
            self._offsets.discard(self.canonical(off))

    def unload_all(self) -> None:
        self._offsets.clear()

    def holds(self, offset: int) -> bool:
        return self.canonical(offset) in self._offsets

    @property
    def resident(self) -> frozenset[int]:
        return frozenset(self._offsets)

    def __len__(self) -> int:
        return len(self._offsets)


@dataclass(frozen=True)
class OpCounters:
    """Cumulative operation counts plus the live-ciphertext peak."""

    rotations: int = 0
    plain_mults: int = 0
    ct_mults: int = 0
    adds: int = 0
    bootstraps: int = 0
    key_loads: int = 0
    peak_live_ciphertexts: int = 0

    def delta(self, earlier: "OpCounters") -> "OpCounters":
        """Counter difference since ``earlier``; peak is kept as-is."""
        return OpCounters(
            rotations=self.rotations - earlier.rotations,
            plain_mults=self.plain_mults - earlier.plain_mults,
            ct_mults=self.ct_mults - earlier.ct_mults,
            adds=self.adds - earlier.adds,
            bootstraps=self.bootstraps - earlier.bootstraps,
            key_loads=self.key_loads - earlier.key_loads,
            peak_live_ciphertexts=self.peak_live_ciphertexts,
        )


class VectorEngine(Protocol):
    """Operation surface every backend provides; layers code against this."""

    context: EngineContext

    def encrypt(self, values) -> CipherVec: ...
    def decrypt(self, ct: CipherVec) -> np.ndarray: ...
    def rotate(self, ct: CipherVec, k: int) -> CipherVec: ...
    def add(self, a: CipherVec, b: CipherVec) -> CipherVec: ...
    def add_plain(self, a: CipherVec, p: PlainVec) -> CipherVec: ...
    def mult_plain(self, ct: CipherVec, p: PlainVec) -> CipherVec: ...
    def mult_ct(self, a: CipherVec, b: CipherVec) -> CipherVec: ...
    def bootstrap(self, ct: CipherVec) -> CipherVec: ...
    def release(self, *cts: CipherVec) -> None: ...


class _Accounting:
    """Synchronized counter sink shared by all engine operations."""

    def __init__(self) -> None:
        self._lock = threading.Lock()
        self.rotations = 0
        self.plain_mults = 0
        self.ct_mults = 0
        self.adds = 0
        self.bootstraps = 0
        self.key_loads = 0
        self._live: set[int] = set()
        self.peak_live = 0
        self._window_peak = 0

    def bump(self, counter: str, by: int = 1) -> None:
        with self._lock:
            setattr(self, counter, getattr(self, counter) + by)

    def track(self, handle: int) -> None:
        with self._lock:
            self._live.add(handle)
            live = len(self._live)
            if live > self.peak_live:
                self.peak_live = live
            if live > self._window_peak:
                self._window_peak = live

    def drop(self, handle: int) -> None:
        with self._lock:
            if handle not in self._live:
                raise HebatchError(f"release of unknown or already-released handle {handle}")
            self._live.discard(handle)

    @property
    def live_count(self) -> int:
        with self._lock:
            return len(self._live)

    def begin_window(self) -> None:
        with self._lock:
            self._window_peak = len(self._live)

    @property
    def window_peak(self) -> int:
        with self._lock:
            return self._window_peak


class SimulatorEngine:
    """Reference backend: exact slot arithmetic plus ciphertext bookkeeping.

    All mutating accounting goes through an internally synchronized sink, so
    ciphertexts may be produced and consumed from parallel workers. Key
    registration must not race layer evaluation (callers sequence staging).
    """

    def __init__(self, context: EngineContext):
        self.context = context
        self.keys = RotationKeySet(context.n)
        self._acct = _Accounting()
        self._ids = itertools.count(1)
        self._rng = np.random.default_rng(context.noise_seed)
        self.registration_log: list[frozenset[int]] = []

    # -- construction / disposal -------------------------------------------

    def _new(self, slots: np.ndarray, level: int) -> CipherVec:
        ct = CipherVec(
            slots=slots,
            level=level,
            scale_bits=self.context.rescale_bits,
            id=next(self._ids),
        )
        self._acct.track(ct.id)
        return ct

    def encrypt(self, values) -> CipherVec:
        values = np.asarray(values, dtype=np.float64).ravel()
        n = self.context.n
        if values.shape[0] > n:
            raise LengthExceedsSlots(f"{values.shape[0]} values > {n} slots")
        slots = np.zeros(n, dtype=np.float64)
        slots[: values.shape[0]] = values
        return self._new(slots, self.context.max_level)

    def decrypt(self, ct: CipherVec) -> np.ndarray:
        self._check_context(ct)
        return ct.slots.copy()

    def release(self, *cts: CipherVec) -> None:
        for ct in cts:
            self._acct.drop(ct.id)

    # -- homomorphic ops ----------------------------------------------------

    def rotate(self, ct: CipherVec, k: int) -> CipherVec:
        self._check_context(ct)
        if k % self.context.n == 0:
            return ct
        if not self.keys.holds(k):
            raise MissingRotationKey(k)
        self._acct.bump("rotations")
        return self._new(np.roll(ct.slots, -k), ct.level)

    def add(self, a: CipherVec, b: CipherVec) -> CipherVec:
        self._check_context(a)
        self._check_context(b)
        self._acct.bump("adds")
        return self._new(a.slots + b.slots, min(a.level, b.level))

    def add_plain(self, a: CipherVec, p: PlainVec) -> CipherVec:
        self._check_context(a)
        self._check_plain(p)
        self._acct.bump("adds")
        return self._new(a.slots + p.slots, a.level)

    def mult_plain(self, ct: CipherVec, p: PlainVec) -> CipherVec:
        self._check_context(ct)
        self._check_plain(p)
        cost = self.context.mult_level_cost
        if ct.level < cost:
            raise LevelExhausted(f"level {ct.level} < multiplication cost {cost}")
        self._acct.bump("plain_mults")
        return self._new(self._perturb(ct.slots * p.slots), ct.level - cost)

    def mult_ct(self, a: CipherVec, b: CipherVec) -> CipherVec:
        self._check_context(a)
        self._check_context(b)
        cost = self.context.mult_level_cost
        if a.level < cost or b.level < cost:
            raise LevelExhausted(f"levels ({a.level}, {b.level}) < multiplication cost {cost}")
        self._acct.bump("ct_mults")
        return self._new(self._perturb(a.slots * b.slots), min(a.level, b.level) - cost)

    def bootstrap(self, ct: CipherVec) -> CipherVec:
        self._check_context(ct)
        self._acct.bump("bootstraps")
        level = self.context.max_level - self.context.bootstrap_reserve
        return self._new(self._perturb(ct.slots.copy()), level)

    def ensure_level(self, ct: CipherVec, needed: int) -> CipherVec:
        """Bootstrap ``ct`` (releasing it) if its level is below ``needed``."""
        if ct.level >= needed:
            return ct
        fresh = self.bootstrap(ct)
        self.release(ct)
        return fresh

    def map_slots(self, ct: CipherVec, fn: Callable[[np.ndarray], np.ndarray]) -> CipherVec:
        """Apply an arbitrary slot-wise function outside ciphertext semantics.

        Simulator-only affordance for exact-activation pipeline testing:
        level is preserved and no operation counter moves.
        """
        self._check_context(ct)
        out = np.asarray(fn(ct.slots.copy()), dtype=np.float64)
        if out.shape != ct.slots.shape:
            raise HebatchError("map_slots function changed the slot shape")
        return self._new(out, ct.level)

    # -- keys ---------------------------------------------------------------

    def register_rotation_keys(self, offsets: Iterable[int]) -> None:
        offsets = list(offsets)
        added = self.keys.register(offsets)
        if added:
            self._acct.bump("key_loads", added)
        self.registration_log.append(
            frozenset(self.keys.canonical(o) for o in offsets if self.keys.canonical(o) != 0)
        )

    def unload_rotation_keys(self, offsets: Iterable[int]) -> None:
        self.keys.unload(offsets)

    def unload_all_rotation_keys(self) -> None:
        self.keys.unload_all()

    @property
    def resident_key_count(self) -> int:
        return len(self.keys)

    # -- accounting ---------------------------------------------------------

    def snapshot_counters(self) -> OpCounters:
        a = self._acct
        with a._lock:
            return OpCounters(
                rotations=a.rotations,
                plain_mults=a.plain_mults,
                ct_mults=a.ct_mults,
                adds=a.adds,
                bootstraps=a.bootstraps,
                key_loads=a.key_loads,
                peak_live_ciphertexts=a.peak_live,
            )

    @property
    def live_ciphertexts(self) -> int:
        return self._acct.live_count

    def begin_live_window(self) -> None:
        """Start a fresh live-ciphertext peak measurement window."""
        self._acct.begin_window()

    @property
    def window_peak_live(self) -> int:
        return self._acct.window_peak

    # -- helpers ------------------------------------------------------------

    def plain(self, values) -> PlainVec:
        """Encode a full-width plaintext, right-padding with zeros."""
        values = np.asarray(values, dtype=np.float64).ravel()
        n = self.context.n
        if values.shape[0] > n:
            raise LengthExceedsSlots(f"{values.shape[0]} values > {n} slots")
        slots = np.zeros(n, dtype=np.float64)
        slots[: values.shape[0]] = values
        return PlainVec(slots=slots)

    def constant(self, value: float) -> PlainVec:
        return PlainVec(slots=np.full(self.context.n, float(value)))

    def _perturb(self, slots: np.ndarray) -> np.ndarray:
        sigma = self.context.noise_sigma
        if sigma == 0.0:
            return slots
        return slots + self._rng.normal(0.0, sigma, size=slots.shape)

    def _check_context(self, ct: CipherVec) -> None:
        if ct.slots.shape[0] != self.context.n:
            raise ContextMismatch(
                f"ciphertext width {ct.slots.shape[0]} != context slots {self.context.n}"
            )

    def _check_plain(self, p: PlainVec) -> None:
        if p.slots.shape[0] != self.context.n:
            raise ContextMismatch(
                f"plaintext width {p.slots.shape[0]} != context slots {self.context.n}"
            )


__all__ = [
    "CipherVec",
    "EngineContext",
    "OpCounters",
    "PlainVec",
    "RotationKeySet",
    "SimulatorEngine",
    "VectorEngine",
]
