"""Freeze/retrain phases and the plateau learning-rate rule.

Phases act on freeze units: registry groups, with the speaker-fusion
projections split per stage (``fusion_mag`` / ``fusion_com``) so that
freezing the magnitude stage also freezes its own fusion weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from .errors import ConfigError

MAG_UNITS = frozenset({"mag_net", "spk_enc_mag", "fusion_mag"})
COM_UNITS = frozenset({"com_net", "spk_enc_com", "fusion_com"})
ALL_UNITS = MAG_UNITS | COM_UNITS


@dataclass(frozen=True)
class PhaseSpec:
    id: str
    trainable: frozenset
    frozen: frozenset
    loss: str

    def __post_init__(self):
        if self.trainable & self.frozen:
            raise ConfigError(f"phase {self.id}: units both trainable and frozen")
        if self.trainable | self.frozen != ALL_UNITS:
            raise ConfigError(f"phase {self.id}: units {sorted(ALL_UNITS - self.trainable - self.frozen)} unassigned")


PHASES = {
    "P1": PhaseSpec("P1", MAG_UNITS, COM_UNITS, "L1"),
    "P2": PhaseSpec("P2", COM_UNITS, MAG_UNITS, "L2"),
    "P3": PhaseSpec("P3", ALL_UNITS, frozenset(), "L2"),
}


def phase_apply(phase, registry):
    """Set trainability flags in place for ``phase`` and return the registry."""
    if isinstance(phase, str):
        phase = PHASES[phase]
    for name, entry in registry.items():
        unit = entry.unit
        if unit not in ALL_UNITS:
            raise ConfigError(f"parameter {name} belongs to unknown group {unit!r}")
        entry.trainable = unit in phase.trainable
    return registry


def frozen_groups(registry) -> set:
    """Groups whose every entry is frozen."""
    groups = {}
    for e in registry.values():
        groups.setdefault(e.group, []).append(e.trainable)
    return {g for g, flags in groups.items() if not any(flags)}


@dataclass(frozen=True)
class LrState:
    lr: float = 1e-3
    best: float = math.inf
    epochs_since_improve: int = 0
    factor: float = 0.5
    patience: int = 2

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("learning rate must be positive")
        if self.epochs_since_improve < 0:
            raise ConfigError("epoch counter cannot be negative")

    def report(self) -> str:
        return (f"lr={self.lr:.6g} best={self.best:.6g} "
                f"epochs_since_improve={self.epochs_since_improve}")


def lr_step(state: LrState, val_loss: float) -> LrState:
    """Advance one epoch; any loss not strictly below the best counts as a stall."""
    if not math.isfinite(val_loss):
        raise ConfigError(f"validation loss must be finite, got {val_loss}")
    if val_loss < state.best:
        return replace(state, best=val_loss, epochs_since_improve=0)
    stalled = state.epochs_since_improve + 1
    if stalled >= state.patience:
        return replace(state, lr=state.lr * state.factor, epochs_since_improve=0)
    return replace(state, epochs_since_improve=stalled)


def lr_trace(losses, state: LrState | None = None) -> list[float]:
    """Learning rate in effect after each epoch's validation loss."""
    state = state or LrState()
    trace = []
    for loss in losses:
        state = lr_step(state, loss)
        trace.append(state.lr)
    return trace
