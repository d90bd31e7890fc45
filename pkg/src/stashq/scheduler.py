"""Plateau-triggered precision ladder.

Training starts at the most aggressive rung of a monotone ladder of
precision configs and climbs one rung whenever the validation loss stops
improving for `patience` consecutive observations.  Rungs never go back
down, and the gradient-flush width (q3) stays at 16 bits or more on every
rung; dropping it below that reliably kills training.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .qtraining import PrecisionConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ScheduleLadder:
    configs: tuple[PrecisionConfig, ...]
    patience: int = 2
    min_delta: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "configs", tuple(self.configs))
        if not self.configs:
            raise ValueError("ladder needs at least one rung")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if self.min_delta < 0:
            raise ValueError("min_delta must be non-negative")


def default_ladder(family: str) -> ScheduleLadder:
    """Three rungs from very coarse to the narrow-stash endpoint."""
    family = family.lower()
    if family not in ("fixed", "bfp"):
        raise ValueError(f"unsupported ladder family: {family}")
    rungs = ((2, 2, 2, 16), (4, 4, 4, 16), (16, 4, 4, 16))
    return ScheduleLadder(
        configs=tuple(PrecisionConfig.from_bits(family, bits) for bits in rungs),
        patience=2,
        min_delta=0.0,
    )


def validate_ladder(ladder: ScheduleLadder) -> list[str]:
    """All monotonicity / gradient-width / family violations; empty if valid."""
    violations: list[str] = []
    names = ("q0", "q1", "q2", "q3")
    family = ladder.configs[0].family
    for i, cfg in enumerate(ladder.configs):
        if cfg.family != family:
            violations.append(f"rung {i} family {cfg.family} differs from {family}")
        if cfg.q3.element_bits < 16:
            violations.append(f"rung {i} q3 below 16 bits ({cfg.q3.element_bits})")
        if i == 0:
            continue
        prev = ladder.configs[i - 1]
        for name, prev_fmt, cur_fmt in zip(names, prev.formats, cfg.formats):
            if cur_fmt.element_bits < prev_fmt.element_bits:
                violations.append(
                    f"rung {i} {name} decreases "
                    f"({prev_fmt.element_bits} -> {cur_fmt.element_bits})"
                )
    return violations


@dataclass
class ScheduleState:
    rung: int = 0
    best_valid_loss: float = math.inf
    stale_evals: int = 0
    observations: int = 0
    trace: list[tuple[int, int]] = field(default_factory=list)


def observe_validation(
    state: ScheduleState, loss: float, ladder: ScheduleLadder
) -> tuple[ScheduleState, PrecisionConfig]:
    """Feed one validation loss; returns (updated state, config to train with).

    A strict improvement over the best loss by more than min_delta resets
    the stale counter; anything else (including a non-finite loss) counts
    against patience.  On the patience-th consecutive non-improvement the
    ladder advances one rung, if one exists.  The rung never decreases.
    """
    state.observations += 1
    if not math.isfinite(loss):
        logger.warning("non-finite validation loss treated as non-improvement")
        improved = False
    else:
        improved = loss < state.best_valid_loss - ladder.min_delta
    if improved:
        state.best_valid_loss = loss
        state.stale_evals = 0
    else:
        state.stale_evals += 1
        if state.stale_evals >= ladder.patience and state.rung + 1 < len(ladder.configs):
            state.rung += 1
            state.stale_evals = 0
    state.trace.append((state.observations, state.rung))
    return state, ladder.configs[state.rung]
