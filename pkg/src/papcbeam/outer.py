"""The dual-driven outer loop shared by every PAPC solver.

Each solver supplies three callables: how to get directions from the current
duals, how to load power onto them, and how to update the PAPC duals from the
resulting per-antenna powers. The loop stops as soon as no antenna exceeds its
budget by more than its tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, NamedTuple, Optional

import numpy as np

from .model import BeamformerSet, DualState, ScenarioConfig, papc_violations, per_antenna_powers
from .powerload import PowerLoadingState


class TraceRecord(NamedTuple):
    iteration: int
    r: float
    max_violation: float
    n_violations: int
    step_size: float


@dataclass
class SolveResult:
    beams: BeamformerSet
    duals: DualState
    trace: List[TraceRecord]
    converged: bool
    loading: Optional[PowerLoadingState] = None
    flags: set = field(default_factory=set)

    @property
    def iterations(self) -> int:
        return len(self.trace)

    def __iter__(self):
        # allows ``beams, duals, trace = solve(...)``
        return iter((self.beams, self.duals, self.trace))


def assemble(directions, loading: PowerLoadingState, flags: set) -> BeamformerSet:
    beta = loading.powers
    if loading.negative_power:
        flags.add("negative_power")
        beta = np.maximum(beta, 0.0)
    if not loading.converged:
        flags.add("loading_nonconvergence")
    return BeamformerSet(directions, beta, loading.offset)


def run_outer_loop(
    cfg: ScenarioConfig,
    duals: DualState,
    directions: Callable[[DualState], np.ndarray],
    loading: Callable[[np.ndarray, DualState], PowerLoadingState],
    update: Callable[[DualState, np.ndarray], DualState],
    after_first_update: Optional[Callable[[DualState], DualState]] = None,
    flags: Optional[set] = None,
    callback: Optional[Callable[[int, BeamformerSet, DualState], None]] = None,
) -> SolveResult:
    flags = set() if flags is None else flags
    trace: List[TraceRecord] = []
    beams = load = None
    converged = False
    for n in range(cfg.max_outer_iterations):
        u = directions(duals)
        load = loading(u, duals)
        beams = assemble(u, load, flags)
        if callback is not None:
            callback(n, beams, duals)
        powers = per_antenna_powers(beams)
        violated = papc_violations(powers, cfg)
        trace.append(
            TraceRecord(n, load.offset, float(np.max(powers - cfg.papc)), int(violated.size), duals.step_size)
        )
        if violated.size == 0:
            converged = True
            break
        duals = update(duals, powers)
        if n == 0 and after_first_update is not None:
            duals = after_first_update(duals)
    if not converged:
        flags.add("nonconvergence")
    return SolveResult(beams, duals, trace, converged, load, flags)
