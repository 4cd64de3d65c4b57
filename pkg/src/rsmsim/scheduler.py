"""Proportional-fair downlink scheduling with soft-frequency-reuse masks.

The per-RB priority is r_inst**beta / R_avg**(1-beta) with beta = 0.5, the
average rate follows an exponential window of 1000 scheduling intervals,
and neighboring indoor cells rotate over three preferred RB sets; power on
non-preferred sets is backed off by a fixed offset.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

PF_BETA = 0.5
PF_WINDOW_TTIS = 1000
MIN_AVG_RATE_BPS = 1.0

SFR_N_SETS = 3
SFR_OFFSET_DB = 6.0


@dataclass
class SchedulerState:
    """Per-cell scheduler memory: average rate per attached user."""

    beta: float = PF_BETA
    window_ttis: int = PF_WINDOW_TTIS
    avg_rate_bps: dict[int, float] = field(default_factory=dict)
    pf_processed_rbs: int = 0

    def ensure(self, ue_ids) -> None:
        for uid in ue_ids:
            self.avg_rate_bps.setdefault(uid, MIN_AVG_RATE_BPS)


def pf_priority(r_inst_bps, r_avg_bps, beta: float = PF_BETA):
    """Scheduling score r**beta / R**(1-beta); beta=1 is max-rate scheduling."""
    r = np.asarray(r_inst_bps, dtype=float)
    avg = np.maximum(np.asarray(r_avg_bps, dtype=float), MIN_AVG_RATE_BPS)
    return r ** beta / avg ** (1.0 - beta)


def update_average_rate(state: SchedulerState, ue_id: int, served_bits: float,
                        tti_s: float = 1e-3) -> float:
    """Fold one TTI's served bits into the user's average rate."""
    served_bps = served_bits / tti_s
    old = state.avg_rate_bps.get(ue_id, MIN_AVG_RATE_BPS)
    tc = state.window_ttis
    new = max((1.0 - 1.0 / tc) * old + served_bps / tc, MIN_AVG_RATE_BPS)
    state.avg_rate_bps[ue_id] = new
    return new


def pf_schedule(ue_ids, rate_matrix_bps: np.ndarray, state: SchedulerState,
                rb_available: np.ndarray) -> np.ndarray:
    """Assign each available RB to the highest-priority user.

    ue_ids must be sorted ascending; ties then resolve to the lowest user
    id via argmax-first-hit. Returns an int array of length n_rb holding
    the winning ue id per RB, -1 where the RB is unavailable. RBs that saw
    at least one candidate are counted into state.pf_processed_rbs.
    """
    ue_ids = list(ue_ids)
    n_rb = rb_available.size
    assignment = np.full(n_rb, -1, dtype=np.int64)
    if not ue_ids:
        return assignment
    if any(b < a for a, b in zip(ue_ids, ue_ids[1:])):
        raise ValueError("ue_ids must be sorted ascending")
    state.ensure(ue_ids)
    rates = np.asarray(rate_matrix_bps, dtype=float)
    avg = np.array([state.avg_rate_bps[u] for u in ue_ids])
    prio = rates ** state.beta / (avg[:, None] ** (1.0 - state.beta))
    winners = np.argmax(prio, axis=0)
    idx = np.asarray(ue_ids, dtype=np.int64)[winners]
    assignment[rb_available] = idx[rb_available]
    state.pf_processed_rbs += int(np.count_nonzero(rb_available))
    return assignment


def sfr_power_factors(bs_index: int, n_rb: int, n_sets: int = SFR_N_SETS,
                      offset_db: float = SFR_OFFSET_DB) -> np.ndarray:
    """Per-RB linear power factor for a cell's reuse pattern.

    The cell's preferred set (rb % n_sets == bs_index % n_sets) runs at
    full power, all other RBs at -offset_db.
    """
    preferred = (np.arange(n_rb) % n_sets) == (bs_index % n_sets)
    factors = np.full(n_rb, 10.0 ** (-offset_db / 10.0))
    factors[preferred] = 1.0
    return factors


def jain_index(values) -> float:
    """Jain fairness of a rate vector: (sum x)^2 / (n * sum x^2)."""
    x = np.asarray(values, dtype=float)
    if x.size == 0 or np.all(x == 0):
        return 1.0
    return float(x.sum() ** 2 / (x.size * np.square(x).sum()))
