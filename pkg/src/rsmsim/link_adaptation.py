"""Link-to-system mapping: per-RB SINR, effective SNR compression, MCS choice.

The effective SNR of an allocation is the exponential mapping
gamma_eff = -beta * ln(mean(exp(-gamma_n / beta))); each MCS candidate is
evaluated with its own beta and activates when the resulting effective SNR
clears the candidate's threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

THERMAL_NOISE_DBM_PER_HZ = -174.0
DEFAULT_NOISE_FIGURE_DB = 9.0


def noise_power_w(bandwidth_hz: float, noise_figure_db: float = DEFAULT_NOISE_FIGURE_DB) -> float:
    """Receiver noise power over bandwidth_hz, in watts."""
    dbm = THERMAL_NOISE_DBM_PER_HZ + noise_figure_db + 10.0 * np.log10(bandwidth_hz)
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class McsEntry:
    index: int
    min_effective_snr_db: float
    beta: float
    efficiency_bps_hz: float


def _default_table() -> tuple[McsEntry, ...]:
    # 15 levels, QPSK-1/8 up to 64QAM-9/10 territory: thresholds on a 2 dB
    # grid, betas growing with constellation order. Replaceable via
    # load_mcs_table when a calibrated table is available.
    thresholds = np.arange(-6.0, 23.0, 2.0)
    efficiencies = [0.1523, 0.2344, 0.3770, 0.6016, 0.8770, 1.1758, 1.4766,
                    1.9141, 2.4063, 2.7305, 3.3223, 3.9023, 4.5234, 5.1152,
                    5.5547]
    betas = np.linspace(1.0, 30.0, 15)
    return tuple(McsEntry(i + 1, float(thresholds[i]), float(betas[i]), efficiencies[i])
                 for i in range(15))


DEFAULT_MCS_TABLE = _default_table()


def validate_mcs_table(table) -> tuple[McsEntry, ...]:
    table = tuple(table)
    if not table:
        raise ValueError("MCS table is empty")
    for a, b in zip(table, table[1:]):
        if b.min_effective_snr_db <= a.min_effective_snr_db:
            raise ValueError("MCS thresholds must be strictly increasing")
        if b.efficiency_bps_hz <= a.efficiency_bps_hz:
            raise ValueError("MCS efficiencies must be strictly increasing")
    if any(e.beta <= 0 for e in table):
        raise ValueError("beta must be positive")
    return table


def load_mcs_table(path) -> tuple[McsEntry, ...]:
    """Read an MCS table from a text file.

    One entry per line: index, threshold dB, beta, efficiency (whitespace or
    comma separated); '#' starts a comment.
    """
    entries = []
    with open(path) as fh:
        for raw in fh:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.replace(",", " ").split()
            if len(parts) != 4:
                raise ValueError("expected 4 fields per MCS line, got %r" % raw)
            idx, thr, beta, eff = parts
            entries.append(McsEntry(int(idx), float(thr), float(beta), float(eff)))
    return validate_mcs_table(entries)


def compute_sinr(serving_power_w: np.ndarray, serving_gain: np.ndarray,
                 interferer_powers_w: np.ndarray, interferer_gains: np.ndarray,
                 noise_w: float) -> np.ndarray:
    """Per-RB SINR (linear) of one link.

    serving_power_w/serving_gain are per-RB vectors; interferer arrays are
    (n_interferers, n_rb) and may be empty. SINR is zero on RBs where the
    serving power is zero.
    """
    serving_power_w = np.asarray(serving_power_w, dtype=float)
    serving_gain = np.asarray(serving_gain, dtype=float)
    interference = np.zeros_like(serving_power_w)
    if len(interferer_powers_w):
        p = np.atleast_2d(np.asarray(interferer_powers_w, dtype=float))
        g = np.atleast_2d(np.asarray(interferer_gains, dtype=float))
        interference = (p * g).sum(axis=0)
    return serving_power_w * serving_gain / (noise_w + interference)


def eesm_effective_snr(sinrs_linear: np.ndarray, beta: float) -> float:
    """Exponential effective SNR of the allocated RBs (all inputs linear)."""
    g = np.asarray(sinrs_linear, dtype=float)
    if g.size == 0:
        raise ValueError("no RBs in allocation")
    if beta <= 0:
        raise ValueError("beta must be positive")
    return float(-beta * np.log(np.mean(np.exp(-g / beta))))


def select_mcs(sinrs_linear: np.ndarray, table=DEFAULT_MCS_TABLE,
               rb_bandwidth_hz: float = 180e3, tti_s: float = 1e-3) -> tuple[int, float]:
    """Pick the highest MCS whose own-beta effective SNR clears its threshold.

    Returns (index, bits carried this TTI over the allocated RBs); index 0
    and zero bits mean outage below the lowest threshold.
    """
    g = np.asarray(sinrs_linear, dtype=float)
    if g.size == 0:
        raise ValueError("no RBs in allocation")
    best = None
    for entry in table:
        eff_db = 10.0 * np.log10(max(eesm_effective_snr(g, entry.beta), 1e-300))
        if eff_db >= entry.min_effective_snr_db:
            best = entry
    if best is None:
        return 0, 0.0
    bits = best.efficiency_bps_hz * rb_bandwidth_hz * tti_s * g.size
    return best.index, bits


def mcs_rate_table_bps(table=DEFAULT_MCS_TABLE, rb_bandwidth_hz: float = 180e3) -> np.ndarray:
    """Per-RB rate by MCS index (index 0 = outage = 0 bps)."""
    return np.array([0.0] + [e.efficiency_bps_hz * rb_bandwidth_hz for e in table])


def single_rb_mcs(sinr_db: np.ndarray, table=DEFAULT_MCS_TABLE) -> np.ndarray:
    """Vectorized single-RB MCS lookup (beta is irrelevant for one RB).

    With one RB the effective SNR equals the RB SNR for every beta, so the
    selection reduces to a threshold scan.
    """
    thresholds = np.array([e.min_effective_snr_db for e in table])
    return np.searchsorted(thresholds, np.asarray(sinr_db), side="right")
