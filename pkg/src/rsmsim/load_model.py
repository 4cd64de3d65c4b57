"""Worst-case storage/throughput calculators for the three map-driven use cases.

All arithmetic is carried out in bits and bits/s; conversion to bytes or
Mbit happens only in :func:`format_load_report`, so that the Mb-vs-MB
ambiguity of the usual back-of-envelope numbers stays visible instead of
being silently absorbed.
"""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class LoadEstimate:
    """One row of the worst-case load analysis.

    throughput_bits_per_s is always bits_per_update * updates_per_s;
    storage-only estimates use updates_per_s = 0.
    """

    bits_per_update: int
    updates_per_s: float
    throughput_bits_per_s: float
    per_user_bits_per_s: float | None = None
    total_storage_bits: int | None = None
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.bits_per_update < 0 or self.updates_per_s < 0:
            raise ValueError("load estimate counts must be non-negative")
        expected = self.bits_per_update * self.updates_per_s
        if abs(self.throughput_bits_per_s - expected) > 1e-9 * max(1.0, expected):
            raise ValueError("throughput must equal bits_per_update * updates_per_s")


def estimate_lsa_load(n_bs: int = 12, n_rb: int = 100, bits_power: int = 8,
                      bits_mask: int = 40, update_interval_s: float = 1e-3) -> LoadEstimate:
    """Refresh load of a time-scheduled sharing-policy store.

    Every update rewrites, for each base station and resource block, the
    allowed transmit power (bits_power) plus a spectrum mask descriptor
    (bits_mask), once per update_interval_s.
    """
    if min(n_bs, n_rb, bits_power, bits_mask) <= 0 or update_interval_s <= 0:
        raise ValueError("all counts must be positive")
    bits_per_update = n_bs * n_rb * (bits_power + bits_mask)
    updates_per_s = 1.0 / update_interval_s
    throughput = bits_per_update * updates_per_s
    notes = (
        "reported in bits/s; the same figure read in megaBYTES per second "
        "(Mb/MB confusion) would be 8x larger than the %.1f MB/s it actually is"
        % (throughput / 8e6),
    )
    return LoadEstimate(bits_per_update, updates_per_s, throughput, notes=notes)


def estimate_cqi_load(n_rb: int = 100, bits_per_rb: int = 5,
                      reports_per_s: float = 1000.0, n_bs: int = 12) -> LoadEstimate:
    """Inbound channel-quality reporting load, per user and total.

    One report carries bits_per_rb for each resource block; every served
    user reports reports_per_s times a second, and the store has to absorb
    that stream from every base station's user.
    """
    if min(n_rb, bits_per_rb, n_bs) <= 0 or reports_per_s <= 0:
        raise ValueError("all counts must be positive")
    bits_per_update = n_rb * bits_per_rb
    per_user = bits_per_update * reports_per_s
    total = per_user * n_bs
    return LoadEstimate(bits_per_update, reports_per_s * n_bs, total,
                        per_user_bits_per_s=per_user)


def estimate_traffic_map_load(n_cells: int = 1600, bits_mcs: int = 5,
                              bits_var: int = 8, n_rb: int = 100) -> LoadEstimate:
    """Dense storage footprint of a per-cell, per-RB traffic statistics map.

    Each grid cell holds an MCS-index statistic (bits_mcs) and its variance
    (bits_var) for every resource block; no compression is assumed.
    """
    if min(n_cells, bits_mcs, bits_var, n_rb) <= 0:
        raise ValueError("all counts must be positive")
    per_rb = n_cells * (bits_mcs + bits_var)
    total = per_rb * n_rb
    return LoadEstimate(per_rb, 0.0, 0.0, total_storage_bits=total)


def format_load_report(lsa: LoadEstimate | None = None,
                       cqi: LoadEstimate | None = None,
                       traffic: LoadEstimate | None = None) -> str:
    """Render the three estimates as a plain text table."""
    lsa = lsa if lsa is not None else estimate_lsa_load()
    cqi = cqi if cqi is not None else estimate_cqi_load()
    traffic = traffic if traffic is not None else estimate_traffic_map_load()
    lines = [
        "worst-case load analysis (dense storage, no optimization)",
        "-" * 66,
        "policy refresh   : %8d bits/update, %10.3f Mbit/s (= %.2f MB/s)"
        % (lsa.bits_per_update, lsa.throughput_bits_per_s / 1e6,
           lsa.throughput_bits_per_s / 8e6),
        "  NOTE Mb/MB discrepancy: %s" % lsa.notes[0],
        "quality reports  : %8d bits/report, %10.3f Mbit/s per user, %.3f Mbit/s total"
        % (cqi.bits_per_update, (cqi.per_user_bits_per_s or 0.0) / 1e6,
           cqi.throughput_bits_per_s / 1e6),
        "traffic-stat map : %8d bits per RB, %10.3f Mbit total storage"
        % (traffic.bits_per_update, (traffic.total_storage_bits or 0) / 1e6),
    ]
    return "\n".join(lines)
