"""Discrete-time engine: one TTI of mobility, fading, scheduling and rates.

Each carrier keeps a bank of fading processes for every (receiver,
transmitter) pair, advanced jointly per TTI. Scheduling is causal:
priorities use the previous TTI's channel and interference, while realized
SINR, MCS and bits use the current one. Broadband cells schedule
proportional-fair under the currently active resource and power caps;
road-side IoT units serve their users round-robin.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import channel as ch
from . import link_adaptation as la
from . import scheduler as sch
from .rsm import TransmissionRecord
from .scenario import Deployment, RunConfig, UserEquipment, step_mobility

ASSOCIATION_PERIOD_S = 1.0


def watts_from_dbm(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def dbm_from_watts(w: float) -> float:
    return 10.0 * math.log10(max(w, 1e-30)) + 30.0


@dataclass(frozen=True)
class UeTtiRow:
    ue_id: int
    bits: float
    n_rbs: int
    mcs: int
    serving_bs: int
    interference_w: float


@dataclass
class TtiReport:
    t_ms: int
    rows: list[UeTtiRow] = field(default_factory=list)
    transmissions: list[TransmissionRecord] = field(default_factory=list)
    # rb_decisions: one (bs_id, rbs, ue_ids, mcs) array tuple per active cell.
    rb_decisions: list[tuple[int, np.ndarray, np.ndarray, np.ndarray]] = field(
        default_factory=list)
    pf_processed_rbs: int = 0
    allowed_rb_counts: dict[int, int] = field(default_factory=dict)


def _link_class(tx_indoor: bool, rx_indoor: bool) -> str:
    if tx_indoor and rx_indoor:
        return "indoor-indoor"
    if not tx_indoor and not rx_indoor:
        return "outdoor-outdoor"
    return "indoor-to-outdoor" if tx_indoor else "outdoor-to-indoor"


class CarrierBank:
    """Vectorized gains for all links that share one carrier."""

    def __init__(self, deployment: Deployment, stations, users, carrier_hz: float,
                 base_seed: int, n_oscillators: int = 32):
        self.dep = deployment
        self.f_hz = carrier_hz
        self.stations = list(stations)
        self.users = list(users)
        self.n_tx = len(self.stations)
        self.n_rx = len(self.users)
        self.n_rb = deployment.n_rb
        b = deployment.building
        self.tx_indoor = np.array([s.kind == "indoor-hotspot" for s in self.stations])
        self.tx_floor = np.array([b.floor_of(s.position[2]) if ind else 0
                                  for s, ind in zip(self.stations, self.tx_indoor)])
        n_links = self.n_rx * self.n_tx
        m = n_oscillators
        self.omega_i = np.empty((n_links, 7, m))
        self.omega_q = np.empty((n_links, 7, m))
        self.phi_i = np.empty((n_links, 7, m))
        self.phi_q = np.empty((n_links, 7, m))
        self.shadow_z = np.empty((self.n_rx, self.n_tx))
        self.processes = {}
        for i, ue in enumerate(self.users):
            for j, bs in enumerate(self.stations):
                proc = ch.make_fading_process(
                    carrier_hz, ue.speed_mps,
                    np.random.SeedSequence([int(base_seed), 101, bs.id, ue.id]),
                    n_oscillators=m)
                k = i * self.n_tx + j
                self.omega_i[k] = proc.omega_i
                self.omega_q[k] = proc.omega_q
                self.phi_i[k] = proc.phi_i
                self.phi_q[k] = proc.phi_q
                self.processes[(ue.id, bs.id)] = proc
                srng = np.random.default_rng(
                    np.random.SeedSequence([int(base_seed), 102, bs.id, ue.id]))
                self.shadow_z[i, j] = srng.standard_normal()
        p_lin = 10.0 ** (ch.EPA_TAP_POWERS_DB / 10.0)
        self.amp = np.sqrt(p_lin / p_lin.sum())
        f = ch.rb_center_offsets_hz(self.n_rb, deployment.rb_bandwidth_hz)
        self.steering = np.exp(-2j * np.pi * np.outer(ch.EPA_TAP_DELAYS_S, f))
        self.scale = math.sqrt(1.0 / m)
        self.rx_index = {u.id: i for i, u in enumerate(self.users)}
        self.tx_index = {s.id: j for j, s in enumerate(self.stations)}
        self.ue_ids = np.array([u.id for u in self.users], dtype=np.int64)
        if np.any(np.diff(self.ue_ids) <= 0):
            raise ValueError("bank users must be sorted by id")
        # Links of non-moving users are time-constant; evaluate them once.
        speeds = np.repeat([u.speed_mps for u in self.users], self.n_tx)
        self._moving = np.flatnonzero(speeds > 0)
        self._ff = np.empty((n_links, self.n_rb))
        static = np.flatnonzero(speeds == 0)
        if static.size:
            self._ff[static] = self._fast_fading(static, 0.0)
        self.largescale_db = np.zeros((self.n_rx, self.n_tx))
        self.refresh_large_scale()

    def _fast_fading(self, links, t_s: float) -> np.ndarray:
        xi = np.cos(self.omega_i[links] * t_s + self.phi_i[links]).sum(axis=2)
        xq = np.cos(self.omega_q[links] * t_s + self.phi_q[links]).sum(axis=2)
        taps = (xi + 1j * xq) * (self.scale * self.amp)
        return np.abs(taps @ self.steering) ** 2

    def _pair_largescale_db(self, i: int, j: int, position=None) -> float:
        ue = self.users[i]
        bs = self.stations[j]
        pos = ue.position if position is None else position
        tx_ind = bool(self.tx_indoor[j])
        cls = _link_class(tx_ind, ue.indoor)
        link = ch.LinkGeometry(
            tx_position=tuple(bs.position), rx_position=tuple(pos),
            link_class=cls, carrier_hz=self.f_hz,
            tx_floor=int(self.tx_floor[j]), rx_floor=ue.floor if ue.indoor else 0)
        los = ch.is_los(link)
        sigma = ch.shadow_sigma_db(cls, los)
        return ch.path_loss_db(link, los=los) + sigma * self.shadow_z[i, j]

    def refresh_large_scale(self, rx_indices=None) -> None:
        rows = range(self.n_rx) if rx_indices is None else rx_indices
        for i in rows:
            for j in range(self.n_tx):
                self.largescale_db[i, j] = self._pair_largescale_db(i, j)

    def gains(self, t_s: float) -> np.ndarray:
        """Linear per-RB power gains, shape (n_rx, n_tx, n_rb)."""
        if self._moving.size:
            self._ff[self._moving] = self._fast_fading(self._moving, t_s)
        ls = 10.0 ** (-self.largescale_db / 10.0)
        return ls.reshape(self.n_rx, self.n_tx, 1) * self._ff.reshape(
            self.n_rx, self.n_tx, self.n_rb)

    def planning_gain(self, ue: UserEquipment, bs_id: int,
                      position=None) -> float:
        """Band-level linear gain (path loss + shadowing, no fading)."""
        i = self.rx_index[ue.id]
        j = self.tx_index[bs_id]
        return 10.0 ** (-self._pair_largescale_db(i, j, position=position) / 10.0)


def _select_mcs_batch(gamma_assigned: np.ndarray, owner: np.ndarray, n_ue: int,
                      table, rb_bandwidth_hz: float, tti_s: float):
    """Vectorized per-user MCS choice over an assignment.

    gamma_assigned holds the realized SINR of each allocated RB, owner the
    compact index of the user that RB belongs to. Matches select_mcs on
    each user's RB set.
    """
    counts = np.bincount(owner, minlength=n_ue).astype(float)
    betas = np.array([e.beta for e in table])
    thresholds = np.array([e.min_effective_snr_db for e in table])
    effs = np.array([e.efficiency_bps_hz for e in table])
    indicator = np.zeros((gamma_assigned.size, n_ue))
    indicator[np.arange(gamma_assigned.size), owner] = 1.0
    z = np.exp(-gamma_assigned[None, :] / betas[:, None])
    sums = z @ indicator  # (n_mcs, n_ue)
    # Underflown sums mean enormous effective SNR; floor them instead of
    # letting log(0) raise.
    mean_z = np.maximum(sums / np.maximum(counts[None, :], 1.0), 1e-300)
    geff = -betas[:, None] * np.log(mean_z)
    geff_db = 10.0 * np.log10(np.maximum(geff, 1e-300))
    ok = (counts[None, :] > 0) & (geff_db >= thresholds[:, None])
    mcs = np.zeros(n_ue, dtype=np.int64)
    bits = np.zeros(n_ue)
    for k, entry in enumerate(table):
        row = ok[k]
        mcs[row] = entry.index
        bits[row] = effs[k] * rb_bandwidth_hz * tti_s * counts[row]
    return mcs, bits


def _leakage(emission_w: np.ndarray, mask_db) -> np.ndarray:
    """Add out-of-range skirt emission next to the active RBs."""
    active = np.flatnonzero(emission_w > 0)
    if active.size == 0 or active.size == emission_w.size:
        return emission_w
    out = emission_w.copy()
    idle = np.flatnonzero(emission_w == 0)
    pos = np.searchsorted(active, idle)
    left = active[np.clip(pos - 1, 0, active.size - 1)]
    right = active[np.clip(pos, 0, active.size - 1)]
    dist_left = np.abs(idle - left)
    dist_right = np.abs(right - idle)
    use_left = dist_left <= dist_right
    dist = np.where(use_left, dist_left, dist_right)
    edge = np.where(use_left, left, right)
    mask = np.asarray(mask_db, dtype=float)
    within = dist <= mask.size
    att = 10.0 ** (-mask[np.minimum(dist[within], mask.size) - 1] / 10.0)
    out[idle[within]] = emission_w[edge[within]] * att
    return out


@dataclass
class StaticAssignment:
    """Fixed service of one user: RB set and modulation pinned for a window."""

    ue_id: int
    bs_id: int
    rbs: np.ndarray
    mcs: int
    demand_bps: float


class World:
    """Mutable simulation state for one run (one arm)."""

    def __init__(self, deployment: Deployment, users: list[UserEquipment],
                 cfg: RunConfig, mcs_table=la.DEFAULT_MCS_TABLE,
                 n_oscillators: int = 32, sfr_enabled: bool = True,
                 spectrum_mask_db=(30.0, 35.0, 40.0, 45.0, 50.0)):
        self.dep = deployment
        self.users = sorted(users, key=lambda u: u.id)
        self.cfg = cfg
        self.table = la.validate_mcs_table(mcs_table)
        self.mask_db = tuple(spectrum_mask_db)
        self.sfr_enabled = sfr_enabled
        self.noise_rb_w = la.noise_power_w(deployment.rb_bandwidth_hz)
        self.rate_by_mcs = la.mcs_rate_table_bps(self.table, deployment.rb_bandwidth_hz)
        self.thresholds_db = np.array([e.min_effective_snr_db for e in self.table])

        self.stations = sorted(deployment.base_stations, key=lambda s: s.id)
        self.station_by_id = {s.id: s for s in self.stations}
        self.ue_by_id = {u.id: u for u in self.users}

        # Fixed carrier membership from the initial strongest-station scan.
        self._tmp_banks = {}
        self.carrier_of_ue: dict[int, str] = {}
        self._assign_carriers(n_oscillators)
        self.banks: dict[str, CarrierBank] = {}
        for name in ("f1", "f2"):
            stations = [s for s in self.stations if s.carrier == name]
            ues = [u for u in self.users if self.carrier_of_ue[u.id] == name]
            if stations and ues:
                self.banks[name] = CarrierBank(
                    deployment, stations, ues, deployment.carrier_hz(name),
                    cfg.seed, n_oscillators)

        self.serving: dict[int, int] = {}
        self._associate()

        self.sched = {s.id: sch.SchedulerState() for s in self.stations}
        self.rr_offset = {s.id: 0 for s in self.stations}

        # Per-station caps; None means the full band at max power.
        self.allowed_rb: dict[int, np.ndarray | None] = {s.id: None for s in self.stations}
        self.power_cap_w: dict[int, float] = {
            s.id: watts_from_dbm(s.max_tx_power_dbm) for s in self.stations}
        self.static_plan: dict[int, list[StaticAssignment]] = {}
        self.static_outages = 0

        self._gains: dict[str, np.ndarray] = {}
        self._gains_prev: dict[str, np.ndarray] = {}
        self._interf_prev: dict[str, np.ndarray] = {}
        self._full_mask = np.ones(deployment.n_rb, dtype=bool)
        self._full_mask.flags.writeable = False

    # -- setup ---------------------------------------------------------------

    def _assign_carriers(self, n_oscillators: int) -> None:
        """Pick each user's carrier from its strongest own-operator station."""
        for u in self.users:
            best, best_rx = None, -np.inf
            for s in self.stations:
                if s.operator != u.operator:
                    continue
                rx = s.max_tx_power_dbm - self._scan_loss_db(u, s)
                if rx > best_rx:
                    best, best_rx = s, rx
            if best is None:
                raise ValueError("user %d has no station of operator %s"
                                 % (u.id, u.operator))
            self.carrier_of_ue[u.id] = best.carrier

    def _scan_loss_db(self, ue: UserEquipment, bs) -> float:
        b = self.dep.building
        tx_ind = bs.kind == "indoor-hotspot"
        cls = _link_class(tx_ind, ue.indoor)
        link = ch.LinkGeometry(
            tx_position=tuple(bs.position), rx_position=tuple(ue.position),
            link_class=cls, carrier_hz=self.dep.carrier_hz(bs.carrier),
            tx_floor=b.floor_of(bs.position[2]) if tx_ind else 0,
            rx_floor=ue.floor if ue.indoor else 0)
        return ch.path_loss_db(link)

    def _associate(self) -> None:
        """Attach every user to the strongest own-operator station on its carrier."""
        for name, bank in self.banks.items():
            rx_dbm = np.array([[s.max_tx_power_dbm for s in bank.stations]]) \
                - bank.largescale_db
            for i, ue in enumerate(bank.users):
                candidates = [j for j, s in enumerate(bank.stations)
                              if s.operator == ue.operator]
                j = max(candidates, key=lambda j: rx_dbm[i, j])
                self.serving[ue.id] = bank.stations[j].id

    # -- controller hooks ------------------------------------------------------

    def set_station_caps(self, caps: dict[int, tuple[np.ndarray | None, float]]) -> None:
        """Set (allowed RB mask, total power cap in watts) per station id."""
        for bs_id, (mask, power_w) in caps.items():
            self.allowed_rb[bs_id] = None if mask is None else np.asarray(mask, dtype=bool)
            self.power_cap_w[bs_id] = float(power_w)

    def set_static_plan(self, plan: dict[int, list[StaticAssignment]]) -> None:
        self.static_plan = plan

    def attached_ues(self, bs_id: int) -> list[UserEquipment]:
        return [u for u in self.users if self.serving.get(u.id) == bs_id]

    def planning_gain(self, ue_id: int, bs_id: int, position=None) -> float:
        ue = self.ue_by_id[ue_id]
        bank = self.banks[self.carrier_of_ue[ue_id]]
        return bank.planning_gain(ue, bs_id, position=position)

    def serving_link_gain(self, ue_id: int) -> np.ndarray | None:
        """Current per-RB gain of the user's serving link (None before TTI 0)."""
        name = self.carrier_of_ue[ue_id]
        g = self._gains.get(name)
        if g is None:
            return None
        bank = self.banks[name]
        return g[bank.rx_index[ue_id], bank.tx_index[self.serving[ue_id]], :]

    # -- TTI -------------------------------------------------------------------

    def _allowed_mask(self, bs_id: int) -> np.ndarray:
        mask = self.allowed_rb[bs_id]
        if mask is None:
            return self._full_mask
        return mask

    def _planned_power_per_rb(self, bs, station_index_in_bank: int) -> np.ndarray:
        """Per-RB transmit power (W) the station would use on allowed RBs."""
        mask = self._allowed_mask(bs.id)
        n_allowed = int(mask.sum())
        p = np.zeros(self.dep.n_rb)
        if n_allowed == 0:
            return p
        per_rb = self.power_cap_w[bs.id] / n_allowed
        p[mask] = per_rb
        if self.sfr_enabled and bs.kind == "indoor-hotspot":
            p *= sch.sfr_power_factors(bs.id, self.dep.n_rb)
        return p

    def run_tti(self, t_idx: int) -> TtiReport:
        cfg = self.cfg
        t_s = t_idx * cfg.tti_s
        report = TtiReport(t_ms=int(round(t_s * 1000.0)))

        if t_idx > 0:
            step_mobility(self.users, cfg.tti_s, self.dep)
        assoc_ttis = int(round(ASSOCIATION_PERIOD_S / cfg.tti_s))
        if t_idx > 0 and t_idx % assoc_ttis == 0:
            for bank in self.banks.values():
                bank.refresh_large_scale()
            self._associate()
        else:
            for bank in self.banks.values():
                fast = [i for i, u in enumerate(bank.users) if u.mobility == "trajectory"]
                if fast:
                    bank.refresh_large_scale(fast)

        for name, bank in self.banks.items():
            self._gains_prev[name] = self._gains.get(name)
            self._gains[name] = bank.gains(t_s)

        for s in self.stations:
            report.allowed_rb_counts[s.id] = int(self._allowed_mask(s.id).sum())
        for name, bank in self.banks.items():
            self._run_carrier_tti(name, bank, t_idx, t_s, report)
        report.rows.sort(key=lambda r: r.ue_id)
        return report

    def _run_carrier_tti(self, name: str, bank: CarrierBank, t_idx: int,
                         t_s: float, report: TtiReport) -> None:
        cfg = self.cfg
        n_rb = self.dep.n_rb
        G = self._gains[name]
        G_prev = self._gains_prev.get(name)
        if G_prev is None:
            G_prev = G
        I_prev = self._interf_prev.get(name)
        if I_prev is None:
            I_prev = np.zeros((bank.n_rx, n_rb))

        rx_index = bank.rx_index
        tx_index = bank.tx_index

        emission = np.zeros((bank.n_tx, n_rb))
        alloc_power = np.zeros((bank.n_tx, n_rb))
        assignment = np.full((bank.n_tx, n_rb), -1, dtype=np.int64)
        forced_mcs: dict[int, int] = {}

        for j, bs in enumerate(bank.stations):
            attached = sorted(self.attached_ues(bs.id), key=lambda u: u.id)
            if not attached:
                continue
            mask = self._allowed_mask(bs.id)
            planned = self._planned_power_per_rb(bs, j)
            statics = self.static_plan.get(bs.id, [])
            static_ids = {s.ue_id for s in statics}
            reserved = np.zeros(n_rb, dtype=bool)
            for sa in statics:
                if sa.ue_id not in rx_index:
                    continue
                assignment[j, sa.rbs] = sa.ue_id
                reserved[sa.rbs] = True
                forced_mcs[sa.ue_id] = sa.mcs
            dyn = [u for u in attached if u.id not in static_ids]
            available = mask & ~reserved
            if bs.kind == "road-side-unit":
                if dyn:
                    ids = np.array([u.id for u in dyn], dtype=np.int64)
                    rr = (np.arange(n_rb) + self.rr_offset[bs.id]) % len(ids)
                    sel = ids[rr]
                    assignment[j, available] = sel[available]
                    self.rr_offset[bs.id] = (self.rr_offset[bs.id] + 1) % len(ids)
            elif dyn and available.any():
                rows = np.array([rx_index[u.id] for u in dyn])
                gp = G_prev[rows, j, :]
                sinr_est = planned[None, :] * gp / (self.noise_rb_w + I_prev[rows, :])
                sinr_db = 10.0 * np.log10(np.maximum(sinr_est, 1e-30))
                mcs_est = np.searchsorted(self.thresholds_db, sinr_db, side="right")
                rates = self.rate_by_mcs[mcs_est]
                a = sch.pf_schedule([u.id for u in dyn], rates,
                                    self.sched[bs.id], available)
                picked = a >= 0
                assignment[j, picked] = a[picked]
                report.pf_processed_rbs += int(available.sum())
            active = assignment[j] >= 0
            alloc_power[j, active] = planned[active]
            emission[j] = _leakage(alloc_power[j], self.mask_db)
            if active.any():
                report.transmissions.append(TransmissionRecord(
                    t_s=t_s, bs_id=bs.id, rbs=np.flatnonzero(active),
                    total_power_dbm=dbm_from_watts(alloc_power[j].sum())))

        # Received power and interference for every user on this carrier.
        received = np.einsum("rtb,tb->rb", G, emission)
        interference = np.empty((bank.n_rx, n_rb))
        for i, ue in enumerate(bank.users):
            bs_id = self.serving.get(ue.id)
            if bs_id in tx_index:
                j = tx_index[bs_id]
                interference[i] = received[i] - G[i, j, :] * emission[j]
            else:
                interference[i] = received[i]
        np.maximum(interference, 0.0, out=interference)
        self._interf_prev[name] = interference

        # Realized MCS and bits per user.
        served_bits = {u.id: (0.0, 0, 0) for u in bank.users}
        for j, bs in enumerate(bank.stations):
            alloc_rbs = np.flatnonzero(assignment[j] >= 0)
            if alloc_rbs.size == 0:
                continue
            owner_ids = assignment[j, alloc_rbs]
            ids = np.unique(owner_ids)
            owner = np.searchsorted(ids, owner_ids)
            rows = np.searchsorted(bank.ue_ids, owner_ids)
            gamma = (alloc_power[j, alloc_rbs] * G[rows, j, alloc_rbs]
                     / (self.noise_rb_w + interference[rows, alloc_rbs]))
            mcs_v, bits_v = _select_mcs_batch(gamma, owner, len(ids), self.table,
                                              self.dep.rb_bandwidth_hz, cfg.tti_s)
            for k, uid in enumerate(ids):
                uid = int(uid)
                n_alloc = int(np.count_nonzero(owner == k))
                if uid in forced_mcs:
                    # Pinned modulation: deliver at the plan MCS when the
                    # current channel still supports it, otherwise outage.
                    plan = forced_mcs[uid]
                    entry = self.table[plan - 1]
                    g_u = gamma[owner == k]
                    geff = la.eesm_effective_snr(g_u, entry.beta)
                    if 10.0 * np.log10(max(geff, 1e-300)) >= entry.min_effective_snr_db:
                        mcs_v[k] = plan
                        bits_v[k] = entry.efficiency_bps_hz * self.dep.rb_bandwidth_hz \
                            * cfg.tti_s * n_alloc
                    else:
                        mcs_v[k], bits_v[k] = 0, 0.0
                        self.static_outages += 1
                served_bits[uid] = (float(bits_v[k]), n_alloc, int(mcs_v[k]))
            report.rb_decisions.append((bs.id, alloc_rbs, owner_ids, mcs_v[owner]))

        for u in bank.users:
            bits, n_alloc, mcs = served_bits[u.id]
            bs_id = self.serving.get(u.id, -1)
            sch.update_average_rate(self.sched[bs_id], u.id, bits, cfg.tti_s)
            report.rows.append(UeTtiRow(
                ue_id=u.id, bits=bits, n_rbs=n_alloc, mcs=mcs, serving_bs=bs_id,
                interference_w=float(interference[rx_index[u.id]].sum())))


def run_tti(world: World, t_idx: int) -> TtiReport:
    """Advance the world by one scheduling interval."""
    return world.run_tti(t_idx)
