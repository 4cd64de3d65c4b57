"""The three map-driven spectrum-management behaviours.

A: time-scheduled sharing rules from the policy store are turned into live
   per-cell resource and power caps.
B: the route of a protected outdoor user is used to re-solve, every
   reporting epoch, a sum-rate power allocation for the indoor cells under
   an aggregate interference ceiling at the user.
C: per-cell, per-RB statistics of past scheduling decisions identify
   devices with stationary demand, which are then pinned to fixed resources
   for multi-second windows and bypass the per-TTI scheduler.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import link_adaptation as la
from .rsm import MapLayer, ObservationSample, RsmRepository, TrajectoryRecord
from .simulation import StaticAssignment, World, dbm_from_watts, watts_from_dbm

LN2 = math.log(2.0)


# -- use case A: live sharing-policy caps -------------------------------------


def apply_lsa_schedule(repo: RsmRepository, t_s: float, bs_ids, n_rb: int
                       ) -> dict[int, tuple[np.ndarray, float]]:
    """Per-station (allowed RB mask, power cap dBm) from the active records.

    Stations without any active record get an empty allowed set; where
    records overlap, the most conservative power cap wins.
    """
    active = repo.active_policies(t_s)
    out = {}
    for bs_id in bs_ids:
        mask = np.zeros(n_rb, dtype=bool)
        cap = np.inf
        for rec in active:
            if rec.bs_id != bs_id:
                continue
            mask[rec.rb_start:min(rec.rb_end, n_rb)] = True
            cap = min(cap, rec.max_tx_power_dbm)
        out[bs_id] = (mask, cap if np.isfinite(cap) else -np.inf)
    return out


class LsaController:
    """Re-applies the policy schedule to the indoor cells every TTI."""

    def __init__(self, world: World, repo: RsmRepository):
        self.world = world
        self.repo = repo
        self.indoor_ids = [s.id for s in world.stations if s.kind == "indoor-hotspot"]
        self._last = None

    def before_tti(self, t_idx: int) -> None:
        t_s = t_idx * self.world.cfg.tti_s
        sched = apply_lsa_schedule(self.repo, t_s, self.indoor_ids, self.world.dep.n_rb)
        key = tuple((bs, m.tobytes(), cap) for bs, (m, cap) in sorted(sched.items()))
        if key == self._last:
            return
        self._last = key
        caps = {bs: (mask, watts_from_dbm(cap) if np.isfinite(cap) else 0.0)
                for bs, (mask, cap) in sched.items()}
        self.world.set_station_caps(caps)

    def after_tti(self, t_idx, report) -> None:
        pass


# -- use case B: adaptive protection of a moving outdoor user ------------------


@dataclass(frozen=True)
class ProtectionConstraint:
    victim_ue_id: int
    i_max_w: float
    epoch_s: float = 0.2

    def __post_init__(self):
        if self.i_max_w <= 0:
            raise ValueError("interference cap must be positive")
        if self.epoch_s <= 0:
            raise ValueError("epoch must be positive")


def predict_victim_position(trajectory: TrajectoryRecord, t_s: float
                            ) -> tuple[np.ndarray, bool]:
    """Route position at t_s; the flag reports clamping outside the span."""
    return trajectory.position_at(t_s)


def _sum_rate(p, gain, serving, noise_w):
    s = gain[np.arange(gain.shape[0]), serving]
    d = noise_w + gain @ p - s * p[serving]
    snr = s * p[serving] / d
    return float(np.sum(np.log2(1.0 + snr)))


def _project(p, victim_gain, i_max_w, p_max_w):
    p = np.clip(p, 0.0, p_max_w)
    contrib = float(p @ victim_gain)
    if contrib > i_max_w:
        hot = victim_gain > 0
        scale = i_max_w / float(p[hot] @ victim_gain[hot]) * (1.0 - 1e-12)
        p = p.copy()
        p[hot] *= scale
    return p


def optimize_indoor_powers(gain: np.ndarray, serving: np.ndarray,
                           victim_gain: np.ndarray, i_max_w: float,
                           p_max_w: float, noise_w: float,
                           n_iter: int = 500) -> np.ndarray:
    """Sum-rate maximizing per-cell powers under the interference ceiling.

    Projected gradient ascent in the log-power domain with backtracking
    steps and multiplicative rescaling onto the interference hyperplane;
    restarted from a handful of corners because the objective is not
    concave. The returned vector is feasible: 0 <= p <= p_max and
    p . victim_gain <= i_max strictly.
    """
    gain = np.asarray(gain, dtype=float)
    serving = np.asarray(serving, dtype=np.int64)
    victim_gain = np.asarray(victim_gain, dtype=float)
    n_ue, n_bs = gain.shape
    if i_max_w <= 0:
        raise ValueError("interference cap must be positive")
    if n_ue == 0 or not np.any(gain > 0):
        return _project(np.full(n_bs, p_max_w), victim_gain, i_max_w, p_max_w)

    p_floor = p_max_w * 1e-15
    starts = [np.full(n_bs, p_max_w),
              np.full(n_bs, min(p_max_w, i_max_w / max(victim_gain.sum(), 1e-300)))]
    for b in range(min(n_bs, 2)):
        lop = np.full(n_bs, p_floor)
        lop[b] = p_max_w
        starts.append(lop)

    best_p, best_f = None, -np.inf
    rows = np.arange(n_ue)
    s_gain = gain[rows, serving]
    for p0 in starts:
        p = _project(np.maximum(p0, p_floor), victim_gain, i_max_w, p_max_w)
        x = np.log(np.maximum(p, p_floor))
        f = _sum_rate(p, gain, serving, noise_w)
        step = 1.0
        for _ in range(n_iter):
            signal = s_gain * p[serving]
            d = noise_w + gain @ p - signal
            total = d + signal
            served = np.bincount(serving, weights=s_gain / total, minlength=n_bs)
            w = signal / (d * total)
            cross = gain.T @ w - np.bincount(serving, weights=s_gain * w, minlength=n_bs)
            grad_x = p * (served - cross) / LN2
            norm = np.max(np.abs(grad_x))
            if norm < 1e-15:
                break
            x_new = x + step * grad_x / norm
            p_new = _project(np.exp(np.clip(x_new, np.log(p_floor), np.log(p_max_w))),
                             victim_gain, i_max_w, p_max_w)
            f_new = _sum_rate(p_new, gain, serving, noise_w)
            if f_new >= f:
                p, x, f = p_new, np.log(np.maximum(p_new, p_floor)), f_new
                step = min(step * 1.2, 4.0)
            else:
                step *= 0.5
                if step < 1e-8:
                    break
        if f > best_f:
            best_p, best_f = p, f
    out = _project(best_p, victim_gain, i_max_w, p_max_w)
    assert float(out @ victim_gain) <= i_max_w
    return out


class AdaptiveProtectionController:
    """Epoch-wise power control of the indoor cells for one comparison arm."""

    def __init__(self, world: World, trajectory: TrajectoryRecord,
                 constraint: ProtectionConstraint, arm: str):
        if arm not in ("adaptive", "no_protection", "no_indoor"):
            raise ValueError("unknown arm %r" % (arm,))
        self.world = world
        self.trajectory = trajectory
        self.constraint = constraint
        self.arm = arm
        self.indoor = [s for s in world.stations if s.kind == "indoor-hotspot"]
        self.epoch_ttis = int(round(constraint.epoch_s / world.cfg.tti_s))
        self.epoch_rows: list[dict] = []

    def _indoor_problem(self):
        ids = [s.id for s in self.indoor]
        ues, serving = [], []
        for k, bs in enumerate(self.indoor):
            for u in self.world.attached_ues(bs.id):
                ues.append(u)
                serving.append(k)
        gain = np.zeros((len(ues), len(ids)))
        for i, u in enumerate(ues):
            for k, bs in enumerate(self.indoor):
                gain[i, k] = self.world.planning_gain(u.id, bs.id)
        return ids, gain, np.array(serving, dtype=np.int64)

    def before_tti(self, t_idx: int) -> None:
        if t_idx % self.epoch_ttis:
            return
        cfg = self.world.cfg
        t_mid = t_idx * cfg.tti_s + self.constraint.epoch_s / 2.0
        pos, _ = predict_victim_position(self.trajectory, t_mid)
        p_max = watts_from_dbm(self.indoor[0].max_tx_power_dbm)
        victim_gain = np.array([
            self.world.planning_gain(self.constraint.victim_ue_id, bs.id,
                                     position=pos) for bs in self.indoor])
        if self.arm == "no_indoor":
            powers = np.zeros(len(self.indoor))
            caps = {bs.id: (np.zeros(self.world.dep.n_rb, dtype=bool), 0.0)
                    for bs in self.indoor}
        elif self.arm == "no_protection":
            powers = np.full(len(self.indoor), p_max)
            caps = {bs.id: (None, p_max) for bs in self.indoor}
        else:
            ids, gain, serving = self._indoor_problem()
            noise_band = self.world.noise_rb_w * self.world.dep.n_rb
            powers = optimize_indoor_powers(gain, serving, victim_gain,
                                            self.constraint.i_max_w, p_max,
                                            noise_band)
            caps = {bs.id: (None, float(powers[k]))
                    for k, bs in enumerate(self.indoor)}
        self.world.set_station_caps(caps)
        self.epoch_rows.append({
            "epoch": t_idx // self.epoch_ttis,
            "t_start_s": t_idx * cfg.tti_s,
            "victim_x": float(pos[0]), "victim_y": float(pos[1]),
            "planned_interference_w": float(powers @ victim_gain),
            "powers_dbm": [dbm_from_watts(pw) for pw in powers],
        })

    def after_tti(self, t_idx, report) -> None:
        pass


# -- use case C: traffic-map assisted scheduling -------------------------------


def update_traffic_map(layer: MapLayer, sample: ObservationSample,
                       weight: float = 0.1) -> bool:
    """Fold one scheduler decision into the per-cell, per-RB statistics."""
    idx = layer.grid.cell_of(sample.position[0], sample.position[1], sample.floor)
    if idx is None or not 0 <= sample.rb < layer.n_rb:
        layer.rejected += 1
        return False
    layer.update_cell(idx, sample.rb, sample.value, sample.t_s, weight)
    return True


def cell_summary(layer: MapLayer, idx) -> tuple[float, float, int]:
    """(mean, std, observed RB count) aggregated over a cell's observed RBs."""
    f, iy, ix = idx
    seen = layer.n_samples[f, iy, ix, :] > 0
    if not seen.any():
        return 0.0, 0.0, 0
    means = layer.mean[f, iy, ix, seen]
    stds = layer.std()[f, iy, ix, seen]
    return float(means.mean()), float(stds.mean()), int(seen.sum())


@dataclass
class HybridPlan:
    """Fixed assignments for stationary users plus the leftover dynamic pool."""

    t_start_s: float
    t_end_s: float
    assignments: dict[int, list[StaticAssignment]] = field(default_factory=dict)

    @property
    def static_ue_ids(self) -> set[int]:
        return {a.ue_id for bs in self.assignments.values() for a in bs}


def classify_static(layer: MapLayer, candidates, sigma_max: float,
                    rb_rate_table_bps: np.ndarray, n_rb: int,
                    pool_fraction: float = 1.0) -> list[StaticAssignment]:
    """Select stationary users and pin resources that satisfy their demand.

    candidates: iterable of (ue_id, serving_bs, cell_idx, demand_bps).
    Users with unobserved or zero-mean cells, or too spread-out decision
    statistics, stay dynamic; admitted users take RBs from their station's
    pool in ascending-spread order while room remains.
    """
    ranked = []
    for ue_id, bs_id, idx, demand in candidates:
        if idx is None:
            continue
        mean, std, n_obs = cell_summary(layer, idx)
        if n_obs == 0 or mean <= 0 or std > sigma_max:
            continue
        ranked.append((std, ue_id, bs_id, idx, mean, demand))
    ranked.sort(key=lambda r: (r[0], r[1]))

    pool_size = int(pool_fraction * n_rb)
    free: dict[int, np.ndarray] = {}
    out: list[StaticAssignment] = []
    for std, ue_id, bs_id, idx, mean, demand in ranked:
        mcs = int(min(max(math.floor(mean - std), 0), len(rb_rate_table_bps) - 1))
        if mcs < 1:
            continue
        per_rb = rb_rate_table_bps[mcs]
        n_need = max(int(math.ceil(demand / per_rb)), 1)
        if bs_id not in free:
            free[bs_id] = np.ones(n_rb, dtype=bool)
            free[bs_id][pool_size:] = False
        if n_need > int(free[bs_id].sum()):
            continue
        f, iy, ix = idx
        per_rb_mean = layer.mean[f, iy, ix, :].copy()
        per_rb_mean[~free[bs_id]] = -1.0
        order = np.argsort(-per_rb_mean, kind="stable")
        rbs = np.sort(order[:n_need])
        free[bs_id][rbs] = False
        out.append(StaticAssignment(ue_id=ue_id, bs_id=bs_id, rbs=rbs,
                                    mcs=mcs, demand_bps=demand))
    return out


def hybrid_schedule_step(world: World, plan: HybridPlan, t_idx: int):
    """One TTI under a hybrid plan (static users bypass the PF scheduler)."""
    t_s = t_idx * world.cfg.tti_s
    if not plan.t_start_s <= t_s < plan.t_end_s:
        raise ValueError("plan not valid at t=%.3f s" % t_s)
    world.set_static_plan(plan.assignments)
    return world.run_tti(t_idx)


class TrafficMapController:
    """Observation, classification and windowed re-planning for use case C."""

    def __init__(self, world: World, repo: RsmRepository, layer_kind: str = "traffic-density",
                 weight: float = 0.1, sigma_max: float = 0.5,
                 pool_fraction: float = 1.0):
        self.world = world
        self.repo = repo
        self.layer = repo.layer(layer_kind)
        if self.layer is None:
            raise KeyError("repository lacks a %r layer" % (layer_kind,))
        self.weight = weight
        self.sigma_max = sigma_max
        self.pool_fraction = pool_fraction
        self.obs_ttis = int(round(world.cfg.observation_s / world.cfg.tti_s))
        self.window_ttis = int(round(world.cfg.static_window_s / world.cfg.tti_s))
        self.bits_acc: dict[int, float] = {}
        self.plan: HybridPlan | None = None
        self.plan_history: list[HybridPlan] = []

    def _candidates(self):
        cfg = self.world.cfg
        horizon = self.obs_ttis * cfg.tti_s
        for u in sorted(self.world.users, key=lambda x: x.id):
            if not u.indoor:
                continue
            bs_id = self.world.serving.get(u.id)
            bs = self.world.station_by_id.get(bs_id)
            if bs is None or bs.kind != "indoor-hotspot":
                continue
            idx = self.layer.grid.cell_of(u.position[0], u.position[1], u.floor)
            demand = self.bits_acc.get(u.id, 0.0) / horizon
            yield u.id, bs_id, idx, demand

    def _replan(self, t_idx: int) -> None:
        cfg = self.world.cfg
        assigns = classify_static(self.layer, self._candidates(), self.sigma_max,
                                  self.world.rate_by_mcs, self.world.dep.n_rb,
                                  self.pool_fraction)
        by_bs: dict[int, list[StaticAssignment]] = {}
        for a in assigns:
            by_bs.setdefault(a.bs_id, []).append(a)
        t_s = t_idx * cfg.tti_s
        self.plan = HybridPlan(t_start_s=t_s, t_end_s=t_s + cfg.static_window_s,
                               assignments=by_bs)
        self.plan_history.append(self.plan)
        self.world.set_static_plan(by_bs)

    def before_tti(self, t_idx: int) -> None:
        if t_idx >= self.obs_ttis and (t_idx - self.obs_ttis) % self.window_ttis == 0:
            self._replan(t_idx)

    def after_tti(self, t_idx: int, report) -> None:
        t_s = t_idx * self.world.cfg.tti_s
        grid = self.layer.grid
        bases: dict[int, int] = {}

        def base_of(uid: int) -> int:
            if uid not in bases:
                u = self.world.ue_by_id[uid]
                idx = grid.cell_of(u.position[0], u.position[1], u.floor)
                bases[uid] = -1 if idx is None else self.layer.flat_index(idx, 0)
            return bases[uid]

        flats, vals = [], []
        for bs_id, rbs, ue_ids, mcs in report.rb_decisions:
            uids = np.unique(ue_ids)
            lut = np.array([base_of(int(x)) for x in uids], dtype=np.int64)
            base = lut[np.searchsorted(uids, ue_ids)]
            ok = base >= 0
            self.layer.rejected += int(np.count_nonzero(~ok))
            flats.append(base[ok] + rbs[ok])
            vals.append(mcs[ok].astype(float))
        if flats:
            flat = np.concatenate(flats)
            if flat.size:
                self.layer.update_cells_bulk(flat, np.concatenate(vals), t_s,
                                             self.weight)
        if t_idx < self.obs_ttis:
            for row in report.rows:
                self.bits_acc[row.ue_id] = self.bits_acc.get(row.ue_id, 0.0) + row.bits


class BaselineController:
    """No map-driven behaviour; plain proportional-fair everywhere."""

    def before_tti(self, t_idx) -> None:
        pass

    def after_tti(self, t_idx, report) -> None:
        pass
