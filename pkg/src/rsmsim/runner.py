"""End-to-end experiment orchestration and deterministic result files.

A run executes the TTI loop for the selected use case and writes plain CSV
streams plus a JSON metadata sidecar, so that identical (config, seed)
pairs reproduce byte-identical outputs and every summary value can be
recomputed from the raw per-TTI stream.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .rsm import GridSpec, MapLayer, PolicyRecord, RsmRepository
from .scenario import (Deployment, RunConfig, UserEquipment,
                       build_reference_scenario, bus_trajectory, load_scenario,
                       validate)
from .simulation import World, dbm_from_watts
from .usecases import (AdaptiveProtectionController, BaselineController,
                       LsaController, ProtectionConstraint, TrafficMapController)

TTI_HEADER = ["t_ms", "ue_id", "bits", "n_rbs", "mcs", "serving_bs",
              "interference_at_victims_dbm"]

DEMO_LSA_BUDGETS = (50, 100, 20, 80)
DEMO_LSA_INTERVAL_S = 1.0


@dataclass
class ExperimentResult:
    out_dir: str
    tti_path: str
    summary_path: str
    cost_path: str
    metadata: dict
    epoch_rows: list[dict] = field(default_factory=list)
    arm_dirs: dict[str, str] = field(default_factory=dict)
    pf_cost_by_phase: dict[str, float] = field(default_factory=dict)


def prepare_scenario(scenario_path: str | None, use_case: str, seed: int
                     ) -> tuple[Deployment, list[UserEquipment], RunConfig]:
    """Resolve a scenario file (or the built-in reference) for a use case."""
    if scenario_path is None:
        dep, users = build_reference_scenario(seed, use_case=use_case)
        cfg = RunConfig(seed=seed, use_case=use_case)
        return dep, users, cfg
    dep, users, cfg = load_scenario(scenario_path)
    if use_case == "B" and not any(u.mobility == "trajectory" for u in users):
        uid = max((u.id for u in users), default=-1) + 1
        traj = bus_trajectory(dep.building, subject_id=uid)
        start, _ = traj.position_at(0.0)
        victim = UserEquipment(uid, "IoT", start, mobility="trajectory",
                               speed_mps=50.0 / 3.6, trajectory=traj)
        victim._rng = np.random.default_rng(np.random.SeedSequence([seed, 997, uid]))
        users = users + [victim]
    if use_case == "C" and not any(u.cluster_id is not None for u in users):
        uid = max((u.id for u in users), default=-1) + 1
        b = dep.building
        for i in range(10):
            x = b.origin_x + 11.5 + (i % 5)
            y = b.origin_y + 11.5 + (i // 5)
            u = UserEquipment(uid, "MBB", np.array([x, y, 1.5]), mobility="static",
                              indoor=True, floor=0, cluster_id=0)
            u._rng = np.random.default_rng(np.random.SeedSequence([seed, 997, uid]))
            users.append(u)
            uid += 1
    validate(dep, users)
    return dep, users, cfg


def demo_policy_repo(dep: Deployment, budgets=DEMO_LSA_BUDGETS,
                     interval_s: float = DEMO_LSA_INTERVAL_S,
                     power_dbm: float = 21.0) -> RsmRepository:
    """Four-interval sharing schedule stepping the indoor RB budget."""
    repo = RsmRepository(owner="MBB")
    for k, budget in enumerate(budgets):
        for s in dep.stations(kind="indoor-hotspot"):
            repo.add_policy(PolicyRecord(
                bs_id=s.id, t_start_s=k * interval_s, t_end_s=(k + 1) * interval_s,
                rb_start=0, rb_end=int(budget), max_tx_power_dbm=power_dbm))
    return repo


def traffic_map_repo(dep: Deployment, raster_m: float = 1.0) -> RsmRepository:
    """Repository with an empty per-RB traffic statistics layer over the building."""
    b = dep.building
    grid = GridSpec(origin_x=b.origin_x, origin_y=b.origin_y, raster_m=raster_m,
                    nx=int(round(b.width_m / raster_m)),
                    ny=int(round(b.depth_m / raster_m)),
                    n_floors=b.n_floors)
    repo = RsmRepository(owner="MBB")
    repo.add_layer(MapLayer("traffic-density", grid, n_rb=dep.n_rb))
    return repo


def config_hash(dep: Deployment, cfg: RunConfig) -> str:
    blob = json.dumps({
        "n_rb": dep.n_rb, "rb_bw": dep.rb_bandwidth_hz,
        "f1": dep.carrier_f1_hz, "f2": dep.carrier_f2_hz,
        "stations": [(s.id, s.kind, s.operator, s.position, s.carrier,
                      s.max_tx_power_dbm) for s in dep.base_stations],
        "run": [cfg.duration_s, cfg.tti_s, cfg.seed, cfg.use_case, cfg.epoch_s,
                cfg.observation_s, cfg.static_window_s, cfg.i_max_dbm],
    }, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()


def summarize(rows, window_s: float, groups: dict[int, str], tti_s: float = 1e-3):
    """Windowed per-UE and per-group mean rates from raw TTI rows.

    rows yield (t_ms, ue_id, bits); groups maps ue_id to "indoor"/"outdoor".
    Returns a sorted list of (window_idx, scope, mean_rate_bps).
    """
    ratio = window_s / tti_s
    if abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("window must be a multiple of the TTI")
    per_window_ue: dict[tuple[int, int], float] = {}
    for t_ms, ue_id, bits in rows:
        w = int(t_ms // int(round(window_s * 1000.0)))
        key = (w, ue_id)
        per_window_ue[key] = per_window_ue.get(key, 0.0) + bits
    out = []
    windows = sorted({w for w, _ in per_window_ue})
    for w in windows:
        group_bits: dict[str, float] = {}
        group_n: dict[str, int] = {}
        for ue_id in sorted(groups):
            bits = per_window_ue.get((w, ue_id), 0.0)
            out.append((w, "ue:%d" % ue_id, bits / window_s))
            g = groups[ue_id]
            group_bits[g] = group_bits.get(g, 0.0) + bits
            group_n[g] = group_n.get(g, 0) + 1
        for g in sorted(group_bits):
            out.append((w, "group:%s" % g, group_bits[g] / (group_n[g] * window_s)))
    return out


def _ue_groups(users) -> dict[int, str]:
    return {u.id: ("indoor" if u.indoor else "outdoor") for u in users}


class _RunWriter:
    """Streams one arm's TTI rows and windowed accumulators to disk."""

    def __init__(self, out_dir: str, window_s: float, users, cfg: RunConfig,
                 dump_ue_ids=()):
        os.makedirs(out_dir, exist_ok=True)
        self.out_dir = out_dir
        self.window_s = window_s
        self.window_ttis = int(round(window_s / cfg.tti_s))
        self.cfg = cfg
        self.groups = _ue_groups(users)
        self.tti_path = os.path.join(out_dir, "tti.csv")
        self._tti_fh = open(self.tti_path, "w", newline="")
        self._tti = csv.writer(self._tti_fh)
        self._tti.writerow(TTI_HEADER)
        self.rows_acc: list[tuple[int, int, float]] = []
        self.cost_rows: list[tuple[int, int]] = []
        self._cost_acc = 0
        self.caps_rows: list[tuple[int, int, int]] = []
        self._last_caps: dict[int, int] = {}
        self.dump_ue_ids = tuple(dump_ue_ids)
        self._chan = None
        if self.dump_ue_ids:
            self._chan_fh = open(os.path.join(out_dir, "channel.csv"), "w",
                                 newline="")
            self._chan = csv.writer(self._chan_fh)
            self._chan.writerow(["t_ms", "ue_id", "rb", "gain"])

    def write_channel(self, report, world) -> None:
        if self._chan is None:
            return
        for uid in self.dump_ue_ids:
            g = world.serving_link_gain(uid)
            if g is None:
                continue
            for rb, val in enumerate(g):
                self._chan.writerow([report.t_ms, uid, rb, "%.9e" % val])

    def write_tti(self, report) -> None:
        for r in report.rows:
            self._tti.writerow([
                report.t_ms, r.ue_id, "%.6f" % r.bits, r.n_rbs, r.mcs,
                r.serving_bs, "%.6f" % dbm_from_watts(r.interference_w)])
            self.rows_acc.append((report.t_ms, r.ue_id, r.bits))
        self._cost_acc += report.pf_processed_rbs
        t_idx = int(round(report.t_ms))  # tti index equals ms at 1 ms TTIs
        for bs_id in sorted(report.allowed_rb_counts):
            n = report.allowed_rb_counts[bs_id]
            if self._last_caps.get(bs_id) != n:
                self.caps_rows.append((report.t_ms, bs_id, n))
                self._last_caps[bs_id] = n
        if (t_idx + 1) % self.window_ttis == 0:
            w = t_idx // self.window_ttis
            self.cost_rows.append((w, self._cost_acc))
            self._cost_acc = 0

    def finish(self, metadata: dict) -> tuple[str, str]:
        self._tti_fh.close()
        if self._chan is not None:
            self._chan_fh.close()
        summary_path = os.path.join(self.out_dir, "summary.csv")
        with open(summary_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window", "t_start_ms", "scope", "mean_rate_bps"])
            for win, scope, rate in summarize(self.rows_acc, self.window_s,
                                              self.groups, self.cfg.tti_s):
                w.writerow([win, int(win * self.window_s * 1000), scope,
                            "%.6f" % rate])
        cost_path = os.path.join(self.out_dir, "cost.csv")
        with open(cost_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["window", "t_start_ms", "pf_processed_rbs"])
            for win, cost in self.cost_rows:
                w.writerow([win, int(win * self.window_s * 1000), cost])
        if self.caps_rows:
            with open(os.path.join(self.out_dir, "caps.csv"), "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t_ms", "bs_id", "n_allowed_rb"])
                for row in self.caps_rows:
                    w.writerow(row)
        with open(os.path.join(self.out_dir, "metadata.json"), "w") as fh:
            json.dump(metadata, fh, sort_keys=True, indent=1)
        return summary_path, cost_path


def _run_arm(dep, users, cfg, controller_factory, out_dir, window_s,
             traffic_export=None) -> tuple[World, object, _RunWriter]:
    world = World(dep, users, cfg)
    controller = controller_factory(world)
    dump_ids = ()
    if cfg.dump_channel:
        victims = [u.id for u in users if u.mobility == "trajectory"]
        dump_ids = tuple(victims) or (min(u.id for u in users),)
    writer = _RunWriter(out_dir, window_s, users, cfg, dump_ue_ids=dump_ids)
    n_ttis = int(round(cfg.duration_s / cfg.tti_s))
    for t in range(n_ttis):
        controller.before_tti(t)
        if traffic_export is not None:
            traffic_export(t, controller)
        report = world.run_tti(t)
        controller.after_tti(t, report)
        writer.write_tti(report)
        writer.write_channel(report, world)
    return world, controller, writer


def run_experiment(use_case: str = "baseline", seed: int = 1,
                   duration_s: float | None = None, out_dir: str = "out",
                   scenario_path: str | None = None,
                   i_max_dbm: float | None = None,
                   policy_path: str | None = None,
                   dump_channel: bool = False) -> ExperimentResult:
    """Run one experiment end to end and write its result files."""
    dep, users, cfg = prepare_scenario(scenario_path, use_case, seed)
    defaults = {"A": len(DEMO_LSA_BUDGETS) * DEMO_LSA_INTERVAL_S, "B": 6.0,
                "C": 15.0, "baseline": 1.0}
    if duration_s is None:
        duration_s = max(cfg.duration_s, defaults[use_case])
    cfg = RunConfig(duration_s=duration_s, tti_s=cfg.tti_s, seed=seed,
                    use_case=use_case, epoch_s=cfg.epoch_s,
                    observation_s=cfg.observation_s,
                    static_window_s=cfg.static_window_s,
                    i_max_dbm=i_max_dbm if i_max_dbm is not None else cfg.i_max_dbm,
                    out_dir=out_dir, dump_channel=dump_channel,
                    policy_path=policy_path or cfg.policy_path)
    validate(dep, users, cfg)
    os.makedirs(out_dir, exist_ok=True)
    meta = {"version": __version__, "seed": seed, "use_case": use_case,
            "duration_s": duration_s, "config_hash": config_hash(dep, cfg),
            "n_users": len(users), "n_stations": len(dep.base_stations)}

    window_s = {"A": 1.0, "B": cfg.epoch_s, "C": 1.0, "baseline": 0.2}[use_case]

    if use_case == "B":
        victim = next(u for u in users if u.mobility == "trajectory")
        constraint = ProtectionConstraint(
            victim_ue_id=victim.id,
            i_max_w=10.0 ** ((cfg.i_max_dbm - 30.0) / 10.0), epoch_s=cfg.epoch_s)
        epoch_rows = []
        arm_dirs = {}
        first_paths = None
        for arm in ("adaptive", "no_protection", "no_indoor"):
            arm_dir = os.path.join(out_dir, "arms", arm)
            arm_dirs[arm] = arm_dir
            dep_a, users_a, _ = prepare_scenario(scenario_path, use_case, seed)
            victim_a = next(u for u in users_a if u.mobility == "trajectory")

            def factory(world, arm=arm, victim_a=victim_a):
                return AdaptiveProtectionController(
                    world, victim_a.trajectory,
                    ProtectionConstraint(victim_a.id, constraint.i_max_w,
                                         constraint.epoch_s), arm)

            world, controller, writer = _run_arm(dep_a, users_a, cfg, factory,
                                                 arm_dir, window_s)
            arm_meta = dict(meta, arm=arm)
            paths = writer.finish(arm_meta)
            if first_paths is None:
                first_paths = (writer.tti_path,) + paths
            rates = _epoch_rates(writer.rows_acc, cfg.epoch_s, writer.groups,
                                 victim_a.id)
            for row in controller.epoch_rows:
                row = dict(row, arm=arm, **rates.get(row["epoch"], {}))
                epoch_rows.append(row)
        _write_epochs(os.path.join(out_dir, "epochs.csv"), epoch_rows)
        with open(os.path.join(out_dir, "metadata.json"), "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1)
        return ExperimentResult(out_dir, first_paths[0], first_paths[1],
                                first_paths[2], meta, epoch_rows=epoch_rows,
                                arm_dirs=arm_dirs)

    if use_case == "C":
        # Two arms on the identical scenario: map-driven hybrid scheduling
        # versus plain proportional fair, for rate and cost comparison.
        arm_dirs = {}
        result = None
        for arm in ("hybrid", "pf_only"):
            arm_dir = os.path.join(out_dir, "arms", arm)
            arm_dirs[arm] = arm_dir
            dep_a, users_a, _ = prepare_scenario(scenario_path, use_case, seed)
            repo = traffic_map_repo(dep_a)
            if arm == "hybrid":
                factory = lambda world: TrafficMapController(world, repo)
            else:
                factory = lambda world: BaselineController()
            exports = {}

            def traffic_export(t_idx, controller):
                plan = getattr(controller, "plan", None)
                if plan is not None and plan.t_start_s not in exports:
                    t_ms = int(round(plan.t_start_s * 1000))
                    path = os.path.join(arm_dir, "traffic_map_%d.csv" % t_ms)
                    controller.layer.export_csv(path)
                    exports[plan.t_start_s] = path

            world, controller, writer = _run_arm(dep_a, users_a, cfg, factory,
                                                 arm_dir, window_s, traffic_export)
            arm_meta = dict(meta, arm=arm)
            if arm == "hybrid":
                controller.layer.export_csv(
                    os.path.join(arm_dir, "traffic_map_final.csv"))
                arm_meta["static_outages"] = world.static_outages
                arm_meta["plan_windows"] = len(controller.plan_history)
                arm_meta["static_ue_ids"] = sorted(
                    {a.ue_id for p in controller.plan_history
                     for lst in p.assignments.values() for a in lst})
            summary_path, cost_path = writer.finish(arm_meta)
            if arm == "hybrid":
                meta.update({k: arm_meta[k] for k in
                             ("static_outages", "plan_windows", "static_ue_ids")})
                result = ExperimentResult(out_dir, writer.tti_path, summary_path,
                                          cost_path, meta, arm_dirs=arm_dirs)
        with open(os.path.join(out_dir, "metadata.json"), "w") as fh:
            json.dump(meta, fh, sort_keys=True, indent=1)
        result.arm_dirs = arm_dirs
        return result

    if use_case == "A":
        repo = RsmRepository(owner="MBB")
        if cfg.policy_path:
            repo.load_policies(cfg.policy_path)
        else:
            repo = demo_policy_repo(dep)
        factory = lambda world: LsaController(world, repo)
    else:
        factory = lambda world: BaselineController()

    world, controller, writer = _run_arm(dep, users, cfg, factory, out_dir,
                                         window_s)
    summary_path, cost_path = writer.finish(meta)
    return ExperimentResult(out_dir, writer.tti_path, summary_path, cost_path, meta)


def _epoch_rates(rows_acc, epoch_s, groups, victim_id):
    """Per-epoch victim rate and indoor mean/sum rates from the raw rows."""
    per = {}
    for t_ms, ue_id, bits in rows_acc:
        e = int(t_ms // int(round(epoch_s * 1000)))
        d = per.setdefault(e, {"victim": 0.0, "indoor": 0.0, "n_indoor": set(),
                               "outdoor": 0.0, "n_outdoor": set()})
        if ue_id == victim_id:
            d["victim"] += bits
        g = groups.get(ue_id)
        if g == "indoor":
            d["indoor"] += bits
            d["n_indoor"].add(ue_id)
        elif g == "outdoor":
            d["outdoor"] += bits
            d["n_outdoor"].add(ue_id)
    out = {}
    for e, d in per.items():
        n_in = max(len(d["n_indoor"]), 1)
        n_out = max(len(d["n_outdoor"]), 1)
        out[e] = {
            "victim_rate_bps": d["victim"] / epoch_s,
            "indoor_mean_rate_bps": d["indoor"] / (n_in * epoch_s),
            "indoor_sum_rate_bps": d["indoor"] / epoch_s,
            "outdoor_mean_rate_bps": d["outdoor"] / (n_out * epoch_s),
        }
    return out


EPOCH_HEADER = ["arm", "epoch", "t_start_s", "victim_x", "victim_y",
                "planned_interference_dbm", "victim_rate_bps",
                "indoor_mean_rate_bps", "indoor_sum_rate_bps",
                "outdoor_mean_rate_bps"]


def _write_epochs(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(EPOCH_HEADER)
        for r in sorted(rows, key=lambda r: (r["arm"], r["epoch"])):
            w.writerow([
                r["arm"], r["epoch"], "%.3f" % r["t_start_s"],
                "%.3f" % r["victim_x"], "%.3f" % r["victim_y"],
                "%.6f" % dbm_from_watts(r["planned_interference_w"]),
                "%.6f" % r.get("victim_rate_bps", 0.0),
                "%.6f" % r.get("indoor_mean_rate_bps", 0.0),
                "%.6f" % r.get("indoor_sum_rate_bps", 0.0),
                "%.6f" % r.get("outdoor_mean_rate_bps", 0.0)])


def read_epochs(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(r) for r in csv.DictReader(fh)]


def compare_arms(result_dirs: list[str], out_path: str | None = None) -> list[dict]:
    """Align windowed summaries of runs that share a seed and scenario.

    Returns rows of per-window per-scope rates for every arm plus deltas
    against the first arm, and appends one PF-cost row per arm pair.
    """
    metas, summaries, costs = [], [], []
    for d in result_dirs:
        with open(os.path.join(d, "metadata.json")) as fh:
            metas.append(json.load(fh))
        with open(os.path.join(d, "summary.csv"), newline="") as fh:
            summaries.append({(int(r["window"]), r["scope"]): float(r["mean_rate_bps"])
                              for r in csv.DictReader(fh)})
        cost_file = os.path.join(d, "cost.csv")
        cost = {}
        if os.path.exists(cost_file):
            with open(cost_file, newline="") as fh:
                cost = {int(r["window"]): int(r["pf_processed_rbs"])
                        for r in csv.DictReader(fh)}
        costs.append(cost)
    seeds = {m["seed"] for m in metas}
    hashes = {m["config_hash"] for m in metas}
    if len(seeds) != 1 or len(hashes) != 1:
        raise ValueError("arms do not share seed and scenario; comparison invalid")
    keys = sorted(set().union(*[s.keys() for s in summaries]))
    rows = []
    for key in keys:
        base = summaries[0].get(key, 0.0)
        row = {"window": key[0], "scope": key[1], "arm0_rate_bps": base}
        for i, s in enumerate(summaries[1:], start=1):
            rate = s.get(key, 0.0)
            row["arm%d_rate_bps" % i] = rate
            row["arm%d_delta" % i] = rate - base
        rows.append(row)
    total0 = sum(costs[0].values()) or 0
    for i, c in enumerate(costs[1:], start=1):
        total = sum(c.values())
        reduction = (1.0 - total / total0) * 100.0 if total0 else 0.0
        rows.append({"window": -1, "scope": "pf_cost", "arm0_rate_bps": total0,
                     "arm%d_rate_bps" % i: total,
                     "arm%d_delta" % i: reduction})
    if out_path:
        fields = sorted({k for r in rows for k in r})
        with open(out_path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=fields)
            w.writeheader()
            for r in rows:
                w.writerow(r)
    return rows
