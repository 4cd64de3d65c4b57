"""Deployment geometry, node/user populations, mobility and run configuration.

The reference deployment is one two-floor office building hosting twelve
hotspot base stations of the broadband operator inside the band of the IoT
operator (carrier f1), one broadband macro node on its own band (f2), and
road-side IoT units along the street south of the building. Helper
constructors add the moving protected user (a bus passing the building) and
a ten-device static cluster for the traffic-map use case.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .rsm import TrajectoryRecord

BS_KINDS = ("indoor-hotspot", "outdoor-macro", "road-side-unit")
OPERATORS = ("MBB", "IoT")
USE_CASES = ("A", "B", "C", "baseline")

MAX_TX_POWER_DBM = 21.0
OUTDOOR_BS_HEIGHT_M = 10.0
PEDESTRIAN_SPEED_MPS = 0.8
MIN_DIST_OUTDOOR_BS_M = 10.0
MIN_DIST_INDOOR_BS_M = 3.0
BUS_SPEED_MPS = 50.0 / 3.6
BUS_RUN_S = 6.0


class ScenarioError(ValueError):
    """Scenario file or invariant problem; carries the offending field path."""

    def __init__(self, path: str, message: str):
        self.field_path = path
        super().__init__("%s: %s" % (path, message))


@dataclass(frozen=True)
class Building:
    origin_x: float = 0.0
    origin_y: float = 0.0
    width_m: float = 40.0
    depth_m: float = 40.0
    floor_height_m: float = 3.0
    n_floors: int = 2

    def contains(self, x: float, y: float, z: float = 0.0) -> bool:
        return (self.origin_x <= x <= self.origin_x + self.width_m
                and self.origin_y <= y <= self.origin_y + self.depth_m
                and 0.0 <= z <= self.floor_height_m * self.n_floors)

    def footprint_contains(self, x: float, y: float) -> bool:
        return (self.origin_x <= x <= self.origin_x + self.width_m
                and self.origin_y <= y <= self.origin_y + self.depth_m)

    def floor_of(self, z: float) -> int:
        return min(max(int(z // self.floor_height_m), 0), self.n_floors - 1)

    @property
    def center(self) -> tuple[float, float]:
        return (self.origin_x + self.width_m / 2.0, self.origin_y + self.depth_m / 2.0)


@dataclass(frozen=True)
class BaseStation:
    id: int
    kind: str
    operator: str
    position: tuple[float, float, float]
    carrier: str  # "f1" | "f2"
    max_tx_power_dbm: float = MAX_TX_POWER_DBM

    @property
    def height_m(self) -> float:
        return self.position[2]


@dataclass
class UserEquipment:
    id: int
    operator: str
    position: np.ndarray
    mobility: str = "static"  # static | pedestrian | trajectory
    speed_mps: float = 0.0
    trajectory: TrajectoryRecord | None = None
    cluster_id: int | None = None
    indoor: bool = False
    floor: int = 0
    t_s: float = 0.0
    direction: np.ndarray | None = None
    _rng: np.random.Generator | None = None

    @property
    def is_victim(self) -> bool:
        return self.mobility == "trajectory"


@dataclass(frozen=True)
class Deployment:
    building: Building
    base_stations: tuple[BaseStation, ...]
    carrier_f1_hz: float = 3.5e9
    carrier_f2_hz: float = 2.6e9
    channel_bandwidth_hz: float = 20e6
    n_rb: int = 108
    rb_bandwidth_hz: float = 180e3
    outdoor_x: tuple[float, float] = (-30.0, 70.0)
    outdoor_y: tuple[float, float] = (-20.0, 60.0)

    def carrier_hz(self, name: str) -> float:
        return self.carrier_f1_hz if name == "f1" else self.carrier_f2_hz

    def stations(self, kind: str | None = None, operator: str | None = None,
                 carrier: str | None = None) -> tuple[BaseStation, ...]:
        out = self.base_stations
        if kind is not None:
            out = tuple(b for b in out if b.kind == kind)
        if operator is not None:
            out = tuple(b for b in out if b.operator == operator)
        if carrier is not None:
            out = tuple(b for b in out if b.carrier == carrier)
        return out


@dataclass(frozen=True)
class RunConfig:
    duration_s: float = 1.0
    tti_s: float = 1e-3
    seed: int = 1
    use_case: str = "baseline"
    epoch_s: float = 0.2
    observation_s: float = 10.0
    static_window_s: float = 5.0
    i_max_dbm: float = -100.0
    out_dir: str | None = None
    dump_channel: bool = False
    policy_path: str | None = None


def validate(deployment: Deployment, users: list[UserEquipment],
             cfg: RunConfig | None = None) -> None:
    """Check the structural invariants; raise ScenarioError with a field path."""
    b = deployment.building
    if not deployment.base_stations:
        raise ScenarioError("base_stations", "no base stations")
    if deployment.n_rb * deployment.rb_bandwidth_hz > deployment.channel_bandwidth_hz:
        raise ScenarioError("carriers.n_rb",
                            "n_rb * rb_bandwidth exceeds channel bandwidth")
    for i, bs in enumerate(deployment.base_stations):
        path = "base_stations[%d]" % i
        if bs.kind not in BS_KINDS:
            raise ScenarioError(path + ".kind", "unknown kind %r" % (bs.kind,))
        if bs.operator not in OPERATORS:
            raise ScenarioError(path + ".operator", "unknown operator %r" % (bs.operator,))
        if bs.max_tx_power_dbm > MAX_TX_POWER_DBM:
            raise ScenarioError(path + ".max_tx_power_dbm",
                                "exceeds %g dBm limit" % MAX_TX_POWER_DBM)
        x, y, z = bs.position
        inside = b.contains(x, y, z)
        if bs.kind == "indoor-hotspot":
            if not inside:
                raise ScenarioError(path + ".position", "indoor BS outside building")
            ceiling = (b.floor_of(z) + 1) * b.floor_height_m
            if z >= ceiling:
                raise ScenarioError(path + ".position", "indoor BS above its ceiling")
        else:
            if b.footprint_contains(x, y):
                raise ScenarioError(path + ".position", "outdoor BS inside building")
            if abs(z - OUTDOOR_BS_HEIGHT_M) > 1e-9:
                raise ScenarioError(path + ".position",
                                    "outdoor BS height must be %g m" % OUTDOOR_BS_HEIGHT_M)
    for u in users:
        path = "users[%d]" % u.id
        if u.operator not in OPERATORS:
            raise ScenarioError(path + ".operator", "unknown operator %r" % (u.operator,))
        if u.mobility == "pedestrian" and abs(u.speed_mps - PEDESTRIAN_SPEED_MPS) > 0.2:
            raise ScenarioError(path + ".speed_mps",
                                "pedestrian speed should be about %.1f m/s"
                                % PEDESTRIAN_SPEED_MPS)
        if u.mobility == "trajectory" and u.trajectory is None:
            raise ScenarioError(path + ".trajectory", "trajectory mobility without route")
    if cfg is not None:
        if cfg.duration_s < 1.0:
            raise ScenarioError("run.duration_s", "runs represent at least 1 second")
        if abs(cfg.tti_s - 1e-3) > 1e-12:
            raise ScenarioError("run.tti_s", "scheduling interval is fixed at 1 ms")
        if cfg.use_case not in USE_CASES:
            raise ScenarioError("run.use_case", "unknown use case %r" % (cfg.use_case,))


# -- construction -----------------------------------------------------------


def _indoor_bs_positions(b: Building) -> list[tuple[float, float, float]]:
    xs = (b.origin_x + b.width_m * 0.25, b.origin_x + b.width_m * 0.75)
    ys = tuple(b.origin_y + b.depth_m * f for f in (1 / 6, 3 / 6, 5 / 6))
    out = []
    for floor in range(b.n_floors):
        z = floor * b.floor_height_m + b.floor_height_m - 0.3
        for x in xs:
            for y in ys:
                out.append((x, y, z))
    return out


def _draw_indoor_position(rng, b: Building, stations) -> tuple[np.ndarray, int]:
    hotspots = [s for s in stations if s.kind == "indoor-hotspot"]
    for _ in range(1000):
        floor = int(rng.integers(0, b.n_floors))
        x = rng.uniform(b.origin_x, b.origin_x + b.width_m)
        y = rng.uniform(b.origin_y, b.origin_y + b.depth_m)
        z = floor * b.floor_height_m + 1.5
        pos = np.array([x, y, z])
        if all(math.dist(pos, s.position) >= MIN_DIST_INDOOR_BS_M for s in hotspots):
            return pos, floor
    raise ScenarioError("users", "could not place indoor user at min distance")


def _draw_outdoor_position(rng, dep: Deployment, x_range, y_range) -> np.ndarray:
    outdoor_bs = [s for s in dep.base_stations if s.kind != "indoor-hotspot"]
    b = dep.building
    for _ in range(1000):
        x = rng.uniform(*x_range)
        y = rng.uniform(*y_range)
        pos = np.array([x, y, 1.5])
        if b.footprint_contains(x, y):
            continue
        if all(math.dist(pos, s.position) >= MIN_DIST_OUTDOOR_BS_M for s in outdoor_bs):
            return pos
    raise ScenarioError("users", "could not place outdoor user at min distance")


def _split_static(rng, n: int, static_fraction: float = 0.2) -> np.ndarray:
    n_static = int(round(static_fraction * n))
    kinds = np.array(["pedestrian"] * n, dtype=object)
    if n_static:
        kinds[rng.choice(n, size=n_static, replace=False)] = "static"
    return kinds


def bus_trajectory(building: Building, subject_id: int, road_y: float = -5.0,
                   speed_mps: float = BUS_SPEED_MPS, run_s: float = BUS_RUN_S
                   ) -> TrajectoryRecord:
    """Straight drive along the building, centered on its x midpoint."""
    cx = building.origin_x + building.width_m / 2.0
    half = speed_mps * run_s / 2.0
    return TrajectoryRecord(
        subject_id=subject_id,
        waypoints=((0.0, cx - half, road_y, 1.5), (run_s, cx + half, road_y, 1.5)),
        typical_route=True)


def build_reference_scenario(seed: int, use_case: str = "baseline",
                             n_rb: int = 108, n_indoor_ue: int = 6,
                             n_outdoor_ue: int = 4, n_iot_ue: int = 3,
                             cluster_size: int = 10
                             ) -> tuple[Deployment, list[UserEquipment]]:
    """The paper-style deployment with per-use-case extras.

    Use case B adds one IoT user on the bus route along the building; use
    case C adds a static indoor cluster of cluster_size devices parked on
    distinct 1 m grid cells.
    """
    b = Building()
    stations = []
    for i, pos in enumerate(_indoor_bs_positions(b)):
        stations.append(BaseStation(i, "indoor-hotspot", "MBB", pos, "f1"))
    next_id = len(stations)
    stations.append(BaseStation(next_id, "outdoor-macro", "MBB",
                                (90.0, 20.0, OUTDOOR_BS_HEIGHT_M), "f2"))
    stations.append(BaseStation(next_id + 1, "road-side-unit", "IoT",
                                (0.0, -12.0, OUTDOOR_BS_HEIGHT_M), "f1"))
    stations.append(BaseStation(next_id + 2, "road-side-unit", "IoT",
                                (40.0, -12.0, OUTDOOR_BS_HEIGHT_M), "f1"))
    dep = Deployment(building=b, base_stations=tuple(stations), n_rb=n_rb)

    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 11]))
    users: list[UserEquipment] = []
    uid = 0

    kinds = _split_static(rng, n_indoor_ue)
    for i in range(n_indoor_ue):
        pos, floor = _draw_indoor_position(rng, b, stations)
        users.append(UserEquipment(uid, "MBB", pos, mobility=kinds[i],
                                   speed_mps=0.0 if kinds[i] == "static" else PEDESTRIAN_SPEED_MPS,
                                   indoor=True, floor=floor))
        uid += 1
    kinds = _split_static(rng, n_outdoor_ue)
    for i in range(n_outdoor_ue):
        pos = _draw_outdoor_position(rng, dep, dep.outdoor_x, dep.outdoor_y)
        users.append(UserEquipment(uid, "MBB", pos, mobility=kinds[i],
                                   speed_mps=0.0 if kinds[i] == "static" else PEDESTRIAN_SPEED_MPS))
        uid += 1
    kinds = _split_static(rng, n_iot_ue)
    for i in range(n_iot_ue):
        pos = _draw_outdoor_position(rng, dep, (-10.0, 50.0), (-7.0, -3.0))
        users.append(UserEquipment(uid, "IoT", pos, mobility=kinds[i],
                                   speed_mps=0.0 if kinds[i] == "static" else PEDESTRIAN_SPEED_MPS))
        uid += 1

    if use_case == "B":
        traj = bus_trajectory(b, subject_id=uid)
        start, _ = traj.position_at(0.0)
        users.append(UserEquipment(uid, "IoT", start, mobility="trajectory",
                                   speed_mps=BUS_SPEED_MPS, trajectory=traj))
        uid += 1
    if use_case == "C":
        # 5 x 2 block of devices on distinct 1 m cells, first floor, near BS 0.
        for i in range(cluster_size):
            x = b.origin_x + 11.5 + (i % 5)
            y = b.origin_y + 11.5 + (i // 5)
            users.append(UserEquipment(uid, "MBB", np.array([x, y, 1.5]),
                                       mobility="static", indoor=True, floor=0,
                                       cluster_id=0))
            uid += 1

    _init_mobility_state(users, seed)
    validate(dep, users)
    return dep, users


def _init_mobility_state(users: list[UserEquipment], seed: int) -> None:
    for u in users:
        u._rng = np.random.default_rng(np.random.SeedSequence([int(seed), 997, u.id]))
        if u.mobility == "pedestrian":
            ang = u._rng.uniform(0.0, 2.0 * np.pi)
            u.direction = np.array([np.cos(ang), np.sin(ang)])


def _pedestrian_region_ok(u: UserEquipment, x: float, y: float,
                          dep: Deployment) -> bool:
    b = dep.building
    if u.indoor:
        return b.footprint_contains(x, y)
    if b.footprint_contains(x, y):
        return False
    return (dep.outdoor_x[0] <= x <= dep.outdoor_x[1]
            and dep.outdoor_y[0] <= y <= dep.outdoor_y[1])


def step_mobility(users: list[UserEquipment], dt_s: float,
                  deployment: Deployment) -> None:
    """Advance every user by dt_s.

    Static users stay put; pedestrians walk at constant speed and redraw
    their heading when the next step would cross a wall or region boundary;
    trajectory users follow their route by linear interpolation.
    """
    if dt_s <= 0:
        raise ValueError("dt must be positive")
    for u in users:
        u.t_s += dt_s
        if u.mobility == "static":
            continue
        if u.mobility == "trajectory":
            pos, _ = u.trajectory.position_at(u.t_s)
            u.position = pos
            continue
        step = u.speed_mps * dt_s
        for _ in range(64):
            nx = u.position[0] + u.direction[0] * step
            ny = u.position[1] + u.direction[1] * step
            if _pedestrian_region_ok(u, nx, ny, deployment):
                u.position = np.array([nx, ny, u.position[2]])
                break
            ang = u._rng.uniform(0.0, 2.0 * np.pi)
            u.direction = np.array([np.cos(ang), np.sin(ang)])
        # else: boxed in; stay for this step.


# -- scenario files -----------------------------------------------------------


def _require(d: dict, key: str, path: str):
    if key not in d:
        raise ScenarioError("%s.%s" % (path, key) if path else key, "missing field")
    return d[key]


def load_scenario(path_or_text) -> tuple[Deployment, list[UserEquipment], RunConfig]:
    """Parse a JSON scenario file (path or raw text) into a resolved scenario.

    User populations are given as counts and drawn uniformly from their
    regions with the run seed, so the same file and seed always produce the
    same positions.
    """
    text = None
    if hasattr(path_or_text, "read"):
        text = path_or_text.read()
    else:
        s = str(path_or_text)
        if s.lstrip().startswith("{"):
            text = s
        else:
            with open(s) as fh:
                text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError("<file>", "parse failure: %s" % e) from None

    bdict = raw.get("building", {})
    b = Building(
        origin_x=float(bdict.get("origin", [0.0, 0.0])[0]),
        origin_y=float(bdict.get("origin", [0.0, 0.0])[1]),
        width_m=float(bdict.get("width_m", 40.0)),
        depth_m=float(bdict.get("depth_m", 40.0)),
        floor_height_m=float(bdict.get("floor_height_m", 3.0)),
        n_floors=int(bdict.get("n_floors", 2)))
    c = raw.get("carriers", {})
    stations = []
    for i, s in enumerate(_require(raw, "base_stations", "")):
        stations.append(BaseStation(
            id=int(_require(s, "id", "base_stations[%d]" % i)),
            kind=str(_require(s, "kind", "base_stations[%d]" % i)),
            operator=str(_require(s, "operator", "base_stations[%d]" % i)),
            position=tuple(float(v) for v in _require(s, "position", "base_stations[%d]" % i)),
            carrier=str(s.get("carrier", "f1")),
            max_tx_power_dbm=float(s.get("max_tx_power_dbm", MAX_TX_POWER_DBM))))
    region = raw.get("outdoor_region", {})
    dep = Deployment(
        building=b, base_stations=tuple(stations),
        carrier_f1_hz=float(c.get("f1_hz", 3.5e9)),
        carrier_f2_hz=float(c.get("f2_hz", 2.6e9)),
        channel_bandwidth_hz=float(c.get("channel_bandwidth_hz", 20e6)),
        n_rb=int(c.get("n_rb", 108)),
        rb_bandwidth_hz=float(c.get("rb_bandwidth_hz", 180e3)),
        outdoor_x=tuple(region.get("x", (-30.0, 70.0))),
        outdoor_y=tuple(region.get("y", (-20.0, 60.0))))

    r = raw.get("run", {})
    cfg = RunConfig(
        duration_s=float(r.get("duration_s", 1.0)),
        tti_s=float(r.get("tti_s", 1e-3)),
        seed=int(r.get("seed", 1)),
        use_case=str(r.get("use_case", "baseline")),
        epoch_s=float(r.get("epoch_s", 0.2)),
        observation_s=float(r.get("observation_s", 10.0)),
        static_window_s=float(r.get("static_window_s", 5.0)),
        i_max_dbm=float(r.get("i_max_dbm", -100.0)),
        policy_path=r.get("policy_path"))

    udict = raw.get("users", {})
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 11]))
    users: list[UserEquipment] = []
    uid = 0
    static_fraction = float(udict.get("static_fraction", 0.2))
    speed = float(udict.get("pedestrian_speed_mps", PEDESTRIAN_SPEED_MPS))
    for count_key, indoor in (("n_indoor_mbb", True), ("n_outdoor_mbb", False)):
        n = int(udict.get(count_key, 0))
        kinds = _split_static(rng, n, static_fraction)
        for i in range(n):
            if indoor:
                pos, floor = _draw_indoor_position(rng, b, stations)
            else:
                pos, floor = _draw_outdoor_position(rng, dep, dep.outdoor_x, dep.outdoor_y), 0
            users.append(UserEquipment(uid, "MBB", pos, mobility=kinds[i],
                                       speed_mps=0.0 if kinds[i] == "static" else speed,
                                       indoor=indoor, floor=floor))
            uid += 1
    n = int(udict.get("n_iot", 0))
    kinds = _split_static(rng, n, static_fraction)
    road = udict.get("iot_region", {"x": (-10.0, 50.0), "y": (-7.0, -3.0)})
    for i in range(n):
        pos = _draw_outdoor_position(rng, dep, tuple(road["x"]), tuple(road["y"]))
        users.append(UserEquipment(uid, "IoT", pos, mobility=kinds[i],
                                   speed_mps=0.0 if kinds[i] == "static" else speed))
        uid += 1

    _init_mobility_state(users, cfg.seed)
    validate(dep, users, cfg)
    return dep, users, cfg
