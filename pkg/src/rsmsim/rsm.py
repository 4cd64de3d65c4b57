"""Radio service map subsystem: layered grid repositories and a policy store.

A repository holds geolocated map layers (per-cell running statistics,
optionally resolved per resource block), split into a private and a shared
part. Foreign queriers only ever see shared layers. The policy store keeps
time-scheduled spectrum-sharing records and answers which caps are active
at any instant; a conformance checker replays scheduler transmissions
against those caps.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

LAYER_KINDS = ("radio-data", "performance", "mobility", "traffic-density",
               "user-density", "trajectory", "history")

# Default visibility when a layer is created without an explicit choice.
DEFAULT_VISIBILITY = {
    "radio-data": "shared",
    "performance": "shared",
    "mobility": "private",
    "traffic-density": "private",
    "user-density": "private",
    "trajectory": "private",
    "history": "private",
}


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned raster grid, optionally stacked per floor."""

    origin_x: float
    origin_y: float
    raster_m: float
    nx: int
    ny: int
    n_floors: int = 1

    def __post_init__(self):
        if self.raster_m <= 0:
            raise ValueError("raster must be positive")
        if self.nx <= 0 or self.ny <= 0 or self.n_floors <= 0:
            raise ValueError("grid dimensions must be positive")

    def cell_of(self, x: float, y: float, floor: int = 0):
        """(floor, iy, ix) of a position, or None when outside the grid."""
        ix = int(np.floor((x - self.origin_x) / self.raster_m))
        iy = int(np.floor((y - self.origin_y) / self.raster_m))
        if 0 <= ix < self.nx and 0 <= iy < self.ny and 0 <= floor < self.n_floors:
            return floor, iy, ix
        return None

    def congruent(self, other: "GridSpec") -> bool:
        return (self.origin_x == other.origin_x and self.origin_y == other.origin_y
                and self.raster_m == other.raster_m and self.nx == other.nx
                and self.ny == other.ny and self.n_floors == other.n_floors)


@dataclass(frozen=True)
class CellValue:
    """Statistics of one (cell, rb) slot; observed=False marks an empty cell."""

    mean: float
    std: float
    t_s: float
    n_samples: int
    observed: bool


@dataclass(frozen=True)
class ObservationSample:
    t_s: float
    position: tuple[float, float]
    rb: int
    value: float
    source_id: int
    floor: int = 0


@dataclass(frozen=True)
class PolicyRecord:
    """One spectrum-sharing rule: who may use which RBs, when, at what power."""

    bs_id: int
    t_start_s: float
    t_end_s: float
    rb_start: int
    rb_end: int  # exclusive
    max_tx_power_dbm: float
    spectrum_mask_db: tuple[float, ...] = (30.0, 35.0, 40.0, 45.0, 50.0)

    def __post_init__(self):
        if not self.t_start_s < self.t_end_s:
            raise ValueError("policy time range must be non-empty")
        if not 0 <= self.rb_start < self.rb_end:
            raise ValueError("policy RB range must be non-empty and non-negative")
        if len(self.spectrum_mask_db) != 5:
            raise ValueError("spectrum mask holds five attenuation steps")

    def active_at(self, t_s: float) -> bool:
        return self.t_start_s <= t_s < self.t_end_s

    def covers_rb(self, rb: int) -> bool:
        return self.rb_start <= rb < self.rb_end


@dataclass(frozen=True)
class TrajectoryRecord:
    """Timestamped route of one subject (typical or ad hoc)."""

    subject_id: int
    waypoints: tuple[tuple[float, float, float, float], ...]  # (t, x, y, z)
    typical_route: bool = False

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("trajectory needs at least one waypoint")
        ts = [w[0] for w in self.waypoints]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("waypoint timestamps must be strictly increasing")

    @property
    def t_start_s(self) -> float:
        return self.waypoints[0][0]

    @property
    def t_end_s(self) -> float:
        return self.waypoints[-1][0]

    def position_at(self, t_s: float) -> tuple[np.ndarray, bool]:
        """Piecewise-linear position at t_s; clamps outside the span."""
        pts = np.array([w[1:] for w in self.waypoints])
        ts = np.array([w[0] for w in self.waypoints])
        if t_s <= ts[0]:
            return pts[0].copy(), t_s < ts[0]
        if t_s >= ts[-1]:
            return pts[-1].copy(), t_s > ts[-1]
        i = int(np.searchsorted(ts, t_s, side="right")) - 1
        frac = (t_s - ts[i]) / (ts[i + 1] - ts[i])
        return pts[i] + frac * (pts[i + 1] - pts[i]), False


class MapLayer:
    """Dense per-cell running statistics, exponentially weighted.

    Arrays are (n_floors, ny, nx, n_rb); a layer without a per-RB dimension
    uses n_rb = 1.
    """

    def __init__(self, layer_kind: str, grid: GridSpec, n_rb: int = 1,
                 visibility: str | None = None):
        if layer_kind not in LAYER_KINDS:
            raise ValueError("unknown layer kind %r" % (layer_kind,))
        if visibility is None:
            visibility = DEFAULT_VISIBILITY[layer_kind]
        if visibility not in ("private", "shared"):
            raise ValueError("visibility is private or shared")
        if n_rb <= 0:
            raise ValueError("n_rb must be positive")
        self.layer_kind = layer_kind
        self.grid = grid
        self.n_rb = n_rb
        self.visibility = visibility
        shape = (grid.n_floors, grid.ny, grid.nx, n_rb)
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)
        self.t_updated = np.full(shape, -np.inf)
        self.n_samples = np.zeros(shape, dtype=np.int64)
        self.rejected = 0

    @property
    def storage_bits(self) -> int:
        """Dense footprint at the canonical field widths (5b stat + 8b spread)."""
        return int(np.prod(self.mean.shape)) * (5 + 8)

    def update_cell(self, idx, rb: int, value: float, t_s: float, weight: float) -> None:
        f, iy, ix = idx
        key = (f, iy, ix, rb)
        if self.n_samples[key] == 0:
            self.mean[key] = value
            self.m2[key] = value * value
        else:
            self.mean[key] = (1.0 - weight) * self.mean[key] + weight * value
            self.m2[key] = (1.0 - weight) * self.m2[key] + weight * value * value
        self.t_updated[key] = max(self.t_updated[key], t_s)
        self.n_samples[key] += 1

    def flat_index(self, idx, rb) -> int:
        f, iy, ix = idx
        return ((f * self.grid.ny + iy) * self.grid.nx + ix) * self.n_rb + rb

    def update_cells_bulk(self, flat, values, t_s: float, weight: float) -> None:
        """Fold many samples at once (flat = precomputed flat cell-rb indices).

        Slots hit once this batch take the vectorized path; the rare
        colliding slots replay their samples in order.
        """
        flat = np.asarray(flat, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        mean = self.mean.reshape(-1)
        m2 = self.m2.reshape(-1)
        ns = self.n_samples.reshape(-1)
        tu = self.t_updated.reshape(-1)
        uniq, inv, counts = np.unique(flat, return_inverse=True, return_counts=True)
        single = counts[inv] == 1
        fi, v = flat[single], values[single]
        fresh = ns[fi] == 0
        w = weight
        mean[fi] = np.where(fresh, v, (1.0 - w) * mean[fi] + w * v)
        m2[fi] = np.where(fresh, v * v, (1.0 - w) * m2[fi] + w * v * v)
        ns[fi] += 1
        tu[fi] = np.maximum(tu[fi], t_s)
        if not np.all(single):
            for fi_s, v_s in zip(flat[~single], values[~single]):
                if ns[fi_s] == 0:
                    mean[fi_s] = v_s
                    m2[fi_s] = v_s * v_s
                else:
                    mean[fi_s] = (1.0 - w) * mean[fi_s] + w * v_s
                    m2[fi_s] = (1.0 - w) * m2[fi_s] + w * v_s * v_s
                ns[fi_s] += 1
                tu[fi_s] = max(tu[fi_s], t_s)

    def cell(self, idx, rb: int = 0) -> CellValue:
        f, iy, ix = idx
        key = (f, iy, ix, rb)
        n = int(self.n_samples[key])
        if n == 0:
            return CellValue(0.0, 0.0, -np.inf, 0, False)
        var = max(self.m2[key] - self.mean[key] ** 2, 0.0)
        return CellValue(float(self.mean[key]), float(np.sqrt(var)),
                         float(self.t_updated[key]), n, True)

    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.m2 - self.mean ** 2, 0.0))

    def copy(self) -> "MapLayer":
        out = MapLayer(self.layer_kind, self.grid, self.n_rb, self.visibility)
        out.mean = self.mean.copy()
        out.m2 = self.m2.copy()
        out.t_updated = self.t_updated.copy()
        out.n_samples = self.n_samples.copy()
        return out

    def export_csv(self, path) -> None:
        """Dump observed cells as rows (floor, x, y, rb, mean, std, t)."""
        std = self.std()
        g = self.grid
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["floor", "x", "y", "rb", "mean", "std", "t_s"])
            observed = np.argwhere(self.n_samples > 0)
            for f, iy, ix, rb in observed:
                x = g.origin_x + (ix + 0.5) * g.raster_m
                y = g.origin_y + (iy + 0.5) * g.raster_m
                w.writerow([f, "%.3f" % x, "%.3f" % y, rb,
                            "%.6f" % self.mean[f, iy, ix, rb],
                            "%.6f" % std[f, iy, ix, rb],
                            "%.6f" % self.t_updated[f, iy, ix, rb]])


@dataclass(frozen=True)
class ConformanceViolation:
    t_s: float
    bs_id: int
    kind: str  # "rb" or "power"
    rb: int | None
    power_dbm: float | None
    cap_dbm: float | None


@dataclass(frozen=True)
class TransmissionRecord:
    """What one base station actually sent in one TTI (for conformance)."""

    t_s: float
    bs_id: int
    rbs: "tuple[int, ...] | np.ndarray"
    total_power_dbm: float


class RsmRepository:
    """Map layers plus policy and trajectory stores for one owner."""

    def __init__(self, owner: str):
        self.owner = owner
        self._layers: dict[str, MapLayer] = {}
        self.policies: list[PolicyRecord] = []
        self.trajectories: dict[int, TrajectoryRecord] = {}

    # -- layers ------------------------------------------------------------

    def add_layer(self, layer: MapLayer) -> MapLayer:
        if layer.layer_kind in self._layers:
            raise ValueError("layer %r already present" % (layer.layer_kind,))
        self._layers[layer.layer_kind] = layer
        return layer

    def layer(self, kind: str, requester: str | None = None) -> MapLayer | None:
        lay = self._layers.get(kind)
        if lay is None:
            return None
        if requester is not None and requester != self.owner and lay.visibility != "shared":
            return None
        return lay

    def layer_kinds(self, requester: str | None = None) -> tuple[str, ...]:
        return tuple(k for k in sorted(self._layers)
                     if self.layer(k, requester) is not None)

    def ingest_sample(self, sample: ObservationSample, layer_kind: str,
                      weight: float = 0.1) -> bool:
        """Fold one observation into a layer cell; False when out of grid."""
        lay = self._layers.get(layer_kind)
        if lay is None:
            raise KeyError("no layer %r in repository" % (layer_kind,))
        idx = lay.grid.cell_of(sample.position[0], sample.position[1], sample.floor)
        rb = sample.rb if lay.n_rb > 1 else 0
        if idx is None or not 0 <= rb < lay.n_rb:
            lay.rejected += 1
            return False
        lay.update_cell(idx, rb, sample.value, sample.t_s, weight)
        return True

    def query_cell(self, layer_kind: str, position, rb: int | None = None,
                   requester: str | None = None, floor: int = 0) -> CellValue | None:
        """Cell statistics, or None when the layer is absent / not visible."""
        lay = self.layer(layer_kind, requester)
        if lay is None:
            return None
        idx = lay.grid.cell_of(position[0], position[1], floor)
        if idx is None:
            return None
        return lay.cell(idx, rb if rb is not None else 0)

    def merge_shared(self, other: "RsmRepository", layer_kind: str):
        """Freshest-cell-wins merge of a shared layer from another repository.

        Returns (merged layer, cells taken from self, cells taken from other).
        """
        mine = self.layer(layer_kind, requester=self.owner)
        theirs = other.layer(layer_kind, requester=self.owner)
        if mine is None or theirs is None:
            raise KeyError("layer %r not visible in both repositories" % (layer_kind,))
        if mine.visibility != "shared" or theirs.visibility != "shared":
            raise ValueError("merge_shared only merges shared layers")
        if not mine.grid.congruent(theirs.grid) or mine.n_rb != theirs.n_rb:
            raise ValueError("grids are not congruent and resampling is disabled")
        merged = mine.copy()
        take_b = (theirs.n_samples > 0) & (theirs.t_updated > mine.t_updated)
        for arr, src in ((merged.mean, theirs.mean), (merged.m2, theirs.m2),
                         (merged.t_updated, theirs.t_updated),
                         (merged.n_samples, theirs.n_samples)):
            arr[take_b] = src[take_b]
        from_b = int(take_b.sum())
        from_a = int((mine.n_samples > 0).sum() - ((mine.n_samples > 0) & take_b).sum())
        return merged, from_a, from_b

    # -- policies ----------------------------------------------------------

    def add_policy(self, record: PolicyRecord) -> None:
        self.policies.append(record)

    def load_policies(self, path) -> int:
        """Load policy records from a JSON file (list of record objects)."""
        import json
        with open(path) as fh:
            raw = json.load(fh)
        count = 0
        for item in raw:
            mask = tuple(item.get("spectrum_mask_db", (30.0, 35.0, 40.0, 45.0, 50.0)))
            self.add_policy(PolicyRecord(
                bs_id=int(item["bs_id"]), t_start_s=float(item["t_start_s"]),
                t_end_s=float(item["t_end_s"]), rb_start=int(item["rb_start"]),
                rb_end=int(item["rb_end"]),
                max_tx_power_dbm=float(item["max_tx_power_dbm"]),
                spectrum_mask_db=mask))
            count += 1
        return count

    def active_policies(self, t_s: float) -> list[PolicyRecord]:
        return [r for r in self.policies if r.active_at(t_s)]

    def effective_rb_cap(self, bs_id: int, rb: int, t_s: float) -> float | None:
        """Most conservative cap over records covering (bs, rb) at t; None = no grant."""
        caps = [r.max_tx_power_dbm for r in self.policies
                if r.bs_id == bs_id and r.active_at(t_s) and r.covers_rb(rb)]
        return min(caps) if caps else None

    def conformance_check(self, transmissions, power_tol_db: float = 1e-9
                          ) -> list[ConformanceViolation]:
        """Flag transmissions on RBs or at powers outside the active caps."""
        violations = []
        for tx in transmissions:
            active = [r for r in self.policies
                      if r.bs_id == tx.bs_id and r.active_at(tx.t_s)]
            caps = []
            for rb in tx.rbs:
                covering = [r.max_tx_power_dbm for r in active if r.covers_rb(rb)]
                if not covering:
                    violations.append(ConformanceViolation(
                        tx.t_s, tx.bs_id, "rb", int(rb), None, None))
                else:
                    caps.append(min(covering))
            if caps:
                cap = min(caps)
                if tx.total_power_dbm > cap + power_tol_db:
                    violations.append(ConformanceViolation(
                        tx.t_s, tx.bs_id, "power", None, tx.total_power_dbm, cap))
        return violations

    # -- trajectories --------------------------------------------------------

    def add_trajectory(self, record: TrajectoryRecord) -> None:
        self.trajectories[record.subject_id] = record
