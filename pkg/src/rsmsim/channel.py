"""Per-link radio channel: path loss, shadowing and time-varying multipath.

Path loss follows the Winner II formulas for the three link classes that
occur in the scenario (indoor office A1, urban micro B1, and an
outdoor-to-indoor variant built from B1 plus a wall-penetration constant).
Small-scale fading is an Extended Pedestrian A 7-tap profile where each
tap evolves as a sum-of-sinusoids Rayleigh process whose in-phase
autocorrelation approximates the classic J0(2*pi*fd*tau) shape.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

SPEED_OF_LIGHT_MPS = 3.0e8

# EPA profile: excess delays in seconds and relative tap powers in dB.
EPA_TAP_DELAYS_S = np.array([0.0, 30e-9, 70e-9, 90e-9, 110e-9, 190e-9, 410e-9])
EPA_TAP_POWERS_DB = np.array([0.0, -1.0, -2.0, -3.0, -8.0, -17.2, -20.8])

DEFAULT_WALL_LOSS_DB = 14.0
DEFAULT_FLOOR_LOSS_DB = 17.0
INDOOR_LOS_RANGE_M = 10.0
OUTDOOR_LOS_RANGE_M = 50.0

# Log-normal shadowing sigma per link class (LOS, NLOS), dB.
SHADOW_SIGMA_DB = {
    "indoor-indoor": (3.0, 4.0),
    "outdoor-outdoor": (3.0, 8.0),
    "outdoor-to-indoor": (7.0, 7.0),
    "indoor-to-outdoor": (7.0, 7.0),
}

LINK_CLASSES = tuple(SHADOW_SIGMA_DB)


@dataclass(frozen=True)
class LinkGeometry:
    """Geometry of one transmitter-receiver pair on a given carrier."""

    tx_position: tuple[float, float, float]
    rx_position: tuple[float, float, float]
    link_class: str
    carrier_hz: float
    tx_floor: int = 0
    rx_floor: int = 0

    def __post_init__(self):
        if self.link_class not in LINK_CLASSES:
            raise ValueError("unknown link class %r" % (self.link_class,))
        if self.distance_m <= 0:
            raise ValueError("tx and rx positions must differ")

    @property
    def distance_m(self) -> float:
        return math.dist(self.tx_position, self.rx_position)


def is_los(link: LinkGeometry) -> bool:
    """Deterministic line-of-sight rule by geometry.

    Indoors two nodes see each other when on the same floor within corridor
    range; outdoors within a fixed street range. Links that cross the
    building wall are treated as obstructed.
    """
    d = link.distance_m
    if link.link_class == "indoor-indoor":
        return link.tx_floor == link.rx_floor and d <= INDOOR_LOS_RANGE_M
    if link.link_class == "outdoor-outdoor":
        return d <= OUTDOOR_LOS_RANGE_M
    return False


def _a1_los_db(d_m, f_hz):
    return 18.7 * np.log10(d_m) + 46.8 + 20.0 * np.log10(f_hz / 5e9)


def _a1_nlos_db(d_m, f_hz):
    return 36.8 * np.log10(d_m) + 43.8 + 20.0 * np.log10(f_hz / 5e9)


def _b1_los_db(d_m, f_hz, h_tx_m, h_rx_m):
    h_tx = max(h_tx_m - 1.0, 0.5)
    h_rx = max(h_rx_m - 1.0, 0.5)
    d_bp = 4.0 * h_tx * h_rx * f_hz / SPEED_OF_LIGHT_MPS
    near = 22.7 * np.log10(d_m) + 41.0 + 20.0 * np.log10(f_hz / 5e9)
    far = (40.0 * np.log10(d_m) + 9.45 - 17.3 * np.log10(h_tx)
           - 17.3 * np.log10(h_rx) + 2.7 * np.log10(f_hz / 5e9))
    return np.where(d_m <= d_bp, near, far)


def _outdoor_nlos_db(d_m, f_hz, h_bs_m):
    h_bs = max(h_bs_m, 5.0)
    return ((44.9 - 6.55 * np.log10(h_bs)) * np.log10(d_m)
            + 34.46 + 5.83 * np.log10(h_bs) + 23.0 * np.log10(f_hz / 5e9))


def path_loss_db(link: LinkGeometry, los: bool | None = None,
                 wall_loss_db: float = DEFAULT_WALL_LOSS_DB,
                 floor_loss_db: float = DEFAULT_FLOOR_LOSS_DB) -> float:
    """Deterministic path loss in dB for one link.

    los overrides the geometric LOS rule when given. Distances below 1 m
    are outside the model's validity and are clamped (with a log warning).
    """
    d = link.distance_m
    if d < 1.0:
        log.warning("distance %.3f m below model validity, clamped to 1 m", d)
        d = 1.0
    if los is None:
        los = is_los(link)
    f = link.carrier_hz
    h_tx = link.tx_position[2]
    h_rx = link.rx_position[2]
    cls = link.link_class
    if cls == "indoor-indoor":
        pl = _a1_los_db(d, f) if los else _a1_nlos_db(d, f)
        pl += floor_loss_db * abs(link.tx_floor - link.rx_floor)
    elif cls == "outdoor-outdoor":
        pl = _b1_los_db(d, f, h_tx, h_rx) if los else _outdoor_nlos_db(d, f, max(h_tx, h_rx))
    else:
        # Cross-boundary: street model over the full distance plus one wall,
        # plus per-floor penetration for indoor endpoints above ground.
        indoor_floor = link.rx_floor if cls == "outdoor-to-indoor" else link.tx_floor
        pl = _b1_los_db(d, f, h_tx, h_rx) + wall_loss_db + floor_loss_db * indoor_floor
    return float(pl)


def shadow_sigma_db(link_class: str, los: bool) -> float:
    sig_los, sig_nlos = SHADOW_SIGMA_DB[link_class]
    return sig_los if los else sig_nlos


@dataclass
class FadingProcess:
    """7-tap sum-of-sinusoids fading for one link.

    Each tap is an independent complex Gaussian process built from
    n_oscillators sinusoids per quadrature component; arrival angles sit at
    midpoints of a quarter-circle partition (jittered by a random common
    offset) so that the time-averaged in-phase autocorrelation reproduces
    the zeroth-order Bessel shape. Linear tap powers are normalized to sum
    to one, so the long-run mean per-RB power gain is one.
    """

    carrier_hz: float
    doppler_hz: float
    tap_delays_s: np.ndarray = field(default_factory=lambda: EPA_TAP_DELAYS_S.copy())
    tap_powers_db: np.ndarray = field(default_factory=lambda: EPA_TAP_POWERS_DB.copy())
    n_oscillators: int = 32
    seed: int | np.random.SeedSequence = 0

    def __post_init__(self):
        self.tap_delays_s = np.asarray(self.tap_delays_s, dtype=float)
        self.tap_powers_db = np.asarray(self.tap_powers_db, dtype=float)
        if self.tap_delays_s.shape != self.tap_powers_db.shape or self.tap_delays_s.ndim != 1:
            raise ValueError("tap delays and powers must be 1-d and congruent")
        if self.doppler_hz < 0:
            raise ValueError("doppler must be non-negative")
        n_taps = self.tap_delays_s.size
        m = self.n_oscillators
        p_lin = 10.0 ** (self.tap_powers_db / 10.0)
        self.tap_amplitudes = np.sqrt(p_lin / p_lin.sum())
        rng = np.random.default_rng(self.seed)
        # Midpoint arrival angles on (0, pi/2), one common jitter per tap.
        base = np.pi * (2.0 * np.arange(1, m + 1) - 1.0) / (4.0 * m)
        jitter = rng.uniform(-np.pi, np.pi, size=(n_taps, 1)) / (4.0 * m)
        alpha = base[None, :] + jitter
        wd = 2.0 * np.pi * self.doppler_hz
        self.omega_i = wd * np.cos(alpha)
        self.omega_q = wd * np.sin(alpha)
        self.phi_i = rng.uniform(0.0, 2.0 * np.pi, size=(n_taps, m))
        self.phi_q = rng.uniform(0.0, 2.0 * np.pi, size=(n_taps, m))

    def tap_gains(self, t_s: float) -> np.ndarray:
        """Complex gain of every tap at absolute time t_s (power-normalized)."""
        scale = math.sqrt(1.0 / self.n_oscillators)
        xi = np.cos(self.omega_i * t_s + self.phi_i).sum(axis=1) * scale
        xq = np.cos(self.omega_q * t_s + self.phi_q).sum(axis=1) * scale
        return (xi + 1j * xq) * self.tap_amplitudes


def make_fading_process(carrier_hz: float, speed_mps: float,
                        seed: int | np.random.SeedSequence,
                        tap_delays_s: np.ndarray | None = None,
                        tap_powers_db: np.ndarray | None = None,
                        n_oscillators: int = 32) -> FadingProcess:
    """Build the fading process for a link whose receiver moves at speed_mps."""
    if speed_mps < 0:
        raise ValueError("speed must be non-negative")
    fd = speed_mps * carrier_hz / SPEED_OF_LIGHT_MPS
    kwargs = {}
    if tap_delays_s is not None:
        kwargs["tap_delays_s"] = tap_delays_s
    if tap_powers_db is not None:
        kwargs["tap_powers_db"] = tap_powers_db
    return FadingProcess(carrier_hz=carrier_hz, doppler_hz=fd,
                         n_oscillators=n_oscillators, seed=seed, **kwargs)


def rb_center_offsets_hz(n_rb: int, rb_bandwidth_hz: float) -> np.ndarray:
    """Baseband center frequency of every resource block, symmetric around 0."""
    return (np.arange(n_rb) - (n_rb - 1) / 2.0) * rb_bandwidth_hz


def fading_gain(process: FadingProcess, t_s: float, n_rb: int,
                rb_bandwidth_hz: float) -> np.ndarray:
    """Complex per-RB frequency response of the link at time t_s."""
    if t_s < 0:
        raise ValueError("time must be non-negative")
    taps = process.tap_gains(t_s)
    f = rb_center_offsets_hz(n_rb, rb_bandwidth_hz)
    steering = np.exp(-2j * np.pi * np.outer(process.tap_delays_s, f))
    return taps @ steering


@dataclass(frozen=True)
class LinkGain:
    """Linear per-RB power gain of one link for one TTI."""

    per_rb: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.per_rb, dtype=float)
        if not np.all(np.isfinite(g)) or np.any(g <= 0):
            raise ValueError("per-RB gains must be positive and finite")
        object.__setattr__(self, "per_rb", g)


def link_gain(geometry: LinkGeometry, fading: FadingProcess, shadowing_db: float,
              t_s: float, n_rb: int, rb_bandwidth_hz: float,
              los: bool | None = None) -> LinkGain:
    """Compose path loss, shadowing and fading into a per-RB power gain."""
    pl = path_loss_db(geometry, los=los)
    h = fading_gain(fading, t_s, n_rb, rb_bandwidth_hz)
    g = 10.0 ** (-(pl + shadowing_db) / 10.0) * np.abs(h) ** 2
    return LinkGain(per_rb=g)
