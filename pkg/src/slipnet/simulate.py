"""Stick-slip papillae simulator: the ground-truth oracle for slip data.

A hemispherical tactile skin carries papillae on concentric rings; ring
k sits k height steps below the center, so indentation depth sets each
papilla's compression and normal load N = k_n * max(0, depth - k*step).
A counter-surface drags papilla tips tangentially.  Each tip is a
shear spring (stiffness k_t) with Coulomb friction against the surface:

    stick   tip follows the surface, deflection rate = surface velocity
    break   when |k_t * delta| exceeds mu_s * N
    slip    overdamped relaxation at (|k_t*delta| - mu_k*N)/b toward
            zero deflection, superposed on the surface drag
    restick when the spring force falls to mu_k * N

A papilla's accumulated sliding distance (integral of tip-vs-surface
relative speed while in contact) defines ground truth: incipient slip
onset when any papilla exceeds the displacement threshold, gross slip
when the center papilla does.  Ring breakaway order is outermost first
because breakaway deflection mu_s*N/k_t grows with compression.

Two scenario families:

  * kinematic: constant depth, constant translation velocity,
    fixed travel, then a short stationary tail.
  * gravity: the skin presses a plate held only by papillae friction
    while the sensor retracts; plate weight drags tips through an
    overdamped vertical plate degree of freedom, and rings shed load
    sequentially as compression fades.  An optional horizontal
    disturbance velocity (a fraction of retraction speed) is added;
    side "right" mirrors the rendered events about the frame's
    vertical axis, which is exact because the dynamics are
    reflection-equivariant.

Events: each papilla emits an inhomogeneous Poisson stream at rate
alpha * |tip velocity|, drawn by inverting the integrated rate, with
pixel positions uniform on a disk footprint around the tip's image
position (10 px/mm around frame center).  A frame-wide background
process adds uniform noise events, a small fraction carrying negative
polarity.  Everything is deterministic given the scenario seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .events import EventStream, SlipnetError, Trial

try:
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    NUMBA_AVAILABLE = False

    def _njit(*args, **kwargs):
        def deco(fn):
            return fn

        return deco if not (args and callable(args[0])) else args[0]


class GeometryViolation(SlipnetError):
    """Skin geometry breaks a structural invariant."""


class NoSlipOccurred(SlipnetError):
    """Scenario finished without any papilla crossing the slip threshold."""


@dataclass(frozen=True)
class SkinGeometry:
    """Papillae placement on the hemispherical skin (all mm)."""

    center_height_mm: float = 10.1
    ring_height_step_mm: float = 1.1
    ring_spacing_mm: float = 5.6
    papilla_radius_mm: float = 2.0
    ring_counts: tuple = (1, 6, 12, 18)


@dataclass(frozen=True)
class SimParams:
    """Mechanics, rendering, and integration constants."""

    normal_stiffness: float = 1.0  # N/mm
    shear_stiffness: float = 0.5  # N/mm
    static_friction: float = 1.2
    kinetic_friction: float = 0.8
    slip_damping: float = 0.025  # N*s/mm, sets the 50 ms relax constant
    plate_damping: float = 0.1  # N*s/mm
    gravity: float = 9.81  # N/kg
    dt_s: float = 1e-4
    events_per_mm: float = 400.0
    background_rate_hz: float = 1200.0  # whole frame
    background_negative_fraction: float = 0.05
    footprint_radius_px: float = 25.0
    px_per_mm: float = 10.0
    frame_width: int = 640
    frame_height: int = 480
    displacement_threshold_mm: float = 0.2


@dataclass
class PapillaeLayout:
    """Realized geometry: one row per papilla, center first."""

    rest_xy_mm: np.ndarray  # (n, 2)
    ring: np.ndarray  # (n,) int
    height_mm: np.ndarray  # (n,)
    geometry: SkinGeometry

    @property
    def n_papillae(self) -> int:
        return len(self.ring)


@dataclass
class PapillaeState:
    """Instantaneous tip state."""

    delta_mm: np.ndarray  # (n, 2) tangential tip deflection
    slipping: np.ndarray  # (n,) bool
    slide_mm: np.ndarray  # (n,) accumulated tip-vs-surface slide

    @classmethod
    def rest(cls, n: int) -> "PapillaeState":
        return cls(np.zeros((n, 2)), np.zeros(n, bool), np.zeros(n))


@dataclass
class Trajectory:
    """Per-step simulation record; step k covers (k*dt, (k+1)*dt]."""

    dt_s: float
    depth_mm: np.ndarray  # (T,)
    tip_speed_mm_s: np.ndarray  # (T, n) |tip velocity|
    delta_mm: np.ndarray  # (T, n, 2)
    slide_mm: np.ndarray  # (T, n) accumulated slide
    first_slip_s: np.ndarray  # (n,) first stick->slip time, nan if never
    plate_speed_mm_s: Optional[np.ndarray] = None  # (T,) gravity only

    @property
    def n_steps(self) -> int:
        return len(self.depth_mm)


@dataclass(frozen=True)
class KinematicScenario:
    depth_mm: float
    speed_mm_s: float
    direction_deg: float
    seed: int
    travel_mm: float = 15.0
    lead_in_s: float = 0.0
    tail_s: float = 0.3


@dataclass(frozen=True)
class GravityScenario:
    mass_kg: float
    retraction_mm_s: float
    seed: int
    disturbance_fraction: float = 0.0
    side: str = "left"
    start_depth_mm: float = 3.0
    settle_s: float = 0.5
    post_gross_s: float = 2.0


KINEMATIC_DEPTHS_MM = (2.4, 2.6, 2.8, 3.0, 3.2, 3.4)
KINEMATIC_SPEEDS_MM_S = (0.6, 0.8, 1.0, 1.2, 1.4, 1.6)
KINEMATIC_DIRECTIONS_DEG = (0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0)
GRAVITY_MASSES_KG = (0.165, 0.205, 0.245)
RETRACTION_SPEEDS_MM_S = (0.3, 0.5, 0.7)
DISTURBANCE_FRACTIONS = (0.25, 0.5, 0.75, 1.0)


def build_geometry(geometry: SkinGeometry = SkinGeometry()) -> PapillaeLayout:
    """Lay out papillae rings; raises GeometryViolation on bad proportions.

    Ring k holds ring_counts[k] papillae on a circle of radius
    k * ring_spacing at height center_height - k * ring_height_step,
    angles starting at pi/2.  Invariants: the height profile must stay
    positive across the rings with room for the step pattern
    (center_height > 2 * ring_height_step > 0), and neighboring rings
    must not overlap (ring_spacing > 2 * papilla_radius).
    """
    g = geometry
    if not (g.center_height_mm > 2 * g.ring_height_step_mm > 0):
        raise GeometryViolation(
            f"need center_height > 2*ring_height_step > 0, got "
            f"{g.center_height_mm} vs {g.ring_height_step_mm}"
        )
    if not (g.ring_spacing_mm > 2 * g.papilla_radius_mm):
        raise GeometryViolation(
            f"ring spacing {g.ring_spacing_mm} must exceed papilla "
            f"diameter {2 * g.papilla_radius_mm}"
        )
    if len(g.ring_counts) < 1 or g.ring_counts[0] != 1 or any(c < 1 for c in g.ring_counts):
        raise GeometryViolation(f"bad ring counts {g.ring_counts}")
    if g.center_height_mm <= (len(g.ring_counts) - 1) * g.ring_height_step_mm:
        raise GeometryViolation("outermost ring would sit at or below zero height")

    xs, ys, rings = [], [], []
    for k, count in enumerate(g.ring_counts):
        radius = k * g.ring_spacing_mm
        for j in range(count):
            angle = math.pi / 2 + 2 * math.pi * j / count
            xs.append(radius * math.cos(angle))
            ys.append(radius * math.sin(angle))
            rings.append(k)
    ring = np.array(rings, np.int64)
    heights = g.center_height_mm - ring * g.ring_height_step_mm
    return PapillaeLayout(np.column_stack([xs, ys]), ring, heights, g)


def normal_forces(layout: PapillaeLayout, depth_mm: float, params: SimParams = SimParams()) -> np.ndarray:
    """Per-papilla normal load N = k_n * max(0, depth - ring drop)."""
    drop = layout.ring * layout.geometry.ring_height_step_mm
    return params.normal_stiffness * np.maximum(0.0, depth_mm - drop)


@_njit(cache=True)
def _run_papillae(
    dx,
    dy,
    slipping,
    slide,
    ring_drop,
    depth,
    drive_x,
    drive_y,
    use_plate,
    weight,
    k_n,
    k_t,
    mu_s,
    mu_k,
    b_slip,
    b_plate,
    dt,
):
    """Advance all papillae over the whole drive schedule (in place).

    Returns per-step trajectories; the state arrays end at the final
    step.  Step t consumes drive[t] and depth[t]; recorded times are
    step ends, (t+1)*dt.
    """
    T = depth.shape[0]
    n = dx.shape[0]
    tip_speed = np.zeros((T, n), np.float32)
    delta_out = np.zeros((T, n, 2), np.float32)
    slide_out = np.zeros((T, n), np.float32)
    plate_v = np.zeros(T, np.float64)
    first_slip = np.full(n, np.nan)

    for t in range(T):
        d = depth[t]
        pv = 0.0
        if use_plate:
            support = 0.0
            for i in range(n):
                load = k_n * (d - ring_drop[i])
                if load > 0.0:
                    if slipping[i]:
                        support += mu_k * load
                    else:
                        support += k_t * dy[i]
            pv = (weight - support) / b_plate
        ux = drive_x[t]
        uy = drive_y[t] + pv

        for i in range(n):
            load = k_n * (d - ring_drop[i])
            contact = load > 0.0
            ox = dx[i]
            oy = dy[i]
            if contact and not slipping[i]:
                nx = ox + ux * dt
                ny = oy + uy * dt
                if k_t * math.sqrt(nx * nx + ny * ny) > mu_s * load:
                    slipping[i] = True
                    if math.isnan(first_slip[i]):
                        first_slip[i] = (t + 1) * dt
            else:
                mag = math.sqrt(ox * ox + oy * oy)
                spring = k_t * mag
                hold = mu_k * load if contact else 0.0
                if contact and spring <= hold:
                    # relative velocity has decayed to zero: restick
                    slipping[i] = False
                    nx = ox + ux * dt
                    ny = oy + uy * dt
                else:
                    slipping[i] = True
                    rate = (spring - hold) / b_slip if spring > hold else 0.0
                    sx = 0.0
                    sy = 0.0
                    if mag > 0.0:
                        sx = -rate * ox / mag
                        sy = -rate * oy / mag
                    if contact:
                        nx = ox + (ux + sx) * dt
                        ny = oy + (uy + sy) * dt
                        slide[i] += rate * dt
                    else:
                        # free tip: the surface no longer drags it
                        nx = ox + sx * dt
                        ny = oy + sy * dt
            dx[i] = nx
            dy[i] = ny
            tip_speed[t, i] = np.float32(
                math.sqrt((nx - ox) * (nx - ox) + (ny - oy) * (ny - oy)) / dt
            )
            delta_out[t, i, 0] = np.float32(nx)
            delta_out[t, i, 1] = np.float32(ny)
            slide_out[t, i] = np.float32(slide[i])
        plate_v[t] = pv
    return tip_speed, delta_out, slide_out, plate_v, first_slip


def simulate_trajectory(
    layout: PapillaeLayout,
    depth_mm: np.ndarray,
    drive_mm_s: np.ndarray,
    params: SimParams = SimParams(),
    plate_weight_n: Optional[float] = None,
    state: Optional[PapillaeState] = None,
) -> Trajectory:
    """Run the stick-slip dynamics over a depth/drive schedule.

    depth_mm is (T,), drive_mm_s is (T, 2) counter-surface velocity in
    the skin frame.  When plate_weight_n is given, an overdamped plate
    adds its force-balance velocity along +y (the gravity scenarios).
    """
    depth = np.ascontiguousarray(depth_mm, np.float64)
    drive = np.ascontiguousarray(drive_mm_s, np.float64)
    if drive.shape != (len(depth), 2):
        raise ValueError(f"drive shape {drive.shape}, expected ({len(depth)}, 2)")
    n = layout.n_papillae
    if state is None:
        state = PapillaeState.rest(n)
    dx = state.delta_mm[:, 0].astype(np.float64).copy()
    dy = state.delta_mm[:, 1].astype(np.float64).copy()
    slipping = state.slipping.astype(np.bool_).copy()
    slide = state.slide_mm.astype(np.float64).copy()
    ring_drop = (layout.ring * layout.geometry.ring_height_step_mm).astype(np.float64)

    tip_speed, delta_out, slide_out, plate_v, first_slip = _run_papillae(
        dx,
        dy,
        slipping,
        slide,
        ring_drop,
        depth,
        drive[:, 0].copy(),
        drive[:, 1].copy(),
        plate_weight_n is not None,
        0.0 if plate_weight_n is None else float(plate_weight_n),
        params.normal_stiffness,
        params.shear_stiffness,
        params.static_friction,
        params.kinetic_friction,
        params.slip_damping,
        params.plate_damping,
        params.dt_s,
    )
    state.delta_mm = np.column_stack([dx, dy])
    state.slipping = slipping
    state.slide_mm = slide
    return Trajectory(
        params.dt_s,
        depth,
        tip_speed,
        delta_out,
        slide_out,
        first_slip,
        plate_v if plate_weight_n is not None else None,
    )


def step_dynamics(
    state: PapillaeState,
    u_mm_s,
    depth_mm: float,
    layout: PapillaeLayout,
    params: SimParams = SimParams(),
) -> PapillaeState:
    """Advance the tip state one dt under surface velocity u (mm/s).

    Runs the same kernel as full trajectories, so single-step tests
    exercise the exact production dynamics.
    """
    new = PapillaeState(state.delta_mm.copy(), state.slipping.copy(), state.slide_mm.copy())
    simulate_trajectory(
        layout,
        np.array([depth_mm]),
        np.array([[float(u_mm_s[0]), float(u_mm_s[1])]]),
        params,
        state=new,
    )
    return new


def ground_truth_onsets(
    traj: Trajectory, threshold_mm: float, center_index: int = 0
) -> tuple[Optional[int], Optional[int]]:
    """Slip onsets in microseconds from accumulated slide distances.

    Incipient: first step end where any papilla's slide exceeds the
    threshold.  Gross: same for the center papilla.  None when never
    crossed.  The center is also "any papilla", so incipient <= gross.
    """
    def first_crossing(series: np.ndarray) -> Optional[int]:
        hits = np.flatnonzero(series > threshold_mm)
        if len(hits) == 0:
            return None
        return int(round((hits[0] + 1) * traj.dt_s * 1e6))

    incipient = first_crossing(traj.slide_mm.max(axis=1))
    gross = first_crossing(traj.slide_mm[:, center_index])
    return incipient, gross


def generate_events(
    traj: Trajectory,
    layout: PapillaeLayout,
    seed: int,
    params: SimParams = SimParams(),
) -> EventStream:
    """Render a trajectory to a sorted 640x480 event stream.

    Per papilla, events follow an inhomogeneous Poisson process at
    alpha * |tip speed|, sampled exactly by inverting the integrated
    rate; each event lands uniformly on the papilla's disk footprint
    around its image position at that step.  A frame-wide uniform
    background at background_rate_hz is merged in, with a small
    negative-polarity fraction.  Deterministic for a given seed.
    """
    rng = np.random.default_rng(seed)
    dt = traj.dt_s
    T, n = traj.tip_speed_mm_s.shape
    total_s = T * dt

    rates = params.events_per_mm * traj.tip_speed_mm_s.astype(np.float64)
    cum = np.cumsum(rates * dt, axis=0)
    totals = cum[-1] if T else np.zeros(n)

    counts = rng.poisson(totals)
    cx = (params.frame_width - 1) / 2.0
    cy = (params.frame_height - 1) / 2.0

    times = []
    pxs = []
    pys = []
    for i in range(n):
        k = int(counts[i])
        if k == 0:
            continue
        marks = np.sort(rng.random(k)) * totals[i]
        steps = np.searchsorted(cum[:, i], marks, side="right")
        steps = np.minimum(steps, T - 1)
        prev = np.where(steps > 0, cum[steps - 1, i], 0.0)
        width = cum[steps, i] - prev
        frac = np.where(width > 0, (marks - prev) / np.maximum(width, 1e-300), 0.0)
        times.append((steps + frac) * dt)
        pos = layout.rest_xy_mm[i] + traj.delta_mm[steps, i].astype(np.float64)
        pxs.append(cx + params.px_per_mm * pos[:, 0])
        pys.append(cy + params.px_per_mm * pos[:, 1])

    if times:
        sig_t = np.concatenate(times)
        sig_px = np.concatenate(pxs)
        sig_py = np.concatenate(pys)
    else:
        sig_t = np.empty(0)
        sig_px = np.empty(0)
        sig_py = np.empty(0)
    radii = params.footprint_radius_px * np.sqrt(rng.random(len(sig_t)))
    angles = 2 * math.pi * rng.random(len(sig_t))
    sig_x = np.floor(sig_px + radii * np.cos(angles)).astype(np.int64)
    sig_y = np.floor(sig_py + radii * np.sin(angles)).astype(np.int64)
    sig_p = np.ones(len(sig_t), np.int8)

    n_bg = rng.poisson(params.background_rate_hz * total_s)
    bg_t = np.sort(rng.random(n_bg)) * total_s
    bg_x = np.floor(rng.random(n_bg) * params.frame_width).astype(np.int64)
    bg_y = np.floor(rng.random(n_bg) * params.frame_height).astype(np.int64)
    bg_p = np.where(
        rng.random(n_bg) < params.background_negative_fraction, -1, 1
    ).astype(np.int8)

    t_us = np.concatenate([np.floor(sig_t * 1e6), np.floor(bg_t * 1e6)]).astype(np.int64)
    x = np.concatenate([sig_x, bg_x])
    y = np.concatenate([sig_y, bg_y])
    p = np.concatenate([sig_p, bg_p])

    inside = (x >= 0) & (x < params.frame_width) & (y >= 0) & (y < params.frame_height)
    t_us, x, y, p = t_us[inside], x[inside], y[inside], p[inside]
    order = np.argsort(t_us, kind="stable")
    return EventStream(
        params.frame_width,
        params.frame_height,
        t_us[order],
        x[order].astype(np.int32),
        y[order].astype(np.int32),
        p[order],
    )


def mirror_stream(stream: EventStream) -> EventStream:
    """Reflect events about the frame's vertical axis (x -> W-1-x)."""
    return EventStream(
        stream.sensor_width,
        stream.sensor_height,
        stream.t_us.copy(),
        (stream.sensor_width - 1 - stream.x).astype(np.int32),
        stream.y.copy(),
        stream.polarity.copy(),
    )


def _scenario_dict(scenario) -> dict:
    d = {f.name: getattr(scenario, f.name) for f in fields(scenario)}
    d["kind"] = "kinematic" if isinstance(scenario, KinematicScenario) else "gravity"
    return d


def run_scenario(
    scenario,
    layout: Optional[PapillaeLayout] = None,
    params: SimParams = SimParams(),
) -> Trial:
    """Simulate one scenario end to end: dynamics, truth labels, events.

    Raises NoSlipOccurred when the scenario never produces incipient
    slip (nothing to label).  Gravity trials are truncated two seconds
    after gross onset; "side" mirrors the stream for right-hand
    disturbances.
    """
    if layout is None:
        layout = build_geometry()
    dt = params.dt_s

    if isinstance(scenario, KinematicScenario):
        if scenario.speed_mm_s <= 0:
            raise NoSlipOccurred("kinematic scenario needs positive speed")
        motion_s = scenario.travel_mm / scenario.speed_mm_s
        T = int(round((scenario.lead_in_s + motion_s + scenario.tail_s) / dt))
        depth = np.full(T, scenario.depth_mm)
        drive = np.zeros((T, 2))
        theta = math.radians(scenario.direction_deg)
        t0 = int(round(scenario.lead_in_s / dt))
        t1 = int(round((scenario.lead_in_s + motion_s) / dt))
        drive[t0:t1, 0] = scenario.speed_mm_s * math.cos(theta)
        drive[t0:t1, 1] = scenario.speed_mm_s * math.sin(theta)
        traj = simulate_trajectory(layout, depth, drive, params)
        incipient, gross = ground_truth_onsets(traj, params.displacement_threshold_mm)
        if incipient is None:
            raise NoSlipOccurred(f"no incipient slip in {scenario}")
        stream = generate_events(traj, layout, scenario.seed, params)
        return Trial(stream, incipient, gross, _scenario_dict(scenario))

    if isinstance(scenario, GravityScenario):
        if scenario.retraction_mm_s <= 0:
            raise NoSlipOccurred("gravity scenario needs positive retraction speed")
        if scenario.side not in ("left", "right"):
            raise ValueError(f"side must be left or right, got {scenario.side!r}")
        retract_s = scenario.start_depth_mm / scenario.retraction_mm_s
        T = int(round((scenario.settle_s + retract_s + 0.5) / dt))
        t_axis = (np.arange(T) + 1) * dt
        depth = np.where(
            t_axis < scenario.settle_s,
            scenario.start_depth_mm,
            np.maximum(
                0.0,
                scenario.start_depth_mm
                - scenario.retraction_mm_s * (t_axis - scenario.settle_s),
            ),
        )
        drive = np.zeros((T, 2))
        retracting = (t_axis >= scenario.settle_s) & (depth > 0)
        # disturbance pushes toward -x; "right" trials mirror afterward
        drive[retracting, 0] = -scenario.disturbance_fraction * scenario.retraction_mm_s
        weight = scenario.mass_kg * params.gravity
        traj = simulate_trajectory(layout, depth, drive, params, plate_weight_n=weight)
        incipient, gross = ground_truth_onsets(traj, params.displacement_threshold_mm)
        if incipient is None or gross is None:
            raise NoSlipOccurred(f"no gross slip in {scenario}")
        stream = generate_events(traj, layout, scenario.seed, params)
        cutoff = gross + int(round(scenario.post_gross_s * 1e6))
        stream = stream.select(stream.t_us <= cutoff)
        if scenario.side == "right":
            stream = mirror_stream(stream)
        return Trial(stream, incipient, gross, _scenario_dict(scenario))

    raise TypeError(f"unknown scenario type {type(scenario).__name__}")


def scenario_to_kv(scenario) -> dict:
    """Flatten a scenario to string key-value pairs (config file form)."""
    return {k: str(v) for k, v in _scenario_dict(scenario).items()}


def scenario_from_kv(kv: dict):
    """Inverse of scenario_to_kv; unknown keys raise ValueError."""
    d = dict(kv)
    kind = d.pop("kind", None)
    if kind == "kinematic":
        cls = KinematicScenario
    elif kind == "gravity":
        cls = GravityScenario
    else:
        raise ValueError(f"scenario kind must be kinematic or gravity, got {kind!r}")
    spec_fields = {f.name: f.type for f in fields(cls)}
    unknown = set(d) - set(spec_fields)
    if unknown:
        raise ValueError(f"unknown scenario keys {sorted(unknown)}")
    kwargs = {}
    for name, value in d.items():
        if name == "side":
            kwargs[name] = value
        elif name == "seed":
            kwargs[name] = int(value)
        else:
            kwargs[name] = float(value)
    return cls(**kwargs)
