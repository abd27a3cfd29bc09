"""Free-form planar patch parameterization.

A design is the flat vector ``[C, rho_f, phi_f, rho_1..rho_L, phi_1..phi_L]``
(length ``2L + 3``).  The patch outline is a closed polygon whose vertices sit
at radii ``C * rho_l`` and at absolute angles obtained by normalizing the
positive increments ``phi`` onto the full circle.  The coaxial feed sits at
``(C * rho_f, phi_f)`` in polar coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidAngleIncrement, RetriesExhausted, X0OutOfTemplate

TWO_PI = 2.0 * math.pi

# Fixed scalar ranges of the bound template: C (mm), rho block, phi block.
C_RANGE = (25.0, 35.0)
RHO_RANGE = (0.1, 0.9)
PHI_RANGE = (0.01, 0.8)

MAX_RETRIES = 100


@dataclass(frozen=True)
class GeometryConfig:
    """Fixed (non-optimized) antenna constants; lengths in mm."""

    L: int = 25
    o: float = 5.0
    r1: float = 1.27
    r2: float = 2.84
    eps_r: float = 2.55
    h: float = 1.52
    feed_clearance: float = 2.84

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 3:
            raise ValueError(f"L must be an integer >= 3, got {self.L}")
        if not self.o > 0:
            raise ValueError("substrate margin o must be positive")
        if not 0 < self.r1 < self.r2:
            raise ValueError("probe radii must satisfy 0 < r1 < r2")
        if not self.eps_r >= 1:
            raise ValueError("eps_r must be >= 1")
        if not self.h > 0:
            raise ValueError("substrate thickness h must be positive")
        if not self.feed_clearance >= self.r2:
            raise ValueError("feed_clearance must be at least the probe outer radius r2")

    @property
    def D(self):
        return 2 * self.L + 3


@dataclass(frozen=True, eq=False)
class DesignVector:
    """Immutable design vector in canonical order ``[C, rho_f, phi_f, rho, phi]``."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).reshape(-1)
        if arr.size < 9 or (arr.size - 3) % 2:
            raise ValueError(f"design length must be 2L+3 with L >= 3, got {arr.size}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def from_parts(cls, C, rho_f, phi_f, rho, phi):
        rho = np.asarray(rho, dtype=float)
        phi = np.asarray(phi, dtype=float)
        if rho.shape != phi.shape:
            raise ValueError("rho and phi blocks must have equal length")
        return cls(np.concatenate([[C, rho_f, phi_f], rho, phi]))

    @property
    def L(self):
        return (self.values.size - 3) // 2

    @property
    def D(self):
        return self.values.size

    @property
    def C(self):
        return float(self.values[0])

    @property
    def rho_f(self):
        return float(self.values[1])

    @property
    def phi_f(self):
        return float(self.values[2])

    @property
    def rho(self):
        return self.values[3:3 + self.L]

    @property
    def phi(self):
        return self.values[3 + self.L:]

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, DesignVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    def __hash__(self):
        return hash(self.values.tobytes())

    def __repr__(self):
        return f"DesignVector(L={self.L}, C={self.C:.6g}, rho_f={self.rho_f:.6g}, phi_f={self.phi_f:.6g})"

    def to_line(self):
        """Comma-separated canonical layout; ``repr`` keeps floats bit-exact."""
        return ",".join(repr(float(v)) for v in self.values)

    @classmethod
    def from_line(cls, line):
        return cls(np.array([float(tok) for tok in line.strip().split(",")]))


@dataclass(frozen=True, eq=False)
class DesignBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).reshape(-1)
        hi = np.array(self.upper, dtype=float).reshape(-1)
        if lo.shape != hi.shape:
            raise ValueError("bound vectors differ in length")
        if not np.all(lo < hi):
            raise ValueError("lower bounds must be strictly below upper bounds")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def span(self):
        return self.upper - self.lower

    def contains(self, x, atol=0.0):
        v = np.asarray(x, dtype=float)
        return bool(np.all(v >= self.lower - atol) and np.all(v <= self.upper + atol))

    def clip(self, x):
        return DesignVector(np.clip(np.asarray(x, dtype=float), self.lower, self.upper))

    def normalize(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / self.span

    def denormalize(self, z):
        return self.lower + np.asarray(z, dtype=float) * self.span


@dataclass(frozen=True, eq=False)
class PatchGeometry:
    vertices: np.ndarray  # (L, 2), mm
    feed: np.ndarray  # (2,), mm
    substrate_A: float
    substrate_B: float
    absolute_angles: np.ndarray


@dataclass
class ConsistencyReport:
    simple_polygon: bool
    feed_inside: bool
    feed_distance: float
    within_substrate: bool
    reasons: list = field(default_factory=list)

    @property
    def consistent(self):
        return not self.reasons

    def __bool__(self):
        return self.consistent


def normalize_angles(phi_raw):
    """Map positive angular increments onto absolute vertex angles in [0, 2*pi).

    ``a_l = 2*pi * S_{l-1} / S_L`` with ``S_j`` the running sum of the
    increments, so the first vertex is at 0 and the last increment is the
    closing gap back to the first vertex.
    """
    phi = np.asarray(phi_raw, dtype=float).reshape(-1)
    if phi.size < 3:
        raise InvalidAngleIncrement(f"need at least 3 angular increments, got {phi.size}")
    if not np.all(np.isfinite(phi)) or np.any(phi <= 0):
        raise InvalidAngleIncrement("angular increments must be finite and strictly positive")
    cums = np.cumsum(phi)
    return TWO_PI * np.concatenate([[0.0], cums[:-1]]) / cums[-1]


def build_geometry(x, cfg=None):
    x = x if isinstance(x, DesignVector) else DesignVector(x)
    cfg = cfg or GeometryConfig(L=x.L)
    angles = normalize_angles(x.phi)
    radii = x.C * x.rho
    vertices = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    rf = x.C * x.rho_f
    feed = np.array([rf * math.cos(x.phi_f), rf * math.sin(x.phi_f)])
    side = 2.0 * (x.C * float(np.max(x.rho)) + cfg.o)
    return PatchGeometry(vertices, feed, side, side, angles)


def _orient(ax, ay, bx, by, cx, cy):
    return (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)


def _on_segment(ax, ay, bx, by, px, py):
    return (np.minimum(ax, bx) <= px) & (px <= np.maximum(ax, bx)) & \
        (np.minimum(ay, by) <= py) & (py <= np.maximum(ay, by))


def segments_intersect(p1, p2, q1, q2):
    """Vectorized closed-segment intersection test (touching counts)."""
    p1, p2, q1, q2 = (np.asarray(a, dtype=float) for a in (p1, p2, q1, q2))
    d1 = _orient(q1[..., 0], q1[..., 1], q2[..., 0], q2[..., 1], p1[..., 0], p1[..., 1])
    d2 = _orient(q1[..., 0], q1[..., 1], q2[..., 0], q2[..., 1], p2[..., 0], p2[..., 1])
    d3 = _orient(p1[..., 0], p1[..., 1], p2[..., 0], p2[..., 1], q1[..., 0], q1[..., 1])
    d4 = _orient(p1[..., 0], p1[..., 1], p2[..., 0], p2[..., 1], q2[..., 0], q2[..., 1])
    proper = (((d1 > 0) & (d2 < 0)) | ((d1 < 0) & (d2 > 0))) & \
        (((d3 > 0) & (d4 < 0)) | ((d3 < 0) & (d4 > 0)))
    touch = ((d1 == 0) & _on_segment(q1[..., 0], q1[..., 1], q2[..., 0], q2[..., 1], p1[..., 0], p1[..., 1])) | \
        ((d2 == 0) & _on_segment(q1[..., 0], q1[..., 1], q2[..., 0], q2[..., 1], p2[..., 0], p2[..., 1])) | \
        ((d3 == 0) & _on_segment(p1[..., 0], p1[..., 1], p2[..., 0], p2[..., 1], q1[..., 0], q1[..., 1])) | \
        ((d4 == 0) & _on_segment(p1[..., 0], p1[..., 1], p2[..., 0], p2[..., 1], q2[..., 0], q2[..., 1]))
    return proper | touch


def is_simple_polygon(vertices):
    v = np.asarray(vertices, dtype=float)
    n = len(v)
    a, b = v, np.roll(v, -1, axis=0)
    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    return not bool(np.any(segments_intersect(a[i], b[i], a[j], b[j])))


def point_in_polygon(point, vertices):
    """Even-odd ray casting; points exactly on the boundary may go either way."""
    px, py = float(point[0]), float(point[1])
    v = np.asarray(vertices, dtype=float)
    x0, y0 = v[:, 0], v[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    straddle = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    return bool(np.count_nonzero(straddle & (px < xcross)) % 2)


def distance_to_boundary(point, vertices):
    p = np.asarray(point, dtype=float)
    a = np.asarray(vertices, dtype=float)
    b = np.roll(a, -1, axis=0)
    ab = b - a
    t = np.clip(np.einsum("ij,ij->i", p - a, ab) / np.einsum("ij,ij->i", ab, ab), 0.0, 1.0)
    nearest = a + t[:, None] * ab
    return float(np.min(np.hypot(*(nearest - p).T)))


def check_consistency(g, cfg=None):
    cfg = cfg or GeometryConfig(L=len(g.vertices))
    reasons = []
    simple = is_simple_polygon(g.vertices)
    if not simple:
        reasons.append("SelfIntersecting")
    inside = point_in_polygon(g.feed, g.vertices)
    dist = distance_to_boundary(g.feed, g.vertices)
    if not inside:
        reasons.append("FeedOutside")
    elif dist < cfg.feed_clearance:
        reasons.append("FeedTooCloseToEdge")
    half_a, half_b = 0.5 * g.substrate_A, 0.5 * g.substrate_B
    within = bool(np.all(np.abs(g.vertices[:, 0]) <= half_a) and np.all(np.abs(g.vertices[:, 1]) <= half_b))
    if not within:
        reasons.append("OutsideSubstrate")
    return ConsistencyReport(simple, inside, dist, within, reasons)


def design_report(x, cfg=None):
    """Build and check in one go; angle errors surface as a failed report."""
    try:
        g = build_geometry(x, cfg)
    except InvalidAngleIncrement as exc:
        return ConsistencyReport(False, False, float("nan"), False, [f"InvalidAngleIncrement: {exc}"])
    return check_consistency(g, cfg)


def template_bounds(L):
    """Box used for random screening: fixed scalar ranges, feed anywhere on the circle."""
    lower = np.concatenate([[C_RANGE[0], 0.0, 0.0], np.full(L, RHO_RANGE[0]), np.full(L, PHI_RANGE[0])])
    upper = np.concatenate([[C_RANGE[1], RHO_RANGE[1], TWO_PI], np.full(L, RHO_RANGE[1]), np.full(L, PHI_RANGE[1])])
    return DesignBounds(lower, upper)


def random_design(bounds, rng_seed, cfg=None, feed_within_patch=False, max_retries=MAX_RETRIES):
    """Draw a consistent design uniformly from ``bounds`` by rejection.

    With ``feed_within_patch`` the feed radius is drawn from
    ``[lower, min(upper, max(rho))]`` of the same draw, as in screening.
    """
    rng = np.random.default_rng(rng_seed)
    lo, hi = bounds.lower, bounds.upper
    L = (lo.size - 3) // 2
    cfg = cfg or GeometryConfig(L=L)
    for _ in range(max_retries):
        v = rng.uniform(lo, hi)
        if feed_within_patch:
            top = min(hi[1], float(np.max(v[3:3 + L])))
            v[1] = lo[1] + (max(top, lo[1]) - lo[1]) * rng.uniform()
        x = DesignVector(v)
        if design_report(x, cfg).consistent:
            return x
    raise RetriesExhausted(f"no consistent design after {max_retries} draws (seed {rng_seed})")


def derive_bounds(x0):
    """Optimization bounds anchored at an initial design."""
    x0 = x0 if isinstance(x0, DesignVector) else DesignVector(x0)
    L = x0.L
    problems = []
    if not C_RANGE[0] <= x0.C <= C_RANGE[1]:
        problems.append(f"C={x0.C} outside {C_RANGE}")
    if np.any(x0.rho < RHO_RANGE[0]) or np.any(x0.rho > RHO_RANGE[1]):
        problems.append(f"rho outside {RHO_RANGE}")
    if np.any(x0.phi < PHI_RANGE[0]) or np.any(x0.phi > PHI_RANGE[1]):
        problems.append(f"phi outside {PHI_RANGE}")
    rho_f_max = float(np.max(x0.rho))
    if not 0.0 <= x0.rho_f <= rho_f_max:
        problems.append(f"rho_f={x0.rho_f} outside [0, max(rho)={rho_f_max}]")
    if problems:
        raise X0OutOfTemplate("; ".join(problems))
    lower = np.concatenate([[C_RANGE[0], 0.0, x0.phi_f - math.pi], np.full(L, RHO_RANGE[0]), np.full(L, PHI_RANGE[0])])
    upper = np.concatenate([[C_RANGE[1], rho_f_max, x0.phi_f + math.pi], np.full(L, RHO_RANGE[1]), np.full(L, PHI_RANGE[1])])
    return DesignBounds(lower, upper)


def export_geometry(g):
    """Text block: ``x_mm,y_mm`` header, vertex rows, then feed and substrate lines."""
    lines = ["x_mm,y_mm"]
    lines += [f"{x:.17g},{y:.17g}" for x, y in g.vertices]
    lines.append(f"feed,{g.feed[0]:.17g},{g.feed[1]:.17g}")
    lines.append(f"substrate,{g.substrate_A:.17g},{g.substrate_B:.17g}")
    return "\n".join(lines) + "\n"


def parse_geometry_export(text):
    rows = [r for r in text.strip().splitlines() if r]
    if rows[0] != "x_mm,y_mm":
        raise ValueError("missing geometry header")
    verts, feed, sub = [], None, None
    for row in rows[1:]:
        parts = row.split(",")
        if parts[0] == "feed":
            feed = np.array([float(parts[1]), float(parts[2])])
        elif parts[0] == "substrate":
            sub = (float(parts[1]), float(parts[2]))
        else:
            verts.append([float(parts[0]), float(parts[1])])
    if feed is None or sub is None:
        raise ValueError("geometry block lacks feed or substrate line")
    return np.array(verts), feed, sub
