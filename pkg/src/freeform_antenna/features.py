"""Feature-point extraction from sampled reflection responses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ROLES = ("in-band-max-1", "in-band-max-2", "min-near-target-1", "min-near-target-2")


@dataclass(frozen=True)
class FeatureSpec:
    target_freqs: tuple = (6.2, 6.8)
    band: tuple = (6.2, 6.8)
    max_count: int = 2

    def __post_init__(self):
        object.__setattr__(self, "target_freqs", tuple(float(t) for t in self.target_freqs))
        object.__setattr__(self, "band", tuple(float(b) for b in self.band))
        if len(self.target_freqs) != 2:
            raise ValueError("exactly two target frequencies are supported")
        if not self.band[0] < self.band[1]:
            raise ValueError("band requires f_l < f_h")
        if self.max_count != 2:
            raise ValueError("the four-feature layout reports exactly two maxima")

    def check_sweep(self, sweep):
        for t in self.target_freqs:
            if not sweep.f_start <= t <= sweep.f_stop:
                raise ValueError(f"target {t} GHz outside the sweep")


@dataclass(frozen=True, eq=False)
class FeatureSet:
    omega: np.ndarray
    S: np.ndarray
    roles: tuple = ROLES
    valid: bool = True

    def __eq__(self, other):
        if not isinstance(other, FeatureSet):
            return NotImplemented
        return (self.valid == other.valid and self.roles == other.roles
                and np.array_equal(self.omega, other.omega) and np.array_equal(self.S, other.S))

    @classmethod
    def invalid(cls):
        nan = np.full(len(ROLES), np.nan)
        return cls(nan, nan.copy(), ROLES, False)

    def to_csv_rows(self):
        return [f"{r},{w!r},{s!r},{int(self.valid)}" for r, w, s in zip(self.roles, self.omega.tolist(), self.S.tolist())]


def _refine(f, y, i):
    """Vertex of the parabola through samples i-1, i, i+1."""
    x0, x1, x2 = f[i - 1], f[i], f[i + 1]
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    d01 = (y1 - y0) / (x1 - x0)
    d12 = (y2 - y1) / (x2 - x1)
    a = (d12 - d01) / (x2 - x0)
    if a == 0:
        return x1, y1
    b = d01 - a * (x0 + x1)
    xv = -b / (2 * a)
    xv = min(max(xv, x0), x2)
    yv = y1 + (xv - x1) * (d01 + a * (xv - x0))
    return float(xv), float(yv)


def find_local_extrema(r):
    """Interior minima and maxima as ``(freq, level)`` lists.

    Runs of equal samples count as one candidate located at the run
    midpoint; isolated extrema are refined with a three-point parabola.
    """
    f = np.asarray(r.freqs, dtype=float)
    y = np.asarray(r.levels_db, dtype=float)
    n = len(y)
    # collapse plateaus into runs [start, end]
    starts = [0]
    for i in range(1, n):
        if y[i] != y[i - 1]:
            starts.append(i)
    ends = starts[1:] + [n]
    minima, maxima = [], []
    for k in range(1, len(starts) - 1):
        s, e = starts[k], ends[k] - 1
        prev, here, nxt = y[starts[k - 1]], y[s], y[starts[k + 1]]
        if here < prev and here < nxt:
            bucket = minima
        elif here > prev and here > nxt:
            bucket = maxima
        else:
            continue
        if s == e:
            bucket.append(_refine(f, y, s))
        else:
            bucket.append((float(0.5 * (f[s] + f[e])), float(here)))
    return minima, maxima


def _select_minima(minima, targets):
    freqs = np.array([m[0] for m in minima])
    near = [int(np.argmin(np.abs(freqs - t))) for t in targets]
    if near[0] != near[1]:
        return near
    shared = near[0]
    d = [abs(freqs[shared] - t) for t in targets]
    keeper = 0 if d[0] <= d[1] else 1
    other = 1 - keeper
    rest = [j for j in range(len(freqs)) if j != shared]
    if not rest:
        return None
    pick = min(rest, key=lambda j: (abs(freqs[j] - targets[other]), j))
    out = [0, 0]
    out[keeper], out[other] = shared, pick
    return out


def extract_features(r, spec=None):
    """Four-point feature set: two in-band maxima levels and two target-nearest dips."""
    spec = spec or FeatureSpec()
    minima, maxima = find_local_extrema(r)
    if len(minima) < 2:
        return FeatureSet.invalid()
    picked = _select_minima(minima, spec.target_freqs)
    if picked is None:
        return FeatureSet.invalid()
    m3, m4 = minima[picked[0]], minima[picked[1]]
    lo, hi = sorted((m3[0], m4[0]))
    inside = sorted((m for m in maxima if lo < m[0] < hi), key=lambda m: (-m[1], m[0]))[:2]
    f = r.freqs
    y = r.levels_db
    if len(inside) < 2:
        mask = (f > lo) & (f < hi)
        if np.any(mask):
            idx = np.flatnonzero(mask)
            j = idx[np.argmax(y[idx])]
            pad = (float(f[j]), float(y[j]))
        else:
            mid = 0.5 * (lo + hi)
            pad = (mid, float(np.interp(mid, f, y)))
        inside = inside + [pad] * (2 - len(inside))
    omega = np.array([inside[0][0], inside[1][0], m3[0], m4[0]])
    S = np.array([inside[0][1], inside[1][1], m3[1], m4[1]])
    return FeatureSet(omega, S, ROLES, True)


def features_csv(fs):
    return "role,freq_ghz,level_db,valid\n" + "\n".join(fs.to_csv_rows()) + "\n"
