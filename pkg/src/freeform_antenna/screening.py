"""Random candidate generation and min-max ranking of the starting design."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import BandOutsideSweep
from .geometry import GeometryConfig, random_design


def band_indices(sweep, band):
    """Inclusive sample range of ``band``, endpoints snapped to the nearest grid point."""
    f_lo, f_hi = float(band[0]), float(band[1])
    tol = 1e-9 * max(1.0, abs(sweep.f_stop))
    if f_lo > f_hi or f_lo < sweep.f_start - tol or f_hi > sweep.f_stop + tol:
        raise BandOutsideSweep(f"band [{f_lo}, {f_hi}] GHz is not inside the sweep [{sweep.f_start}, {sweep.f_stop}]")
    i_lo = int(round((f_lo - sweep.f_start) / sweep.step))
    i_hi = int(round((f_hi - sweep.f_start) / sweep.step))
    return i_lo, min(i_hi, sweep.points - 1)


def score_minmax(r, band):
    """Worst (largest) in-band reflection level in dB."""
    i_lo, i_hi = band_indices(r.sweep, band)
    return float(np.max(r.levels_db[i_lo:i_hi + 1]))


def candidate_seed(root_seed, index):
    """Per-candidate sub-seed; independent of evaluation order."""
    return int(np.random.SeedSequence([int(root_seed), int(index)]).generate_state(1, np.uint64)[0])


@dataclass
class ScreeningResult:
    ranked: list  # (index, score_db, design), ascending score
    best: object
    records: list = field(default_factory=list)

    @property
    def designs(self):
        return [d for _, _, d in sorted(self.ranked, key=lambda t: t[0])]

    def ranked_csv(self):
        rows = ["rank,index,score_db"]
        rows += [f"{k},{i},{s!r}" for k, (i, s, _) in enumerate(self.ranked)]
        return "\n".join(rows) + "\n"

    def designs_text(self):
        return "".join(d.to_line() + "\n" for d in self.designs)


def screen(bounds, N, seed, evaluator, band, sweep, cfg=None, workers=1):
    """Generate ``N`` consistent random designs, evaluate once each, rank by min-max score.

    Ties go to the lower candidate index.  Any failure aborts the whole screen.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"screening needs N >= 1, got {N}")
    L = (bounds.lower.size - 3) // 2
    cfg = cfg or GeometryConfig(L=L)
    designs = [random_design(bounds, candidate_seed(seed, n), cfg, feed_within_patch=True) for n in range(N)]

    def run(n):
        return evaluator(designs[n], sweep, tag="screen")

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            responses = list(pool.map(run, range(N)))
    else:
        responses = [run(n) for n in range(N)]
    scores = [score_minmax(r, band) for r in responses]
    order = sorted(range(N), key=lambda n: (scores[n], n))
    ranked = [(n, scores[n], designs[n]) for n in order]
    return ScreeningResult(ranked, ranked[0][2], list(zip(designs, responses)))
