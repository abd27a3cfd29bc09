"""Reflection-response evaluators.

Every evaluator is a callable ``evaluator(x, sweep, tag=None)`` returning a
:class:`ReflectionResponse`.  ``tag`` is only meaningful to the caching
wrapper, which records every cache miss in an append-only ledger.
"""

from __future__ import annotations

import logging
import math
import os
import shlex
import subprocess
import tempfile
import threading
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import EvaluatorFailure, InconsistentGeometry, MalformedResponse, StoreCorrupt
from .geometry import DesignVector, GeometryConfig, build_geometry, design_report, export_geometry

log = logging.getLogger(__name__)

SPEED_OF_LIGHT_MM_GHZ = 299.792458  # mm * GHz
TAGS = ("screen", "initial", "jacobian", "candidate")


@dataclass(frozen=True)
class FrequencySweep:
    f_start: float = 5.0
    f_stop: float = 8.0
    points: int = 301

    def __post_init__(self):
        if not self.f_start < self.f_stop:
            raise ValueError("sweep requires f_start < f_stop")
        if int(self.points) != self.points or self.points < 11:
            raise ValueError("sweep needs an integer count of at least 11 points")

    @property
    def freqs(self):
        return np.linspace(self.f_start, self.f_stop, int(self.points))

    @property
    def step(self):
        return (self.f_stop - self.f_start) / (self.points - 1)

    def triple(self):
        return (float(self.f_start), float(self.f_stop), int(self.points))

    def contains(self, f_lo, f_hi):
        return self.f_start <= f_lo and f_hi <= self.f_stop


@dataclass(frozen=True, eq=False)
class ReflectionResponse:
    sweep: FrequencySweep
    levels_db: np.ndarray

    def __post_init__(self):
        lv = np.array(self.levels_db, dtype=float).reshape(-1)
        if lv.size != self.sweep.points:
            raise MalformedResponse(f"expected {self.sweep.points} levels, got {lv.size}")
        if not np.all(np.isfinite(lv)):
            raise MalformedResponse("response contains non-finite levels")
        if np.any(lv > 0.0):
            raise MalformedResponse("reflection levels must be <= 0 dB")
        lv.setflags(write=False)
        object.__setattr__(self, "levels_db", lv)

    @property
    def freqs(self):
        return self.sweep.freqs

    def __eq__(self, other):
        if not isinstance(other, ReflectionResponse):
            return NotImplemented
        return self.sweep == other.sweep and np.array_equal(self.levels_db, other.levels_db)

    def to_csv(self):
        rows = ["freq_ghz,s11_db"]
        rows += [f"{f!r},{v!r}" for f, v in zip(self.freqs.tolist(), self.levels_db.tolist())]
        return "\n".join(rows) + "\n"


def parse_response_csv(text, sweep):
    """Parse and validate a ``freq_ghz,s11_db`` file against ``sweep``."""
    rows = [r.strip() for r in text.strip().splitlines() if r.strip()]
    if not rows or rows[0].replace(" ", "") != "freq_ghz,s11_db":
        raise MalformedResponse("response header must be 'freq_ghz,s11_db'")
    data = rows[1:]
    if len(data) != sweep.points:
        raise MalformedResponse(f"expected {sweep.points} data rows, got {len(data)}")
    try:
        arr = np.array([[float(t) for t in r.split(",")] for r in data])
    except ValueError as exc:
        raise MalformedResponse(f"unparseable response row: {exc}") from None
    if arr.shape != (sweep.points, 2):
        raise MalformedResponse("each response row needs exactly two columns")
    if np.max(np.abs(arr[:, 0] - sweep.freqs)) > 1e-9:
        raise MalformedResponse("response frequencies do not match the sweep grid")
    return ReflectionResponse(sweep, arr[:, 1])


class Evaluator:
    """Base evaluator: consistency gate plus the ``_simulate`` hook."""

    def __init__(self, cfg=None):
        self.cfg = cfg

    def _config_for(self, x):
        if self.cfg is not None and self.cfg.L == x.L:
            return self.cfg
        return GeometryConfig(L=x.L) if self.cfg is None else _with_L(self.cfg, x.L)

    def __call__(self, x, sweep, tag=None):
        x = x if isinstance(x, DesignVector) else DesignVector(x)
        cfg = self._config_for(x)
        report = design_report(x, cfg)
        if not report.consistent:
            raise InconsistentGeometry(f"design fails consistency: {', '.join(report.reasons)}", report)
        return self._simulate(x, sweep, cfg)

    evaluate = __call__

    def _simulate(self, x, sweep, cfg):
        raise NotImplementedError


def _with_L(cfg, L):
    return replace(cfg, L=L)


@dataclass(frozen=True)
class SyntheticModelParams:
    """Constants of the analytic model.

    Defaults suit the 25-vertex outline (perimeters around 165-320 mm put the
    first two modes near 6-7 GHz); :meth:`desk` suits 8-vertex outlines.  The
    first two mode scales keep the 6.8/6.2 frequency ratio.
    """

    mode_scales: tuple = (6.6, 7.24, 9.65)
    quality_factors: tuple = (12.0, 12.0, 30.0)
    coupling_centers: tuple = (0.30, 0.50, 0.70)
    coupling_width: float = 0.25
    floor_db: float = -60.0

    def __post_init__(self):
        for name in ("mode_scales", "quality_factors", "coupling_centers"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals or any(v <= 0 for v in vals):
                raise ValueError(f"{name} must be non-empty and positive")
            object.__setattr__(self, name, vals)
        n = len(self.mode_scales)
        if len(self.quality_factors) != n or len(self.coupling_centers) != n:
            raise ValueError("mode parameter tuples must have equal length")
        if not self.coupling_width > 0:
            raise ValueError("coupling_width must be positive")
        if not self.floor_db < -40:
            raise ValueError("floor_db must be below -40 dB")

    @classmethod
    def desk(cls, **overrides):
        """Preset for 8-vertex outlines (perimeters around 70-160 mm)."""
        return cls(**{"mode_scales": (2.6, 2.85, 3.8), **overrides})

    def narrow(self, q=60.0):
        """Same modes with every quality factor set to ``q``."""
        return replace(self, quality_factors=(float(q),) * len(self.mode_scales))


def synthetic_quantities(x, params, cfg):
    """Resonant frequencies (GHz) and coupling coefficients of the analytic model."""
    g = build_geometry(x, cfg)
    v = g.vertices
    p_eff = float(np.sum(np.hypot(*(np.roll(v, -1, axis=0) - v).T)))
    mean_radius = x.C * float(np.mean(x.rho))
    centroid = v.mean(axis=0)
    u = float(np.hypot(*(g.feed - centroid))) / mean_radius
    nu = np.asarray(params.mode_scales)
    f_res = nu * SPEED_OF_LIGHT_MM_GHZ / (p_eff * math.sqrt(cfg.eps_r))
    mu = np.asarray(params.coupling_centers)
    coupling = 2.0 * np.exp(-((u - mu) ** 2) / params.coupling_width ** 2)
    return f_res, coupling, p_eff, u


def synthetic_levels(freqs, f_res, coupling, quality, floor_db):
    f = np.asarray(freqs, dtype=float)[:, None]
    c = np.asarray(coupling)[None, :]
    t = 2.0 * np.asarray(quality)[None, :] * (f - f_res[None, :]) / f_res[None, :]
    gamma = np.sqrt(((1.0 - c) ** 2 + t ** 2) / ((1.0 + c) ** 2 + t ** 2))
    mag = np.maximum(10.0 ** (floor_db / 20.0), np.prod(gamma, axis=1))
    return np.minimum(20.0 * np.log10(mag), 0.0)


def synthetic_evaluate(x, sweep, params=None, cfg=None):
    x = x if isinstance(x, DesignVector) else DesignVector(x)
    return SyntheticEvaluator(params, cfg)(x, sweep)


class SyntheticEvaluator(Evaluator):
    """Closed-form multi-resonance stand-in for a full-wave solver."""

    def __init__(self, params=None, cfg=None):
        super().__init__(cfg)
        self.params = params or SyntheticModelParams()

    def _simulate(self, x, sweep, cfg):
        f_res, coupling, _, _ = synthetic_quantities(x, self.params, cfg)
        levels = synthetic_levels(sweep.freqs, f_res, coupling, self.params.quality_factors, self.params.floor_db)
        return ReflectionResponse(sweep, levels)


def request_text(x, sweep, cfg):
    head = f"sweep,{sweep.f_start!r},{sweep.f_stop!r},{int(sweep.points)}\n"
    head += f"design,{x.to_line()}\n"
    return head + export_geometry(build_geometry(x, cfg))


class ExternalEvaluator(Evaluator):
    """Runs ``command <request>`` once per design.

    The request file is written to a fresh directory; the program must leave
    ``response.csv`` next to it.
    """

    RESPONSE_NAME = "response.csv"

    def __init__(self, command, cfg=None, timeout=None, workdir=None):
        super().__init__(cfg)
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.timeout = timeout
        self.workdir = workdir

    def _simulate(self, x, sweep, cfg):
        with tempfile.TemporaryDirectory(prefix="eval-", dir=self.workdir) as tmp:
            req = Path(tmp) / "request.txt"
            req.write_text(request_text(x, sweep, cfg))
            try:
                proc = subprocess.run(
                    [*self.command, str(req)], capture_output=True, text=True, timeout=self.timeout, cwd=tmp
                )
            except (OSError, subprocess.TimeoutExpired) as exc:
                raise EvaluatorFailure(f"could not run {self.command[0]}: {exc}") from exc
            output = (proc.stdout or "") + (proc.stderr or "")
            if proc.returncode != 0:
                raise EvaluatorFailure(
                    f"{self.command[0]} exited with status {proc.returncode}", proc.returncode, output
                )
            resp = Path(tmp) / self.RESPONSE_NAME
            if not resp.exists():
                raise MalformedResponse(f"{self.command[0]} did not write {self.RESPONSE_NAME}")
            return parse_response_csv(resp.read_text(), sweep)


def external_evaluate(x, sweep, command, cfg=None):
    x = x if isinstance(x, DesignVector) else DesignVector(x)
    return ExternalEvaluator(command, cfg)(x, sweep)


def quantized_key(x, sweep):
    """Design rounded to 12 significant digits plus the sweep triple."""
    vals = np.asarray(x, dtype=float)
    f0, f1, n = sweep.triple()
    digits = ",".join(f"{v + 0.0:.11e}" for v in vals.tolist())
    return f"{f0!r}:{f1!r}:{n}|{digits}"


@dataclass(frozen=True)
class EvaluationRecord:
    sequence: int
    tag: str
    key: str
    design: DesignVector
    response: ReflectionResponse

    def to_line(self):
        s = self.response.sweep
        body = "\t".join([
            str(self.sequence),
            self.tag,
            self.key,
            self.design.to_line(),
            f"{s.f_start!r},{s.f_stop!r},{int(s.points)}",
            ",".join(repr(v) for v in self.response.levels_db.tolist()),
        ])
        return f"{body}\t{zlib.crc32(body.encode()):08x}"

    @classmethod
    def from_line(cls, line):
        body, _, crc = line.rstrip("\n").rpartition("\t")
        if not body or f"{zlib.crc32(body.encode()):08x}" != crc:
            raise ValueError("checksum mismatch")
        seq, tag, key, design, sweep, levels = body.split("\t")
        f0, f1, n = sweep.split(",")
        sw = FrequencySweep(float(f0), float(f1), int(n))
        return cls(int(seq), tag, key, DesignVector.from_line(design),
                   ReflectionResponse(sw, [float(v) for v in levels.split(",")]))


class EvaluationStore:
    """Append-only record file backing the cache and the cost ledger.

    One record per line, tab separated::

        seq  tag  key  design(csv)  f_start,f_stop,points  levels_db(csv)  crc32

    A damaged final line (interrupted write) is dropped on reload; damage
    anywhere earlier raises :class:`StoreCorrupt`.
    """

    FILENAME = "evaluations.tsv"

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        if self.path is not None and self.path.suffix == "":
            self.path = self.path / self.FILENAME
        self._lock = threading.Lock()
        self._records = []
        self._by_key = {}
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._load()

    def _load(self):
        if not self.path.exists():
            return
        raw = self.path.read_text()
        lines = raw.splitlines(keepends=True)
        good_bytes = 0
        for i, line in enumerate(lines):
            try:
                if not line.endswith("\n"):
                    raise ValueError("unterminated record")
                rec = EvaluationRecord.from_line(line)
            except (ValueError, MalformedResponse) as exc:
                if i == len(lines) - 1:
                    log.warning("dropping truncated trailing record in %s (%s)", self.path, exc)
                    with open(self.path, "r+b") as fh:
                        fh.truncate(good_bytes)
                    break
                raise StoreCorrupt(f"{self.path}: record {i + 1} unreadable ({exc})") from None
            if self._records and rec.sequence <= self._records[-1].sequence:
                raise StoreCorrupt(f"{self.path}: sequence not increasing at record {i + 1}")
            self._records.append(rec)
            self._by_key[rec.key] = rec
            good_bytes += len(line.encode())

    def __len__(self):
        return len(self._records)

    @property
    def records(self):
        return list(self._records)

    def get(self, key):
        return self._by_key.get(key)

    def append(self, tag, key, design, response):
        with self._lock:
            if key in self._by_key:
                return self._by_key[key]
            seq = self._records[-1].sequence + 1 if self._records else 0
            rec = EvaluationRecord(seq, tag, key, design, response)
            if self.path is not None:
                with open(self.path, "a") as fh:
                    fh.write(rec.to_line() + "\n")
                    fh.flush()
                    os.fsync(fh.fileno())
            self._records.append(rec)
            self._by_key[key] = rec
            return rec

    def counts(self):
        out = {t: 0 for t in TAGS}
        for rec in self._records:
            out[rec.tag] = out.get(rec.tag, 0) + 1
        return out


class CachedEvaluator:
    """Memoizing wrapper; every miss is appended to the store's ledger."""

    def __init__(self, inner, store=None):
        self.inner = inner
        self.store = store if store is not None else EvaluationStore()
        self.inner_calls = 0
        self._inflight = {}
        self._guard = threading.Lock()

    @property
    def cfg(self):
        return getattr(self.inner, "cfg", None)

    def __call__(self, x, sweep, tag="initial"):
        x = x if isinstance(x, DesignVector) else DesignVector(x)
        key = quantized_key(x, sweep)
        while True:
            with self._guard:
                rec = self.store.get(key)
                if rec is not None:
                    return rec.response
                waiter = self._inflight.get(key)
                if waiter is None:
                    self._inflight[key] = threading.Event()
                    break
            waiter.wait()
        try:
            response = self.inner(x, sweep, tag=tag)
            with self._guard:
                self.inner_calls += 1
            self.store.append(tag, key, x, response)
            return response
        finally:
            with self._guard:
                self._inflight.pop(key).set()

    evaluate = __call__


def cached(evaluator, store=None):
    return CachedEvaluator(evaluator, store)


class CacheOnlyEvaluator(Evaluator):
    """Inner evaluator for replay: any cache miss is an error."""

    def _simulate(self, x, sweep, cfg):
        raise EvaluatorFailure(f"design not present in the evaluation store: {x!r}")
