import math
import sys
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freeform_antenna.errors import EvaluatorFailure, InconsistentGeometry, MalformedResponse, StoreCorrupt
from freeform_antenna.evaluators import (
    CachedEvaluator,
    CacheOnlyEvaluator,
    EvaluationStore,
    ExternalEvaluator,
    FrequencySweep,
    ReflectionResponse,
    SyntheticEvaluator,
    SyntheticModelParams,
    parse_response_csv,
    quantized_key,
    request_text,
    synthetic_levels,
    synthetic_quantities,
)
from freeform_antenna.geometry import DesignVector, GeometryConfig, random_design, template_bounds

from .conftest import ConstantEvaluator, regular_design


def regular_oracle_levels(freqs, L, C, rho, params, eps_r=2.55):
    """Closed form for a regular L-gon fed at its centre (u = 0)."""
    R = C * rho
    perimeter = 2 * L * R * math.sin(math.pi / L)
    out = []
    for f in freqs:
        prod = 1.0
        for nu, q, mu in zip(params.mode_scales, params.quality_factors, params.coupling_centers):
            fk = nu * 299.792458 / (perimeter * math.sqrt(eps_r))
            c = 2 * math.exp(-(mu / params.coupling_width) ** 2)
            t = 2 * q * (f - fk) / fk
            prod *= math.sqrt(((1 - c) ** 2 + t ** 2) / ((1 + c) ** 2 + t ** 2))
        out.append(max(20 * math.log10(prod), params.floor_db))
    return np.array(out)


def test_sweep_grid():
    s = FrequencySweep()
    assert s.freqs[0] == 5.0 and s.freqs[-1] == 8.0 and s.freqs.size == 301
    assert s.step == pytest.approx(0.01)


def test_synthetic_matches_closed_form(sweep):
    p = SyntheticModelParams.desk()
    x = regular_design(L=8, C=30, rho=0.6, phi=0.5)
    r = SyntheticEvaluator(p)(x, sweep)
    np.testing.assert_allclose(r.levels_db, regular_oracle_levels(sweep.freqs, 8, 30, 0.6, p), atol=1e-10)


def test_synthetic_default_closed_form():
    p = SyntheticModelParams()
    sw = FrequencySweep(4.0, 9.0, 51)
    x = regular_design(L=25, C=30, rho=0.6, phi=0.3)
    r = SyntheticEvaluator(p)(x, sw)
    np.testing.assert_allclose(r.levels_db, regular_oracle_levels(sw.freqs, 25, 30, 0.6, p), atol=1e-10)


def test_synthetic_determinism_and_range(sweep):
    ev = SyntheticEvaluator(SyntheticModelParams.desk())
    cfg = GeometryConfig(L=8)
    for n in range(20):
        x = random_design(template_bounds(8), n, cfg, feed_within_patch=True)
        a, b = ev(x, sweep), ev(x, sweep)
        assert a == b
        assert np.all(a.levels_db <= 0) and np.all(a.levels_db >= -60)


def test_inconsistent_design_rejected_before_simulation(sweep):
    ev = ConstantEvaluator(-5.0)
    with pytest.raises(InconsistentGeometry) as info:
        ev(regular_design(L=4, rho=0.5, rho_f=0.85, phi_f=0.3), sweep)
    assert "FeedOutside" in info.value.report.reasons
    assert ev.calls == 0


def test_response_validation(sweep):
    with pytest.raises(MalformedResponse):
        ReflectionResponse(sweep, np.zeros(300))
    with pytest.raises(MalformedResponse):
        ReflectionResponse(sweep, np.full(301, 0.5))
    with pytest.raises(MalformedResponse):
        ReflectionResponse(sweep, np.full(301, np.nan))


def test_response_csv_round_trip(sweep):
    r = ReflectionResponse(sweep, -np.linspace(1, 20, 301) / 3)
    assert parse_response_csv(r.to_csv(), sweep) == r
    bad = r.to_csv().replace("5.0,", "5.5,", 1)
    with pytest.raises(MalformedResponse):
        parse_response_csv(bad, sweep)


STUB = r'''
import sys
from pathlib import Path
import numpy as np
from freeform_antenna.evaluators import FrequencySweep, SyntheticEvaluator, SyntheticModelParams
from freeform_antenna.geometry import DesignVector
mode = {mode!r}
req = Path(sys.argv[1])
lines = req.read_text().splitlines()
_, f0, f1, n = lines[0].split(",")
x = DesignVector.from_line(lines[1].split(",", 1)[1])
sw = FrequencySweep(float(f0), float(f1), int(n))
if mode == "fail":
    print("solver licence unavailable")
    sys.exit(3)
r = SyntheticEvaluator(SyntheticModelParams.desk())(x, sw)
text = r.to_csv()
if mode == "short":
    text = "\n".join(text.splitlines()[:-5]) + "\n"
if mode != "silent":
    (req.parent / "response.csv").write_text(text)
'''


def stub(tmp_path, mode):
    path = tmp_path / f"stub_{mode}.py"
    path.write_text(STUB.format(mode=mode))
    return [sys.executable, str(path)]


def test_external_matches_in_process(tmp_path, sweep):
    x = regular_design(L=8, rho=0.6, rho_f=0.05, phi_f=1.0)
    ext = ExternalEvaluator(stub(tmp_path, "ok"))(x, sweep)
    assert ext == SyntheticEvaluator(SyntheticModelParams.desk())(x, sweep)


def test_external_failure_carries_status_and_output(tmp_path, sweep):
    with pytest.raises(EvaluatorFailure) as info:
        ExternalEvaluator(stub(tmp_path, "fail"))(regular_design(), sweep)
    assert info.value.returncode == 3
    assert "licence" in info.value.output


@pytest.mark.parametrize("mode", ["short", "silent"])
def test_external_malformed(tmp_path, sweep, mode):
    with pytest.raises(MalformedResponse):
        ExternalEvaluator(stub(tmp_path, mode))(regular_design(), sweep)


def test_request_layout(sweep):
    x = regular_design(L=4)
    text = request_text(x, sweep, GeometryConfig(L=4))
    lines = text.splitlines()
    assert lines[0] == "sweep,5.0,8.0,301"
    assert lines[1] == "design," + x.to_line()
    assert lines[2] == "x_mm,y_mm"


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=5, max_size=5), st.floats(-1, 1))
def test_quantized_key_tolerates_tiny_noise(vals, eps):
    sw = FrequencySweep()
    x = np.array(vals)
    y = x * (1 + eps * 1e-15)
    k1, k2 = quantized_key(x, sw), quantized_key(y, sw)
    # 12 significant digits: relative noise of 1e-15 only matters right at a rounding edge
    if k1 != k2:
        assert np.allclose(x, y, rtol=1e-14)


def test_quantized_key_separates_sweeps():
    x = np.ones(5)
    assert quantized_key(x, FrequencySweep()) != quantized_key(x, FrequencySweep(5.0, 8.0, 151))
    assert quantized_key(np.zeros(5), FrequencySweep()) == quantized_key(-np.zeros(5), FrequencySweep())


def test_cache_hits_do_not_reinvoke(tmp_path, sweep):
    inner = ConstantEvaluator(-3.0)
    ev = CachedEvaluator(inner, EvaluationStore(tmp_path))
    x = regular_design()
    a = ev(x, sweep, tag="screen")
    b = ev(x, sweep, tag="candidate")
    assert a == b and inner.calls == 1 and ev.inner_calls == 1
    assert ev.store.counts()["screen"] == 1 and ev.store.counts()["candidate"] == 0


def test_store_reload_and_replay(tmp_path, sweep):
    ev = CachedEvaluator(SyntheticEvaluator(SyntheticModelParams.desk()), EvaluationStore(tmp_path))
    xs = [random_design(template_bounds(8), n, GeometryConfig(L=8), feed_within_patch=True) for n in range(5)]
    first = [ev(x, sweep, tag="screen") for x in xs]
    replay = CachedEvaluator(CacheOnlyEvaluator(), EvaluationStore(tmp_path))
    assert [replay(x, sweep) for x in xs] == first
    assert replay.inner_calls == 0
    with pytest.raises(EvaluatorFailure):
        replay(regular_design(L=8, rho=0.7), sweep)


def test_truncated_trailing_record_dropped(tmp_path, sweep):
    ev = CachedEvaluator(ConstantEvaluator(-2.0), EvaluationStore(tmp_path))
    ev(regular_design(rho=0.5), sweep)
    ev(regular_design(rho=0.6), sweep)
    path = tmp_path / "evaluations.tsv"
    raw = path.read_bytes()
    path.write_bytes(raw[:-40])
    store = EvaluationStore(tmp_path)
    assert len(store) == 1
    assert path.read_bytes() == raw[: raw.index(b"\n") + 1]
    # appending after recovery keeps the file readable
    CachedEvaluator(ConstantEvaluator(-2.0), store)(regular_design(rho=0.7), sweep)
    assert len(EvaluationStore(tmp_path)) == 2


def test_corruption_before_tail_raises(tmp_path, sweep):
    ev = CachedEvaluator(ConstantEvaluator(-2.0), EvaluationStore(tmp_path))
    for rho in (0.5, 0.6, 0.7):
        ev(regular_design(rho=rho), sweep)
    path = tmp_path / "evaluations.tsv"
    lines = path.read_text().splitlines(keepends=True)
    lines[0] = lines[0].replace("-2.0", "-2.5", 1)
    path.write_text("".join(lines))
    with pytest.raises(StoreCorrupt):
        EvaluationStore(tmp_path)


class SlowEvaluator(ConstantEvaluator):
    def _simulate(self, x, sweep, cfg):
        time.sleep(0.05)
        return super()._simulate(x, sweep, cfg)


def test_concurrent_requests_share_one_call(tmp_path, sweep):
    inner = SlowEvaluator(-4.0)
    ev = CachedEvaluator(inner, EvaluationStore(tmp_path))
    x = regular_design()
    out = []
    threads = [threading.Thread(target=lambda: out.append(ev(x, sweep))) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert inner.calls == 1 and len(out) == 8
    assert len(EvaluationStore(tmp_path)) == 1


def test_failed_call_not_cached(tmp_path, sweep):
    class Flaky(ConstantEvaluator):
        def _simulate(self, x, sweep, cfg):
            self.calls += 1
            if self.calls == 1:
                raise EvaluatorFailure("transient")
            return ReflectionResponse(sweep, np.full(sweep.points, -1.0))

    ev = CachedEvaluator(Flaky(0.0), EvaluationStore(tmp_path))
    with pytest.raises(EvaluatorFailure):
        ev(regular_design(), sweep)
    assert len(ev.store) == 0
    assert ev(regular_design(), sweep).levels_db[0] == -1.0


def test_critical_coupling_hits_floor():
    f = np.array([6.0])
    lv = synthetic_levels(f, np.array([6.0, 20.0, 40.0]), np.array([1.0, 0.5, 0.5]), (20, 40, 60), -60.0)
    assert lv[0] == -60.0


def test_uncoupled_limit_is_total_reflection(sweep):
    lv = synthetic_levels(sweep.freqs, np.array([6.0, 6.5, 7.0]), np.full(3, 1e-9), (20, 40, 60), -60.0)
    np.testing.assert_allclose(lv, 0.0, atol=1e-6)


def test_first_resonance_hand_value():
    # square with perimeter 100 mm: 4 * sqrt(2) * R = 100
    R = 100 / (4 * math.sqrt(2))
    x = regular_design(L=4, C=30.0, rho=R / 30.0, phi=1.0)
    f_res, _, p_eff, u = synthetic_quantities(x, SyntheticModelParams(mode_scales=(1.0, 1.55, 2.1),
                                                                        quality_factors=(20, 40, 60)),
                                              GeometryConfig(L=4))
    assert p_eff == pytest.approx(100.0, rel=1e-12)
    assert u == pytest.approx(0.0, abs=1e-12)
    assert f_res[0] == pytest.approx(1.8774, abs=1e-4)


def test_larger_outline_lowers_every_resonance():
    cfg = GeometryConfig(L=8)
    p = SyntheticModelParams.desk()
    for n in range(20):
        x = random_design(template_bounds(8), n, cfg, feed_within_patch=True)
        v = x.values.copy()
        v[3:11] *= 1.05
        f0, *_ = synthetic_quantities(x, p, cfg)
        f1, *_ = synthetic_quantities(DesignVector(v), p, cfg)
        assert np.all(f1 < f0)


def test_levels_smooth_in_design(sweep):
    p = SyntheticModelParams.desk()
    x = regular_design(L=8, rho=0.6, rho_f=0.1, phi_f=0.4)
    ev = SyntheticEvaluator(p)
    j = 150
    est = []
    for h in (1e-2, 5e-3, 2.5e-3):
        e = np.zeros(x.D)
        e[0] = h
        up = ev(DesignVector(x.values + e), sweep).levels_db[j]
        dn = ev(DesignVector(x.values - e), sweep).levels_db[j]
        est.append((up - dn) / (2 * h))
    # successive estimates settle: each gap at most half the previous one
    assert abs(est[2] - est[1]) <= 0.5 * abs(est[1] - est[0]) + 1e-12


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_cache_is_transparent(seed):
    sw = FrequencySweep()
    ev = SyntheticEvaluator(SyntheticModelParams.desk())
    x = random_design(template_bounds(8), seed, GeometryConfig(L=8), feed_within_patch=True)
    c = CachedEvaluator(ev, EvaluationStore())
    a = c(x, sw)
    assert a.levels_db.tobytes() == ev(x, sw).levels_db.tobytes()
    assert c(x, sw).levels_db.tobytes() == a.levels_db.tobytes()


def test_thirteenth_digit_shares_entry(sweep):
    inner = ConstantEvaluator(-2.0)
    ev = CachedEvaluator(inner, EvaluationStore())
    x = regular_design(C=30.0)
    v = x.values.copy()
    v[0] = 30.000000000001  # differs at the 13th significant digit
    ev(x, sweep)
    ev(DesignVector(v), sweep)
    assert inner.calls == 1 and len(ev.store) == 1


def test_restart_continues_sequence_and_counts_distinct(tmp_path, sweep):
    ev = CachedEvaluator(ConstantEvaluator(-2.0), EvaluationStore(tmp_path))
    designs = [regular_design(rho=r) for r in (0.5, 0.6, 0.5, 0.7, 0.6)]
    for x in designs:
        ev(x, sweep)
    assert len(ev.store) == 3
    again = CachedEvaluator(ConstantEvaluator(-2.0), EvaluationStore(tmp_path))
    again(regular_design(rho=0.8), sweep)
    assert [r.sequence for r in EvaluationStore(tmp_path).records] == [0, 1, 2, 3]
