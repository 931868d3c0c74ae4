import numpy as np
import pytest

from batdeg.cell import (CellHistory, CellParams, CellState, ChargeSpec, read_history, run_cycle, run_life,
                         write_history)
from batdeg.pipeline.labels import KneeConfig, LifeLabelConfig, cycle_life, knee_label, nominal_capacity
from batdeg.protocol import GaussianHmm, constant_protocol, generate_protocol


def _trapz(y, t):
    return float(np.sum(np.diff(t) * (y[1:] + y[:-1]) / 2))


def _power_model():
    return GaussianHmm([[0.8, 0.2, 0.0], [0.1, 0.8, 0.1], [0.0, 0.3, 0.7]],
                       [0.0, 6.0, 14.0], [0.01, 2.0, 4.0], [0.3, 0.4, 0.3])


def test_ideal_cell_constant_power_energy():
    params = CellParams(r0=0.0, r_growth=0.0, fade_per_cycle=0.0)
    rec = run_cycle(CellState(params), constant_protocol(7.0, 3600.0), dt=1.0)
    assert rec.discharge_energy == pytest.approx(7.0, rel=1e-12)
    assert rec.discharge.t[-1] == pytest.approx(3600.0)


def test_zero_power_step_holds_charge():
    params = CellParams(r0=0.05)
    state = CellState(params)
    rec = run_cycle(state, constant_protocol(0.0, 600.0), dt=1.0)
    d = rec.discharge
    assert np.all(d.I == 0)
    assert np.all(d.Q == 0)
    assert np.allclose(d.V, d.V[0])


def test_randomized_protocol_cuts_off_earlier_than_constant():
    aged = CellParams(r0=0.08, r_growth=0.02, fade_per_cycle=1e-3)
    model = _power_model()
    spec = generate_protocol(model, seed=3, duration=21600, step=140)
    const = constant_protocol(spec.mean_power, 21600)
    qs = []
    for proto in (spec, const):
        st = CellState(aged)
        st.cycle = 200
        qs.append(run_cycle(st, proto, dt=1.0).discharge_capacity)
    assert qs[0] < qs[1]


def _cycle_checks(rec, params):
    for ph in (rec.discharge, rec.charge):
        assert np.all(np.diff(ph.t) > 0)
        assert np.all(np.diff(ph.Q) >= 0)
        assert ph.V.min() >= params.v_min - 0.05 and ph.V.max() <= params.v_max + 0.05
        e = _trapz(np.abs(ph.W), ph.t) / 3600
        q = _trapz(np.abs(ph.I), ph.t) / 3600
        assert ph.E[-1] == pytest.approx(e, rel=1e-3)
        assert ph.Q[-1] == pytest.approx(q, rel=1e-3)


def test_energy_coulomb_and_voltage_invariants():
    params = CellParams(seed=1)
    model = _power_model()
    protos = [generate_protocol(model, s, 21600, 140) for s in range(5)]
    h = run_life(params, protos, max_cycles=5, dt=2.0)
    assert [c.cycle_index for c in h.cycles] == [1, 2, 3, 4, 5]
    for rec in h.cycles:
        _cycle_checks(rec, params)


def test_steps_match_protocol_when_no_cutoff():
    spec = generate_protocol(_power_model(), seed=9, duration=1800, step=140)
    rec = run_cycle(CellState(CellParams()), spec, dt=1.0)
    assert rec.n_steps == len(spec.steps)


@pytest.mark.parametrize("r0,cycle", [(0.05, 0), (0.05, 600), (0.1, 600)])
def test_default_charge_within_an_hour(r0, cycle):
    st = CellState(CellParams(r0=r0))
    st.cycle = cycle
    rec = run_cycle(st, constant_protocol(7.0, 21600), ChargeSpec(), dt=1.0)
    assert rec.charge.t[-1] <= 3600
    assert rec.charge.V.max() <= 4.2 + 1e-9
    assert rec.charge_capacity == pytest.approx(rec.discharge_capacity, rel=0.03)


def test_no_fade_capacity_constant():
    params = CellParams(fade_per_cycle=0.0, r_growth=0.0)
    h = run_life(params, [constant_protocol(7.0, 21600)] * 30, max_cycles=30, dt=5.0, keep_traces=0)
    q = h.discharge_capacities()
    assert np.ptp(q) / q.mean() < 0.005


def test_determinism():
    model = _power_model()
    protos = [generate_protocol(model, s, 21600, 140) for s in range(3)]
    a = run_life(CellParams(seed=4), protos, max_cycles=3, dt=5.0)
    b = run_life(CellParams(seed=4), protos, max_cycles=3, dt=5.0)
    for ra, rb in zip(a.cycles, b.cycles):
        for f in ("t", "V", "I", "Q", "E", "W"):
            np.testing.assert_array_equal(getattr(ra.discharge, f), getattr(rb.discharge, f))


def _life_run(**kw):
    params = CellParams(**kw)
    return run_life(params, iter(lambda: constant_protocol(7.0, 21600), None), max_cycles=400,
                    dt=10.0, keep_traces=0)


def test_knee_cell_is_labelled_knee():
    h = _life_run(fade_per_cycle=5e-4, knee_cycle=100, knee_fade_multiplier=6.0)
    assert knee_label(h, KneeConfig(mode="max_slope_change")).knee
    assert knee_label(h, KneeConfig(mode="max_slope")).knee


def test_cold_cell_reaches_eol_sooner():
    cold = _life_run(fade_per_cycle=1e-3, temperature=-10.0, low_temp_penalty=0.02)
    warm = _life_run(fade_per_cycle=1e-3, temperature=30.0, low_temp_penalty=0.02)
    lc, lw = cycle_life(cold), cycle_life(warm)
    assert not lc.censored
    assert lw.censored or lc.life < lw.life
    assert nominal_capacity(cold) < nominal_capacity(warm)


def test_history_stops_below_half_capacity():
    h = _life_run(fade_per_cycle=5e-3)
    assert h.end_reason == "reached_eol"
    assert h.cycles[-1].discharge_capacity < 0.5 * 2.2


def test_protocol_exhausted():
    h = run_life(CellParams(), [constant_protocol(7.0, 21600)] * 2, max_cycles=5, dt=10.0)
    assert h.end_reason == "protocol_exhausted" and len(h.cycles) == 2


def test_history_roundtrip(tmp_path):
    model = _power_model()
    h = run_life(CellParams(seed=2), [generate_protocol(model, s, 21600, 140) for s in range(3)],
                 max_cycles=3, dt=5.0, keep_traces=2, cell_id="c7")
    write_history(h, tmp_path)
    back = read_history(tmp_path / "c7.jsonl")
    assert back.cell_id == "c7" and back.end_reason == h.end_reason
    assert back.params == h.params
    np.testing.assert_array_equal(back.discharge_capacities(), h.discharge_capacities())
    np.testing.assert_array_equal(back.cycles[0].charge.V, h.cycles[0].charge.V)
    assert back.cycles[2].discharge is None


def test_invalid_params():
    with pytest.raises(ValueError):
        CellParams(v_min=4.3)
    with pytest.raises(ValueError):
        CellParams(ocv_v=(3.0,) * 21)
