import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from glowrecon.config import from_dict
from glowrecon.globconv import InversionConfig, prepare_data, truncate
from glowrecon.pipeline import invert, preprocess, run_all, simulate


@pytest.fixture(scope="module")
def homogeneous():
    return run_all(from_dict({"preset": "mini"}), with_stage_two=False)


@given(arrays(float, 20, elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_truncate_range(a):
    out = truncate(a)
    assert np.all((out >= 1.0) & (out <= 15.0))


def test_truncate_examples():
    out = truncate(np.array([0.5, 3.0, 20.0, np.nan, -np.inf, np.inf]))
    assert out.tolist() == [1.0, 3.0, 15.0, 1.0, 1.0, 15.0]


@pytest.mark.parametrize("kw", [{"tail_at": "middle"}, {"i_max": 0}, {"mu": 0.0}, {"eta": -1.0}])
def test_config_rejects(kw):
    with pytest.raises(ValueError):
        InversionConfig(**kw)


def test_homogeneous_scattered_is_zero(homogeneous):
    assert np.abs(homogeneous.prepared.scattered.values).max() <= 1e-12


def test_homogeneous_returns_one(homogeneous):
    res = homogeneous.inversion.result
    assert np.abs(res.eps - 1.0).max() <= 0.1
    assert res.selection.cls == "dielectric"


def test_norm_histories_consistent(homogeneous):
    res = homogeneous.inversion.result
    h = res.history
    assert len(h.first) == len(h.final) == len(res.schedule) == len(res.snapshots)
    assert all(len(b) == k for b, k in zip(h.B, res.schedule))
    assert all(d[0] == f for d, f in zip(h.D, h.first))


def test_report_is_json_and_has_no_timings(homogeneous):
    rep = homogeneous.inversion.result.report()
    text = json.dumps(rep)
    assert "seconds" not in text
    assert {"eps_comp", "n_comp", "class", "selection", "schedule"} <= set(rep)


def test_replay_reproduces_schedule(homogeneous):
    inv = homogeneous.inversion
    replay = inv.recon.run(schedule=list(inv.result.schedule))
    assert replay.schedule == inv.result.schedule
    assert replay.selection.rule == "replay"


def test_data_plane_must_be_gamma(homogeneous):
    cfg = from_dict({"preset": "mini"})
    g = homogeneous.prepared.g
    with pytest.raises(ValueError):
        prepare_data(cfg.inversion_grid(), g.with_values(g.values, coord=0.0), cfg.inversion())


def test_repeat_is_bitwise_identical():
    cfg = from_dict({"preset": "mini", "ladder": {"s_min": 9.8}})
    sim = simulate(cfg)
    g = preprocess(cfg, sim).g
    a = invert(cfg, g).result
    b = invert(cfg, g).result
    assert np.array_equal(a.eps, b.eps)
    assert json.dumps(a.report()) == json.dumps(b.report())


def test_tail_at_s_bar_runs():
    cfg = from_dict({"preset": "mini", "ladder": {"s_min": 9.8}, "tail_at": "s_bar"})
    res = run_all(cfg, with_stage_two=False).inversion.result
    assert np.abs(res.eps - 1.0).max() <= 0.1


def test_exact_tail_recovers_block():
    # with the true tail the layer-stripping step itself returns the block value
    from glowrecon.fem import recover_epsilon, solve_q_equation
    from glowrecon.laplace import compute_v_q
    from glowrecon.phantom import rasterize

    cfg = from_dict({"preset": "mini", "ladder": {"s_min": 9.8},
                     "phantom": {"shapes": [{"kind": "box", "center": [0, 0, -0.02], "size": [0.06, 0.06, 0.04],
                                             "eps": 4.45}]}})
    rc = invert(cfg, preprocess(cfg, simulate(cfg)).g).recon
    fem, s, h = rc.fem, rc.s, rc.h
    true = rasterize(cfg.phantom, rc.grid).omega_values
    lap = rc.forward(true, s)
    v, _ = compute_v_q(np.stack([lap[float(x)] for x in s]), s)
    V = v[0]
    c = rc.coeffs[0]
    q1 = solve_q_equation(fem, np.zeros((fem.conn.shape[0], 8, 3)), fem.grad_at_qp(V), c.A1, c.A2,
                          rc.data.boundary.psi_n[0])
    v1 = -h * q1 + V
    assert np.abs(v1 - v[1]).max() < 2e-5
    eps = recover_epsilon(fem, np.exp(s[1] ** 2 * (v1 - v1.max())), s[1])
    assert eps.max() == pytest.approx(4.45, rel=0.05)


def test_homogeneous_s_bar_tail_does_not_drift(monkeypatch):
    import glowrecon.globconv as gc

    cfg = from_dict({"preset": "mini", "ladder": {"s_min": 9.0}, "tail_at": "s_bar"})
    select = gc.classify_and_select
    # suppress early selection so every interval runs
    monkeypatch.setattr(gc, "classify_and_select",
                        lambda hist, *a, **k: None if len(hist.first) < cfg.ladder.N else select(hist, *a, **k))
    inv = invert(cfg, preprocess(cfg, simulate(cfg)).g)
    res = inv.recon.run()
    assert max(r.max_eps for r in res.records) < 1.01


@pytest.mark.xfail(strict=True, reason="harmonic first tail carries almost no contrast; see decisions ledger")
def test_block_first_interval_bracket():
    cfg = from_dict({"preset": "mini", "ladder": {"s_min": 9.9},
                     "phantom": {"shapes": [{"kind": "box", "center": [0, 0, -0.02], "size": [0.06, 0.06, 0.04],
                                             "eps": 4.0}]}})
    res = run_all(cfg, with_stage_two=False).inversion.result
    first = [r.max_eps for r in res.records if r.n == 1]
    assert 2.0 <= first[-1] <= 6.0
