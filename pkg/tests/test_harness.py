import json

import pytest

from chorinfd.errors import AlignmentError, ConfigError
from chorinfd.harness import StudyPlan, dyadic_tau, ledger_audit, loglog_slope, run_study
from chorinfd.stepper import RunConfig, RunLedger, run

from conftest import acceptance_config


def test_dyadic_tau():
    assert dyadic_tau(1.0 / 16, 2.0, 0.25) == 1.0 / 16
    assert dyadic_tau(0.1, 2.0, 0.25) == 0.125
    assert dyadic_tau(1.0 / 16, 1.0, 0.25) == 1.0 / 256
    with pytest.raises(ConfigError):
        dyadic_tau(0.5, 2.0, 0.25)


def test_loglog_slope():
    hs = [0.25, 0.125, 0.0625]
    assert loglog_slope(hs, [h**2 for h in hs]) == pytest.approx(2.0)
    assert loglog_slope(hs, [1.0, 0.0, 1.0]) is None


def test_plan_validation():
    base = acceptance_config()
    with pytest.raises(ConfigError, match=r"\(0, 2\]"):
        StudyPlan(base, [1 / 8, 1 / 16], alpha=3.0).validate()
    with pytest.raises(AlignmentError):
        StudyPlan(base, [1 / 8, 1 / 12]).validate()
    with pytest.raises(ConfigError, match="scaling"):
        StudyPlan(base, [1 / 8, 1 / 16], taus=[1 / 8, 1 / 32]).validate()
    with pytest.raises(AlignmentError):
        StudyPlan(base, [1 / 8, 1 / 16], taus=[0.15, 0.15]).validate()
    with pytest.raises(ConfigError):
        StudyPlan(base, [1 / 8]).validate()
    with pytest.raises(ConfigError):
        StudyPlan(base, [1 / 8, 1 / 16], diagnostics=["spectrum"]).validate()


def test_plan_configs():
    cfgs = StudyPlan(acceptance_config(output_dir="x"), [1 / 8, 1 / 16, 1 / 32]).configs()
    assert [c.tau for c in cfgs] == [0.125, 0.0625, 0.03125]
    assert all(c.output_dir is None for c in cfgs)


def test_identical_levels_have_zero_distance():
    plan = StudyPlan(acceptance_config(), [1 / 16, 1 / 16], diagnostics=["distance", "op_norm"], dictionary=["core_e1"])
    rep = run_study(plan, cache={})
    assert rep.pairs[0]["distance"] == 0.0
    assert rep.pairs[0]["op_norm"] == 0.0


def test_zero_data_study():
    base = RunConfig(h=1 / 8, T=0.25, alpha=2.0)
    plan = StudyPlan(base, [1 / 8, 1 / 16], dictionary=["core_e1", "quarter_a"])
    rep = run_study(plan, cache={})
    assert all(p["distance"] == 0.0 and p["op_norm"] == 0.0 for p in rep.pairs)
    for lv in rep.levels:
        assert lv["triple_integral"] == 0.0
        assert all(w["total"] == 0.0 for w in lv["weak"].values())
        assert lv["max_divergence_lhs"] == 0.0
    assert rep.checks["triple_bounded"]
    assert rep.trends["distance_slope"] is None


@pytest.fixture(scope="module")
def small_study():
    plan = StudyPlan(acceptance_config(), [1 / 8, 1 / 16], dictionary=["core_e1", "core_aniso"])
    return plan, run_study(plan, cache={})


def test_study_report_contents(small_study):
    _, rep = small_study
    lv8, lv16 = rep.levels
    assert lv8["n_interior"] == 1 and lv16["n_interior"] == 729
    assert lv8["admissible"] == {"core_e1": False, "core_aniso": False}
    assert lv16["admissible"] == {"core_e1": True, "core_aniso": True}
    assert rep.checks["triple_bounded"]
    assert rep.checks["divergence_bound_holds"]
    assert rep.pairs[0]["distance"] > 0


def test_study_report_deterministic(small_study, tmp_path):
    plan, rep = small_study
    again = run_study(plan, cache={})
    assert rep.to_json() == again.to_json()
    out = rep.write(tmp_path)
    data = json.loads((out / "study.json").read_text())
    assert data["plan"]["levels"] == [0.125, 0.0625]
    assert "timing" not in data
    assert (out / "levels.csv").read_text().count("\n") == 3
    assert (out / "weak.csv").read_text().splitlines()[0] == "name,h,r1,r2,r3,r4,r5,total"


def test_parallel_matches_serial(small_study):
    plan, rep = small_study
    par = run_study(plan, cache={}, workers=2)
    assert par.to_json() == rep.to_json()


def test_audit_passes_on_real_runs(acceptance_run):
    rep = ledger_audit(acceptance_run.ledger)
    assert rep.ok, rep.to_dict()
    assert rep.max_violation <= 0.0
    assert ledger_audit(run(RunConfig(h=1 / 16, T=0.25, alpha=2.0)).ledger).ok


def _copy(ledger, tmp_path):
    ledger.to_csv(tmp_path / "l.csv")
    return RunLedger.from_csv(tmp_path / "l.csv")


def test_audit_flags_tampered_norm(acceptance_run, tmp_path):
    led = _copy(acceptance_run.ledger, tmp_path)
    r = led.rows[2]
    r["norm_u_half"] = 2.0 * (r["norm_u"] + led.meta["tau"] * r["norm_f"])
    rep = ledger_audit(led)
    assert not rep.ok
    assert (2, "step") in rep.flagged


def test_audit_flags_broken_chain(acceptance_run, tmp_path):
    led = _copy(acceptance_run.ledger, tmp_path)
    led.rows[1]["norm_u"] *= 0.5
    rep = ledger_audit(led)
    assert (1, "norm_u differs from previous norm_u_next") in rep.flagged
    led = _copy(acceptance_run.ledger, tmp_path)
    del led.rows[1]
    assert (2, "steps not consecutive") in ledger_audit(led).flagged


def test_audit_partial_ledger(acceptance_run, tmp_path):
    led = _copy(acceptance_run.ledger, tmp_path)
    del led.rows[:2]
    rep = ledger_audit(led)
    assert rep.ok
    assert any("cumulative checks skipped" in n for n in rep.notes)
