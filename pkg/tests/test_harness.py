import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gendiff.harness import (CRITERIA, REGISTRY_CLASSES, SUITES, ConfigError, ExperimentConfig, Report, Row,
                             registry, resolve_spec, run_acceptance)
from gendiff.measure import builtin_measure


class TestConfig:
    @given(x0=st.floats(0, 10), n=st.integers(100, 10 ** 6), seed=st.integers(0, 2 ** 31),
           sched=st.lists(st.floats(0.01, 100), min_size=1, max_size=5, unique=True))
    @settings(max_examples=50, deadline=None)
    def test_json_round_trip(self, x0, n, seed, sched):
        cfg = ExperimentConfig(spec="exp_decay", clock_schedule=sorted(sched), x0=x0, n_paths=n, seed=seed,
                               t_grid=[0.5, 1.0])
        back = ExperimentConfig.from_json(cfg.to_json())
        assert back == cfg
        assert back.to_json() == cfg.to_json()

    @pytest.mark.parametrize("kw", [{"n_paths": 10}, {"dt": 0.5}, {"clock_schedule": [1, 3, 2]},
                                    {"t_grid": [1.0, 0.5]}, {"x0": -1.0}])
    def test_validation(self, kw):
        with pytest.raises(ConfigError):
            ExperimentConfig(**kw)

    def test_bad_weight(self):
        with pytest.raises(ValueError):
            ExperimentConfig(weight="poly:3")

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"nope": 1})

    def test_bad_json(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_json("{")

    def test_inline_spec(self):
        cfg = ExperimentConfig(spec=builtin_measure("power_drift", c=1.0, nu=3.0).to_config())
        assert cfg.build_spec().boundary_class.value == "entrance"


class TestRegistry:
    def test_expected_classes(self):
        reg = registry()
        assert set(reg) == set(REGISTRY_CLASSES)
        for name, spec in reg.items():
            assert spec.boundary_class == REGISTRY_CLASSES[name], name

    def test_resolve_file(self, tmp_path):
        p = tmp_path / "s.json"
        p.write_text(json.dumps(builtin_measure("exp_decay", rate=2.0).to_config()))
        assert resolve_spec(str(p)).pi0 == pytest.approx(1.0, rel=1e-8)

    def test_resolve_unknown(self):
        with pytest.raises(ConfigError):
            resolve_spec("no_such_spec")


class TestReport:
    def test_serialization(self):
        rows = [Row(1, "a", 1.0, 0.0, 1.0, 0.0, True, ""), Row(2, "b", 2.0, 0.1, 1.0, 1.0, False, "x")]
        rep = Report("analytic", 0, rows, {})
        assert not rep.passed
        d = json.loads(rep.to_json(timing=False))
        assert d["suite"] == "analytic"
        assert rep.to_csv().splitlines()[0].startswith("criterion,")

    def test_suites(self):
        assert set(SUITES) == {"analytic", "mc-small", "full"}
        assert set(CRITERIA) == set(range(1, 12))

    def test_unknown_suite(self):
        with pytest.raises(ConfigError):
            run_acceptance("nope")

    def test_analytic_subset(self):
        rep = run_acceptance("analytic", criteria=[1, 9])
        assert rep.passed
        assert {r.criterion for r in rep.rows} == {1, 9}


class TestDeterminism:
    def test_byte_identical_reports(self):
        a = run_acceptance("mc-small", seed=4, criteria=[8, 11])
        b = run_acceptance("mc-small", seed=4, criteria=[8, 11])
        assert a.to_json(timing=False) == b.to_json(timing=False)
        assert a.to_csv() == b.to_csv()

    def test_thread_env(self, monkeypatch):
        from gendiff.pathsim import default_threads
        monkeypatch.setenv("GENDIFF_THREADS", "3")
        assert default_threads() == 3
