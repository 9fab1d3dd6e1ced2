import json

import numpy as np
import pytest

import certnn.pipeline as pipeline
from certnn.loop_transform import RecoveryMode
from certnn.model import Activation, Network, forward
from certnn.pipeline import (ProblemSpec, SoundnessError, StageError, learn, monte_carlo,
                             verify)
from certnn.sets import Ellipsoid, Role, contains, sample
from certnn.solver import SolveOptions

from conftest import unit_ball


@pytest.fixture(scope="module")
def fig2_report():
    return learn(ProblemSpec.load("fig2"))


class TestProblemSpec:
    @pytest.mark.parametrize("name,pairs,n1", [("fig2", 2, 10), ("fig3", 3, 5)])
    def test_fixtures(self, name, pairs, n1):
        spec = ProblemSpec.load(name)
        assert len(spec.pairs) == pairs and spec.shape == (2, n1, 2)
        assert spec.activation is Activation.TANH

    def test_round_trip_from_file(self, tmp_path):
        data = {"shape": {"nx": 1, "n1": 2, "ny": 1}, "mode": "residual",
                "pairs": [{"input": {"A": [[1.0]], "b": [0.0]},
                           "output": {"C": [[0.5]], "d": [0.0]}}],
                "solver": {"max_iters": 100}}
        path = tmp_path / "p.json"
        path.write_text(json.dumps(data))
        spec = ProblemSpec.load(path)
        assert spec.mode is RecoveryMode.RESIDUAL and spec.solver.max_iters == 100

    @pytest.mark.parametrize("data", [
        {"pairs": []},
        {"shape": {"nx": 2, "n1": 2, "ny": 1},
         "pairs": [{"input": {"A": [[1.0]], "b": [0.0]}, "output": {"C": [[1.0]], "d": [0.0]}}]},
        {"shape": {"nx": 1, "n1": 2, "ny": 1}, "pairs": [{"input": {"A": [[1.0]]}}]},
    ])
    def test_malformed(self, tmp_path, data):
        path = tmp_path / "p.json"
        path.write_text(json.dumps(data))
        with pytest.raises(ValueError):
            ProblemSpec.load(path)

    def test_unknown_source(self):
        with pytest.raises(FileNotFoundError):
            ProblemSpec.load("no-such-problem")

    def test_invalid_json(self, tmp_path):
        path = tmp_path / "p.json"
        path.write_text("{")
        with pytest.raises(ValueError, match="JSON"):
            ProblemSpec.load(path)


class TestLearn:
    def test_fig2(self, fig2_report):
        rep = fig2_report
        assert rep.verdict == "feasible" and rep.margin >= 1e-6
        assert rep.certificate_ok
        assert rep.violations == [0, 0] and rep.samples == 500
        assert max(rep.schur_residuals) <= 1e-8
        assert rep.cross_check == ["certified", "certified"]
        assert rep.network.skip is None

    def test_learned_net_maps_sets(self, fig2_report):
        spec = ProblemSpec.load("fig2")
        for inE, outE in spec.pairs:
            y = forward(fig2_report.network, sample(inE, 20000, 11))
            assert contains(outE, y).all()

    def test_report_serializes(self, fig2_report):
        data = json.loads(json.dumps(fig2_report.to_dict()))
        assert data["monte_carlo"]["violations"] == [0, 0]
        assert set(fig2_report.timings) >= {"build", "solve", "recover", "total"}

    def test_fig3(self):
        rep = learn(ProblemSpec.load("fig3"))
        assert rep.ok and rep.violations == [0, 0, 0]

    def test_residual_mode(self):
        spec = ProblemSpec.load("fig2")
        rep = learn(ProblemSpec(spec.pairs, spec.shape, mode=RecoveryMode.RESIDUAL))
        assert rep.ok and rep.network.skip is not None
        assert rep.violations == [0, 0]

    def test_deterministic(self):
        spec = ProblemSpec.load("fig2")
        a, b = learn(spec, cross_check=False), learn(spec, cross_check=False)
        assert json.dumps(a.network.to_dict()) == json.dumps(b.network.to_dict())

    def test_disjoint_outputs_exhaust_budget(self):
        # strict mode always admits a constant net, so disjoint output sets defeat it
        pairs = ((unit_ball(2, center=[-3, 0]), unit_ball(2, Role.OUTPUT, 0.5, [-2, 0])),
                 (unit_ball(2, center=[3, 0]), unit_ball(2, Role.OUTPUT, 0.5, [2, 0])))
        spec = ProblemSpec(pairs, (2, 4, 2), solver=SolveOptions(max_iters=300))
        rep = learn(spec)
        assert rep.verdict == "budget_exhausted" and rep.network is None and not rep.ok

    def test_violation_raises_soundness_error(self, monkeypatch):
        monkeypatch.setattr(pipeline, "monte_carlo", lambda *a, **k: [0, 3])
        with pytest.raises(SoundnessError):
            learn(ProblemSpec.load("fig2"), cross_check=False)

    def test_stage_errors_are_tagged(self, monkeypatch):
        def boom(*args, **kwargs):
            raise np.linalg.LinAlgError("synthetic")
        monkeypatch.setattr(pipeline, "inverse_two_layer", boom)
        with pytest.raises(StageError) as info:
            learn(ProblemSpec.load("fig2"), cross_check=False)
        assert info.value.stage == "recover"


class TestVerify:
    def test_learned_net_is_certified(self, fig2_report):
        spec = ProblemSpec.load("fig2")
        rep = verify(fig2_report.network, spec.pairs, mc_samples=200)
        assert rep.verdict == "certified" and rep.violations == [0, 0]

    def test_scaled_net_is_unknown_with_witness(self, fig2_report):
        spec = ProblemSpec.load("fig2")
        (W0, b0), (W1, b1) = fig2_report.network.layers
        bad = Network(((W0, b0), (W1, b1 + 5.0)), Activation.TANH)
        rep = verify(bad, spec.pairs, SolveOptions(max_iters=500), mc_samples=500)
        assert rep.verdict == "unknown"
        assert sum(rep.violations) > 0

    def test_deep_net(self):
        layers = ((0.3 * np.eye(2), np.zeros(2)), (0.3 * np.eye(2), np.zeros(2)),
                  (0.3 * np.eye(2), np.zeros(2)))
        net = Network(layers)
        rep = verify(net, [(unit_ball(2), unit_ball(2, Role.OUTPUT))])
        assert rep.verdict == "certified"

    def test_dimension_mismatch(self, fig2_report):
        with pytest.raises(ValueError):
            verify(fig2_report.network, [(unit_ball(3), unit_ball(2, Role.OUTPUT))])


class TestMonteCarlo:
    def test_zero_samples(self, fig2_report):
        spec = ProblemSpec.load("fig2")
        assert monte_carlo(fig2_report.network, spec.pairs, 0) == [0, 0]

    def test_counts_violations(self):
        net = Network(((np.eye(1), np.zeros(1)), (np.eye(1), np.zeros(1))), Activation.IDENTITY)
        # half the input interval [-1, 1] maps outside [0, 2]
        pair = (unit_ball(1), unit_ball(1, Role.OUTPUT, center=[1.0]))
        n = monte_carlo(net, [pair], 4000, seed=1)[0]
        assert 1800 < n < 2200
