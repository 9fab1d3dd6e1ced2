import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from certnn.lmi import (AffinePencil, Block, LearningVariables, PencilBuilder, Sign, Variable,
                        build_learning, build_verification, build_verification_multilayer,
                        export_sdpa, parse_sdpa, pre_schur_matrix, schur_check,
                        transformed_pencil)
from certnn.loop_transform import RecoveryMode, TransformedForm, transform
from certnn.model import Activation, Network, forward, isolate
from certnn.sets import (Ellipsoid, Role, SectorBounds, ellipsoid_box, ibp, local_sector,
                         sample)
from certnn.solver import SolveOptions, margin, solve

from conftest import random_ellipsoid, random_net, unit_ball


def identity_net(n=2):
    I = np.eye(n)
    return Network(((I, np.zeros(n)), (I, np.zeros(n))), Activation.IDENTITY)


def local_sec(net, inE):
    return local_sector(net.activation, ibp(net, ellipsoid_box(inE))[0])


def random_pencil(rng, m=4, dims=(3, 2)):
    pb = PencilBuilder()
    idx = [pb.variable(f"z{k}", sign=Sign.FREE if k % 2 else Sign.NONNEG) for k in range(m)]
    for d in dims:
        blk = pb.block(d)
        full = slice(0, d)
        S = rng.standard_normal((d, d))
        pb.const(blk, full, full, S + S.T)
        for k in idx:
            S = rng.standard_normal((d, d))
            pb.term(blk, k, full, full, S + S.T)
    return pb.build()


class TestPencil:
    def test_zero_point_gives_constant(self, rng):
        p = random_pencil(rng)
        for F, blk in zip(p.evaluate(np.zeros(p.n_vars)), p.blocks):
            np.testing.assert_array_equal(F, blk.F0)

    @settings(max_examples=50, deadline=None)
    @given(t=st.floats(-3, 3), seed=st.integers(0, 2**16))
    def test_affine(self, t, seed):
        rng = np.random.default_rng(seed)
        p = random_pencil(rng)
        z1, z2 = rng.standard_normal((2, p.n_vars))
        for F1, F2, Ft in zip(p.evaluate(z1), p.evaluate(z2), p.evaluate(t * z1 + (1 - t) * z2)):
            np.testing.assert_allclose(Ft, t * F1 + (1 - t) * F2, rtol=1e-12, atol=1e-11)

    def test_symmetric(self, rng):
        p = random_pencil(rng)
        for F in p.evaluate(rng.standard_normal(p.n_vars)):
            np.testing.assert_array_equal(F, F.T)

    def test_rejects_asymmetric_block(self):
        with pytest.raises(ValueError, match="symmetric"):
            AffinePencil((Block(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((0, 2, 2))),), ())

    def test_rejects_bad_index(self):
        with pytest.raises(ValueError):
            AffinePencil((), (Variable("a", 1),))

    def test_wrong_point_length(self, rng):
        with pytest.raises(ValueError):
            random_pencil(rng).evaluate(np.zeros(2))

    def test_offdiagonal_placement(self):
        pb = PencilBuilder()
        k = pb.variable("k")
        blk = pb.block(3)
        pb.term(blk, k, slice(2, 3), slice(0, 2), [[1.0, 2.0]])
        F = pb.build().blocks[0].F[k]
        np.testing.assert_array_equal(F, [[0, 0, 1], [0, 0, 2], [1, 2, 0]])


class TestVerificationPencil:
    def test_tight_identity_example(self):
        # unit ball onto itself through the identity: the margin supremum is 0
        net, inE = identity_net(), unit_ball(2)
        outE = unit_ball(2, Role.OUTPUT)
        p = build_verification(net, inE, outE, local_sec(net, inE))
        assert p.dims == [5] and p.n_vars == 3
        values = [margin(p, [1.0, mu, mu]) for mu in (1.0, 1e2, 1e4)]
        assert all(v < 0 for v in values)
        assert values[0] < values[1] < values[2]
        assert values[2] > -1e-4
        assert not solve(p, SolveOptions(max_iters=500)).feasible

    def test_identity_with_slack_output_is_certified(self):
        net, inE = identity_net(), unit_ball(2)
        p = build_verification(net, inE, unit_ball(2, Role.OUTPUT, radius=2.0),
                               local_sec(net, inE))
        cert = solve(p)
        assert cert.feasible and cert.margin >= 1e-6

    def test_zero_net_is_certified(self):
        net = Network(((np.zeros((3, 2)), np.zeros(3)), (np.zeros((2, 3)), np.zeros(2))))
        inE = Ellipsoid.from_center([2.0, 1.0], [0.5, 0.3])
        p = build_verification(net, inE, unit_ball(2, Role.OUTPUT), local_sec(net, inE))
        assert solve(p).feasible

    def test_scaled_identity_has_violating_witness(self, rng):
        net = Network(((10 * np.eye(2), np.zeros(2)), (np.eye(2), np.zeros(2))),
                      Activation.IDENTITY)
        inE = unit_ball(2)
        p = build_verification(net, inE, unit_ball(2, Role.OUTPUT), local_sec(net, inE))
        # x = (1, 0) maps to (10, 0); the quadratic form at that point is negative
        # for every multiplier choice, so no z makes the pencil PSD
        w = np.array([1.0, 0.0, 10.0, 0.0, 1.0])
        for _ in range(20):
            z = np.abs(rng.standard_normal(3)) * 10
            assert w @ p.blocks[0](z) @ w < 0

    def test_form_is_negated_sum_of_constraints(self, rng):
        net = random_net(rng, [2, 4, 2])
        inE, outE = random_ellipsoid(rng, 2), random_ellipsoid(rng, 2, Role.OUTPUT)
        sec = local_sec(net, inE)
        p = build_verification(net, inE, outE, sec)
        z = np.abs(rng.standard_normal(p.n_vars))
        lam, mu = z[0], z[1:]
        F = p.blocks[0](z)
        (W0, b0), _ = net.layers
        for x in sample(inE, 20, rng):
            v = W0 @ x + b0
            x1 = np.tanh(v)
            y = forward(net, x)
            w = np.concatenate([x, x1, [1.0]])
            qin = lam * (1 - np.linalg.norm(inE.shape @ x + inE.offset) ** 2)
            qsec = np.sum(2 * mu * (x1 - sec.alpha * v) * (sec.beta * v - x1))
            qout = np.linalg.norm(outE.shape @ y + outE.offset) ** 2 - 1
            np.testing.assert_allclose(w @ F @ w, -(qout + qin + qsec), rtol=1e-9, atol=1e-9)

    def test_dimension_mismatch(self, rng):
        net = random_net(rng, [2, 3, 2])
        with pytest.raises(ValueError):
            build_verification(net, unit_ball(3), unit_ball(2, Role.OUTPUT),
                               SectorBounds.uniform(0, 1, 3))

    def test_depth_checked(self, rng):
        net = random_net(rng, [2, 3, 3, 2])
        with pytest.raises(ValueError):
            build_verification(net, unit_ball(2), unit_ball(2, Role.OUTPUT),
                               SectorBounds.uniform(0, 1, 3))


class TestMultilayer:
    def test_congruent_to_single_layer_form(self, rng):
        # after the substitution x1 = S W0 x + Dg xt + S b0 the single-layer pencil
        # becomes the transformed one with rescaled sector multipliers
        net = random_net(rng, [2, 5, 2])
        inE, outE = random_ellipsoid(rng, 2), random_ellipsoid(rng, 2, Role.OUTPUT)
        sec = local_sec(net, inE)
        p1 = build_verification(net, inE, outE, sec)
        p2 = build_verification_multilayer(net, inE, outE, [sec])
        (W0, b0), _ = net.layers
        S, Dg = np.diag((sec.beta + sec.alpha) / 2), np.diag((sec.beta - sec.alpha) / 2)
        T = np.zeros((8, 8))
        T[:2, :2] = np.eye(2)
        T[2:7, :2] = S @ W0
        T[2:7, 2:7] = Dg
        T[2:7, 7] = S @ b0
        T[7, 7] = 1.0
        for _ in range(5):
            z = np.abs(rng.standard_normal(6))
            z2 = z.copy()
            z2[1:] = z[1:] * (sec.beta - sec.alpha) ** 2 / 2
            np.testing.assert_allclose(p2.blocks[0](z2), T.T @ p1.blocks[0](z) @ T,
                                       rtol=1e-9, atol=1e-9)

    def test_cross_construction_verdicts_agree(self, rng):
        agree = 0
        for k in range(6):
            net = random_net(rng, [2, 4, 2], scale=0.3 if k % 2 else 1.5)
            inE = random_ellipsoid(rng, 2, radius=(0.2, 0.5))
            outE = Ellipsoid.from_center(forward(net, inE.center), [1.0, 1.0], role=Role.OUTPUT)
            sec = local_sec(net, inE)
            opts = SolveOptions(max_iters=2000)
            v1 = solve(build_verification(net, inE, outE, sec), opts).feasible
            v2 = solve(build_verification_multilayer(net, inE, outE, [sec]), opts).feasible
            agree += v1 == v2
        assert agree == 6

    def test_zero_deep_net_is_certified(self):
        layers = ((np.zeros((3, 2)), np.zeros(3)), (np.zeros((3, 3)), np.zeros(3)),
                  (np.zeros((2, 3)), np.array([0.1, -0.1])))
        net = Network(layers)
        inE = unit_ball(2)
        secs = [local_sector(net.activation, b) for b in ibp(net, ellipsoid_box(inE))]
        p = build_verification_multilayer(net, inE, unit_ball(2, Role.OUTPUT), secs)
        assert solve(p).feasible

    def test_violating_deep_net_is_not_certified(self):
        layers = ((np.eye(2), np.zeros(2)), (np.eye(2), np.zeros(2)),
                  (5 * np.eye(2), np.zeros(2)))
        net = Network(layers)
        inE = unit_ball(2)
        x = np.array([1.0, 0.0])
        assert np.linalg.norm(forward(net, x)) > 1.0
        secs = [local_sector(net.activation, b) for b in ibp(net, ellipsoid_box(inE))]
        p = build_verification_multilayer(net, inE, unit_ball(2, Role.OUTPUT), secs)
        assert not solve(p, SolveOptions(max_iters=1000)).feasible

    def test_transformed_pencil_sector_term(self, rng):
        tf = transform(isolate(random_net(rng, [2, 3, 1])), SectorBounds.uniform(-1, 1, 3))
        p = transformed_pencil(tf, unit_ball(2), unit_ball(1, Role.OUTPUT))
        assert p.dims == [6]
        F = p.blocks[0].F[p.index("mu[1]")]
        w = rng.standard_normal(6)
        v = tf.N_vx @ w[:2] + tf.b0 * w[5]
        np.testing.assert_allclose(w @ F @ w, -(v[1] ** 2 - w[3] ** 2), atol=1e-12)


def two_pairs():
    inA = Ellipsoid.from_center([-1.0, 0.5], [0.4, 0.3], 0.2)
    inB = Ellipsoid.from_center([1.0, -0.5], [0.3, 0.3])
    out = Ellipsoid.from_center([0.0, 0.0], [1.0, 0.8], role=Role.OUTPUT)
    return [(inA, out), (inB, out)]


class TestLearningLMI:
    def test_dimensions_and_variable_count(self):
        p, layout = build_learning((2, 10, 2), two_pairs(), SectorBounds.uniform(-1, 1, 10))
        assert p.dims == [25, 25]
        assert p.n_vars == 10 + 2 + 20 + 20 + 10 + 2
        p2, _ = build_learning((2, 10, 2), two_pairs(), SectorBounds.uniform(0, 1, 10),
                               RecoveryMode.RESIDUAL)
        assert p2.n_vars == p.n_vars + 4

    def test_sign_kinds(self):
        p, layout = build_learning((2, 3, 2), two_pairs(), SectorBounds.uniform(-1, 1, 3))
        assert p.sign_mask(Sign.POSITIVE).sum() == 3
        assert p.sign_mask(Sign.NONNEG).sum() == 2

    def test_block_at_simple_point(self):
        # q = 1, lambda = 0, all network terms zero except b1 = d-shift
        pairs = two_pairs()
        p, layout = build_learning((2, 3, 2), pairs, SectorBounds.uniform(-1, 1, 3))
        z = np.zeros(p.n_vars)
        z[layout.q] = 1.0
        b1 = np.array([0.3, -0.2])
        z[layout.b1] = b1
        C, d = pairs[0][1].shape, pairs[0][1].offset
        expected = np.zeros((11, 11))
        expected[2:5, 2:5] = np.eye(3)
        expected[5, 5] = 1.0
        expected[6:9, 6:9] = np.eye(3)
        expected[9:, 9:] = np.eye(2)
        expected[9:, 5] = expected[5, 9:] = C @ b1 + d
        np.testing.assert_allclose(p.blocks[0](z), expected, atol=1e-15)

    def test_unpack(self):
        p, layout = build_learning((2, 3, 2), two_pairs(), SectorBounds.uniform(-1, 1, 3))
        z = np.arange(p.n_vars, dtype=float) + 1
        lv = layout.unpack(z)
        np.testing.assert_array_equal(np.diag(lv.Q1), [1, 2, 3])
        np.testing.assert_array_equal(lv.lambdas, [4, 5])
        assert lv.L2.shape == (2, 3) and lv.N_vx.shape == (3, 2)
        assert not lv.L1.any() and not lv.N_psix.any()

    def test_validation(self):
        with pytest.raises(ValueError, match="symmetric"):
            build_learning((2, 3, 2), two_pairs(), SectorBounds.uniform(0, 1, 3))
        with pytest.raises(ValueError):
            build_learning((2, 4, 2), two_pairs(), SectorBounds.uniform(-1, 1, 3))
        with pytest.raises(ValueError):
            build_learning((2, 3, 2), [], SectorBounds.uniform(-1, 1, 3))

    @pytest.mark.parametrize("mode", list(RecoveryMode))
    def test_schur_equivalence(self, rng, mode):
        # sign of the learning block and of the pre-Schur form agree on random points
        sec = SectorBounds.uniform(-1, 1, 3) if mode is RecoveryMode.STRICT \
            else SectorBounds.uniform(0, 1, 3)
        pairs = two_pairs()
        p, layout = build_learning((2, 3, 2), pairs, sec, mode)
        seen = set()
        for _ in range(200):
            z = 0.3 * rng.standard_normal(p.n_vars)
            z[layout.q] = rng.uniform(0.2, 2.0, 3)
            z[layout.lam] = rng.uniform(0.0, 2.0, 2)
            lv = layout.unpack(z)
            for j, pair in enumerate(pairs):
                lmi_ok = np.linalg.eigvalsh(p.blocks[j](z))[0] > 1e-9
                schur = schur_check(lv, j, pair)
                if abs(schur) > 1e-9:
                    assert lmi_ok == (schur < 0)
                    seen.add(lmi_ok)
        assert seen == {True, False}

    def test_schur_detects_corruption(self):
        pairs = two_pairs()
        p, layout = build_learning((2, 3, 2), pairs, SectorBounds.uniform(-1, 1, 3))
        cert = solve(p)
        assert cert.feasible
        lv = layout.unpack(cert.z)
        assert all(schur_check(lv, j, pr) <= 1e-8 for j, pr in enumerate(pairs))
        bad = LearningVariables(lv.Q1, lv.lambdas, lv.L1, lv.L2, lv.N_vx, lv.N_psix,
                                lv.b0, lv.b1 + 10.0)
        assert schur_check(bad, 0, pairs[0]) > 0

    def test_pre_schur_needs_positive_q(self):
        lv = LearningVariables(np.diag([1.0, 0.0]), np.ones(1), np.zeros((2, 2)),
                               np.zeros((1, 2)), np.zeros((2, 1)), np.zeros((1, 1)),
                               np.zeros(2), np.zeros(1))
        with pytest.raises(ValueError):
            pre_schur_matrix(lv, 0, (unit_ball(1), unit_ball(1, Role.OUTPUT)))


class TestSDPA:
    def test_round_trip_exact(self, rng):
        p, _ = build_learning((2, 3, 2), two_pairs(), SectorBounds.uniform(-1, 1, 3))
        q = parse_sdpa(export_sdpa(p))
        assert [v.name for v in q.variables] == [v.name for v in p.variables]
        assert [v.sign for v in q.variables] == [v.sign for v in p.variables]
        for a, b in zip(p.blocks, q.blocks):
            np.testing.assert_array_equal(a.F0, b.F0)
            np.testing.assert_array_equal(a.F, b.F)
        z = rng.standard_normal(p.n_vars)
        for a, b in zip(p.evaluate(z), q.evaluate(z)):
            np.testing.assert_array_equal(a, b)

    def test_header(self):
        p, _ = build_learning((2, 3, 2), two_pairs(), SectorBounds.uniform(-1, 1, 3))
        body = [l for l in export_sdpa(p).splitlines() if not l.startswith("*")]
        assert int(body[0]) == p.n_vars
        assert int(body[1]) == 3
        assert body[2].split() == ["11", "11", "-5"]

    def test_plain_sdpa_file(self):
        text = '"a plain problem"\n2\n1\n2\n1.0 1.0\n0 1 1 1 -1.0\n1 1 1 1 1.0\n2 1 2 2 1.0\n'
        p = parse_sdpa(text)
        assert [v.name for v in p.variables] == ["z1", "z2"]
        np.testing.assert_array_equal(p.blocks[0]([2.0, 3.0]), np.diag([3.0, 3.0]))
