"""End-to-end learning and verification runs."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .lmi import (build_learning, build_verification, build_verification_multilayer,
                  schur_check)
from .loop_transform import RecoveryMode, inverse_two_layer
from .model import Activation, Network, forward
from .sets import (MEMBERSHIP_TOL, Ellipsoid, Role, SectorBounds, contains, ellipsoid_box,
                   global_sector, ibp, local_sector, sample)
from .solver import Certificate, SolveOptions, check_certificate, solve


log = logging.getLogger(__name__)


class SoundnessError(RuntimeError):
    """A certified network produced a specification violation."""


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: Exception):
        super().__init__(f"[{stage}] {exc}")
        self.stage = stage


FIXTURES = ("fig2", "fig3")


@dataclass(frozen=True)
class ProblemSpec:
    pairs: tuple[tuple[Ellipsoid, Ellipsoid], ...]
    shape: tuple[int, int, int]
    activation: Activation = Activation.TANH
    mode: RecoveryMode = RecoveryMode.STRICT
    solver: SolveOptions = field(default_factory=SolveOptions)
    mc_samples: int = 500
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        if not self.pairs:
            raise ValueError("problem needs at least one (input, output) pair")
        n_x, _, n_y = self.shape
        for j, (inE, outE) in enumerate(self.pairs):
            if inE.dim != n_x or outE.dim != n_y:
                raise ValueError(f"pair {j}: ellipsoid dimensions ({inE.dim}, {outE.dim}) "
                                 f"do not match shape (nx={n_x}, ny={n_y})")
        if self.mc_samples < 1:
            raise ValueError("mc_samples must be at least 1")
        object.__setattr__(self, "activation", Activation.parse(self.activation))
        object.__setattr__(self, "mode", RecoveryMode(self.mode))

    @property
    def learning_sector(self) -> SectorBounds:
        symmetric = self.mode is RecoveryMode.STRICT
        return global_sector(self.activation, self.shape[1], symmetric=symmetric)

    @classmethod
    def from_dict(cls, data: dict) -> ProblemSpec:
        try:
            shp = data["shape"]
            shape = (int(shp["nx"]), int(shp["n1"]), int(shp["ny"]))
            pairs = tuple(
                (Ellipsoid.from_dict(p["input"], Role.INPUT),
                 Ellipsoid.from_dict(p["output"], Role.OUTPUT))
                for p in data["pairs"]
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed problem description: missing {exc}") from None
        return cls(
            pairs=pairs,
            shape=shape,
            activation=Activation.parse(data.get("activation", "tanh")),
            mode=RecoveryMode(data.get("mode", "strict")),
            solver=SolveOptions.from_dict(data.get("solver")),
            mc_samples=int(data.get("mc_samples", 500)),
            seed=int(data.get("seed", 0)),
            name=str(data.get("name", "")),
        )

    @classmethod
    def load(cls, source) -> ProblemSpec:
        """Load from a JSON path or a shipped fixture name (``fig2``, ``fig3``)."""
        path = Path(source)
        if path.is_file():
            text = path.read_text()
        elif str(source) in FIXTURES:
            text = resources.files("certnn.fixtures").joinpath(f"{source}.json").read_text()
        else:
            raise FileNotFoundError(f"no problem file or fixture named {source!r}")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValueError(f"problem file is not valid JSON: {exc}") from None
        return cls.from_dict(data)


@dataclass
class RunReport:
    verdict: str
    network: Network | None = None
    certificate: Certificate | None = None
    pair_certificates: list[Certificate] = field(default_factory=list)
    margin: float = float("nan")
    violations: list[int] = field(default_factory=list)
    samples: int = 0
    schur_residuals: list[float] = field(default_factory=list)
    certificate_ok: bool | None = None
    cross_check: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.verdict in ("feasible", "certified")

    @property
    def wall_time(self) -> float:
        return self.timings.get("total", 0.0)

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "margin": self.margin,
            "certificate_ok": self.certificate_ok,
            "schur_residuals": self.schur_residuals,
            "cross_check": self.cross_check,
            "monte_carlo": {"samples_per_pair": self.samples, "violations": self.violations,
                            "membership_tol": MEMBERSHIP_TOL},
            "timings": self.timings,
            "certificate": None if self.certificate is None else self.certificate.to_dict(),
            "pair_certificates": [c.to_dict() for c in self.pair_certificates],
        }


class _Timer:
    def __init__(self, timings: dict, key: str):
        self.timings, self.key = timings, key

    def __enter__(self):
        self.t = time.perf_counter()

    def __exit__(self, *exc):
        self.timings[self.key] = self.timings.get(self.key, 0.0) + time.perf_counter() - self.t


def monte_carlo(net: Network, pairs, n: int, seed: int = 0) -> list[int]:
    """Violations of ``n`` uniform input samples per pair; deterministic per seed."""
    counts = []
    for j, (inE, outE) in enumerate(pairs):
        if n <= 0:
            counts.append(0)
            continue
        x = sample(inE, n, np.random.default_rng([seed, j]))
        counts.append(int(np.count_nonzero(~contains(outE, forward(net, x)))))
    return counts


def _verification_pencil(net: Network, inE: Ellipsoid, outE: Ellipsoid):
    sectors = [local_sector(net.activation, b) for b in ibp(net, ellipsoid_box(inE))]
    if net.depth == 1:
        return build_verification(net, inE, outE, sectors[0])
    return build_verification_multilayer(net, inE, outE, sectors)


def verify(net: Network, pairs, opts: SolveOptions | None = None,
           mc_samples: int = 0, seed: int = 0) -> RunReport:
    """Certify every pair through interval bounds, local sectors and an SDP solve.

    A pair without a certificate is ``unknown``; verification never claims a
    violation.  Optional Monte-Carlo counts are reported alongside.
    """
    opts = opts or SolveOptions()
    pairs = list(pairs)
    report = RunReport("unknown")
    t0 = time.perf_counter()
    for j, (inE, outE) in enumerate(pairs):
        if inE.dim != net.n_x or outE.dim != net.n_y:
            raise ValueError(f"pair {j}: dimensions ({inE.dim}, {outE.dim}) do not match "
                             f"network ({net.n_x}, {net.n_y})")
    for inE, outE in pairs:
        with _Timer(report.timings, "build"):
            pencil = _verification_pencil(net, inE, outE)
        with _Timer(report.timings, "solve"):
            cert = solve(pencil, opts)
        ok = cert.feasible and check_certificate(pencil, cert)
        report.pair_certificates.append(cert)
        report.cross_check.append("certified" if ok else "unknown")
    report.margin = min((c.margin for c in report.pair_certificates), default=float("nan"))
    if pairs and all(v == "certified" for v in report.cross_check):
        report.verdict = "certified"
    report.certificate_ok = report.verdict == "certified"
    if mc_samples:
        with _Timer(report.timings, "monte_carlo"):
            report.violations = monte_carlo(net, pairs, mc_samples, seed)
        report.samples = mc_samples
    report.network = net
    report.timings["total"] = time.perf_counter() - t0
    return report


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (SoundnessError, StageError):
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise StageError(name, exc) from exc


def learn(spec: ProblemSpec, cross_check: bool = True) -> RunReport:
    """Build the convex learning LMI, solve it, recover weights and cross-check them."""
    t0 = time.perf_counter()
    report = RunReport("budget_exhausted")
    sec = spec.learning_sector
    opts = replace(spec.solver, seed=spec.seed)
    with _Timer(report.timings, "build"):
        pencil, layout = _stage("build", build_learning, spec.shape, spec.pairs, sec, spec.mode)
    with _Timer(report.timings, "solve"):
        cert = _stage("solve", solve, pencil, opts)
    report.certificate = cert
    report.margin = cert.margin
    log.info("learning LMI: %s (margin %.3e, %d variables, blocks %s)",
             cert.verdict.value, cert.margin, pencil.n_vars, pencil.dims)
    if not cert.feasible:
        report.timings["total"] = time.perf_counter() - t0
        return report

    report.verdict = "feasible"
    report.certificate_ok = check_certificate(pencil, cert)
    lv = layout.unpack(cert.z)
    tf = lv.transformed(sec)
    with _Timer(report.timings, "recover"):
        net = _stage("recover", inverse_two_layer, tf, sec, spec.mode, spec.activation)
    report.network = net
    report.schur_residuals = [schur_check(lv, j, p) for j, p in enumerate(spec.pairs)]

    if cross_check:
        with _Timer(report.timings, "cross_check"):
            ver = _stage("cross_check", verify, net, spec.pairs, opts)
            report.cross_check = ver.cross_check

    with _Timer(report.timings, "monte_carlo"):
        report.violations = monte_carlo(net, spec.pairs, spec.mc_samples, spec.seed)
    report.samples = spec.mc_samples
    report.timings["total"] = time.perf_counter() - t0
    if any(report.violations):
        raise SoundnessError(
            f"feasible certificate (margin {cert.margin:.3g}) but Monte Carlo found "
            f"violations {report.violations}; the LMI assembly is inconsistent")
    return report
