"""Eavesdropper models and Monte Carlo attack experiments.

Eve interacts with pulses only through the strategies here: she can measure
and resend, split off photons, or couple the pulse to an ancilla with a
unitary probe. Photons she siphons are measured one by one (Born rule per
photon); collective measurements are not modelled, so the numbers are a
lower bound on what a stronger Eve could learn.
"""

from __future__ import annotations

import json
import math
from functools import lru_cache
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.stats import unitary_group

from .detector import ERASURE, DetectorModel
from .polarization import ALGEBRA_TOL, TRIG_TOL, JonesVector, is_unitary, linear_state
from .protocol import (
    DEFAULT_BLOCK_SIZE,
    ROTATION,
    BlockKey,
    StageMessage,
    alice_stage1,
    alice_stage3,
    bob_stage2,
    draw_angle,
    run_session,
    session_rngs,
)
from .pulse import PhotonPulse

Z95 = 1.959963984540054


@dataclass(frozen=True)
class NoEve:
    def describe(self) -> str:
        return "none"


@dataclass(frozen=True)
class InterceptResend:
    basis_angle: float = 0.0
    stage: int = 1

    def __post_init__(self):
        if self.stage not in (1, 2, 3):
            raise ValueError("intercept stage must be 1, 2 or 3")

    def describe(self) -> str:
        return f"intercept:stage={self.stage},basis={self.basis_angle:g}"


@dataclass(frozen=True)
class BeamSplit:
    k: int = 1
    stages: frozenset = frozenset({1})

    def __post_init__(self):
        object.__setattr__(self, "stages", frozenset(self.stages))
        if self.k < 1:
            raise ValueError("beam split must take at least one photon")
        if not self.stages or not self.stages <= {1, 2, 3}:
            raise ValueError("tapped stages must be a nonempty subset of {1, 2, 3}")

    def describe(self) -> str:
        return f"beamsplit:k={self.k},stages={'+'.join(str(s) for s in sorted(self.stages))}"


@dataclass(frozen=True, eq=False)
class UnitaryProbe:
    """Couple the pulse (system) to an ancilla, then read the ancilla in its computational basis."""

    probe: np.ndarray
    ancilla: tuple = (1.0, 0.0)
    stage: int = 1
    label: str = "probe"

    def __post_init__(self):
        u = np.asarray(self.probe, dtype=complex)
        if u.shape != (4, 4) or not is_unitary(u, ALGEBRA_TOL):
            raise ValueError("probe must be a 4x4 unitary on system x ancilla")
        object.__setattr__(self, "probe", u)

    @classmethod
    def cnot(cls, stage: int = 1) -> UnitaryProbe:
        """System-controlled NOT on the ancilla: copies the H/V value."""
        m = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]])
        return cls(m, stage=stage, label="cnot")

    def describe(self) -> str:
        return f"probe:{self.label},stage={self.stage}"


EveStrategy = Union[NoEve, InterceptResend, BeamSplit, UnitaryProbe]


def parse_strategy(spec: str) -> tuple:
    """Parse ``name:key=value,...`` into (strategy, photon_count or None).

    Examples: ``none``, ``intercept:stage=1,basis=0``,
    ``beamsplit:k=1,n=2,stage=1`` (``stages=1+2+3`` taps several),
    ``probe:stage=1`` (CNOT probe).
    """
    name, _, rest = spec.strip().partition(":")
    opts = {}
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, sep, value = item.partition("=")
        if not sep:
            raise ValueError(f"bad strategy option {item!r} in {spec!r}")
        opts[key.strip()] = value.strip()
    name = name.lower()
    n = int(opts.pop("n")) if "n" in opts else None
    if name in ("none", ""):
        strategy = NoEve()
    elif name == "intercept":
        strategy = InterceptResend(float(opts.pop("basis", 0.0)), int(opts.pop("stage", 1)))
    elif name == "beamsplit":
        stages = opts.pop("stages", None) or opts.pop("stage", "1")
        strategy = BeamSplit(int(opts.pop("k", 1)), frozenset(int(s) for s in stages.split("+")))
    elif name == "probe":
        strategy = UnitaryProbe.cnot(int(opts.pop("stage", 1)))
    else:
        raise ValueError(f"unknown strategy {name!r}")
    if opts:
        raise ValueError(f"unused strategy options {sorted(opts)} in {spec!r}")
    if isinstance(strategy, BeamSplit) and n is not None and strategy.k * len(strategy.stages) >= n:
        raise ValueError(f"beam split needs k * stages < n, got k={strategy.k}, {len(strategy.stages)} stages, n={n}")
    return strategy, n


@lru_cache(maxsize=64)
def _basis_bra(basis_angle: float) -> np.ndarray:
    b = linear_state(basis_angle).array.conj()
    b.setflags(write=False)
    return b


def _basis_prob0(state: np.ndarray, basis_angle: float) -> float:
    return float(abs(_basis_bra(float(basis_angle)) @ state) ** 2)


def intercept_resend(pulse: PhotonPulse, basis_angle: float, rng: np.random.Generator) -> tuple:
    """Measure the pulse in {basis, basis + 90} and resend the collapsed state.

    Returns (outcome index, resent pulse with the same photon number).
    """
    if pulse.dimension != 2:
        raise ValueError("intercept-resend acts on polarization pulses")
    p0 = _basis_prob0(pulse.state, basis_angle)
    outcome = 0 if rng.random() < p0 else 1
    collapsed = linear_state(basis_angle + 90.0 * outcome).array
    return outcome, pulse.with_state(collapsed)


def beam_split_siphon(pulse: PhotonPulse, k: int) -> tuple:
    """Passively divert ``k`` photons; both parts keep the pulse polarization."""
    if not 1 <= k < pulse.photon_count:
        raise ValueError(f"need 1 <= k < {pulse.photon_count}, got k={k}")
    return pulse.with_photons(k), pulse.with_photons(pulse.photon_count - k)


def basis_cycle(count: int, bases: Sequence[float] = (0.0, 45.0)) -> list:
    return [bases[i % len(bases)] for i in range(count)]


def measure_photons(pulse: PhotonPulse, bases: Sequence[float], rng: np.random.Generator) -> list:
    """Measure one photon per listed basis angle, each independently by the Born rule.

    Returns ``(basis, n0, n1)`` outcome counts per distinct basis, in first-use order.
    """
    if len(bases) > pulse.photon_count:
        raise ValueError("more measurements than photons")
    if len(set(bases)) == 1:
        b, n = float(bases[0]), len(bases)
        n0 = int(rng.binomial(n, min(1.0, _basis_prob0(pulse.state, b))))
        return [(b, n0, n - n0)]
    counts: dict = {}
    for b in bases:
        counts[float(b)] = counts.get(float(b), 0) + 1
    out = []
    for b, n in counts.items():
        n0 = int(rng.binomial(n, min(1.0, _basis_prob0(pulse.state, b))))
        out.append((b, n0, n - n0))
    return out


def _majority(n0: int, n1: int, rng: np.random.Generator) -> int:
    if n0 != n1:
        return int(n1 > n0)
    return int(rng.integers(2))


# ---------------------------------------------------------------------------
# multi-stage estimation


@dataclass
class MultiStageEstimate:
    theta_a: Optional[float]  # degrees mod 180, None when unidentifiable
    theta_b: Optional[float]
    bits: list
    log_likelihood: float


def _stage_loglik(samples: Sequence[tuple], grid: np.ndarray) -> np.ndarray:
    """Log-likelihood of (basis, n0, n1) counts at each grid polarization angle."""
    ll = np.zeros(grid.shape)
    for basis, n0, n1 in samples:
        c2 = np.cos(np.radians(grid - basis)) ** 2
        ll += n0 * np.log(np.maximum(c2, 1e-15)) + n1 * np.log(np.maximum(1.0 - c2, 1e-15))
    return ll


def multi_stage_estimate(
    siphoned: Sequence[dict],
    rng: np.random.Generator,
    step: float = 2.0,
) -> MultiStageEstimate:
    """Joint maximum-likelihood guess of the block's angles and bits.

    ``siphoned[i]`` maps stage (1, 2, 3) to a list of ``(basis, n0, n1)``
    outcome counts for bit i of one block. The stage polarizations are modelled as
    theta_a + 90 b, theta_a + theta_b + 90 b and theta_b + 90 b (mod 180),
    maximized over a grid of ``step`` degrees. Exact ties are broken at random.
    """
    if 90.0 % step:
        raise ValueError("grid step must divide 90 degrees")
    g = int(round(180.0 / step))
    h = g // 2
    grid = np.arange(g) * float(step)
    a = np.arange(g)[:, None]
    c = np.arange(g)[None, :]
    total = np.zeros((g, g))
    per_bit = []
    for samples in siphoned:
        l1 = _stage_loglik(samples.get(1, ()), grid)
        l2 = _stage_loglik(samples.get(2, ()), grid)
        l3 = _stage_loglik(samples.get(3, ()), grid)
        t = [l1[(a + b * h) % g] + l2[(a + c + b * h) % g] + l3[(c + b * h) % g] for b in (0, 1)]
        per_bit.append(t)
        total += np.maximum(t[0], t[1])
    best = total.max()
    ties = np.argwhere(total >= best - 1e-9)
    ia, ic = ties[int(rng.integers(len(ties)))]
    bits = []
    for t0, t1 in per_bit:
        v0, v1 = t0[ia, ic], t1[ia, ic]
        if abs(v0 - v1) <= 1e-9:
            bits.append(int(rng.integers(2)))
        else:
            bits.append(int(v1 > v0))
    identifiable = len(ties) < g * g
    return MultiStageEstimate(
        float(grid[ia]) if identifiable else None,
        float(grid[ic]) if identifiable else None,
        bits,
        float(best),
    )


def siphon_block(
    bits: Sequence[int],
    key: BlockKey,
    photons_per_stage: int,
    stages: Sequence[int],
    rng: np.random.Generator,
    bases: Sequence[float] = (0.0, 45.0),
) -> list:
    """Run one block through stages 1-3 and collect Eve's per-photon samples."""
    n = photons_per_stage + 1
    out = []
    for j, bit in enumerate(bits):
        m1 = alice_stage1(bit, key, bit_index=j, photon_count=n)
        m2 = bob_stage2(m1, key)
        m3 = alice_stage3(m2, key)
        samples = {}
        for msg in (m1, m2, m3):
            if msg.stage in stages and photons_per_stage > 0:
                tapped, _ = beam_split_siphon(msg.pulse, photons_per_stage)
                samples[msg.stage] = measure_photons(tapped, basis_cycle(photons_per_stage, bases), rng)
        out.append(samples)
    return out


def multi_stage_accuracy(
    photons_per_stage: int,
    trials: int,
    rng_seed: int = 0,
    stages: Sequence[int] = (1, 2, 3),
    block_size: int = 1,
    step: float = 2.0,
) -> float:
    """Fraction of bits Eve recovers by tapping ``stages`` of each block.

    Trial t uses the same keys and plaintext for every ``photons_per_stage``
    (paired seeds), so accuracies at different photon counts are comparable.
    """
    correct = 0
    total = 0
    for t in range(trials):
        world, eve = (np.random.default_rng(s) for s in np.random.SeedSequence([rng_seed, t]).spawn(2))
        key = BlockKey(0, draw_angle(world), draw_angle(world))
        bits = [int(b) for b in world.integers(0, 2, block_size)]
        if photons_per_stage == 0:
            guesses = [int(eve.integers(2)) for _ in bits]
        else:
            samples = siphon_block(bits, key, photons_per_stage, stages, eve)
            guesses = multi_stage_estimate(samples, eve, step).bits
        correct += sum(int(g == b) for g, b in zip(guesses, bits))
        total += len(bits)
    return correct / total


# ---------------------------------------------------------------------------
# unitary probe argument


@dataclass(frozen=True)
class ProbeStates:
    psi: JonesVector
    phi: JonesVector
    v: JonesVector

    def __post_init__(self):
        for name in ("psi", "phi", "v"):
            if not getattr(self, name).is_normalized(TRIG_TOL):
                raise ValueError(f"{name} is not normalized")


@dataclass
class ProbeReport:
    system_inner: complex
    joint_inner_before: complex
    joint_inner_after: complex
    inner_product_preserved: bool
    orthogonal: bool
    fixes_system: bool
    ancilla_psi: Optional[np.ndarray] = field(default=None, repr=False)
    ancilla_phi: Optional[np.ndarray] = field(default=None, repr=False)
    ancilla_overlap: Optional[complex] = None
    note: str = ""


def _split_product(joint: np.ndarray, system: np.ndarray, tol: float) -> Optional[np.ndarray]:
    """Ancilla a with joint == system (x) a, or None when the output is not of that form."""
    ancilla = np.kron(system.conj(), np.eye(2)) @ joint
    if np.max(np.abs(joint - np.kron(system, ancilla))) > tol:
        return None
    return ancilla


def probe_inner_product_check(probe: np.ndarray, states: ProbeStates, tol: float = TRIG_TOL) -> ProbeReport:
    """Check that a system (x) ancilla unitary preserves inner products, and what that forces.

    If the probe leaves both system states untouched, psi|v> -> psi|v'> and
    phi|v> -> phi|v''>, then <v'|v''><psi|phi> = <v|v><psi|phi>, so for
    non-orthogonal psi, phi the ancilla states must coincide and Eve learns
    nothing.
    """
    u = np.asarray(probe, dtype=complex)
    if u.shape != (4, 4) or not is_unitary(u, ALGEBRA_TOL):
        raise ValueError("probe must be a 4x4 unitary")
    psi, phi, v = states.psi.array, states.phi.array, states.v.array
    jpsi, jphi = np.kron(psi, v), np.kron(phi, v)
    before = complex(np.vdot(jpsi, jphi))
    opsi, ophi = u @ jpsi, u @ jphi
    after = complex(np.vdot(opsi, ophi))
    sys_inner = complex(np.vdot(psi, phi))
    orthogonal = abs(sys_inner) <= tol
    a_psi = _split_product(opsi, psi, tol)
    a_phi = _split_product(ophi, phi, tol)
    fixes = a_psi is not None and a_phi is not None
    overlap = complex(np.vdot(a_psi, a_phi)) if fixes else None
    if orthogonal:
        note = "orthogonal states are distinguishable; no constraint on the ancilla"
    elif fixes:
        note = "system states undisturbed, so the ancilla states are identical"
    else:
        note = "probe disturbs at least one system state"
    return ProbeReport(
        sys_inner,
        before,
        after,
        abs(after - before) <= ALGEBRA_TOL,
        orthogonal,
        fixes,
        a_psi,
        a_phi,
        overlap,
        note,
    )


def random_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    return unitary_group.rvs(dim, random_state=rng)


def random_state(rng: np.random.Generator) -> JonesVector:
    v = rng.normal(size=2) + 1j * rng.normal(size=2)
    return JonesVector.from_array(v / np.linalg.norm(v))


def fixing_probe(psi: JonesVector, v: JonesVector, rng: np.random.Generator) -> np.ndarray:
    """A random probe that leaves every system state unchanged.

    Built as (I x W) (P_psi x I + P_psi_perp x W2) with W2 v = v; only
    probes of this shape can leave two non-orthogonal states intact.
    """
    p = psi.array
    perp = np.array([-np.conj(p[1]), np.conj(p[0])])
    w = random_unitary(2, rng)
    va = v.array
    vperp = np.array([-np.conj(va[1]), np.conj(va[0])])
    gamma = rng.uniform(0, 2 * math.pi)
    w2 = np.outer(va, va.conj()) + np.exp(1j * gamma) * np.outer(vperp, vperp.conj())
    controlled = np.kron(np.outer(p, p.conj()), np.eye(2)) + np.kron(np.outer(perp, perp.conj()), w2)
    return np.kron(np.eye(2), w) @ controlled


def apply_probe(pulse: PhotonPulse, strategy: UnitaryProbe, rng: np.random.Generator) -> tuple:
    """Entangle with the ancilla, read the ancilla, return (reading, conditional system pulse)."""
    joint = strategy.probe @ np.kron(pulse.state, np.asarray(strategy.ancilla, dtype=complex))
    blocks = joint.reshape(2, 2)  # [system, ancilla]
    p0 = float(np.sum(np.abs(blocks[:, 0]) ** 2))
    outcome = 0 if rng.random() < p0 else 1
    return outcome, pulse.with_state(blocks[:, outcome])


# ---------------------------------------------------------------------------
# channel hook and experiments


class Eavesdropper:
    """Channel hook applying a strategy to every stage message it sees."""

    def __init__(self, strategy: EveStrategy, rng: np.random.Generator, block_size: int = DEFAULT_BLOCK_SIZE):
        self.strategy = strategy
        self.rng = rng
        self.block_size = block_size
        self.observations: dict = {}  # (block, bit) -> {stage: data}
        self.photons_taken = 0

    def __call__(self, direction: str, msg: StageMessage) -> StageMessage:
        return msg.with_pulse(self.tap(msg))

    def tap(self, msg: StageMessage) -> PhotonPulse:
        s = self.strategy
        if isinstance(s, InterceptResend) and msg.stage == s.stage:
            outcome, pulse = intercept_resend(msg.pulse, s.basis_angle, self.rng)
        elif isinstance(s, BeamSplit) and msg.stage in s.stages:
            taken, pulse = beam_split_siphon(msg.pulse, s.k)
            self.photons_taken += s.k
            bases = [0.0] * s.k if len(s.stages) == 1 else basis_cycle(s.k)
            outcome = measure_photons(taken, bases, self.rng)
        elif isinstance(s, UnitaryProbe) and msg.stage == s.stage:
            outcome, pulse = apply_probe(msg.pulse, s, self.rng)
        else:
            return msg.pulse
        self.observations.setdefault((msg.block_index, msg.bit_index), {})[msg.stage] = outcome
        return pulse

    def guesses(self, n_bits: int) -> list:
        """Eve's best guess of each plaintext bit from what she observed."""
        s = self.strategy
        out = []
        if isinstance(s, BeamSplit) and len(s.stages) > 1:
            n_blocks = -(-n_bits // self.block_size)
            for blk in range(n_blocks):
                size = min(self.block_size, n_bits - blk * self.block_size)
                samples = [self.observations.get((blk, j), {}) for j in range(size)]
                out.extend(multi_stage_estimate(samples, self.rng).bits)
            return out
        for i in range(n_bits):
            blk, j = divmod(i, self.block_size)
            seen = self.observations.get((blk, j), {})
            if not seen:
                out.append(int(self.rng.integers(2)))
            elif isinstance(s, BeamSplit):
                (samples,) = seen.values()
                out.append(_majority(sum(c[1] for c in samples), sum(c[2] for c in samples), self.rng))
            else:
                (outcome,) = seen.values()
                out.append(int(outcome))
        return out


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple:
    if n == 0:
        return (0.0, 1.0)
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the bounds are exactly 0 and 1 at the extremes; rounding would leave 1e-19 residue
    lo = 0.0 if successes == 0 else max(0.0, centre - half)
    hi = 1.0 if successes == n else min(1.0, centre + half)
    return (lo, hi)


def plugin_mutual_information(xs: Sequence[int], ys: Sequence[int]) -> float:
    """Plug-in estimate of I(X;Y) in bits from paired binary samples."""
    n = len(xs)
    if n == 0:
        return 0.0
    joint = np.zeros((2, 2))
    np.add.at(joint, (np.asarray(xs), np.asarray(ys)), 1.0)
    joint /= n
    px, py = joint.sum(axis=1), joint.sum(axis=0)
    mi = 0.0
    for i in range(2):
        for j in range(2):
            if joint[i, j] > 0:
                mi += joint[i, j] * math.log2(joint[i, j] / (px[i] * py[j]))
    return max(0.0, float(mi))


@dataclass
class AttackReport:
    strategy: str
    seed: int
    trials: int
    photon_count: int
    eve_correct: int
    bob_errors: int
    erasures: int
    eve_bit_accuracy: float
    eve_bit_accuracy_ci: tuple
    bob_error_rate: float
    bob_error_rate_ci: tuple
    erasure_rate: float
    erasure_rate_ci: tuple
    mutual_information: float

    CSV_FIELDS = (
        "strategy",
        "seed",
        "trials",
        "photon_count",
        "eve_bit_accuracy",
        "eve_bit_accuracy_lo",
        "eve_bit_accuracy_hi",
        "bob_error_rate",
        "bob_error_rate_lo",
        "bob_error_rate_hi",
        "erasure_rate",
        "mutual_information",
    )

    @classmethod
    def from_counts(
        cls,
        strategy: str,
        seed: int,
        photon_count: int,
        plaintext: Sequence[int],
        bob: Sequence[int],
        eve: Sequence[int],
    ) -> AttackReport:
        n = len(plaintext)
        erasures = sum(1 for b in bob if b == ERASURE)
        received = n - erasures
        bob_errors = sum(1 for p, b in zip(plaintext, bob) if b != ERASURE and b != p)
        eve_correct = sum(1 for p, e in zip(plaintext, eve) if p == e)
        return cls(
            strategy=strategy,
            seed=seed,
            trials=n,
            photon_count=photon_count,
            eve_correct=eve_correct,
            bob_errors=bob_errors,
            erasures=erasures,
            eve_bit_accuracy=eve_correct / n if n else 0.0,
            eve_bit_accuracy_ci=wilson_interval(eve_correct, n),
            bob_error_rate=bob_errors / received if received else 0.0,
            bob_error_rate_ci=wilson_interval(bob_errors, received),
            erasure_rate=erasures / n if n else 0.0,
            erasure_rate_ci=wilson_interval(erasures, n),
            mutual_information=plugin_mutual_information(plaintext, eve),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def csv_row(self) -> list:
        return [
            self.strategy,
            self.seed,
            self.trials,
            self.photon_count,
            repr(self.eve_bit_accuracy),
            repr(self.eve_bit_accuracy_ci[0]),
            repr(self.eve_bit_accuracy_ci[1]),
            repr(self.bob_error_rate),
            repr(self.bob_error_rate_ci[0]),
            repr(self.bob_error_rate_ci[1]),
            repr(self.erasure_rate),
            repr(self.mutual_information),
        ]


def _describe(strategy: EveStrategy) -> str:
    return strategy.describe()


def _run_chunk(args) -> tuple:
    strategy, bits, seed_seq, photon_count, block_size, mode, detector = args
    session_seed, eve_seed = seed_seq.spawn(2)
    eve = Eavesdropper(strategy, np.random.default_rng(eve_seed), block_size)
    tr = run_session(
        bits,
        mode,
        int(session_seed.generate_state(1)[0]),
        block_size=block_size,
        detector=detector,
        channel=None if isinstance(strategy, NoEve) else eve,
        photon_count=photon_count,
        keep_records=False,
    )
    return tr.decoded, eve.guesses(len(bits))


MESSAGES = "messages"
VECTORIZED = "vectorized"
ENGINES = (MESSAGES, VECTORIZED)


def vectorized_problem(strategy: EveStrategy, mode: str = ROTATION, detector: Optional[DetectorModel] = None) -> str:
    """Why the array engine cannot run this experiment, or "" when it can."""
    if mode != ROTATION:
        return f"mode {mode!r} (array engine supports rotation only)"
    if detector is not None and detector != DetectorModel.ideal():
        return "non-ideal detector"
    if isinstance(strategy, BeamSplit) and len(strategy.stages) > 1:
        return "multi-stage beam split"
    if not isinstance(strategy, (NoEve, InterceptResend, BeamSplit)):
        return f"strategy {strategy.describe()}"
    return ""


def wire_angles(bits: np.ndarray, theta_a: np.ndarray, theta_b: np.ndarray) -> dict:
    """Polarization angle in degrees on the wire at each stage, rotation mode.

    Stage 1 carries Alice's rotation of the 0/90 degree bit state, stage 2 adds
    Bob's, and stage 3 has Alice's removed again.
    """
    base = 90.0 * np.asarray(bits, dtype=float)
    return {1: base + theta_a, 2: base + theta_a + theta_b, 3: base + theta_b}


def _cos2(deg: np.ndarray) -> np.ndarray:
    return np.cos(np.radians(deg)) ** 2


def _majority_array(n0: np.ndarray, n1: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = (n1 > n0).astype(int)
    ties = n0 == n1
    out[ties] = rng.integers(0, 2, int(ties.sum()))
    return out


def _run_chunk_vectorized(args) -> tuple:
    """Array version of :func:`_run_chunk` for the strategies in :func:`vectorized_problem`.

    Keys come from the same per-session generators as the message engine, and
    Eve's and the detector's draws are taken in bulk in the same order, so for
    an ideal detector the two engines agree bit for bit.
    """
    strategy, bits, seed_seq, photon_count, block_size, _, _ = args
    session_seed, eve_seed = seed_seq.spawn(2)
    alice_rng, bob_rng, det_rng = session_rngs(int(session_seed.generate_state(1)[0]))
    eve_rng = np.random.default_rng(eve_seed)
    true_length = len(bits)
    blocks = -(-true_length // block_size)
    n = blocks * block_size  # zero padding is transmitted (and tapped) like real bits
    theta_a = np.repeat(np.fmod(360.0 * alice_rng.random(blocks), 360.0), block_size)
    theta_b = np.repeat(np.fmod(360.0 * bob_rng.random(blocks), 360.0), block_size)
    b = np.zeros(n, dtype=int)
    b[:true_length] = bits
    wire = wire_angles(b, theta_a, theta_b)
    # angle Bob holds after his final inverse rotation
    final = wire[3] - theta_b
    photons_to_bob = photon_count
    if isinstance(strategy, InterceptResend):
        s = strategy.stage
        outcome = (eve_rng.random(n) >= _cos2(wire[s] - strategy.basis_angle)).astype(int)
        resent = strategy.basis_angle + 90.0 * outcome
        # rotations still to come after the tap, including Bob's inverse
        after = {1: -theta_a, 2: -theta_a - theta_b, 3: -theta_b}[s]
        final = resent + after
        guesses = outcome
    elif isinstance(strategy, BeamSplit):
        (s,) = strategy.stages
        n0 = eve_rng.binomial(strategy.k, _cos2(wire[s]))[:true_length]
        guesses = _majority_array(n0, strategy.k - n0, eve_rng)
        photons_to_bob = photon_count - strategy.k
    else:
        guesses = eve_rng.integers(0, 2, true_length)
    p1 = 1.0 - _cos2(final)
    if photons_to_bob == 1:
        decoded = (det_rng.random(n) < p1).astype(int)
    else:
        ones = det_rng.binomial(photons_to_bob, p1)
        decoded = _majority_array(photons_to_bob - ones, ones, det_rng)
    return decoded[:true_length].tolist(), guesses[:true_length].tolist()


def run_attack_experiment(
    strategy: EveStrategy,
    n_bits: Optional[int] = None,
    *,
    message: Optional[Sequence[int]] = None,
    rng_seed: int = 0,
    photon_count: int = 1,
    block_size: int = DEFAULT_BLOCK_SIZE,
    mode: str = ROTATION,
    detector: Optional[DetectorModel] = None,
    session_bits: int = 4096,
    workers: int = 1,
    engine: str = MESSAGES,
) -> AttackReport:
    """Run full sessions with Eve on the channel and score both parties.

    Bits are split into sessions of ``session_bits``; session i draws all its
    randomness from ``SeedSequence(rng_seed).spawn(...)[i]``, so the report
    does not depend on ``workers``.

    ``engine="messages"`` passes every pulse through the protocol endpoints
    and Eve's channel hook. ``engine="vectorized"`` computes the same
    experiment with arrays from the closed-form wire angles; it covers the
    strategies accepted by :func:`vectorized_problem` and is far faster.
    """
    if engine not in ENGINES:
        raise ValueError(f"unknown engine {engine!r}; choose from {ENGINES}")
    if engine == VECTORIZED:
        problem = vectorized_problem(strategy, mode, detector)
        if problem:
            raise ValueError(f"vectorized engine cannot run {problem}")
    if isinstance(strategy, BeamSplit) and strategy.k * len(strategy.stages) >= photon_count:
        # every tapped stage removes k photons from the same pulse
        raise ValueError(
            f"beam split needs k * stages < photon_count "
            f"({strategy.k} * {len(strategy.stages)} >= {photon_count})"
        )
    root = np.random.SeedSequence(rng_seed)
    plain_seq, sessions_seq = root.spawn(2)
    if message is not None:
        plaintext = [int(b) for b in message]
    else:
        if n_bits is None or n_bits < 1:
            raise ValueError("give n_bits >= 1 or a message")
        plaintext = [int(b) for b in np.random.default_rng(plain_seq).integers(0, 2, n_bits)]
    session_bits = max(block_size, session_bits - session_bits % block_size)
    chunks = [plaintext[i : i + session_bits] for i in range(0, len(plaintext), session_bits)]
    seqs = sessions_seq.spawn(len(chunks))
    jobs = [(strategy, c, s, photon_count, block_size, mode, detector) for c, s in zip(chunks, seqs)]
    run = _run_chunk_vectorized if engine == VECTORIZED else _run_chunk
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    bob, eve = [], []
    for decoded, guesses in results:
        bob.extend(decoded)
        eve.extend(guesses)
    return AttackReport.from_counts(_describe(strategy), rng_seed, photon_count, plaintext, bob, eve)
