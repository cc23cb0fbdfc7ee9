"""Self-check suites behind ``threestage verify``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bench import BenchConfig, bench_transmit_bit, plate_product
from .detector import DetectorModel
from .polarization import ALGEBRA_TOL, StokesVector, apply_mueller, is_unitary
from .protocol import ABSTRACT, BENCH, ROTATION, BlockKey, alice_stage1, alice_stage3, bob_stage2, bob_stage4
from .transforms import EXACT, FAMILIES, PHASE, commutation_table, family_behaviour, masking_probability

HORIZONTAL = StokesVector(1.0, 1.0, 0.0, 0.0)


@dataclass(frozen=True)
class Check:
    suite: str
    name: str
    passed: bool
    detail: str = ""


def _max_dev(a: StokesVector, b: StokesVector) -> float:
    return float(np.max(np.abs(a.array - b.array)))


def suite_identity(grid: int = 24) -> list:
    """Four half-wave plates at x, y, -x, -y (beam order) return horizontal light unchanged."""
    out = []
    dev = _max_dev(apply_mueller(plate_product(30.0, 40.0), HORIZONTAL), HORIZONTAL)
    out.append(Check("identity", "plates x=30 y=40 on (1,1,0,0)", dev <= ALGEBRA_TOL, f"max deviation {dev:.2e}"))

    cfg = BenchConfig.with_angles(30.0, 40.0)
    res = bench_transmit_bit(0, cfg, DetectorModel.ideal())
    dev = _max_dev(res.normalized_out, HORIZONTAL)
    out.append(
        Check("identity", "full bench x=30 y=40, bit 0", dev <= ALGEBRA_TOL and res.bit == 0, f"detector {res.bit}, {dev:.2e}")
    )

    worst = 0.0
    for i in range(grid):
        for j in range(grid):
            x, y = 360.0 * i / grid, 360.0 * j / grid
            worst = max(worst, float(np.max(np.abs(plate_product(x, y).matrix - np.eye(4)))))
    out.append(Check("identity", f"{grid}x{grid} grid, beam order", worst <= ALGEBRA_TOL, f"max deviation {worst:.2e}"))

    dev = _max_dev(apply_mueller(plate_product(30.0, 40.0, "written"), HORIZONTAL), HORIZONTAL)
    out.append(
        Check("identity", "order x,-x,y,-y differs at x=30 y=40", dev > 1e-3, f"deviation {dev:.3f} (not the identity)")
    )
    return out


# declared behaviour per family and the phases allowed between its members
EXPECTED_PHASES = {
    "rotation": {1},
    "pauli": {1, -1},
    "hadamard": {1},
    "permutation": {1},
    "dft": {1},
    "quaternion": {1, -1},
}


def suite_groups(grid: int = 24) -> list:
    out = []
    for name, family in FAMILIES.items():
        elems = family.enumerate(grid)
        unitary = all(is_unitary(u.matrix, ALGEBRA_TOL) for u in elems)
        table = commutation_table(family, grid)
        phases = {lam for _, _, lam in table}
        ok_phases = None not in phases and {complex(p) for p in EXPECTED_PHASES[name]} >= phases
        try:
            behaviour = family_behaviour(family, grid)
        except ValueError as exc:
            behaviour = str(exc)
        label = "exact" if behaviour == EXACT else "up to phase" if behaviour == PHASE else behaviour
        shown = sorted({f"{p.real:+g}" if p is not None and p.imag == 0 else str(p) for p in phases})
        out.append(
            Check(
                "groups",
                f"{name}: commutes {label}",
                unitary and ok_phases and behaviour == family.commutation,
                f"{len(elems)} elements, lambda in {{{', '.join(shown)}}}",
            )
        )
    return out


def suite_masking() -> list:
    out = []
    p = masking_probability(FAMILIES["pauli"], 0)
    out.append(Check("masking", "pauli on |0>", p == 0.5, f"{p!r}"))
    p = masking_probability(FAMILIES["rotation"], 0)
    out.append(Check("masking", "rotation on |0>", abs(p - 0.5) <= ALGEBRA_TOL, f"{p!r}"))
    return out


def _roundtrip(bit: int, key: BlockKey, mode: str) -> int:
    m1 = alice_stage1(bit, key, mode=mode)
    return bob_stage4(alice_stage3(bob_stage2(m1, key, mode=mode), key, mode=mode), key, mode=mode)


def suite_roundtrip(step: float = 5.0) -> list:
    out = []
    n = int(round(360.0 / step))
    for mode in (ROTATION, BENCH):
        errors = runs = 0
        for i in range(n):
            for j in range(n):
                key = BlockKey(0, i * step, j * step)
                for bit in (0, 1):
                    errors += _roundtrip(bit, key, mode) != bit
                    runs += 1
        out.append(Check("roundtrip", f"{mode} {step:g} deg grid", errors == 0, f"{errors} errors in {runs} runs"))
    for name, family in FAMILIES.items():
        if family.is_continuous:
            continue
        errors = runs = 0
        for ua in family.elements:
            for ub in family.elements:
                key = BlockKey(0, u_a=ua, u_b=ub)
                for bit in (0, 1):
                    errors += _roundtrip(bit, key, ABSTRACT) != bit
                    runs += 1
        out.append(Check("roundtrip", f"abstract {name}", errors == 0, f"{errors} errors in {runs} runs"))
    return out


SUITES = {"identity": suite_identity, "groups": suite_groups, "masking": suite_masking, "roundtrip": suite_roundtrip}
# older name for the plate identity suite, still accepted on the command line
ALIASES = {"eq1": "identity"}


def run_suites(selector: str = "all") -> list:
    selector = ALIASES.get(selector, selector)
    if selector == "all":
        return [c for fn in SUITES.values() for c in fn()]
    try:
        return SUITES[selector]()
    except KeyError:
        raise ValueError(f"unknown suite {selector!r}; choose from {sorted(SUITES)} or 'all'") from None


def format_table(checks: list) -> str:
    width = max((len(c.name) for c in checks), default=0)
    lines = [f"{'PASS' if c.passed else 'FAIL'}  {c.suite:<9} {c.name:<{width}}  {c.detail}" for c in checks]
    return "\n".join(lines)
