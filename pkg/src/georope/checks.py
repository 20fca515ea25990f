"""Invariant suite and fidelity report behind ``georope check``."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import attention as att
from .baselines import RopeVariant, rope_rotate, rope_schedule, rope_theta, sinusoidal_encoding, sinusoidal_table
from .geo import UNIT_SPHERE, GeoPosition, great_circle_distance, make_position
from .spherical import (
    EncodingConfig,
    Mode,
    apply_blockwise,
    apply_dense,
    as_printed_block,
    encoding_from_angles,
    euler_rotation,
    orthogonality_defect,
    relative_rotation,
    rot_x,
    rot_z,
    spherical_block,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def _angles(rng, n):
    return rng.uniform(-math.pi, math.pi, n), rng.uniform(-math.pi / 2, math.pi / 2, n)


def check_rotation_blocks(rng) -> CheckResult:
    ortho = det = decomp = 0.0
    exact = True
    for t, p in zip(*_angles(rng, 1000)):
        b = spherical_block(t, p)
        ortho = max(ortho, orthogonality_defect(b))
        det = max(det, abs(np.linalg.det(b) - 1.0))
        decomp = max(decomp, float(np.max(np.abs(b - rot_z(t) @ rot_x(p)))))
        exact &= bool(np.array_equal(euler_rotation(p, 0.0, t), b))
    ok = ortho < 1e-12 and det < 1e-12 and decomp <= 1e-15 and exact
    return CheckResult(
        "rotation blocks", ok, f"orth {ortho:.1e}, det {det:.1e}, Rz*Rx {decomp:.1e}, euler(psi=0) exact={exact}"
    )


def check_as_printed(rng) -> CheckResult:
    worst_printed = max(orthogonality_defect(as_printed_block(t, p)) for t, p in zip(*_angles(rng, 200)))
    worst_default = max(orthogonality_defect(spherical_block(t, p)) for t, p in zip(*_angles(rng, 200)))
    ok = worst_printed > 0.1 and worst_default < 1e-12
    return CheckResult(
        "printed-sign block is not a rotation", ok, f"max defect printed {worst_printed:.3f}, default {worst_default:.1e}"
    )


def check_kernel_oracle(rng) -> CheckResult:
    worst = 0.0
    for d in (3, 6, 48, 768):
        for _ in range(250):
            t, p = _angles(rng, 1)
            enc = encoding_from_angles(p[0], t[0], EncodingConfig(d))
            v = rng.standard_normal(d)
            worst = max(worst, float(np.max(np.abs(apply_blockwise(enc, v) - apply_dense(enc, v)))))
    return CheckResult("blockwise == dense", worst < 1e-12, f"max diff {worst:.1e} over 1000 cases")


def check_relative_identity(rng) -> CheckResult:
    cfg = EncodingConfig(12, Mode.MULTIFREQ)
    worst = same = norm = 0.0
    for _ in range(1000):
        t, p = _angles(rng, 2)
        a = encoding_from_angles(p[0], t[0], cfg)
        b = encoding_from_angles(p[1], t[1], cfg)
        q, k = rng.standard_normal((2, 12))
        lhs = apply_blockwise(a, q) @ apply_blockwise(b, k)
        rhs = q @ apply_blockwise(relative_rotation(a, b), k)
        worst = max(worst, abs(lhs - rhs))
        same = max(same, abs(apply_blockwise(a, q) @ apply_blockwise(a, k) - q @ k))
        norm = max(norm, abs(np.linalg.norm(apply_blockwise(a, q)) - np.linalg.norm(q)))
    ok = worst < 1e-10 and same < 1e-10 and norm < 1e-12
    return CheckResult("relative rotation identity", ok, f"max |lhs-rhs| {worst:.1e}, same-pos {same:.1e}, norm {norm:.1e}")


def check_periodicity(rng) -> CheckResult:
    worst = 0.0
    for t, p in zip(*_angles(rng, 200)):
        a = encoding_from_angles(p, t, EncodingConfig(9))
        b = encoding_from_angles(p, t + 2 * math.pi, EncodingConfig(9))
        worst = max(worst, float(np.max(np.abs(a.blocks - b.blocks))))
    return CheckResult("longitude periodicity (uniform)", worst < 1e-12, f"max diff {worst:.1e}")


def check_rope(rng) -> CheckResult:
    sched = rope_schedule(16)
    worst = norm = 0.0
    for _ in range(1000):
        q, k = rng.standard_normal((2, 16))
        m, n = rng.integers(0, 512, 2)
        lhs = rope_rotate(q, m, sched) @ rope_rotate(k, n, sched)
        rhs = q @ rope_rotate(k, n - m, sched)
        worst = max(worst, abs(lhs - rhs))
        norm = max(norm, abs(np.linalg.norm(rope_rotate(q, m, sched)) - np.linalg.norm(q)))
    ok = worst < 1e-10 and norm < 1e-12
    return CheckResult("rope relative identity", ok, f"max |lhs-rhs| {worst:.1e}, norm {norm:.1e}")


def check_sinusoidal(rng) -> CheckResult:
    table = sinusoidal_table(2048, 64).values
    bounded = bool(np.all(np.abs(table) <= 1.0))
    worst = 0.0
    for _ in range(200):
        m, k = rng.integers(0, 1000, 2)
        pm, pmk = sinusoidal_encoding(m, 64), sinusoidal_encoding(m + k, 64)
        for t in range(32):
            w = k / 10000 ** (2 * t / 64)
            c, s = math.cos(w), math.sin(w)
            # (sin, cos)(a + w) = rotation of (sin a, cos a)
            exp = (pm[2 * t] * c + pm[2 * t + 1] * s, pm[2 * t + 1] * c - pm[2 * t] * s)
            worst = max(worst, abs(exp[0] - pmk[2 * t]), abs(exp[1] - pmk[2 * t + 1]))
    return CheckResult("sinusoidal table", bounded and worst < 1e-10, f"bounded={bounded}, shift err {worst:.1e}")


def check_geo(rng) -> CheckResult:
    pts = [GeoPosition(math.asin(u), o) for u, o in zip(rng.uniform(-1, 1, 3000), rng.uniform(-math.pi, math.pi, 3000))]
    sym = tri = True
    for a, b, c in zip(pts[0::3], pts[1::3], pts[2::3]):
        sym &= great_circle_distance(a, b, UNIT_SPHERE) == great_circle_distance(b, a, UNIT_SPHERE)
        tri &= great_circle_distance(a, c, UNIT_SPHERE) <= (
            great_circle_distance(a, b, UNIT_SPHERE) + great_circle_distance(b, c, UNIT_SPHERE) + 1e-9
        )
    wrap = all(make_position(la, lo) == make_position(la, lo + 360) for la, lo in zip(range(-90, 91, 7), range(-180, 181, 7)))
    return CheckResult("sphere geometry", sym and tri and wrap, f"symmetric={sym}, triangle={tri}, wrap={wrap}")


def check_gradients(rng) -> CheckResult:
    b, n, d = 2, 4, 6
    batch = att.Batch(rng.standard_normal((b, n, d)), np.arcsin(rng.uniform(-1, 1, (b, n))), rng.uniform(-3, 3, (b, n)))
    loss = att.MSELoss(rng.standard_normal((b, n, d)))
    worst = {}
    for kind in att.EncoderKind:
        model = att.GeoTransformer(att.ModelConfig(dim=d, heads=2, layers=2, ff_width=4, encoder=kind, seed=1))
        worst[kind.value] = att.gradient_check(model, batch, loss).worst
    ok = all(w < 1e-4 for w in worst.values())
    return CheckResult("analytic gradients", ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


CHECKS: list[Callable] = [
    check_rotation_blocks,
    check_as_printed,
    check_kernel_oracle,
    check_relative_identity,
    check_periodicity,
    check_rope,
    check_sinusoidal,
    check_geo,
    check_gradients,
]


def run_checks(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [c(rng) for c in CHECKS]


# -- fidelity report ---------------------------------------------------------------

FIDELITY_GRID = [
    (0.0, 0.0),
    (math.pi / 2, 0.0),
    (0.0, math.pi / 4),
    (math.pi / 4, math.pi / 4),
    (math.pi / 3, -math.pi / 6),
    (-2.0, 1.0),
]


def orthogonality_table() -> list[tuple[float, float, float, float]]:
    """(theta, phi, defect of rotation block, defect of printed-sign block)."""
    return [
        (t, p, orthogonality_defect(spherical_block(t, p)), orthogonality_defect(as_printed_block(t, p)))
        for t, p in FIDELITY_GRID
    ]


def format_orthogonality_table() -> str:
    lines = ["max |B^T B - I| for the spherical block vs the printed-sign block", f"{'theta':>8} {'phi':>8} {'rotation':>10} {'printed':>10}"]
    for t, p, d0, d1 in orthogonality_table():
        lines.append(f"{t:>8.4f} {p:>8.4f} {d0:>10.2e} {d1:>10.2e}")
    return "\n".join(lines)


def fidelity_rows() -> list[tuple[str, str, str]]:
    return [
        (
            "spherical block middle row",
            "[sin t, -cos p cos t, -sin p cos t]",
            "[sin t, +cos p cos t, -sin p cos t] (true rotation); printed form kept as mode=as-printed",
        ),
        ("stray 'm' in second block", "sin(p2) sin(m t2)", "sin(p2) sin(t2)"),
        ("angle naming", "theta/phi called lon/lat and then lat/lon", "theta = longitude (z axis), phi = latitude (x axis)"),
        ("per-block angles", "theta_i, phi_i with no schedule", "uniform (all blocks equal) by default; multifreq optional"),
        ("dim not a multiple of 3", "deferred", "rejected unless --pad; padding block is identity"),
        ("sinusoidal exponent", "sin(k/10000^{2t,d})", "sin(m/10000^(2t/d)) at 2t, cos(...) at 2t+1"),
        (
            "rope frequency",
            "10000^(-(2i-1)/d)",
            f"printed form by default (d=4,i=1 -> {rope_theta(1, 4):.3g}); canonical 10000^(-2(i-1)/d) "
            f"-> {rope_theta(1, 4, RopeVariant.CANONICAL):.3g} via rope_variant=canonical",
        ),
        ("key/value projections", "f_k(x_m, n), f_v(x_m, n)", "f_k(x_n, n), f_v(x_n, n); values never rotated"),
    ]


def format_fidelity_report() -> str:
    rows = fidelity_rows()
    w0 = max(len(r[0]) for r in rows)
    w1 = max(len(r[1]) for r in rows)
    lines = ["fidelity report: printed formula vs implementation", f"{'item':<{w0}}  {'printed':<{w1}}  implemented"]
    for a, b, c in rows:
        lines.append(f"{a:<{w0}}  {b:<{w1}}  {c}")
    return "\n".join(lines)
