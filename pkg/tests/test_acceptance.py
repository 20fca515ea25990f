"""Acceptance criteria, each checked at its stated tolerance and time budget.

Run alone with ``pytest tests/test_acceptance.py``; a PASS/FAIL line per
criterion is printed in the terminal summary.
"""

import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from georope.attention import Batch, EncoderKind, GeoTransformer, ModelConfig, MSELoss, gradient_check
from georope.baselines import rope_rotate, rope_schedule
from georope.bench import DEFAULT_DIMS, run_bench
from georope.cli import main
from georope.spherical import (
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
from georope.tasks import (
    TrainConfig,
    chance_band,
    default_ablation_configs,
    gen_nearest_neighbor_task,
    run_ablation,
    train,
)


@contextmanager
def budget(seconds):
    t0 = time.perf_counter()
    yield
    elapsed = time.perf_counter() - t0
    assert elapsed < seconds, f"took {elapsed:.2f}s, budget {seconds}s"


def angles(rng, n):
    return rng.uniform(-math.pi, math.pi, n), rng.uniform(-math.pi / 2, math.pi / 2, n)


def closed_form_block(t, p):
    # entries written out by hand from Rz(t) @ Rx(p)
    ct, st, cp, sp = math.cos(t), math.sin(t), math.cos(p), math.sin(p)
    return np.array([[ct, -cp * st, sp * st], [st, cp * ct, -sp * ct], [0.0, sp, cp]])


@pytest.mark.criterion(1, "rotation correctness")
def test_rotation_correctness():
    rng = np.random.default_rng(101)
    with budget(1.0):
        for t, p in zip(*angles(rng, 1000)):
            b = spherical_block(t, p)
            assert np.max(np.abs(b.T @ b - np.eye(3))) < 1e-12
            assert abs(np.linalg.det(b) - 1.0) < 1e-12
            assert np.array_equal(euler_rotation(p, 0.0, t), b)
            assert np.max(np.abs(b - rot_z(t) @ rot_x(p))) <= 1e-15
            assert np.max(np.abs(b - closed_form_block(t, p))) <= 1e-15


@pytest.mark.criterion(2, "printed-sign fidelity report")
def test_as_printed_fidelity():
    rng = np.random.default_rng(102)
    with budget(1.0):
        pairs = list(zip(*angles(rng, 500))) + [(0.0, 0.0), (0.0, math.pi / 4), (math.pi / 2, 0.0)]
        printed = [orthogonality_defect(as_printed_block(t, p)) for t, p in pairs]
        default = [orthogonality_defect(spherical_block(t, p)) for t, p in pairs]
        assert max(printed) > 0.1
        assert max(default) < 1e-12


@pytest.mark.criterion(3, "blockwise kernel matches dense oracle")
def test_kernel_oracle():
    rng = np.random.default_rng(103)
    with budget(10.0):
        for d in (3, 6, 48, 768):
            for mode in (Mode.UNIFORM, Mode.MULTIFREQ):
                cfg = EncodingConfig(d, mode)
                for _ in range(125):
                    t, p = angles(rng, 1)
                    enc = encoding_from_angles(p[0], t[0], cfg)
                    v = rng.standard_normal(d)
                    dense = enc.matrix() @ v  # plain matrix product as the oracle
                    assert np.max(np.abs(apply_blockwise(enc, v) - dense)) < 1e-12
                    assert np.max(np.abs(apply_dense(enc, v) - dense)) < 1e-12


@pytest.mark.criterion(4, "spherical relative-position identity")
def test_relative_identity():
    rng = np.random.default_rng(104)
    with budget(5.0):
        for i in range(1000):
            d = (3, 12, 48)[i % 3]
            cfg = EncodingConfig(d, (Mode.UNIFORM, Mode.MULTIFREQ)[i % 2])
            t, p = angles(rng, 2)
            a = encoding_from_angles(p[0], t[0], cfg)
            b = encoding_from_angles(p[1], t[1], cfg)
            q, k = rng.standard_normal((2, d))
            lhs = (a.matrix() @ q) @ (b.matrix() @ k)
            rhs = q @ (a.matrix().T @ b.matrix() @ k)
            assert abs(lhs - rhs) < 1e-10
            assert abs(lhs - q @ apply_blockwise(relative_rotation(a, b), k)) < 1e-10
            assert abs(apply_blockwise(a, q) @ apply_blockwise(a, k) - q @ k) < 1e-10


@pytest.mark.criterion(5, "RoPE relative identity")
def test_rope_identity():
    rng = np.random.default_rng(105)
    with budget(5.0):
        for i in range(1000):
            d = (2, 16, 64)[i % 3]
            sched = rope_schedule(d)
            q, k = rng.standard_normal((2, d))
            m, n = (int(x) for x in rng.integers(-2048, 2048, 2))
            lhs = rope_rotate(q, m, sched) @ rope_rotate(k, n, sched)
            assert abs(lhs - q @ rope_rotate(k, n - m, sched)) < 1e-10


@pytest.mark.criterion(6, "gradient check, all encoder modes")
def test_gradient_check_all_modes():
    rng = np.random.default_rng(106)
    b, n, d = 2, 4, 6
    with budget(30.0):
        for kind in EncoderKind:
            batch = Batch(rng.standard_normal((b, n, d)), np.arcsin(rng.uniform(-1, 1, (b, n))), rng.uniform(-3, 3, (b, n)))
            model = GeoTransformer(ModelConfig(dim=d, heads=2, layers=1, encoder=kind, seed=6))
            report = gradient_check(model, batch, MSELoss(rng.standard_normal((b, n, d))), step=1e-5)
            assert report.worst < 1e-4, (kind, report.max_rel_error)


@pytest.mark.criterion(7, "encoder ablation on nearest-neighbour retrieval")
def test_encoder_ablation():
    with budget(600.0):
        sweeps = run_ablation(default_ablation_configs(12), range(5), TrainConfig(), n_tokens=16, n_train=2000, n_eval=500)
    lo, hi = chance_band(16, 500)
    none = sweeps["none"]
    print(f"chance band {lo:.4f}..{hi:.4f}")
    for label, sw in sweeps.items():
        print(f"{label}: median {sw.median_accuracy:.4f} per seed {sw.accuracies}")
    for label in ("spherical-uniform", "spherical-multifreq"):
        assert sweeps[label].median_accuracy > none.median_accuracy
    assert lo <= none.median_accuracy <= hi
    assert all(lo <= a <= hi for a in none.accuracies)


@pytest.mark.criterion(8, "dense vs blockwise scaling")
def test_scaling():
    with budget(120.0):
        res = run_bench(DEFAULT_DIMS, reps=30)
    print(res.summary())
    assert 0.7 <= res.blockwise_slope <= 1.4
    assert 1.6 <= res.dense_slope <= 2.4


@pytest.mark.criterion(9, "determinism of encode and train")
def test_determinism(tmp_path):
    src = tmp_path / "in.csv"
    src.write_text("id,lat_deg,lon_deg,f0,f1,f2,f3,f4,f5\na,12.5,-40.25,1,2,3,4,5,6\nb,-89.9,179.9,0.1,0.2,0.3,0.4,0.5,0.6\n")
    for mode in ("uniform", "multifreq"):
        outs = []
        for i in range(2):
            out = tmp_path / f"{mode}{i}.csv"
            assert main(["encode", str(src), "--mode", mode, "--out", str(out)]) == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    data = gen_nearest_neighbor_task(16, 200, seed=9, dim=12)
    runs = []
    for _ in range(2):
        model = GeoTransformer(ModelConfig(dim=12, heads=2, encoder="spherical", seed=9))
        _, losses = train(model, data, TrainConfig(steps=60, batch_size=32, seed=9))
        runs.append((np.array(losses), model.params))
    assert runs[0][0].tobytes() == runs[1][0].tobytes()
    for k in runs[0][1]:
        assert runs[0][1][k].tobytes() == runs[1][1][k].tobytes()
