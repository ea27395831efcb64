"""Smoke test for the pyepishear extension.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, then run
`python python/smoke_test.py`.
"""

import os
import sys
import tempfile

import numpy as np

import pyepishear as pe


def check_system():
    assert pe.num_shearlets(32) == (5, 68)
    system = pe.ShearletSystem(8, 64, 32)
    assert system.num_filters == 18 and system.shape == (32, 64)
    assert system.frame_energy_deviation() < 1e-10
    x = np.random.default_rng(0).uniform(-1, 1, size=(32, 64))
    coeffs = system.analyze(x.ravel().tolist())
    assert len(coeffs) == 18 * 32 * 64
    back = np.asarray(system.synthesize(coeffs)).reshape(32, 64)
    assert np.linalg.norm(back - x) / np.linalg.norm(x) < 1e-10


def check_weights():
    w = pe.NetworkWeights.random(1)
    assert w.param_count == 1_368_260
    assert w.tensors()[-1] == ("head.bias", [68])
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "w.lfw")
        w.save(path)
        back = pe.NetworkWeights.load(path)
    assert back.to_bytes() == w.to_bytes()
    try:
        pe.NetworkWeights.from_bytes(b"LFW0" + bytes(8))
    except ValueError as e:
        assert "magic" in str(e)
    else:
        raise AssertionError("bad magic accepted")

    small = pe.NetworkWeights.zeros(channels=4)
    out = small.forward([0.5] * (4 * 16 * 16), 16, 16)
    assert out == [0.0] * (4 * 16 * 16)


def check_reconstruct():
    scene = pe.synth_reference(views=4, tau=32, width=24, height=2)
    assert len(scene["sparse"]) == 4 and len(scene["dense"]) == 97
    zero = pe.NetworkWeights.zeros()
    views, epi_ms = pe.reconstruct(
        scene["sparse"], 2, 24, scene["d_min"], scene["d_max"], method="cyclest", weights=zero
    )
    assert len(views) == 97 and len(epi_ms) == 2
    assert views[32] == scene["sparse"][1]
    gt = scene["dense"][16]
    baseline = pe.psnr(views[16], gt)

    # zero weights leave the gaps empty; the solver has to beat that
    views, _ = pe.reconstruct(scene["sparse"], 2, 24, scene["d_min"], scene["d_max"], iterations=20)
    assert len(views) == 97
    assert pe.psnr(views[16], gt) > baseline + 10.0


def check_losses():
    assert pe.loss_total(0.1, 0.2, 0.3) == 0.9
    tau, width = 4, 5
    pred5 = np.random.default_rng(1).random((4 * tau + 1, width, 3), dtype=np.float32)
    pred3 = pred5[::2]
    assert pe.loss_cyc(pred3.ravel().tolist(), pred5.ravel().tolist(), width, tau) == 0.0


def main():
    for check in (check_system, check_weights, check_reconstruct, check_losses):
        check()
        print(f"{check.__name__}: ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
