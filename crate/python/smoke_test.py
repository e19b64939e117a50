"""Smoke test for the fibersr_py extension module.

Build first:
    cargo build --release -p fibersr-py --features extension-module
    cp target/release/libfibersr_py.so python/fibersr_py.so
"""
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import fibersr_py as fs


def main():
    hr = fs.phantom("neoplastic", 64, 64, seed=3)
    assert (hr.width, hr.height) == (64, 64)
    assert fs.psnr(hr, hr) == math.inf
    assert abs(fs.ssim(hr, hr) - 1.0) < 1e-12

    same, _, _ = fs.degrade(hr, m=2.0, s=2.0)
    assert same == hr

    lr, sparse, samples = fs.degrade(hr, m=4.0, s=8.0, d=2.0, seed=1)
    assert len(samples) == 256
    assert fs.degrade(hr, m=4.0, s=8.0, d=2.0, seed=1)[0] == lr
    print(f"LR  psnr {fs.psnr(hr, lr):.3f} dB  ssim {fs.ssim(hr, lr):.4f}")

    flat = fs.preprocess(fs.Image.filled(32, 32, 0.4))
    assert max(flat.data()) - min(flat.data()) < 1e-12

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "hr.pgm")
        hr.save(path)
        back = fs.Image.load(path)
        assert max(abs(a - b) for a, b in zip(back.data(), hr.data())) <= 0.5 / 65535 + 1e-12

    pairs = []
    for seed in range(4):
        img = fs.phantom("non_neoplastic", 48, 48, seed=seed)
        pairs.append((fs.degrade(img, m=4.0, s=8.0, seed=seed)[0], img))
    model, best_epoch, history = fs.train(pairs[:3], pairs[3:], epochs=2, patch_size=32, patches_per_image=2)
    assert len(history) == 3 and 0 <= best_epoch <= 2
    assert fs.Model.from_bytes(model.to_bytes()).to_bytes() == model.to_bytes()
    sr = model.infer(pairs[3][0])
    print(f"SR  psnr {fs.psnr(pairs[3][1], sr):.3f} dB after {len(history) - 1} epochs")

    reads = "image_id,reader_id,modality,call,confidence,truth\n"
    for i in range(120):
        truth = "neoplastic" if i < 78 else "non_neoplastic"
        reads += f"img{i},r1,HR,{truth},high,{truth}\n"
    s = fs.summarize_reads(reads, "HR")
    assert s["accuracy"] == 1.0 and s["prevalence"] == 0.65

    t, df, p = fs.t_test([1, 2, 3, 4], [2, 3, 4, 5])
    assert df == 6 and abs(p - 0.3153335962) < 1e-6
    assert fs.equivalence_sample_size(0.8) == 122

    try:
        fs.degrade(hr, m=8.0, s=4.0)
    except ValueError as e:
        print(f"rejected bad geometry: {e}")
    else:
        raise AssertionError("expected ValueError")
    print("smoke test passed")


if __name__ == "__main__":
    main()
