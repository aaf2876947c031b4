"""End-to-end check of the Python bindings on a tiny problem."""

import json
import math
import os
import tempfile

import mocoinr


def tiny_config():
    cfg = json.loads(mocoinr.train_config("desk"))
    cfg["total_iters"] = 20
    cfg["frame_batch"] = 2
    cfg["model"]["decoder"]["width"] = 8
    for grid in (cfg["model"]["dvf_grid"], cfg["model"]["canonical_grid"]):
        grid["levels"] = 4
        grid["log2_table_size"] = 10
    return json.dumps(cfg)


def main():
    ds = mocoinr.simulate(16, 16, 3, json.dumps({"kind": "vista", "af": 2}), coils=2, seed=3)
    assert ds.shape == (3, 16, 16), ds.shape
    assert ds.coils == 2
    print(ds, ds.sampling_summary())

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "sim.mocokt")
        ds.save(path)
        again = mocoinr.Dataset.load(path)
        assert again.shape == ds.shape

        truth = ds.ground_truth()
        roi = ds.roi()
        assert len(truth) == 3 and len(truth[0]) == 256 and len(roi) == 256

        psnr, ssim, nrmse = mocoinr.evaluate(truth, truth, 16, 16, roi)
        assert math.isinf(psnr) and abs(ssim - 1.0) < 1e-12 and nrmse == 0.0

        zf = ds.zero_filled()
        zf_psnr, _, _ = mocoinr.evaluate(truth, zf, 16, 16, roi)

        fit = mocoinr.fit(ds, tiny_config(), seed=1)
        assert not fit.diverged
        assert fit.iterations == 20
        losses = fit.losses()
        assert all(math.isfinite(v) for v in losses)
        assert fit.report_csv().count("\n") == 21
        frames, dvfs, canonical = fit.reconstruct()
        assert len(frames) == 3 and len(dvfs[0]) == 256 and len(canonical) == 256
        print(f"zero-filled {zf_psnr:.2f} dB, fit {fit.final_metrics[0]:.2f} dB after {fit.iterations} iterations")

        fit.save_checkpoint(os.path.join(tmp, "ck.mocock"))
        assert os.path.getsize(os.path.join(tmp, "ck.mocock")) > 0

        try:
            mocoinr.simulate(16, 16, 3, json.dumps({"kind": "vista"}))
        except ValueError:
            pass
        else:
            raise AssertionError("missing af was accepted")

    checks = mocoinr.run_verify("interp")
    assert checks and all(c[4] for c in checks), checks
    print(f"interp suite: {len(checks)} checks passed")
    print("smoke test ok")


if __name__ == "__main__":
    main()
