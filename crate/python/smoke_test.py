"""Builds the extension module, imports it and runs a tiny end-to-end job."""

import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
TARGET = ROOT / "target" / "pyext"

TINY = """
max_steps = 10
validate_every = 5
hidden_size = 8
image_channels = [4, 4, 4, 4]
image_feature_dim = 16
audio_channels = [4, 4, 4]
transcript_layers = [16, 12, 20]
fusion_hidden = 8
stage2_lstm_layers = 3
lr_ambient = 1e-3
lr_facial = 1e-3
lr_audio = 1e-3
lr_transcript = 1e-3
lr_fusion = 1e-3
"""


def build(dest):
    env = dict(os.environ, PYO3_BUILD_EXTENSION_MODULE="1", PYO3_PYTHON=sys.executable)
    subprocess.run(
        ["cargo", "build", "-p", "ocean-fusion-py", "--target-dir", str(TARGET)],
        cwd=ROOT, env=env, check=True,
    )
    lib = TARGET / "debug" / "libocean_fusion_py.so"
    shutil.copy(lib, dest / "ocean_fusion_py.so")


def main():
    work = Path(tempfile.mkdtemp(prefix="ocean_fusion_smoke_"))
    build(work)
    sys.path.insert(0, str(work))
    import ocean_fusion_py as of

    cfg = of.TrainConfig(TINY)
    assert of.TrainConfig().learning_rate("audio") == 1e-4
    assert of.PROPOSED_REFERENCE_MEAN == 0.9188

    r = of.EvaluationReport.from_pairs([[0.2, 0.4, 0.6, 0.8, 0.5]], [[0.3, 0.3, 0.7, 0.6, 0.5]])
    assert abs(r.mean_accuracy - 0.9) < 1e-12, r

    fits = of.fit_btl('{"trait":"openness","video_a":"x","video_b":"y","winner":"a","worker_id":"w"}\n')
    assert fits[0].normalized_scores == {"x": 1.0, "y": 0.0}

    patches = of.log_mel_patches([0.0] * 16000, 16000)
    assert len(patches) == 1 and len(patches[0]) == 96 * 64

    manifest = of.generate_synthetic_dataset(5, 1, str(work / "data"))
    ckpts = []
    for m in ["ambient", "facial", "audio", "transcript"]:
        path = str(work / f"{m}.ckpt")
        sha, acc = of.train_stage1(m, manifest, path, cfg)
        assert len(sha) == 64 and 0.0 <= acc <= 1.0
        ckpts.append(path)
    of.train_stage2(ckpts, manifest, str(work / "fused.ckpt"), cfg)
    report = of.evaluate(str(work / "fused.ckpt"), manifest, "validation", cfg)
    assert report.n_videos == 1 and 0.0 <= report.mean_accuracy <= 1.0
    print(report)
    print("smoke test passed")
    shutil.rmtree(work)


if __name__ == "__main__":
    main()
