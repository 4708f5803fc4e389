"""Train a small denoiser end to end and listen to the numbers.

Generates a three-speaker corpus, trains the recurrent variant of the
model under the Open protocol (the target speaker is held out of
training entirely), and reports test-set SI-SDR against the untreated
mixtures. Uses a deliberately small schedule so the whole story runs in
about a minute; the acceptance suite runs the full-margin version.
"""

import json
import shutil
import tempfile
from pathlib import Path

from sase.checkpoint import load_params
from sase.data import generate_corpus, load_manifest, load_pair
from sase.losses import si_sdr
from sase.model import ModelConfig, enhance
from sase.train import TrainConfig, noisy_baseline, train


def main():
    root = Path(tempfile.mkdtemp(prefix="sase_train_"))
    corpus = root / "corpus"
    generate_corpus(corpus, n_speakers=4, per_speaker=12, snr_set=(0.0,),
                    seed=5, duration_range=(0.4, 0.6))
    manifest = load_manifest(corpus / "manifest.jsonl")

    config = TrainConfig(
        epochs=30, lr_initial=1e-3, batch_size=8, seed=0,
        protocol="Open", target_speaker=1,
        model=ModelConfig(d=64, heads=2, n_bins=257, n_speakers=4,
                          arch="gru"))
    run_dir = root / "run"
    params, report = train(manifest, config, run_dir)

    final = report.final
    held_out = [e for e in manifest.split_entries("test")
                if e["speaker_id"] == config.target_speaker]
    baseline = noisy_baseline(manifest, held_out, config)
    print("best epoch:", final["best_epoch"])
    print(f"dev SI-SDR at best: {final['best_dev_si_sdr']:+.2f} dB")
    print(f"test SI-SDR: {final['test']['si_sdr']:+.2f} dB"
          f" (noisy baseline {baseline['si_sdr']:+.2f} dB)")

    # The checkpoint directory is self-describing: parameters plus the
    # resolved model configuration.
    stored = json.loads((run_dir / "final" / "config.json").read_text())
    model_config = ModelConfig.from_json_dict(stored["effective_model"])
    best = load_params(run_dir / "best")
    entry = manifest.split_entries("test")[0]
    pair = load_pair(manifest, entry)
    enhanced, _ = enhance(pair.mixture, best, model_config)
    print(f"one test utterance: {si_sdr(pair.clean, pair.mixture):+.2f} dB"
          f" noisy -> {si_sdr(pair.clean, enhanced):+.2f} dB enhanced")

    shutil.rmtree(root)


if __name__ == "__main__":
    main()
