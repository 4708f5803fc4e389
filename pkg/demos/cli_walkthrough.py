"""Every CLI subcommand in one sitting, on a throwaway workspace.

The command line mirrors the library: synth-data, train, enhance,
evaluate, verify, and inspect. Each step below prints the exact argv it
runs, so the script doubles as a cheat sheet. Schedules are cut to the
bone here so the walkthrough stays close to a minute; for honest
enhancement numbers see train_denoiser.py.
"""

import json
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path


def run(*args):
    argv = [sys.executable, "-m", "sase", *args]
    print("\n$ sase " + " ".join(args))
    result = subprocess.run(argv, capture_output=True, text=True)
    output = (result.stdout + result.stderr).strip()
    if output:
        print("\n".join("  " + line for line in output.splitlines()[-8:]))
    if result.returncode != 0:
        raise SystemExit(f"exit code {result.returncode}")


def main():
    root = Path(tempfile.mkdtemp(prefix="sase_cli_"))
    corpus = root / "corpus"

    run("synth-data", "--out-dir", str(corpus), "--seed", "9",
        "--override", "data.n_speakers=4", "--override", "data.per_speaker=6",
        "--override", "data.snr_set=[0.0]",
        "--override", "data.duration_range=[0.35,0.5]")
    run("inspect", str(corpus / "manifest.jsonl"))

    config = root / "config.json"
    config.write_text(json.dumps({
        "train": {"epochs": 14, "batch_size": 4, "protocol": "OpenSpk",
                  "target_speaker": 1},
        "model": {"d": 48, "heads": 2, "arch": "gru"},
    }))
    run("train", "--manifest", str(corpus / "manifest.jsonl"),
        "--config", str(config), "--out-dir", str(root / "run"))
    run("inspect", str(root / "run" / "final"))

    manifest = json.loads((corpus / "manifest.jsonl")
                          .read_text().splitlines()[1])
    mixture = corpus / manifest["mixture"]
    run("enhance", "--checkpoint", str(root / "run" / "final"),
        "--out-dir", str(root / "enhanced"), "--diagnostics", str(mixture))
    print("  wrote:", sorted(p.name for p in (root / "enhanced").iterdir()))

    run("evaluate", "--manifest", str(corpus / "manifest.jsonl"),
        "--checkpoint", str(root / "run" / "final"), "--split", "test",
        "--out-dir", str(root / "eval"))

    run("verify", "--manifest", str(corpus / "manifest.jsonl"),
        "--config", str(config), "--out-dir", str(root / "verify"))
    print("\ntable.csv:")
    print((root / "verify" / "table.csv").read_text().strip())

    shutil.rmtree(root)


if __name__ == "__main__":
    main()
