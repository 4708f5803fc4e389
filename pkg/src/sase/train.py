"""Training loop, checkpointing, and the three-protocol experiment runner.

Determinism is load-bearing here: every stochastic choice draws from a
fresh generator keyed by (seed, purpose, epoch), so runs are bit-identical
for a fixed seed and a resumed run continues exactly where the original
would have been. Wall times are kept out of the canonical report for the
same reason; they live in a sidecar file.
"""

import json
import time
from dataclasses import dataclass, field, replace
from itertools import chain
from pathlib import Path

import numpy as np

from .autodiff import Tape, backward
from .checkpoint import load_adam, load_params, save_adam, save_params
from .data import (
    iter_loaded_batches,
    load_pair,
    make_batches,
    noise_swap_augment,
    protocol_split,
)
from .dsp import (
    StftConfig,
    complex_mul,
    compute_feature_stats,
    istft_tensors,
    log_amplitude_features,
    stft,
)
from .errors import DataError, NumericalError
from .losses import LossConfig, multitask_loss, sdr_loss, si_sdr
from .model import ModelConfig, enhance, forward, init_model
from .optim import AdamState, adam_step

TABLE_METHODS = ("Noisy", "Close", "Open", "Open+SPK")
_ARM_PROTOCOLS = (("Close", "Close"), ("Open", "Open"), ("Open+SPK", "OpenSpk"))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    lr_initial: float = 0.001
    batch_size: int = 8
    seed: int = 0
    protocol: str = "Open"
    target_speaker: int = 0
    checkpoint_every: int = 0  # 0: epochs // 4
    augment_prob: float = 0.5
    force_spk_branch: bool = False  # turns Close/Open into *+SPK variants
    loss: LossConfig = field(default_factory=LossConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr_initial <= 0:
            raise ValueError("lr_initial must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.augment_prob <= 1.0:
            raise ValueError("augment_prob must be in [0, 1]")

    @property
    def periodic_every(self):
        return self.checkpoint_every or max(1, self.epochs // 4)

    def to_json_dict(self):
        return {
            "epochs": self.epochs, "lr_initial": self.lr_initial,
            "batch_size": self.batch_size, "seed": self.seed,
            "protocol": self.protocol, "target_speaker": self.target_speaker,
            "checkpoint_every": self.checkpoint_every,
            "augment_prob": self.augment_prob,
            "force_spk_branch": self.force_spk_branch,
            "loss": {"alpha": self.loss.alpha, "beta": self.loss.beta},
            "model": self.model.to_json_dict(),
            "stft": {"dft_size": self.stft.dft_size, "hop": self.stft.hop,
                     "window_kind": self.stft.window_kind,
                     "window_length": self.stft.window_length},
        }

    @staticmethod
    def from_json_dict(d):
        d = dict(d)
        if "loss" in d:
            d["loss"] = LossConfig(**d["loss"])
        if "model" in d:
            d["model"] = ModelConfig.from_json_dict(d["model"])
        if "stft" in d:
            d["stft"] = StftConfig(**d["stft"])
        return TrainConfig(**d)


@dataclass
class TrainReport:
    config: dict
    epochs: list = field(default_factory=list)
    final: dict = field(default_factory=dict)
    wall_times: list = field(default_factory=list)  # seconds, per epoch

    def to_json_dict(self):
        # wall times intentionally excluded: the canonical report must be
        # bit-identical across runs with equal seeds
        return {"config": self.config, "epochs": self.epochs,
                "final": self.final}

    def save(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with (out_dir / "report.json").open("w") as fh:
            json.dump(self.to_json_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")
        with (out_dir / "timing.json").open("w") as fh:
            json.dump({"epoch_seconds": self.wall_times}, fh, indent=1)
            fh.write("\n")
        with (out_dir / "report.csv").open("w") as fh:
            fh.write("epoch,lr,loss,sdr_speech,sdr_noise,cross_entropy,"
                     "dev_si_sdr\n")
            for rec in self.epochs:
                dev = "" if rec["dev_si_sdr"] is None else repr(rec["dev_si_sdr"])
                fh.write(f"{rec['epoch']},{rec['lr']!r},{rec['loss']!r},"
                         f"{rec['sdr_speech']!r},{rec['sdr_noise']!r},"
                         f"{rec['cross_entropy']!r},{dev}\n")


def lr_at(epoch, config):
    """Constant lr through the first half, then linear decay to lr/100."""
    if not 1 <= epoch <= config.epochs:
        raise ValueError(f"epoch {epoch} outside schedule range"
                         f" [1, {config.epochs}]")
    half = config.epochs / 2.0
    if epoch <= half:
        return config.lr_initial
    return config.lr_initial * (1.0 - 0.99 * (epoch - half)
                                / (config.epochs - half))


def _effective_model_config(config, split, train_speakers):
    use_spk = split.use_spk or config.force_spk_branch
    if use_spk and len(train_speakers) < 2:
        raise DataError("the speaker branch needs >= 2 training speakers,"
                        f" got {train_speakers}")
    kw = {"use_spk": use_spk}
    if use_spk:
        kw["n_speakers"] = len(train_speakers)
    return replace(config.model, **kw)


def utterance_loss(pair, params, model_config, config, label):
    """Forward + mask + resynthesis + multitask loss for one utterance."""
    spec_x = stft(pair.mixture, config.stft)
    out = forward(spec_x, params, model_config)
    y_re, y_im = complex_mul(out.mask_real, out.mask_imag,
                             spec_x.real, spec_x.imag)
    y = istft_tensors(y_re, y_im, config.stft, pair.mixture.size)
    posterior = out.posterior if model_config.use_spk else None
    return multitask_loss(pair.clean, y, pair.mixture, label, posterior,
                          config.loss)


def _mean_dev_si_sdr(manifest, entries, params, model_config, config):
    if not entries:
        return None
    scores = []
    for entry in entries:
        pair = load_pair(manifest, entry)
        y, _ = enhance(pair.mixture, params, model_config, config.stft)
        scores.append(si_sdr(pair.clean, y))
    return float(np.mean(scores))


def _stats_pass(manifest, entries, params, config):
    grids = (log_amplitude_features(stft(load_pair(manifest, e).mixture,
                                         config.stft))
             for e in entries)
    mean, var = compute_feature_stats(grids)
    params["norm.mean"].data = mean
    params["norm.var"].data = var


def _save_checkpoint(ckpt_dir, params, adam, full_config, state):
    save_params(ckpt_dir, params, extra_config=full_config)
    save_adam(ckpt_dir, adam)
    with (Path(ckpt_dir) / "trainer_state.json").open("w") as fh:
        json.dump(state, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_trainer_state(ckpt_dir):
    path = Path(ckpt_dir) / "trainer_state.json"
    if not path.exists():
        raise DataError(f"{ckpt_dir} has no trainer_state.json to resume from")
    with path.open() as fh:
        return json.load(fh)


def train(manifest, config, out_dir, resume_from=None):
    """Run the schedule over the configured protocol split.

    Returns (final params, TrainReport). Checkpoints land under out_dir:
    best/ (highest dev SI-SDR), periodic epochNNN/, and final/.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split = protocol_split(manifest, config.protocol, config.target_speaker)
    train_entries = list(split.train)
    train_speakers = sorted({e["speaker_id"] for e in train_entries})
    label_of = {s: i for i, s in enumerate(train_speakers)}
    model_config = _effective_model_config(config, split, train_speakers)
    full_config = {"train": config.to_json_dict(),
                   "effective_model": model_config.to_json_dict(),
                   "speaker_labels": {str(s): i for s, i in label_of.items()}}
    with (out_dir / "resolved_config.json").open("w") as fh:
        json.dump(full_config, fh, indent=1, sort_keys=True)
        fh.write("\n")

    if resume_from is not None:
        params = load_params(resume_from)
        adam = load_adam(resume_from)
        state = load_trainer_state(resume_from)
        start_epoch = state["epoch"] + 1
        best_epoch, best_dev = state["best_epoch"], state["best_dev"]
    else:
        params = init_model(model_config, seed=config.seed)
        _stats_pass(manifest, train_entries, params, config)
        adam = AdamState(lr=config.lr_initial)
        start_epoch, best_epoch, best_dev = 1, None, None

    report = TrainReport(config=full_config)
    if resume_from is not None:
        report.config = dict(full_config, resumed_from=str(resume_from))

    for epoch in range(start_epoch, config.epochs + 1):
        t0 = time.perf_counter()
        adam.lr = lr_at(epoch, config)
        batches = make_batches(train_entries, config.batch_size,
                               seed=[config.seed, 31, epoch],
                               stft_config=config.stft)
        for entry in chain.from_iterable(batches):
            assert entry["speaker_id"] not in split.banned_speakers, \
                f"speaker leakage: {entry['clean']} in epoch {epoch}"
        aug_rng = np.random.default_rng([config.seed, 47, epoch])
        sums = np.zeros(4)
        count = 0
        for bi, pairs in enumerate(iter_loaded_batches(manifest, batches)):
            if len(pairs) >= 2:
                order = aug_rng.permutation(len(pairs))
                for i in range(0, len(pairs) - 1, 2):
                    if aug_rng.random() < config.augment_prob:
                        a, b = order[i], order[i + 1]
                        pairs[a], pairs[b] = noise_swap_augment(pairs[a],
                                                                pairs[b])
            with Tape():
                total = None
                breakdowns = []
                for pair in pairs:
                    bd = utterance_loss(pair, params, model_config, config,
                                        label_of.get(pair.speaker_id, 0))
                    breakdowns.append(bd)
                    total = bd.total if total is None else total + bd.total
                total = total * (1.0 / len(pairs))
                if not np.isfinite(float(total.data)):
                    files = [e["clean"] for e in batches[bi]]
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, batch {bi}"
                        f" ({files})")
                grads = backward(total)
            grads_by_name = {n: grads[p] for n, p in params.items()
                             if p in grads}
            try:
                adam_step(params, grads_by_name, adam)
            except NumericalError as exc:
                raise NumericalError(f"epoch {epoch}, batch {bi}: {exc}") \
                    from exc
            for bd in breakdowns:
                sums += (float(bd.total.data), bd.sdr_speech, bd.sdr_noise,
                         bd.cross_entropy)
            count += len(pairs)

        dev_si = _mean_dev_si_sdr(manifest, split.dev, params, model_config,
                                  config)
        report.epochs.append({
            "epoch": epoch, "lr": float(adam.lr),
            "loss": float(sums[0] / count),
            "sdr_speech": float(sums[1] / count),
            "sdr_noise": float(sums[2] / count),
            "cross_entropy": float(sums[3] / count),
            "dev_si_sdr": dev_si,
        })
        report.wall_times.append(time.perf_counter() - t0)

        state = {"epoch": epoch, "best_epoch": best_epoch,
                 "best_dev": best_dev}
        if dev_si is not None and (best_dev is None or dev_si > best_dev):
            best_epoch, best_dev = epoch, dev_si
            state = {"epoch": epoch, "best_epoch": best_epoch,
                     "best_dev": best_dev}
            _save_checkpoint(out_dir / "best", params, adam, full_config,
                             state)
        if epoch % config.periodic_every == 0:
            _save_checkpoint(out_dir / f"epoch{epoch:03d}", params, adam,
                             full_config, state)

    state = {"epoch": config.epochs, "best_epoch": best_epoch,
             "best_dev": best_dev}
    _save_checkpoint(out_dir / "final", params, adam, full_config, state)
    selected = "best" if best_epoch is not None else "final"
    test_eval = evaluate_entries(manifest, list(split.test),
                                 load_params(out_dir / selected),
                                 model_config, config)
    report.final = {"best_epoch": best_epoch, "best_dev_si_sdr": best_dev,
                    "selected_checkpoint": selected,
                    "test": test_eval["aggregate"]}
    report.save(out_dir)
    return params, report


def evaluate_entries(manifest, entries, params, model_config, config):
    """Per-utterance and aggregate metrics on a list of manifest entries.

    The loss column is the two-sided clipped SDR loss alone (no CE): test
    targets sit outside the training label set under the open protocols,
    so only the mask objective compares across arms.
    """
    if not entries:
        raise DataError("evaluate: no entries")
    rows = []
    for entry in entries:
        pair = load_pair(manifest, entry)
        y, _ = enhance(pair.mixture, params, model_config, config.stft)
        loss, _, _ = sdr_loss(pair.clean, y, pair.mixture, config.loss.beta)
        rows.append({
            "utterance": entry["clean"], "speaker_id": pair.speaker_id,
            "si_sdr": si_sdr(pair.clean, y),
            "si_sdr_noisy": si_sdr(pair.clean, pair.mixture),
            "loss": float(loss.data),
        })
    agg = {k: float(np.mean([r[k] for r in rows]))
           for k in ("si_sdr", "si_sdr_noisy", "loss")}
    agg["count"] = len(rows)
    return {"per_utterance": rows, "aggregate": agg}


def noisy_baseline(manifest, entries, config):
    """Identity 'enhancement': metrics of the untouched mixtures."""
    if not entries:
        raise DataError("evaluate: no entries")
    sis, losses = [], []
    for entry in entries:
        pair = load_pair(manifest, entry)
        loss, _, _ = sdr_loss(pair.clean, pair.mixture, pair.mixture,
                              config.loss.beta)
        sis.append(si_sdr(pair.clean, pair.mixture))
        losses.append(float(loss.data))
    return {"si_sdr": float(np.mean(sis)), "loss": float(np.mean(losses)),
            "count": len(entries)}


def write_table_csv(rows, path):
    """Fixed schema: Method,SI-SDR,Loss with one row per method."""
    with Path(path).open("w") as fh:
        fh.write("Method,SI-SDR,Loss\n")
        for row in rows:
            fh.write(f"{row['method']},{row['si_sdr']:.4f},{row['loss']:.4f}\n")


def run_verification_experiment(manifest, config, out_dir):
    """Train Close / Open / Open+SPK arms under identical seeds and score
    them on the same held-out target-speaker set, next to the untouched
    mixtures. Emits table.csv shaped like the published comparison."""
    if len(manifest.speakers) < 3:
        raise DataError("verification needs >= 3 speakers")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = config.target_speaker
    test_entries = [e for e in manifest.entries
                    if e["split"] == "test" and e["speaker_id"] == target]
    rows = [{"method": "Noisy",
             **{k: v for k, v in noisy_baseline(manifest, test_entries,
                                                config).items()
                if k in ("si_sdr", "loss")}}]
    for method, protocol in _ARM_PROTOCOLS:
        arm_config = replace(config, protocol=protocol)
        arm_dir = out_dir / protocol.lower()
        _, report = train(manifest, arm_config, arm_dir)
        rows.append({"method": method,
                     "si_sdr": report.final["test"]["si_sdr"],
                     "loss": report.final["test"]["loss"]})
    write_table_csv(rows, out_dir / "table.csv")
    return rows
