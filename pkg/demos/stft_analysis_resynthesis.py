"""STFT analysis, feature extraction, and lossless resynthesis.

Walks a chirp through the 512/128 Blackman front end used everywhere in
the package: forward transform, the log-amplitude features the network
consumes, and the dual-window inverse that reconstructs the waveform to
machine precision.
"""

import numpy as np

from sase.dsp import (StftConfig, compute_feature_stats, frame_count, istft,
                      log_amplitude_features, normalize_per_frequency, stft)


def main():
    sr = 16000
    t = np.arange(sr) / sr
    x = 0.2 * np.sin(2 * np.pi * (200 * t + 400 * t ** 2))  # 1 s up-chirp

    config = StftConfig()  # 512-point DFT, hop 128, Blackman window
    spec = stft(x, config)
    print(f"frames predicted {frame_count(x.size, config)},"
          f" got {spec.real.shape[1]}")
    print("bins x frames:", spec.real.shape)

    y = istft(spec, config, target_length=x.size)
    err = np.max(np.abs(y - x)) / np.max(np.abs(x))
    print(f"round-trip relative error: {err:.3e}")

    # Training consumes log magnitudes, normalized per frequency row with
    # statistics gathered over a corpus; here the corpus is one utterance.
    feats = log_amplitude_features(spec)
    mean, var = compute_feature_stats([feats])
    normed = normalize_per_frequency(feats, mean, var)
    print("feature grid:", feats.shape)
    print("per-row mean after normalization ~ 0:",
          float(np.max(np.abs(normed.mean(axis=1)))))

    # The chirp's energy ridge climbs in frequency from first frame to last.
    first = int(np.argmax(feats[:, 0]))
    last = int(np.argmax(feats[:, -1]))
    print(f"dominant bin moved {first} -> {last}")


if __name__ == "__main__":
    main()
