"""Reference power-mel spectrogram from torch.stft and a torchaudio-style
HTK filterbank (no normalization, 0 Hz to Nyquist). Writes mel_reference.csv."""
import math
import os

import numpy as np
import torch

SR, N_FFT, WIN, HOP, N_MELS = 41000, 1024, 820, 410, 64


def signal():
    n = np.arange(10250, dtype=np.float64)
    return (0.5 * np.sin(2 * math.pi * 440 * n / SR)
            + 0.25 * np.sin(2 * math.pi * 3000 * n / SR + 0.3)
            + 0.1 * np.cos(2 * math.pi * 9000 * n / SR))


def fbank():
    n_freqs = N_FFT // 2 + 1
    all_freqs = np.linspace(0, SR // 2, n_freqs)
    hz_to_mel = lambda f: 2595.0 * np.log10(1.0 + f / 700.0)
    mel_to_hz = lambda m: 700.0 * (10 ** (m / 2595.0) - 1.0)
    m_pts = np.linspace(hz_to_mel(0.0), hz_to_mel(SR / 2), N_MELS + 2)
    f_pts = mel_to_hz(m_pts)
    f_diff = f_pts[1:] - f_pts[:-1]
    slopes = f_pts[None, :] - all_freqs[:, None]
    down = -slopes[:, :-2] / f_diff[:-1]
    up = slopes[:, 2:] / f_diff[1:]
    return np.maximum(0.0, np.minimum(down, up))


def main():
    x = torch.tensor(signal())
    window = torch.hann_window(WIN, periodic=True, dtype=torch.float64)
    spec = torch.stft(x, n_fft=N_FFT, hop_length=HOP, win_length=WIN, window=window,
                      center=True, pad_mode="reflect", return_complex=True)
    power = spec.abs() ** 2  # (freq, time)
    mel = power.numpy().T @ fbank()  # (time, mel)
    out = os.path.join(os.path.dirname(os.path.abspath(__file__)), "mel_reference.csv")
    with open(out, "w") as f:
        for row in mel:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    print(out, mel.shape)


if __name__ == "__main__":
    main()
