"""STFT analysis/synthesis, log-mel features and WAV I/O.

Spectrograms are indexed ``[channel, frame, bin]``. Frames are taken
without centering padding, so ``T = 1 + (n_samples - win_len) // hop``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.io import wavfile

from .errors import (FormatError, InvalidConfigError, InvalidInputError,
                     ShapeError, SignalTooShortError)

N_MELS = 80


@dataclass(frozen=True)
class StftConfig:
    sample_rate: int = 16000
    win_len: int = 400
    hop: int = 160
    dft_size: int = 400
    window_kind: str = "blackman"

    def __post_init__(self):
        if self.window_kind != "blackman":
            raise InvalidConfigError(f"unsupported window {self.window_kind!r}")
        if self.win_len < 2:
            raise InvalidConfigError("win_len must be >= 2")
        if self.hop < 1 or self.hop > self.win_len:
            raise InvalidConfigError("need 1 <= hop <= win_len")
        if self.win_len > self.dft_size:
            raise InvalidConfigError("win_len must not exceed dft_size")
        if self.sample_rate <= 0:
            raise InvalidConfigError("sample_rate must be positive")

    @property
    def n_bins(self) -> int:
        return self.dft_size // 2 + 1

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.win_len:
            raise SignalTooShortError(
                f"{n_samples} samples < window length {self.win_len}")
        return 1 + (n_samples - self.win_len) // self.hop


@dataclass
class ComplexSpectrogram:
    data: np.ndarray  # complex [M, T, F]
    config: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.complex128)
        if self.data.ndim != 3:
            raise ShapeError(f"expected [M, T, F], got shape {self.data.shape}")
        if min(self.data.shape[:2]) < 1:
            raise ShapeError("need M >= 1 and T >= 1")
        if not np.all(np.isfinite(self.data)):
            raise InvalidInputError("spectrogram has non-finite entries")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_frames(self) -> int:
        return self.data.shape[1]

    @property
    def n_bins(self) -> int:
        return self.data.shape[2]


def build_window(cfg: StftConfig) -> np.ndarray:
    """Periodic Blackman window of length ``cfg.win_len``."""
    n_win = cfg.win_len
    if n_win < 2:
        raise InvalidConfigError("win_len must be >= 2")
    phase = 2.0 * np.pi * np.arange(n_win) / n_win
    return 0.42 - 0.5 * np.cos(phase) + 0.08 * np.cos(2.0 * phase)


def _frame(wave: np.ndarray, cfg: StftConfig) -> np.ndarray:
    n_frames = cfg.n_frames(wave.shape[-1])
    idx = np.arange(cfg.win_len)[None, :] + cfg.hop * np.arange(n_frames)[:, None]
    return wave[..., idx]


def stft(wave, cfg: StftConfig = StftConfig()) -> ComplexSpectrogram:
    """Multi-channel STFT of a real signal ``[M, n_samples]`` (1-D input is one channel)."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim == 1:
        wave = wave[None, :]
    if wave.ndim != 2:
        raise ShapeError(f"expected [M, n_samples], got shape {wave.shape}")
    frames = _frame(wave, cfg) * build_window(cfg)
    spec = np.fft.rfft(frames, n=cfg.dft_size, axis=-1)
    return ComplexSpectrogram(spec, cfg)


def istft(spec, cfg: StftConfig | None = None) -> np.ndarray:
    """Weighted overlap-add inverse of :func:`stft` for one channel.

    Uses the analysis window for synthesis and divides by the summed squared
    window. Samples never covered by a nonzero window value stay zero.
    """
    if isinstance(spec, ComplexSpectrogram):
        cfg = spec.config if cfg is None else cfg
        data = spec.data
    else:
        data = np.asarray(spec)
        cfg = StftConfig() if cfg is None else cfg
    if data.ndim == 3:
        if data.shape[0] != 1:
            raise ShapeError("istft expects a single-channel spectrogram")
        data = data[0]
    if data.ndim != 2 or data.shape[1] != cfg.n_bins:
        raise ShapeError(f"expected [T, {cfg.n_bins}], got shape {data.shape}")
    n_frames = data.shape[0]
    window = build_window(cfg)
    frames = np.fft.irfft(data, n=cfg.dft_size, axis=-1)[:, :cfg.win_len]
    n_out = cfg.win_len + cfg.hop * (n_frames - 1)
    out = np.zeros(n_out)
    norm = np.zeros(n_out)
    for t in range(n_frames):
        sl = slice(t * cfg.hop, t * cfg.hop + cfg.win_len)
        out[sl] += window * frames[t]
        norm[sl] += window ** 2
    covered = norm > 1e-10
    out[covered] /= norm[covered]
    out[~covered] = 0.0
    return out


@dataclass(frozen=True)
class MelBank:
    weights: np.ndarray  # [n_mels, F]
    floor_eps: float = 1e-10

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ShapeError("mel weights must be a matrix")
        if np.any(w < 0):
            raise InvalidConfigError("mel weights must be nonnegative")
        if np.any(w.max(axis=1) <= 0):
            raise InvalidConfigError("every mel filter needs a nonzero entry")
        object.__setattr__(self, "weights", w)

    @property
    def n_mels(self) -> int:
        return self.weights.shape[0]


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel) / 2595.0) - 1.0)


def mel_bank(cfg: StftConfig = StftConfig(), n_mels: int = N_MELS,
             floor_eps: float = 1e-10) -> MelBank:
    """HTK-scale triangular filters spanning 0 Hz to Nyquist."""
    nyquist = cfg.sample_rate / 2.0
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(nyquist), n_mels + 2))
    freqs = np.arange(cfg.n_bins) * cfg.sample_rate / cfg.dft_size
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (center - lo)
    falling = (hi - freqs[None, :]) / (hi - center)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    # edge bins land on filter endpoints up to rounding
    weights[weights < 1e-12] = 0.0
    return MelBank(weights, floor_eps)


def _check_power(power_frame, bank: MelBank) -> np.ndarray:
    power = np.asarray(power_frame, dtype=np.float64)
    if power.shape[-1] != bank.weights.shape[1]:
        raise ShapeError(
            f"power has {power.shape[-1]} bins, bank expects {bank.weights.shape[1]}")
    if np.any(power < 0):
        raise InvalidInputError("power spectrum must be nonnegative")
    return power


def log_mel(power_frame, bank: MelBank) -> np.ndarray:
    """``ln(max(W @ p, floor_eps))`` for one frame ``[F]`` or a stack ``[..., F]``."""
    power = _check_power(power_frame, bank)
    energy = power @ bank.weights.T
    return np.log(np.maximum(energy, bank.floor_eps))


def log_mel_vjp(power_frame, bank: MelBank, out_grad) -> np.ndarray:
    power = _check_power(power_frame, bank)
    energy = power @ bank.weights.T
    out_grad = np.asarray(out_grad, dtype=np.float64)
    if out_grad.shape != energy.shape:
        raise ShapeError("cotangent shape does not match log_mel output")
    active = energy > bank.floor_eps
    scaled = np.where(active, out_grad / np.where(active, energy, 1.0), 0.0)
    return scaled @ bank.weights


def read_wav(path, expected_rate: int = 16000) -> tuple[np.ndarray, int]:
    """Read PCM16 or float32 WAV into ``[M, n_samples]`` float64 in [-1, 1]."""
    try:
        rate, data = wavfile.read(path)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if expected_rate is not None and rate != expected_rate:
        raise FormatError(
            f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz (no resampling)")
    if data.dtype == np.int16:
        wave = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        wave = data.astype(np.float64)
    else:
        raise FormatError(f"{path}: unsupported sample type {data.dtype}")
    wave = wave[:, None] if wave.ndim == 1 else wave
    return np.ascontiguousarray(wave.T), rate


def write_wav(path, wave, sample_rate: int = 16000, fmt: str = "float32") -> None:
    """Write ``[M, n_samples]`` (or 1-D) audio as float32 or PCM16."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.ndim == 1:
        wave = wave[None, :]
    if fmt == "float32":
        data = wave.T.astype(np.float32)
    elif fmt == "pcm16":
        data = np.clip(np.round(wave.T * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise InvalidConfigError(f"unknown WAV format {fmt!r}")
    wavfile.write(path, sample_rate, data if data.shape[1] > 1 else data[:, 0])
