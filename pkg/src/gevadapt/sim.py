"""Deterministic synthetic multi-channel scenes with oracle components.

A "speaker" is a harmonic source: fundamental ``f0``, a per-harmonic
rolloff and a formant warp factor. Each frame class (1..n_classes-1) is a
vowel-like formant envelope; class 0 is silence. The source reaches each
microphone with an integer-sample far-field delay. The coherent point noise
is a delayed random-phase source with the utterance's long-term spectrum,
plus weak independent sensor noise. Noise is added in the time domain and
scaled so the all-channel energy ratio equals ``snr_db``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .beamform import BeamformerWeights, apply_beamformer
from .errors import InvalidConfigError, ShapeError
from .maskestim import MaskPair
from .signal import ComplexSpectrogram, StftConfig, stft

# (F1, F2, F3) in Hz for the voiced classes; extra classes are drawn from a
# fixed generator so the table never depends on a scene seed.
_VOWEL_FORMANTS = [
    (270, 2290, 3010), (730, 1090, 2440), (300, 870, 2240), (530, 1840, 2480),
    (570, 840, 2410), (660, 1720, 2410), (490, 1350, 1690),
]
_FORMANT_GAINS = (1.0, 0.5, 0.25)
_FORMANT_BW = (90.0, 130.0, 180.0)
ENVELOPE_FLOOR = 0.02


class NoiseKind(str, enum.Enum):
    DIFFUSE_WHITE = "diffuse_white"
    COHERENT_POINT = "coherent_point"
    BABBLE_MIX = "babble_mix"


@dataclass(frozen=True)
class SpeakerProfile:
    f0: float
    rolloff: float
    warp: float
    name: str = ""

    def __post_init__(self):
        if not 50.0 <= self.f0 <= 500.0:
            raise InvalidConfigError("f0 must lie in [50, 500] Hz")
        if not 0.0 < self.rolloff <= 1.0:
            raise InvalidConfigError("rolloff must lie in (0, 1]")
        if self.warp <= 0:
            raise InvalidConfigError("warp must be positive")


SPEAKERS = {
    "A": SpeakerProfile(110.0, 0.90, 1.00, "A"),
    "B": SpeakerProfile(125.0, 0.86, 0.95, "B"),
    "C": SpeakerProfile(205.0, 0.82, 1.10, "C"),
    "D": SpeakerProfile(185.0, 0.86, 1.05, "D"),
    "E": SpeakerProfile(265.0, 0.78, 1.02, "E"),
}


@dataclass(frozen=True)
class SceneConfig:
    n_channels: int = 6
    duration: float = 1.0
    snr_db: float = 0.0
    speaker: SpeakerProfile = SPEAKERS["A"]
    noise_kind: NoiseKind = NoiseKind.COHERENT_POINT
    n_classes: int = 8
    seed: int = 0
    max_delay: int = 6
    sensor_db: float = -25.0
    ref_channel: int = 0
    stft: StftConfig = field(default_factory=StftConfig)

    def __post_init__(self):
        object.__setattr__(self, "noise_kind", NoiseKind(self.noise_kind))
        if self.n_channels < 2:
            raise InvalidConfigError("scenes need at least 2 channels")
        if self.duration < 0.5:
            raise InvalidConfigError("duration must be >= 0.5 s")
        if not np.isfinite(self.snr_db):
            raise InvalidConfigError("snr_db must be finite")
        if self.n_classes < 2:
            raise InvalidConfigError("need at least 2 frame classes")
        if self.max_delay < 0:
            raise InvalidConfigError("max_delay must be >= 0")
        if not 0 <= self.ref_channel < self.n_channels:
            raise InvalidConfigError("ref_channel out of range")


@dataclass
class Scene:
    y: ComplexSpectrogram
    x: ComplexSpectrogram
    n: ComplexSpectrogram
    ideal_masks: MaskPair
    classes: np.ndarray
    meta: SceneConfig
    waves: dict = field(default_factory=dict, repr=False)  # "y", "x", "n": [M, n_samples]


def class_formants(n_classes: int) -> np.ndarray:
    table = list(_VOWEL_FORMANTS)
    if n_classes - 1 > len(table):
        rng = np.random.default_rng(7)
        for _ in range(n_classes - 1 - len(table)):
            f1 = rng.uniform(280, 800)
            f2 = rng.uniform(max(f1 + 300, 900), 2400)
            table.append((f1, f2, rng.uniform(max(f2 + 300, 2300), 3300)))
    return np.asarray(table[:n_classes - 1], dtype=np.float64)


def envelope(freqs, formants, warp: float) -> np.ndarray:
    freqs = np.asarray(freqs, dtype=np.float64)
    out = np.full(freqs.shape, ENVELOPE_FLOOR)
    for fc, g, bw in zip(formants, _FORMANT_GAINS, _FORMANT_BW):
        out += g * np.exp(-0.5 * ((freqs - fc * warp) / (bw * warp)) ** 2)
    return out


def _segments(rng, n_samples: int, hop: int, n_classes: int):
    """Consecutive ``(start, stop, class)`` segments covering the signal."""
    segs, pos, prev = [], 0, 0
    while pos < n_samples:
        length = int(rng.integers(6, 16)) * hop
        if prev != 0 and rng.random() < 0.25:
            cls = 0
        else:
            cls = int(rng.integers(1, n_classes))
        segs.append((pos, min(pos + length, n_samples), cls))
        pos += length
        prev = cls
    return segs


def harmonic_source(rng, speaker: SpeakerProfile, n_samples: int, cfg: StftConfig,
                    n_classes: int):
    """Return ``(wave, segments)`` for one talker."""
    fs = cfg.sample_rate
    formants = class_formants(n_classes)
    segs = _segments(rng, n_samples, cfg.hop, n_classes)
    t = np.arange(n_samples) / fs
    vib_rate, vib_phase = rng.uniform(2.0, 4.0), rng.uniform(0, 2 * np.pi)
    f0_track = speaker.f0 * (1.0 + 0.03 * np.sin(2 * np.pi * vib_rate * t + vib_phase))
    theta = 2 * np.pi * np.cumsum(f0_track) / fs
    n_harm = int(0.45 * fs / (speaker.f0 * 1.03))
    k = np.arange(1, n_harm + 1)
    # rolloff is the amplitude ratio per quarter octave of harmonic number
    tilt = speaker.rolloff ** (4.0 * np.log2(k))
    amps = np.zeros((n_harm, n_samples))
    for start, stop, cls in segs:
        if cls == 0:
            continue
        level = tilt * envelope(k * speaker.f0, formants[cls - 1], speaker.warp)
        amps[:, start:stop] = level[:, None]
    ramp = np.hanning(2 * (cfg.hop // 2) + 1)
    ramp /= ramp.sum()
    amps = np.apply_along_axis(lambda a: np.convolve(a, ramp, mode="same"), 1, amps)
    phases = rng.uniform(0, 2 * np.pi, size=n_harm)
    wave = np.zeros(n_samples)
    for i in range(n_harm):
        wave += amps[i] * np.sin(k[i] * theta + phases[i])
    return wave, segs


def frame_classes(segs, n_frames: int, cfg: StftConfig) -> np.ndarray:
    centers = np.arange(n_frames) * cfg.hop + cfg.win_len // 2
    out = np.zeros(n_frames, dtype=np.int64)
    for start, stop, cls in segs:
        out[(centers >= start) & (centers < stop)] = cls
    return out


def _delayed(source: np.ndarray, delays: np.ndarray, n_samples: int) -> np.ndarray:
    """``out[m, i] = source[i + pad - d_m]`` where ``source`` carries ``pad`` leading samples."""
    pad = len(source) - n_samples
    return np.stack([source[pad - d: pad - d + n_samples] for d in delays])


def _speech_shaped(rng, n_samples: int, speech: np.ndarray, fs: float, smooth_hz: float = 200.0,
                   floor: float = 1e-3) -> np.ndarray:
    """Gaussian noise with the smoothed long-term power spectrum of ``speech``.

    Power below ``floor`` times the peak is raised to it so every band
    carries some noise.
    """
    n_fft = len(speech)
    ltas = np.abs(np.fft.rfft(speech, n=n_fft)) ** 2
    width = max(1, int(round(smooth_hz * n_fft / fs)))
    ltas = np.convolve(ltas, np.ones(width) / width, mode="same")
    ltas = np.maximum(ltas, floor * ltas.max())
    spec = np.fft.rfft(rng.standard_normal(n_samples), n=n_fft)
    return np.fft.irfft(spec * np.sqrt(ltas), n=n_fft)[:n_samples]


def _noise(rng, cfg: SceneConfig, n_samples: int, speech: np.ndarray) -> np.ndarray:
    m, pad = cfg.n_channels, cfg.max_delay
    sensor = rng.standard_normal((m, n_samples))
    if cfg.noise_kind is NoiseKind.DIFFUSE_WHITE:
        return sensor
    if cfg.noise_kind is NoiseKind.COHERENT_POINT:
        src = _speech_shaped(rng, n_samples + pad, speech, cfg.stft.sample_rate)
        coherent = _delayed(src, rng.integers(0, pad + 1, size=m), n_samples)
    else:
        coherent = np.zeros((m, n_samples))
        for _ in range(4):
            talker = SpeakerProfile(rng.uniform(95, 240), rng.uniform(0.8, 0.9),
                                    rng.uniform(0.9, 1.15))
            wave, _ = harmonic_source(rng, talker, n_samples + pad, cfg.stft, cfg.n_classes)
            wave /= np.sqrt(np.mean(wave ** 2)) + 1e-12
            coherent += _delayed(wave, rng.integers(0, pad + 1, size=m), n_samples)
    coherent /= np.sqrt(np.mean(coherent ** 2)) + 1e-12
    return coherent + 10.0 ** (cfg.sensor_db / 20.0) * sensor


def make_scene(cfg: SceneConfig) -> Scene:
    rng = np.random.default_rng(cfg.seed)
    n_samples = int(round(cfg.duration * cfg.stft.sample_rate))
    pad = cfg.max_delay
    src, segs = harmonic_source(rng, cfg.speaker, n_samples + pad, cfg.stft, cfg.n_classes)
    # segment boundaries refer to the padded source; shift to the reference timeline
    segs = [(a - pad, b - pad, c) for a, b, c in segs]
    delays = rng.integers(0, pad + 1, size=cfg.n_channels)
    x_wave = _delayed(src, delays, n_samples)
    x_wave /= np.sqrt(np.mean(x_wave ** 2)) + 1e-12
    x_wave *= 0.1
    n_wave = _noise(rng, cfg, n_samples, src)
    scale = np.sqrt(np.sum(x_wave ** 2) / (np.sum(n_wave ** 2) * 10.0 ** (cfg.snr_db / 10.0)))
    n_wave = n_wave * scale
    x = stft(x_wave, cfg.stft)
    n = stft(n_wave, cfg.stft)
    y = ComplexSpectrogram(x.data + n.data, cfg.stft)
    classes = frame_classes(segs, y.n_frames, cfg.stft)
    return Scene(y, x, n, ideal_masks(x, n, cfg.ref_channel), classes, cfg,
                 {"x": x_wave, "n": n_wave, "y": x_wave + n_wave})


def make_scenes(base: SceneConfig, seeds) -> list[Scene]:
    return [make_scene(replace(base, seed=int(s))) for s in seeds]


def ideal_masks(x, n, ref_channel: int = 0, threshold: float | None = None) -> MaskPair:
    """Ideal ratio masks ``|X|^2 / (|X|^2 + |N|^2)`` on the reference channel.

    With ``threshold`` set the speech mask is binarized (``ratio > threshold``).
    Cells where both components vanish count as noise.
    """
    xd = x.data if isinstance(x, ComplexSpectrogram) else np.asarray(x)
    nd = n.data if isinstance(n, ComplexSpectrogram) else np.asarray(n)
    if xd.shape != nd.shape:
        raise ShapeError(f"component shapes differ: {xd.shape} vs {nd.shape}")
    px = np.abs(xd[ref_channel]) ** 2
    pn = np.abs(nd[ref_channel]) ** 2
    total = px + pn
    speech = np.divide(px, total, out=np.zeros_like(px), where=total > 0)
    if threshold is not None:
        speech = (speech > threshold).astype(np.float64)
    return MaskPair(speech=speech, noise=1.0 - speech)


def measured_snr_db(scene: Scene) -> float:
    """All-channel time-domain speech-to-noise energy ratio."""
    return float(10 * np.log10(np.sum(scene.waves["x"] ** 2) / np.sum(scene.waves["n"] ** 2)))


def channel_snrs_db(scene: Scene) -> np.ndarray:
    px = np.sum(np.abs(scene.x.data) ** 2, axis=(1, 2))
    pn = np.sum(np.abs(scene.n.data) ** 2, axis=(1, 2))
    return 10 * np.log10(px / pn)


def output_snr_db(scene: Scene, w) -> float:
    sx = apply_beamformer(w, scene.x)
    sn = apply_beamformer(w, scene.n)
    noise = np.sum(np.abs(sn) ** 2)
    if noise <= 0:
        return float("inf")
    return float(10 * np.log10(np.sum(np.abs(sx) ** 2) / noise))


def snr_gain(enhanced, scene: Scene, w) -> float:
    """Output SNR of ``w`` on the oracle components minus the best input channel SNR.

    ``enhanced`` (``w^H Y``) is only shape-checked; the oracle split is what
    is measured. Zero output noise gives ``+inf``.
    """
    vec = w.w if isinstance(w, BeamformerWeights) else np.asarray(w)
    if enhanced is not None and np.shape(enhanced) != scene.y.data.shape[1:]:
        raise ShapeError("enhanced spectrogram does not match the scene")
    out = output_snr_db(scene, vec)
    if not np.isfinite(out):
        return out
    return out - float(np.max(channel_snrs_db(scene)))


def selector(n_bins: int, n_channels: int, channel: int = 0) -> np.ndarray:
    w = np.zeros((n_bins, n_channels), dtype=np.complex128)
    w[:, channel] = 1.0
    return w

