"""
Audio and image I/O: WAV files through soundfile, spectrogram images through matplotlib.
"""

from pathlib import Path
from typing import Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import soundfile as sf  # noqa: E402
from PIL import Image  # noqa: E402

from src.dsp.spectral import hann_window, stft_array  # noqa: E402
from src.models.audio import AudioClip, StftConfig  # noqa: E402
from src.models.base import HpxError  # noqa: E402
from src.utils.logging import get_logger  # noqa: E402

logger = get_logger(__name__)

DB_FLOOR = -80.0
PathLike = Union[str, Path]


def read_wav(path: PathLike) -> AudioClip:
    """Read a WAV file as a mono clip; multichannel input is averaged."""
    try:
        data, rate = sf.read(str(path), dtype='float32', always_2d=True)
    except RuntimeError as e:
        raise HpxError(f"cannot read {path}: {e}") from e
    return AudioClip(data.mean(axis=1), rate)


def write_wav(path: PathLike, clip: AudioClip, subtype: str = 'PCM_16') -> Path:
    """
    Write a mono WAV file.

    Args:
        subtype: ``PCM_16`` or ``FLOAT`` (IEEE float32)
    """
    if subtype not in ('PCM_16', 'FLOAT'):
        raise HpxError(f"unsupported WAV subtype {subtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    samples = clip.samples
    if subtype == 'PCM_16':
        samples = np.clip(samples, -1.0, 1.0)
    sf.write(str(path), samples, clip.sample_rate, subtype=subtype)
    return path


def log_magnitude_db(clip: AudioClip, cfg: StftConfig) -> np.ndarray:
    """
    Magnitude in dB relative to a full-scale sinusoid, clamped to [-80, 0], laid
    out [bin][frame].
    """
    frames = stft_array(clip.as_float64(), cfg)
    full_scale = hann_window(cfg.window_len).sum() / 2
    mag = np.abs(frames).T / full_scale
    db = 20 * np.log10(np.maximum(mag, 10 ** (DB_FLOOR / 20)))
    return np.clip(db, DB_FLOOR, 0.0)


def _to_gray(db: np.ndarray) -> np.ndarray:
    return np.round((db - DB_FLOOR) / -DB_FLOOR * 255).astype(np.uint8)


def write_pgm(path: Path, gray: np.ndarray) -> None:
    """Binary PGM (P5) with row 0 at the top."""
    height, width = gray.shape
    with open(path, 'wb') as f:
        f.write(f"P5\n{width} {height}\n255\n".encode('ascii'))
        f.write(np.ascontiguousarray(gray).tobytes())


def spectrogram_image(clip: AudioClip, cfg: StftConfig, path: PathLike) -> Path:
    """
    Render a grayscale log-magnitude spectrogram: one pixel per frame (x) and bin (y),
    low frequencies at the bottom. ``.pgm`` paths are written as PGM, anything else as PNG.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    gray = _to_gray(log_magnitude_db(clip, cfg))[::-1]
    try:
        if path.suffix.lower() == '.pgm':
            write_pgm(path, gray)
        else:
            Image.fromarray(gray).save(str(path), format='PNG')
    except OSError as e:
        raise HpxError(f"cannot write image {path}: {e}") from e
    return path


def spectrogram_grid(clips: Sequence[AudioClip], titles: Sequence[str], cfg: StftConfig,
                     path: PathLike) -> Path:
    """Side-by-side spectrogram panels (reference, input, extension, ...) in one PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, len(clips), figsize=(4 * len(clips), 4), squeeze=False)
    for ax, clip, title in zip(axes[0], clips, titles):
        db = log_magnitude_db(clip, cfg)
        extent = [0, clip.duration, 0, clip.sample_rate / 2000]
        ax.imshow(db, origin='lower', aspect='auto', cmap='magma', vmin=DB_FLOOR, vmax=0,
                  extent=extent)
        ax.set_title(title)
        ax.set_xlabel('time (s)')
        ax.set_ylabel('kHz')
    fig.tight_layout()
    fig.savefig(str(path), dpi=100)
    plt.close(fig)
    return path
