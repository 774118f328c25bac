"""SNR-controlled mixing of background noise into clean utterance audio.

The one module that touches real audio: 16-bit PCM mono WAV in, the same
container out.  Noise is added at a requested signal-to-noise ratio by
scaling a randomly selected (seeded) slice of the noise file so that

    20 * log10(rms(signal) / rms(gain * slice)) == snr_db

holds exactly for the produced samples; hard clipping to [-1, 1] is
applied afterwards and counted rather than hidden by renormalizing.
"""

from __future__ import annotations

import argparse
import csv
import math
import random
import sys
import wave
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class AugmentError(Exception):
    pass


class EmptyWaveform(AugmentError):
    pass


class RateMismatch(AugmentError):
    pass


class NoiseTooShort(AugmentError):
    pass


class UnsupportedWav(AugmentError):
    pass


# --------------------------------------------------------------------------
# waveforms and WAV i/o
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Waveform:
    """Mono audio as float64 samples in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        arr = np.asarray(self.samples, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise EmptyWaveform("waveform must be a nonempty 1-d sample array")
        if self.sample_rate <= 0:
            raise AugmentError(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", arr)

    def __len__(self) -> int:
        return int(self.samples.size)

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


_PCM16_FULL_SCALE = 32767.0


def load_wav(path: str | Path) -> Waveform:
    """Read a 16-bit PCM mono WAV file; anything else is rejected."""
    with wave.open(str(path), "rb") as wav:
        if wav.getnchannels() != 1:
            raise UnsupportedWav(f"{path}: expected mono, got {wav.getnchannels()} channels")
        if wav.getsampwidth() != 2:
            raise UnsupportedWav(f"{path}: expected 16-bit PCM, got {8 * wav.getsampwidth()}-bit")
        if wav.getcomptype() != "NONE":
            raise UnsupportedWav(f"{path}: compressed WAV not supported")
        raw = wav.readframes(wav.getnframes())
        rate = wav.getframerate()
    ints = np.frombuffer(raw, dtype="<i2")
    return Waveform(samples=ints.astype(np.float64) / _PCM16_FULL_SCALE, sample_rate=rate)


def save_wav(path: str | Path, w: Waveform) -> None:
    ints = np.clip(np.rint(w.samples * _PCM16_FULL_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wav:
        wav.setnchannels(1)
        wav.setsampwidth(2)
        wav.setframerate(w.sample_rate)
        wav.writeframes(ints.tobytes())


# --------------------------------------------------------------------------
# SNR arithmetic
# --------------------------------------------------------------------------


def measure_rms(w: Waveform) -> float:
    """Root-mean-square of the samples over the full utterance (no
    activity weighting)."""
    return float(np.sqrt(np.mean(np.square(w.samples))))


def snr_gain(signal_rms: float, noise_rms: float, snr_db: float) -> float:
    """Gain to apply to noise so signal-over-scaled-noise sits at snr_db."""
    if noise_rms <= 0.0:
        raise AugmentError("noise RMS must be positive")
    return (signal_rms / noise_rms) * 10.0 ** (-snr_db / 20.0)


@dataclass(frozen=True)
class MixResult:
    waveform: Waveform
    offset_samples: int
    gain: float
    clipped_samples: int


def mix_at_snr(signal: Waveform, noise: Waveform, snr_db: float, seed: int) -> MixResult:
    """Add a seeded random slice of `noise` to `signal` at `snr_db`.

    A positive-infinity snr_db is the no-noise sentinel: the signal is
    returned untouched, bit for bit.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return MixResult(waveform=signal, offset_samples=0, gain=0.0, clipped_samples=0)
    if not math.isfinite(snr_db):
        raise AugmentError(f"snr_db must be finite (or +inf), got {snr_db}")
    if signal.sample_rate != noise.sample_rate:
        raise RateMismatch(
            f"signal at {signal.sample_rate} Hz, noise at {noise.sample_rate} Hz"
        )
    if len(noise) < len(signal):
        raise NoiseTooShort(f"noise {len(noise)} samples < signal {len(signal)}")
    offset = random.Random(seed).randrange(len(noise) - len(signal) + 1)
    piece = noise.samples[offset : offset + len(signal)]
    gain = snr_gain(measure_rms(signal), float(np.sqrt(np.mean(np.square(piece)))), snr_db)
    mixed = signal.samples + gain * piece
    clipped = int(np.count_nonzero((mixed > 1.0) | (mixed < -1.0)))
    mixed = np.clip(mixed, -1.0, 1.0)
    return MixResult(
        waveform=Waveform(samples=mixed, sample_rate=signal.sample_rate),
        offset_samples=offset,
        gain=gain,
        clipped_samples=clipped,
    )


# --------------------------------------------------------------------------
# corpus processing
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SnrSpec:
    levels: tuple[float, ...] = (5.0, 10.0, 20.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.levels or not all(math.isfinite(lv) for lv in self.levels):
            raise AugmentError(f"levels must be finite, got {self.levels}")


@dataclass(frozen=True)
class ManifestRow:
    input: str
    level: float
    offset_samples: int
    gain: float
    clipped_samples: int
    output: str  # derived, not part of the CSV


MANIFEST_FIELDS = ("input", "level", "offset_samples", "gain", "clipped_samples")


def entry_seed(base_seed: int, stem: str) -> int:
    # a process-stable stem hash: the corpus run must be reproducible,
    # so the salted built-in hash() is out
    return base_seed ^ zlib.crc32(stem.encode("utf-8"))


def _level_tag(level: float) -> str:
    return f"{level:g}"


def augment_corpus(
    inputs: list[str | Path],
    noise_path: str | Path,
    spec: SnrSpec,
    out_dir: str | Path,
) -> tuple[list[ManifestRow], list[tuple[str, str]]]:
    """Mix every input at every level; returns (rows, per-entry errors).

    A failing entry is recorded and skipped; the run keeps going.
    Entries are independent (seeded per input stem), so processing
    order — or a parallel map — cannot change any output.
    """
    noise = load_wav(noise_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[ManifestRow] = []
    errors: list[tuple[str, str]] = []
    for item in inputs:
        path = Path(item)
        try:
            signal = load_wav(path)
        except (OSError, wave.Error, AugmentError) as exc:
            errors.append((str(item), str(exc)))
            continue
        rng = random.Random(entry_seed(spec.seed, path.stem))
        for level in spec.levels:
            result = mix_at_snr(signal, noise, level, seed=rng.randrange(2**32))
            name = f"{path.stem}.snr{_level_tag(level)}.wav"
            save_wav(out / name, result.waveform)
            rows.append(
                ManifestRow(
                    input=str(item),
                    level=level,
                    offset_samples=result.offset_samples,
                    gain=result.gain,
                    clipped_samples=result.clipped_samples,
                    output=str(out / name),
                )
            )
    return rows, errors


def write_manifest(rows: list[ManifestRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_FIELDS)
        for row in rows:
            writer.writerow(
                [
                    row.input,
                    _level_tag(row.level),
                    row.offset_samples,
                    repr(row.gain),
                    row.clipped_samples,
                ]
            )


def read_input_manifest(path: str | Path) -> list[str]:
    """Input list: a text file with one WAV path per line."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [line.strip() for line in lines if line.strip()]


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="augment",
        description="Mix background noise into clean WAV files at fixed SNR levels.",
    )
    parser.add_argument("--noise", required=True, help="noise WAV file")
    parser.add_argument(
        "--levels", default="5,10,20", help="comma-separated SNR levels in dB"
    )
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("manifest", help="text file listing input WAVs, one per line")
    args = parser.parse_args(argv)

    spec = SnrSpec(
        levels=tuple(float(part) for part in args.levels.split(",")), seed=args.seed
    )
    inputs = read_input_manifest(args.manifest)
    rows, errors = augment_corpus(inputs, args.noise, spec, args.out)
    manifest_path = Path(args.out) / "manifest.csv"
    write_manifest(rows, manifest_path)
    print(f"{len(rows)} files written to {args.out}; manifest at {manifest_path}")
    for item, message in errors:
        print(f"error: {item}: {message}", file=sys.stderr)
    return 1 if errors else 0


if __name__ == "__main__":
    sys.exit(main())
