"""Per-cue audio clips and first frames, from assets on disk or an external tool.

Two interchangeable sources:

* :class:`OfflineAssetSource` reads pre-extracted files from an asset
  directory (``assets/<cue_id>/{audio.wav,frame.ppm}`` plus
  ``manifest.json`` at the top).
* :class:`ExternalToolSource` shells out to a user-configured command
  template (ffmpeg or similar) and caches results per cue.

Canonical interchange formats are deliberately primitive: 16 kHz mono
PCM-16 WAV for audio, binary P6 PPM (maxval 255) for frames.
"""

from __future__ import annotations

import io
import json
import re
import shlex
import struct
import subprocess
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

CANONICAL_SAMPLE_RATE = 16_000
# Clip length may deviate from the cue interval by at most 1ms of samples.
DURATION_TOLERANCE_SAMPLES = CANONICAL_SAMPLE_RATE // 1000


class IngestError(Exception):
    """Base error for media extraction problems."""


class AssetMissingError(IngestError):
    pass


class UnsupportedFormatError(IngestError):
    pass


class MediaToolError(IngestError):
    """External tool failed; carries its stderr."""

    def __init__(self, message: str, stderr: str = ""):
        super().__init__(message + (f": {stderr.strip()}" if stderr.strip() else ""))
        self.stderr = stderr


class CommandTemplateError(ValueError):
    """Bad command template; raised before anything is executed."""


@dataclass(frozen=True)
class MediaInfo:
    duration_ms: int
    width: int
    height: int
    fps: float

    def __post_init__(self) -> None:
        if min(self.duration_ms, self.width, self.height) <= 0 or self.fps <= 0:
            raise ValueError(f"media info fields must be positive: {self}")


@dataclass(frozen=True)
class AudioClip:
    cue_id: int
    samples: bytes  # PCM-16 little-endian, mono
    sample_rate_hz: int = CANONICAL_SAMPLE_RATE
    channels: int = 1

    def __post_init__(self) -> None:
        if self.channels != 1:
            raise ValueError("clips are mono")
        if len(self.samples) % 2:
            raise ValueError("odd PCM-16 byte count")

    @property
    def sample_count(self) -> int:
        return len(self.samples) // 2

    @property
    def duration_ms(self) -> float:
        return self.sample_count * 1000.0 / self.sample_rate_hz


@dataclass(frozen=True)
class Frame:
    cue_id: int
    width: int
    height: int
    pixels: bytes  # row-major RGB, 8 bits per channel

    def __post_init__(self) -> None:
        if len(self.pixels) != self.width * self.height * 3:
            raise ValueError(
                f"pixel buffer is {len(self.pixels)} bytes, expected {self.width * self.height * 3}")


def read_wav(data: bytes, cue_id: int) -> AudioClip:
    """Parse a WAV file, accepting only PCM-16 / mono / 16 kHz."""
    try:
        with wave.open(io.BytesIO(data), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise UnsupportedFormatError(f"compressed WAV not supported ({wf.getcomptype()})")
            if wf.getnchannels() != 1:
                raise UnsupportedFormatError(f"expected mono, got {wf.getnchannels()} channels")
            if wf.getsampwidth() != 2:
                raise UnsupportedFormatError(f"expected 16-bit samples, got {wf.getsampwidth() * 8}-bit")
            if wf.getframerate() != CANONICAL_SAMPLE_RATE:
                raise UnsupportedFormatError(
                    f"expected {CANONICAL_SAMPLE_RATE}Hz, got {wf.getframerate()}Hz")
            samples = wf.readframes(wf.getnframes())
    except wave.Error as e:
        raise UnsupportedFormatError(f"not a readable WAV file: {e}") from e
    return AudioClip(cue_id=cue_id, samples=samples)


def write_wav(clip: AudioClip) -> bytes:
    buf = io.BytesIO()
    with wave.open(buf, "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate_hz)
        wf.writeframes(clip.samples)
    return buf.getvalue()


def silence_clip(cue_id: int, duration_ms: int) -> AudioClip:
    n = duration_ms * CANONICAL_SAMPLE_RATE // 1000
    return AudioClip(cue_id=cue_id, samples=bytes(2 * n))


_PPM_TOKEN = re.compile(rb"(?:\s|#[^\n]*\n)*(\S+)")


def read_ppm(data: bytes, cue_id: int) -> Frame:
    """Parse binary P6 PPM with maxval 255."""
    if not data.startswith(b"P6"):
        raise UnsupportedFormatError("not a P6 PPM file")
    pos = 2
    fields = []
    for _ in range(3):
        m = _PPM_TOKEN.match(data, pos)
        if not m:
            raise UnsupportedFormatError("truncated PPM header")
        fields.append(m.group(1))
        pos = m.end()
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as e:
        raise UnsupportedFormatError(f"bad PPM header: {e}") from e
    if maxval != 255:
        raise UnsupportedFormatError(f"unsupported PPM maxval {maxval} (need 255)")
    pos += 1  # single whitespace after maxval
    expected = width * height * 3
    pixels = data[pos:pos + expected]
    if len(pixels) != expected:
        raise UnsupportedFormatError(
            f"PPM pixel data is {len(pixels)} bytes, expected {expected}")
    return Frame(cue_id=cue_id, width=width, height=height, pixels=pixels)


def write_ppm(frame: Frame) -> bytes:
    return b"P6\n%d %d\n255\n" % (frame.width, frame.height) + frame.pixels


_PLACEHOLDER = re.compile(r"\{(\w+)\}")


def render_command(template: str, values: Mapping[str, str]) -> list[str]:
    """Substitute ``{name}`` placeholders into a shell-style template.

    Unknown placeholders are a configuration error, reported before any
    process is spawned.
    """
    used = set(_PLACEHOLDER.findall(template))
    unknown = used - set(values)
    if unknown:
        raise CommandTemplateError(
            f"unknown placeholder(s) {sorted(unknown)} in command template {template!r}")
    argv = []
    for token in shlex.split(template):
        argv.append(_PLACEHOLDER.sub(lambda m: values[m.group(1)], token))
    return argv


def _run(argv: list[str], timeout_s: float) -> bytes:
    try:
        proc = subprocess.run(argv, capture_output=True, timeout=timeout_s)
    except FileNotFoundError as e:
        raise MediaToolError(f"media tool not found: {argv[0]}") from e
    except subprocess.TimeoutExpired as e:
        raise MediaToolError(f"media tool timed out after {timeout_s}s: {argv[0]}") from e
    if proc.returncode != 0:
        raise MediaToolError(
            f"{argv[0]} exited with {proc.returncode}",
            proc.stderr.decode("utf-8", "replace"))
    return proc.stdout


def _check_clip_duration(clip: AudioClip, start_ms: int, end_ms: int) -> AudioClip:
    expected = (end_ms - start_ms) * CANONICAL_SAMPLE_RATE // 1000
    if abs(clip.sample_count - expected) > DURATION_TOLERANCE_SAMPLES:
        raise IngestError(
            f"cue {clip.cue_id}: clip holds {clip.sample_count} samples, "
            f"expected {expected} for [{start_ms},{end_ms})ms")
    return clip


class OfflineAssetSource:
    """Reads manifest + per-cue assets from a directory tree."""

    def __init__(self, assets_dir: str | Path):
        self.root = Path(assets_dir)
        if not self.root.is_dir():
            raise AssetMissingError(f"asset directory not found: {self.root}")

    def probe(self) -> MediaInfo:
        manifest = self.root / "manifest.json"
        if not manifest.is_file():
            raise AssetMissingError(f"missing {manifest}")
        obj = json.loads(manifest.read_text("utf-8"))
        try:
            return MediaInfo(duration_ms=int(obj["duration_ms"]), width=int(obj["width"]),
                             height=int(obj["height"]), fps=float(obj["fps"]))
        except KeyError as e:
            raise IngestError(f"manifest missing key {e}") from e

    def _asset(self, cue_id: int, name: str) -> bytes:
        path = self.root / str(cue_id) / name
        if not path.is_file():
            raise AssetMissingError(f"missing asset {path}")
        return path.read_bytes()

    def audio_clip(self, cue_id: int, start_ms: int, end_ms: int) -> AudioClip:
        clip = read_wav(self._asset(cue_id, "audio.wav"), cue_id)
        return _check_clip_duration(clip, start_ms, end_ms)

    def first_frame(self, cue_id: int, at_ms: int) -> Frame:
        return read_ppm(self._asset(cue_id, "frame.ppm"), cue_id)


class ExternalToolSource:
    """Runs configured command templates against the raw video.

    Templates get ``{in}`` (video path), ``{start}``/``{end}`` (seconds,
    millisecond precision), and ``{out}`` (target file).  The probe
    command must print ``{"duration_ms":..,"width":..,"height":..,"fps":..}``
    JSON on stdout.
    """

    def __init__(self, video_ref: str | Path, cache_dir: str | Path,
                 probe_cmd: str, audio_cmd: str, frame_cmd: str,
                 timeout_s: float = 120.0):
        self.video = Path(video_ref)
        if not self.video.is_file():
            raise IngestError(f"video file not found: {self.video}")
        self.cache = Path(cache_dir)
        self.cache.mkdir(parents=True, exist_ok=True)
        self.probe_cmd = probe_cmd
        self.audio_cmd = audio_cmd
        self.frame_cmd = frame_cmd
        self.timeout_s = timeout_s

    @staticmethod
    def _seconds(ms: int) -> str:
        return f"{ms / 1000:.3f}"

    def probe(self) -> MediaInfo:
        argv = render_command(self.probe_cmd, {"in": str(self.video)})
        out = _run(argv, self.timeout_s)
        try:
            obj = json.loads(out.decode("utf-8"))
            return MediaInfo(duration_ms=int(obj["duration_ms"]), width=int(obj["width"]),
                             height=int(obj["height"]), fps=float(obj["fps"]))
        except (ValueError, KeyError) as e:
            raise IngestError(f"probe output not understood: {e}") from e

    def audio_clip(self, cue_id: int, start_ms: int, end_ms: int) -> AudioClip:
        out_path = self.cache / f"{cue_id}.wav"
        argv = render_command(self.audio_cmd, {
            "in": str(self.video), "start": self._seconds(start_ms),
            "end": self._seconds(end_ms), "out": str(out_path)})
        _run(argv, self.timeout_s)
        if not out_path.is_file():
            raise MediaToolError(f"audio command produced no file at {out_path}")
        clip = read_wav(out_path.read_bytes(), cue_id)
        return _check_clip_duration(clip, start_ms, end_ms)

    def first_frame(self, cue_id: int, at_ms: int) -> Frame:
        out_path = self.cache / f"{cue_id}.ppm"
        argv = render_command(self.frame_cmd, {
            "in": str(self.video), "start": self._seconds(at_ms), "out": str(out_path)})
        _run(argv, self.timeout_s)
        if not out_path.is_file():
            raise MediaToolError(f"frame command produced no file at {out_path}")
        return read_ppm(out_path.read_bytes(), cue_id)
