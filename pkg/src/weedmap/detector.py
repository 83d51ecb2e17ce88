"""Pluggable detection backends.

Two implementations of the same surface: a deterministic replay of recorded
detection logs (the test double for everything downstream) and an
external-process runner speaking newline-delimited JSON over stdin/stdout
(one request line, one response line, strictly in order).
"""

from __future__ import annotations

import json
import queue
import subprocess
import threading
from dataclasses import dataclass
from typing import Optional, Protocol, Sequence

from .geometry import DetectionFrame, filter_by_confidence, nms
from .ingest import FrameManifest, SchemaError, parse_detection_log, parse_log_line
from .ioutil import PathLike


class DetectorError(Exception):
    pass


class FrameOutOfRangeError(DetectorError):
    """Request for a frame index the backend does not cover."""


class RunnerError(DetectorError):
    pass


class RunnerTimeoutError(RunnerError):
    pass


class RunnerProtocolError(RunnerError):
    """Runner answered with something other than one valid log line for the request."""


class RunnerExitError(RunnerError):
    """Runner process is gone; the backend is unusable from now on."""


class DetectorBackend(Protocol):
    """detect() echoes the requested frame index and timestamp."""

    deterministic: bool

    def detect(self, frame_index: int, timestamp_ms: int, image_path: str) -> DetectionFrame:
        ...


class ReplayBackend:
    """Re-emits recorded detections byte-for-byte; immutable and shareable."""

    deterministic = True

    def __init__(self, frames: Sequence[DetectionFrame]) -> None:
        self._by_index = {frame.frame_index: frame for frame in frames}

    @classmethod
    def from_log(cls, log_path: PathLike, manifest: FrameManifest) -> "ReplayBackend":
        return cls(parse_detection_log(log_path, manifest))

    def detect(self, frame_index: int, timestamp_ms: int, image_path: str) -> DetectionFrame:
        recorded = self._by_index.get(frame_index)
        if recorded is None:
            raise FrameOutOfRangeError(f"frame {frame_index} not in replay log")
        return DetectionFrame(
            frame_index=frame_index,
            timestamp_ms=timestamp_ms,
            detections=recorded.detections,
        )


@dataclass(frozen=True)
class RunnerConfig:
    """Launch and I/O settings for an external runner process.

    `command` is the argv to launch; a "{model}" element is substituted with
    `model_path` (appended when no placeholder is present).
    """

    command: tuple[str, ...]
    model_path: Optional[str] = None
    confidence_floor: float = 0.0
    io_timeout_ms: int = 10_000
    nms_iou_threshold: float = 0.45

    def __post_init__(self) -> None:
        if not self.command:
            raise ValueError("runner command is empty")
        if self.io_timeout_ms <= 0:
            raise ValueError(f"io_timeout_ms must be > 0, got {self.io_timeout_ms}")
        if not 0.0 <= self.confidence_floor <= 1.0:
            raise ValueError(f"confidence_floor out of range: {self.confidence_floor}")

    def argv(self) -> list[str]:
        args = list(self.command)
        if self.model_path is not None:
            if "{model}" in args:
                args = [self.model_path if a == "{model}" else a for a in args]
            else:
                args.append(self.model_path)
        return args


_EOF = object()


class RunnerBackend:
    """One-in-one-out line protocol to an external detector process.

    NMS and the confidence floor are applied on this side of the protocol so
    there is a single authoritative implementation of both.
    """

    deterministic = False

    def __init__(self, config: RunnerConfig) -> None:
        self.config = config
        self._dead = False
        self._proc = subprocess.Popen(
            config.argv(),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self._lines: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self) -> None:
        try:
            for line in self._proc.stdout:
                self._lines.put(line)
        finally:
            self._lines.put(_EOF)

    @property
    def usable(self) -> bool:
        return not self._dead

    def detect(self, frame_index: int, timestamp_ms: int, image_path: str) -> DetectionFrame:
        if self._dead:
            raise RunnerExitError("runner process has exited; backend is unusable")
        request = json.dumps(
            {"i": frame_index, "t_ms": timestamp_ms, "path": image_path},
            separators=(",", ":"),
        )
        try:
            self._proc.stdin.write(request + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            self._dead = True
            raise RunnerExitError(f"runner stdin closed: {exc}") from exc

        try:
            line = self._lines.get(timeout=self.config.io_timeout_ms / 1000.0)
        except queue.Empty:
            raise RunnerTimeoutError(
                f"no response for frame {frame_index} within {self.config.io_timeout_ms} ms"
            ) from None
        if line is _EOF:
            self._dead = True
            code = self._proc.poll()
            raise RunnerExitError(f"runner exited (code {code}) before answering frame {frame_index}")

        try:
            raw = parse_log_line(line)
        except SchemaError as exc:
            raise RunnerProtocolError(f"malformed runner response: {exc}") from exc
        if raw.frame_index != frame_index:
            raise RunnerProtocolError(
                f"runner answered frame {raw.frame_index} to request {frame_index}"
            )
        suppressed = nms(raw.detections, self.config.nms_iou_threshold)
        frame = DetectionFrame(
            frame_index=frame_index,
            timestamp_ms=timestamp_ms,
            detections=tuple(suppressed),
        )
        return filter_by_confidence(frame, self.config.confidence_floor)

    def close(self) -> None:
        self._dead = True
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=2.0)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self) -> "RunnerBackend":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
