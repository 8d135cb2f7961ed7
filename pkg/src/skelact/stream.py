"""Live pipeline: frame source -> joint formatter -> packer -> recognizer -> sink.

Every stage runs in its own thread and talks to the next one only through a
bounded queue. When a queue is full the oldest item is evicted, so a slow
recognizer or sink never stalls the source; ``lossless=True`` switches to
blocking puts (used for as-fast-as-possible replays). End of stream is a
sentinel that travels down the chain.
"""
from __future__ import annotations

import json
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .errors import DataError, ModelError, SkelactError
from .ingest import read_recording
from .model import ModelParams, load_checkpoint, predict
from .preprocess import NormalizationConfig, normalize
from .skeleton import JointMap, SkeletonFrame
from .windowing import SlidingWindower, WindowConfig, WindowTensor

log = logging.getLogger(__name__)

FRAME_QUEUE = 64
WINDOW_QUEUE = 4
_EOS = object()


@dataclass(frozen=True)
class LabelMessage:
    t_window_end: float
    class_id: int
    class_name: str
    probability: float
    latency_ms: float

    def to_json(self) -> str:
        return json.dumps({"t": self.t_window_end, "class_id": self.class_id,
                           "class": self.class_name, "p": self.probability,
                           "latency_ms": self.latency_ms})

    @classmethod
    def from_json(cls, line: str) -> "LabelMessage":
        d = json.loads(line)
        return cls(d["t"], d["class_id"], d["class"], d["p"], d["latency_ms"])


@dataclass
class StageStats:
    """``absorbed`` counts inputs folded into an aggregate without being
    emitted on their own (frames that did not complete a window)."""

    received: int = 0
    emitted: int = 0
    dropped: int = 0
    absorbed: int = 0
    high_water: int = 0

    @property
    def balanced(self) -> bool:
        return self.received == self.emitted + self.dropped + self.absorbed


class _Channel:
    """Bounded queue whose evictions are charged to the consuming stage."""

    def __init__(self, capacity: int, consumer: StageStats, lossless: bool):
        self.q: queue.Queue = queue.Queue(maxsize=capacity)
        self.consumer = consumer
        self.lossless = lossless
        self._lock = threading.Lock()

    def put(self, item):
        with self._lock:
            self.consumer.received += 1
        if self.lossless:
            self.q.put(item)
        else:
            while True:
                try:
                    self.q.put_nowait(item)
                    break
                except queue.Full:
                    try:
                        self.q.get_nowait()
                        with self._lock:
                            self.consumer.dropped += 1
                    except queue.Empty:
                        pass
        self.consumer.high_water = max(self.consumer.high_water, self.q.qsize())

    def close(self):
        if self.lossless:
            self.q.put(_EOS)
            return
        while True:
            try:
                self.q.put_nowait(_EOS)
                return
            except queue.Full:
                try:
                    self.q.get_nowait()
                    with self._lock:
                        self.consumer.dropped += 1
                except queue.Empty:
                    pass

    def __iter__(self):
        while True:
            item = self.q.get()
            if item is _EOS:
                return
            yield item


def to_frame(item, js) -> SkeletonFrame:
    """Coerce a source item into a frame of joint set ``js``.

    Accepts a :class:`SkeletonFrame` or ``(t, rows)`` with rows
    ``[x, y, z, c]``; raises :class:`DataError` on anything malformed.
    """
    if isinstance(item, SkeletonFrame):
        frame = item
    else:
        t, rows = item
        arr = np.asarray(rows, dtype=float)
        if arr.shape != (js.joint_count, 4):
            raise DataError(f"frame shape {arr.shape} does not match {js.name}")
        valid = arr[:, 3] != 0
        frame = SkeletonFrame(float(t), np.where(valid[:, None], arr[:, :3], 0.0), valid)
    if len(frame.valid) != js.joint_count:
        raise DataError(f"frame has {len(frame.valid)} joints, {js.name} has {js.joint_count}")
    return frame


def format_frame(frame: SkeletonFrame, jmap: JointMap) -> SkeletonFrame:
    """Per-frame joint remapping (the only stage to adapt for a new tracker)."""
    joints = np.zeros((jmap.target.joint_count, 3))
    valid = np.zeros(jmap.target.joint_count, dtype=bool)
    for j, m in enumerate(jmap.mapping):
        if m is not None:
            joints[j] = frame.joints[m]
            valid[j] = frame.valid[m]
    return SkeletonFrame(frame.t, joints, valid)


def make_windower(jmap: JointMap, norm_cfg: NormalizationConfig,
                  window_cfg: WindowConfig) -> SlidingWindower:
    """Packer whose windows are normalized from their own first valid frame."""
    transform = (lambda s: normalize(s, norm_cfg)) if norm_cfg.enabled else None
    return SlidingWindower(jmap.target, window_cfg, transform)


def batch_windows(items: Iterable, jmap: JointMap, norm_cfg: NormalizationConfig,
                  window_cfg: WindowConfig) -> list[WindowTensor]:
    """Single-threaded reference for the formatter and packer stages."""
    windower = make_windower(jmap, norm_cfg, window_cfg)
    out = []
    for item in items:
        try:
            frame = format_frame(to_frame(item, jmap.source), jmap)
        except (SkelactError, ValueError, TypeError):
            continue
        try:
            out.extend(windower.push(frame)[-1:])
        except SkelactError:
            continue
    return out


def _check_checkpoint(params: ModelParams, jmap: JointMap):
    d = 3 * jmap.target.joint_count
    if params.config.input_channels != d:
        raise ModelError(f"checkpoint expects D={params.config.input_channels}, joint map "
                         f"{jmap.source.name}->{jmap.target.name} gives D={d}", "input")


def run_stream(source: Iterable, joint_map: JointMap, norm_cfg: NormalizationConfig,
               window_cfg: WindowConfig, checkpoint: ModelParams | str | Path,
               sink: Callable[[LabelMessage], None], class_names=None,
               lossless: bool = False, frame_capacity: int = FRAME_QUEUE,
               window_capacity: int = WINDOW_QUEUE) -> dict[str, StageStats]:
    """Run the staged pipeline until ``source`` is exhausted, then drain.

    Returns per-stage counters keyed ``source``, ``formatter``, ``packer``,
    ``recognizer``.
    """
    meta = {}
    if isinstance(checkpoint, (str, Path)):
        checkpoint, meta = load_checkpoint(checkpoint)
    _check_checkpoint(checkpoint, joint_map)
    params = checkpoint
    if class_names is None:
        class_names = meta.get("class_names")

    stats = {name: StageStats() for name in ("source", "formatter", "packer", "recognizer")}
    to_formatter = _Channel(frame_capacity, stats["formatter"], lossless)
    to_packer = _Channel(frame_capacity, stats["packer"], lossless)
    to_recognizer = _Channel(window_capacity, stats["recognizer"], lossless)
    errors: list[BaseException] = []

    def guard(fn, inbox=None):
        def run():
            try:
                fn()
            except BaseException as e:  # surfaced after join
                errors.append(e)
                if inbox is not None:
                    for _ in inbox:  # keep upstream from blocking on a dead stage
                        pass
        return run

    def source_stage():
        st = stats["source"]
        try:
            for item in source:
                st.received += 1
                to_formatter.put((item, time.perf_counter()))
                st.emitted += 1
        finally:
            to_formatter.close()

    def formatter_stage():
        st = stats["formatter"]
        try:
            for item, arrived in to_formatter:
                try:
                    frame = format_frame(to_frame(item, joint_map.source), joint_map)
                except (SkelactError, ValueError, TypeError) as e:
                    log.debug("malformed frame skipped: %s", e)
                    st.dropped += 1
                    continue
                to_packer.put((frame, arrived))
                st.emitted += 1
        finally:
            to_packer.close()

    def packer_stage():
        st = stats["packer"]
        windower = make_windower(joint_map, norm_cfg, window_cfg)
        try:
            for frame, arrived in to_packer:
                before = windower.dropped
                try:
                    windows = windower.push(frame)
                except SkelactError as e:
                    log.debug("window discarded: %s", e)
                    st.dropped += 1
                    continue
                if windower.dropped != before:
                    st.dropped += 1
                    continue
                if not windows:
                    st.absorbed += 1
                    continue
                # after a timestamp gap one frame can complete several
                # windows; only the freshest is worth recognizing
                to_recognizer.put((windows[-1], arrived))
                st.emitted += 1
        finally:
            to_recognizer.close()

    def recognizer_stage():
        st = stats["recognizer"]
        for window, arrived in to_recognizer:
            cid, probs = predict(params, window)
            name = class_names[cid] if class_names and cid < len(class_names) else str(cid)
            latency = max(0.0, (time.perf_counter() - arrived) * 1000.0)
            sink(LabelMessage(window.t_end, cid, name, float(probs[cid]), latency))
            st.emitted += 1

    stages = ((source_stage, None), (formatter_stage, to_formatter),
              (packer_stage, to_packer), (recognizer_stage, to_recognizer))
    threads = [threading.Thread(target=guard(fn, inbox), name=fn.__name__, daemon=True)
               for fn, inbox in stages]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    if errors:
        raise errors[0]
    return stats


def replay_source(path: str | Path, speed: float = 1.0) -> Iterator[SkeletonFrame]:
    """Frames of a SKELREC-JSONL recording paced at ``timestamp / speed``;
    ``speed == 0`` replays as fast as possible.

    The file is read eagerly so an unreadable path fails here, not mid-stream.
    """
    if speed < 0:
        raise ValueError("speed must be >= 0")
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read recording {path}: {e}") from None
    seq = _read_unlabelled(data)

    def frames():
        start = time.perf_counter()
        t0 = seq.t[0] if len(seq) else 0.0
        for i in range(len(seq)):
            if speed > 0:
                due = start + (seq.t[i] - t0) / speed
                delay = due - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
            yield seq.frame(i)
    return frames()


def _read_unlabelled(data: bytes):
    lines = data.decode("utf-8").split("\n", 1)
    header = json.loads(lines[0]) if lines and lines[0].strip() else None
    if not isinstance(header, dict):
        raise DataError("recording has no header line")
    header["label"] = None
    body = lines[1] if len(lines) > 1 else ""
    return read_recording(json.dumps(header) + "\n" + body)


def tcp_source(host: str, port: int) -> Iterator[tuple[float, list]]:
    """SKELREC-JSONL over TCP: a header line, then one frame per line.

    Frame timestamps come from the header fps and the line count. Lines that
    are not valid JSON are yielded as-is so the formatter counts them as
    malformed.
    """
    sock = socket.create_connection((host, port))
    fh = sock.makefile("r", encoding="utf-8")
    header = json.loads(fh.readline())
    fps = float(header["fps"])

    def frames():
        try:
            for i, line in enumerate(fh):
                if not line.strip():
                    continue
                try:
                    rows = json.loads(line)
                except json.JSONDecodeError:
                    rows = None
                yield (i / fps, rows)
        finally:
            fh.close()
            sock.close()
    return frames()


class JsonLinesSink:
    """Writes one LabelMessage JSON object per line."""

    def __init__(self, stream):
        self.stream = stream
        self.messages: list[LabelMessage] = []

    def __call__(self, msg: LabelMessage):
        self.messages.append(msg)
        self.stream.write(msg.to_json() + "\n")
        self.stream.flush()


class TcpSink:
    """Broadcasts LabelMessage lines to every client connected to ``port``."""

    def __init__(self, port: int, host: str = "127.0.0.1"):
        self.server = socket.create_server((host, port))
        self.server.settimeout(0.2)
        self.clients: list[socket.socket] = []
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._accept, daemon=True)
        self._thread.start()

    @property
    def port(self) -> int:
        return self.server.getsockname()[1]

    def _accept(self):
        while not self._stop.is_set():
            try:
                conn, _ = self.server.accept()
                self.clients.append(conn)
            except socket.timeout:
                continue
            except OSError:
                return

    def __call__(self, msg: LabelMessage):
        data = (msg.to_json() + "\n").encode()
        for c in list(self.clients):
            try:
                c.sendall(data)
            except OSError:
                self.clients.remove(c)

    def close(self):
        self._stop.set()
        self._thread.join()
        for c in self.clients:
            c.close()
        self.server.close()
