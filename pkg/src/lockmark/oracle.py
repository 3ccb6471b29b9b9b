"""Score oracles: the black-box classifiers the watermark is optimized against.

Every oracle maps an image to one confidence value per class. Shipped kinds:

  * toy oracles (brightness, template, tiled histogram) for self-contained
    desk-scale experiments,
  * a wire-protocol client that talks newline-delimited JSON to an external
    process or TCP service,
  * an ensemble that combines member score vectors by weighted sum.

Oracles are named by spec strings: ``toy:brightness``, ``toy:template:<path>``,
``toy:hist:<path>``, ``proc:<command line>``, ``tcp:<host>:<port>``,
``ensemble:<path to members JSON>``.
"""

from __future__ import annotations

import base64
import itertools
import json
import math
import shlex
import socket
import subprocess
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, OracleIOError, ParameterError
from .raster import RgbaImage, encode_png, resize_bilinear


@dataclass(frozen=True)
class ScoreVector:
    """Per-class confidences; ``normalized`` marks probability-like vectors."""

    scores: tuple[float, ...]
    normalized: bool = False

    def __post_init__(self):
        if len(self.scores) < 1:
            raise ParameterError("score vector must be non-empty")
        if not all(math.isfinite(s) for s in self.scores):
            raise ParameterError("score vector contains non-finite entries")
        if self.normalized:
            if any(s < 0 for s in self.scores) or abs(sum(self.scores) - 1.0) > 1e-6:
                raise ParameterError("normalized scores must be >= 0 and sum to 1")

    @property
    def class_count(self) -> int:
        return len(self.scores)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.scores, dtype=np.float64)


def predicted_class(v: ScoreVector) -> int:
    """Argmax with ties broken toward the smallest index."""
    return max(range(len(v.scores)), key=v.scores.__getitem__)


def combine_scores(members: list[ScoreVector], weights: list[float]) -> np.ndarray:
    """Elementwise weighted sum of member score vectors (no renormalization)."""
    if len(members) != len(weights) or not members:
        raise ParameterError("need one weight per member score vector")
    k = members[0].class_count
    if any(m.class_count != k for m in members):
        raise ParameterError("member score vectors disagree on class count")
    if any(w < 0 for w in weights):
        raise ParameterError("ensemble weights must be >= 0")
    out = np.zeros(k, dtype=np.float64)
    for m, w in zip(members, weights):
        out += w * m.as_array()
    return out


class Oracle:
    """Base class: resampling, query accounting, and the batch default."""

    kind: str = "abstract"

    def __init__(self, spec: str, class_count: int, input_size: tuple[int, int] | None, normalized: bool):
        if class_count < 2:
            raise ParameterError("oracles need at least 2 classes")
        self.spec = spec
        self.class_count = class_count
        self.input_size = input_size  # (w, h) or None for any
        self.normalized = normalized
        self._query_lock = threading.Lock()
        self._query_count = 0

    @property
    def query_count(self) -> int:
        with self._query_lock:
            return self._query_count

    def _count(self, n: int = 1) -> None:
        with self._query_lock:
            self._query_count += n

    def _prepare(self, image: RgbaImage) -> RgbaImage:
        if self.input_size is None:
            return image
        w, h = self.input_size
        if (image.width, image.height) == (w, h):
            return image
        return RgbaImage(resize_bilinear(image.array, w, h))

    def score(self, image: RgbaImage) -> ScoreVector:
        result = self._score_prepared(self._prepare(image))
        self._count()
        return result

    def score_batch(self, images: list[RgbaImage]) -> list[ScoreVector]:
        return [self.score(img) for img in images]

    def _score_prepared(self, image: RgbaImage) -> ScoreVector:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _gray01(image: RgbaImage) -> np.ndarray:
    """Mean of RGB scaled to [0, 1], float64 (H, W)."""
    return image.array[:, :, :3].astype(np.float64).mean(axis=2) / 255.0


class ToyBrightnessOracle(Oracle):
    """Binary classifier on mean brightness: scores [1 - m, m]."""

    kind = "toy"

    def __init__(self, spec: str = "toy:brightness"):
        super().__init__(spec, class_count=2, input_size=None, normalized=True)

    def _score_prepared(self, image: RgbaImage) -> ScoreVector:
        m = float(_gray01(image).mean())
        return ScoreVector((1.0 - m, m), normalized=True)


class ToyTemplateOracle(Oracle):
    """Linear classifier: score_k is the inner product of template k with the
    grayscale image. Scores are raw (not normalized), so score differences are
    exactly linear in pixel changes."""

    kind = "toy"

    def __init__(self, templates: np.ndarray, spec: str = "toy:template"):
        templates = np.asarray(templates, dtype=np.float64)
        if templates.ndim != 3 or templates.shape[0] < 2:
            raise ParameterError("templates must be a (K, H, W) array with K >= 2")
        k, h, w = templates.shape
        super().__init__(spec, class_count=k, input_size=(w, h), normalized=False)
        self.templates = templates
        # channel mean and /255 folded into one (K, H*W*4) matmul; the alpha
        # channel gets weight zero
        per_channel = np.zeros((k, h * w, 4), dtype=np.float64)
        per_channel[:, :, :3] = templates.reshape(k, -1, 1) / (3.0 * 255.0)
        self._weights = per_channel.reshape(k, -1)

    @classmethod
    def from_file(cls, path: str | Path) -> "ToyTemplateOracle":
        with np.load(path) as data:
            templates = data["templates"]
        return cls(templates, spec=f"toy:template:{path}")

    @staticmethod
    def save_templates(templates: np.ndarray, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, templates=np.asarray(templates, dtype=np.float64))

    def _score_prepared(self, image: RgbaImage) -> ScoreVector:
        flat = image.array.reshape(-1).astype(np.float64)
        return ScoreVector(tuple((self._weights @ flat).tolist()), normalized=False)


class ToyTiledHistogramOracle(Oracle):
    """Nearest-prototype classifier on a grid of tile-mean intensities.

    score_k = -mean((features - prototype_k)^2); higher is closer.
    """

    kind = "toy"

    def __init__(self, prototypes: np.ndarray, spec: str = "toy:hist"):
        prototypes = np.asarray(prototypes, dtype=np.float64)
        if prototypes.ndim != 3 or prototypes.shape[0] < 2:
            raise ParameterError("prototypes must be a (K, G, G) array with K >= 2")
        super().__init__(spec, class_count=prototypes.shape[0], input_size=None, normalized=False)
        self.prototypes = prototypes
        self.grid = prototypes.shape[1]

    @classmethod
    def from_file(cls, path: str | Path) -> "ToyTiledHistogramOracle":
        with np.load(path) as data:
            prototypes = data["prototypes"]
        return cls(prototypes, spec=f"toy:hist:{path}")

    @staticmethod
    def save_prototypes(prototypes: np.ndarray, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, prototypes=np.asarray(prototypes, dtype=np.float64))

    def features(self, image: RgbaImage) -> np.ndarray:
        gray = _gray01(image)
        g = self.grid
        ys = np.linspace(0, gray.shape[0], g + 1).astype(int)
        xs = np.linspace(0, gray.shape[1], g + 1).astype(int)
        feat = np.empty((g, g), dtype=np.float64)
        for i in range(g):
            for j in range(g):
                feat[i, j] = gray[ys[i] : ys[i + 1], xs[j] : xs[j + 1]].mean()
        return feat

    def _score_prepared(self, image: RgbaImage) -> ScoreVector:
        feat = self.features(image)
        scores = -np.mean((self.prototypes - feat[None]) ** 2, axis=(1, 2))
        return ScoreVector(tuple(float(s) for s in scores), normalized=False)


# ---------------------------------------------------------------------------
# Wire-protocol client (external processes and TCP services)
# ---------------------------------------------------------------------------
#
# handshake (first line, oracle -> client):
#   {"hello":{"classes":K,"input_w":W,"input_h":H,"normalized":true}}
# request:  {"id":<u64>,"png_b64":"<base64 PNG>"}
# response: {"id":<u64>,"scores":[...]} or {"id":<u64>,"error":"..."}
#
# Requests may be pipelined; responses are matched by id.


class _WireOracle(Oracle):
    def __init__(self, spec: str, reader, writer, timeout: float):
        self._reader = reader
        self._writer = writer
        self._timeout = timeout
        self._write_lock = threading.Lock()
        self._cond = threading.Condition()
        self._responses: dict[int, dict] = {}
        self._closed = False
        self._ids = itertools.count(1)

        hello = self._read_handshake()
        super().__init__(
            spec,
            class_count=int(hello["classes"]),
            input_size=(int(hello["input_w"]), int(hello["input_h"])),
            normalized=bool(hello.get("normalized", False)),
        )
        self._pump = threading.Thread(target=self._pump_responses, daemon=True)
        self._pump.start()

    def _read_handshake(self) -> dict:
        line = self._reader.readline()
        if not line:
            raise OracleIOError(f"{self.__class__.__name__}: oracle closed before handshake")
        try:
            msg = json.loads(line)
            return msg["hello"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise OracleIOError(f"bad handshake line: {line!r}") from exc

    def _pump_responses(self) -> None:
        try:
            for line in self._reader:
                if not line.strip():
                    continue
                try:
                    msg = json.loads(line)
                except json.JSONDecodeError:
                    continue
                with self._cond:
                    self._responses[int(msg.get("id", -1))] = msg
                    self._cond.notify_all()
        except (OSError, ValueError):
            pass
        finally:
            with self._cond:
                self._closed = True
                self._cond.notify_all()

    def _submit(self, image: RgbaImage) -> int:
        payload = base64.b64encode(encode_png(image)).decode("ascii")
        with self._write_lock:
            request_id = next(self._ids)
            line = json.dumps({"id": request_id, "png_b64": payload}) + "\n"
            try:
                self._writer.write(line.encode("utf-8"))
                self._writer.flush()
            except (OSError, ValueError) as exc:
                raise OracleIOError(f"cannot write request {request_id}: {exc}", request_id) from exc
        return request_id

    def _collect(self, request_id: int) -> ScoreVector:
        deadline = threading.TIMEOUT_MAX if self._timeout is None else self._timeout
        with self._cond:
            ok = self._cond.wait_for(
                lambda: request_id in self._responses or self._closed, timeout=deadline
            )
            msg = self._responses.pop(request_id, None)
        if msg is None:
            reason = "oracle stream closed" if self._closed else f"timeout after {self._timeout}s"
            raise OracleIOError(f"no response for request {request_id}: {reason}", request_id)
        if "error" in msg:
            raise OracleIOError(f"oracle error for request {request_id}: {msg['error']}", request_id)
        scores = msg.get("scores")
        if not isinstance(scores, list) or len(scores) != self.class_count:
            raise OracleIOError(f"malformed scores for request {request_id}", request_id)
        return ScoreVector(tuple(float(s) for s in scores), normalized=self.normalized)

    def _score_prepared(self, image: RgbaImage) -> ScoreVector:
        return self._collect(self._submit(image))

    def score_batch(self, images: list[RgbaImage]) -> list[ScoreVector]:
        ids = [self._submit(self._prepare(img)) for img in images]
        out = [self._collect(i) for i in ids]
        self._count(len(images))
        return out


class ProcOracle(_WireOracle):
    """Oracle served by a child process over its standard streams."""

    kind = "external"

    def __init__(self, command: str, timeout: float = 30.0):
        try:
            self._proc = subprocess.Popen(
                shlex.split(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
            )
        except OSError as exc:
            raise OracleIOError(f"cannot launch oracle process {command!r}: {exc}") from exc
        super().__init__(f"proc:{command}", self._proc.stdout, self._proc.stdin, timeout)

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()


class TcpOracle(_WireOracle):
    """Oracle reached over a TCP socket speaking the same line protocol."""

    kind = "external"

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise OracleIOError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._sock.settimeout(None)
        reader = self._sock.makefile("rb")
        writer = self._sock.makefile("wb")
        super().__init__(f"tcp:{host}:{port}", reader, writer, timeout)

    def close(self) -> None:
        try:
            self._sock.close()
        except OSError:
            pass


class EnsembleOracle(Oracle):
    """Weighted sum of member confidences (no renormalization)."""

    kind = "ensemble"

    def __init__(self, members: list[tuple[Oracle, float]], spec: str = "ensemble"):
        if not members:
            raise ParameterError("ensemble needs at least one member")
        k = members[0][0].class_count
        if any(m.class_count != k for m, _ in members):
            raise ParameterError("ensemble members disagree on class count")
        if any(w < 0 for _, w in members):
            raise ParameterError("ensemble weights must be >= 0")
        normalized = all(m.normalized for m, _ in members) and abs(
            sum(w for _, w in members) - 1.0
        ) < 1e-9
        super().__init__(spec, class_count=k, input_size=None, normalized=normalized)
        self.members = list(members)

    @property
    def member_specs(self) -> list[str]:
        return [m.spec for m, _ in self.members]

    def _score_prepared(self, image: RgbaImage) -> ScoreVector:
        vectors = []
        for idx, (member, _) in enumerate(self.members):
            try:
                vectors.append(member.score(image))
            except Exception as exc:
                raise OracleIOError(f"ensemble member {idx} ({member.spec}) failed: {exc}") from exc
        combined = combine_scores(vectors, [w for _, w in self.members])
        return ScoreVector(tuple(float(s) for s in combined), normalized=self.normalized)

    def close(self) -> None:
        for member, _ in self.members:
            member.close()


def ensemble_score(members: list[tuple[Oracle, float]], image: RgbaImage) -> ScoreVector:
    """One-shot weighted combination without building a persistent handle."""
    vectors = [m.score(image) for m, _ in members]
    combined = combine_scores(vectors, [w for _, w in members])
    return ScoreVector(tuple(float(s) for s in combined))


# ---------------------------------------------------------------------------
# Spec-string resolution
# ---------------------------------------------------------------------------


def resolve_oracle(spec: str, timeout: float = 30.0) -> Oracle:
    """Build an oracle from its spec string (see module docstring)."""
    spec = spec.strip()
    if spec == "toy:brightness":
        return ToyBrightnessOracle()
    if spec.startswith("toy:template:"):
        return ToyTemplateOracle.from_file(spec[len("toy:template:") :])
    if spec.startswith("toy:hist:"):
        return ToyTiledHistogramOracle.from_file(spec[len("toy:hist:") :])
    if spec.startswith("proc:"):
        return ProcOracle(spec[len("proc:") :], timeout=timeout)
    if spec.startswith("tcp:"):
        rest = spec[len("tcp:") :]
        host, sep, port = rest.rpartition(":")
        if not sep or not host:
            raise ConfigurationError(f"bad tcp oracle spec {spec!r}; expected tcp:<host>:<port>")
        return TcpOracle(host, int(port), timeout=timeout)
    if spec.startswith("ensemble:"):
        path = Path(spec[len("ensemble:") :])
        try:
            doc = json.loads(path.read_text())
            members = [
                (resolve_oracle(m["spec"], timeout=timeout), float(m["weight"]))
                for m in doc["members"]
            ]
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigurationError(f"bad ensemble spec file {path}: {exc}") from exc
        return EnsembleOracle(members, spec=spec)
    raise ConfigurationError(f"unknown oracle spec {spec!r}")
