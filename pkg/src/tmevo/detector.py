"""Detector backends: synthetic (closed-form, deterministic) and remote HTTP.

The synthetic detector is the workhorse for experiments and tests: each
configured box responds with confidence 1 - k * meanAbsDiff between the image
patch and the template patch, clamped to [0, 1]. It is a pure function of the
pixel values, so every run is exactly reproducible.

The remote client speaks a small JSON protocol:

    POST /detect  {"image_png_b64": "<base64 PNG>", "score_floor": 0.05}
      -> 200 {"detections": [{"label": str, "score": float,
               "box": [x_min, y_min, x_max, y_max]}], "model": str}
    GET /health   -> {"status": "ok", "model": str}
"""

from __future__ import annotations

import base64
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from .imaging import BoundingBox, load_image, png_bytes, save_image

__all__ = [
    "CountingDetector",
    "Detection",
    "DetectionSet",
    "DetectorError",
    "ProtocolError",
    "RemoteDetector",
    "SyntheticBox",
    "SyntheticDetector",
    "SyntheticSpec",
    "TransportError",
    "build_detector",
    "generate_scenario",
    "load_scenario",
    "save_scenario",
]

DEFAULT_SCORE_FLOOR = 0.05


class DetectorError(Exception):
    """Base class for detector failures."""


class TransportError(DetectorError):
    """Network-level failure (timeout, refused connection, 5xx)."""


class ProtocolError(DetectorError):
    """The remote endpoint violated the wire contract; not retryable."""


@dataclass(frozen=True)
class Detection:
    label: str
    score: float
    box: BoundingBox

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class DetectionSet:
    """Detections for one image, sorted by descending score."""

    detections: tuple[Detection, ...]
    image_height: int
    image_width: int

    @property
    def max_score(self) -> float:
        return self.detections[0].score if self.detections else 0.0

    def __len__(self) -> int:
        return len(self.detections)


@dataclass(frozen=True)
class SyntheticBox:
    box: BoundingBox
    k: float = 4.0
    label: str = "object"


@dataclass
class SyntheticSpec:
    """Template image plus per-box sensitivity for the synthetic detector."""

    name: str
    template: np.ndarray
    boxes: list[SyntheticBox]
    score_floor: float = DEFAULT_SCORE_FLOOR

    @property
    def height(self) -> int:
        return self.template.shape[0]

    @property
    def width(self) -> int:
        return self.template.shape[1]

    @property
    def overlapping(self) -> bool:
        for i, a in enumerate(self.boxes):
            for b in self.boxes[i + 1:]:
                ix = min(a.box.x_max, b.box.x_max) - max(a.box.x_min, b.box.x_min)
                iy = min(a.box.y_max, b.box.y_max) - max(a.box.y_min, b.box.y_min)
                if ix > 0 and iy > 0:
                    return True
        return False


class SyntheticDetector:
    """Deterministic detector driven by a SyntheticSpec.

    Per box j: confidence = clamp(1 - k_j * meanAbsDiff(patch_j(image),
    patch_j(template)), 0, 1). Detections below the score floor are omitted.
    """

    def __init__(self, spec: SyntheticSpec):
        self.spec = spec

    def detect(self, image: np.ndarray) -> DetectionSet:
        spec = self.spec
        if image.shape != spec.template.shape:
            raise DetectorError(
                f"image shape {image.shape} does not match template "
                f"{spec.template.shape}"
            )
        scored = []
        for idx, sb in enumerate(spec.boxes):
            ys, xs = sb.box.pixel_slices(spec.height, spec.width)
            mad = float(np.mean(np.abs(image[ys, xs] - spec.template[ys, xs])))
            conf = min(1.0, max(0.0, 1.0 - sb.k * mad))
            if conf >= spec.score_floor:
                scored.append((conf, idx, Detection(sb.label, conf, sb.box)))
        scored.sort(key=lambda t: (-t[0], t[1]))
        return DetectionSet(
            detections=tuple(d for _, _, d in scored),
            image_height=spec.height,
            image_width=spec.width,
        )


def _boxes_disjoint(a: BoundingBox, b: BoundingBox) -> bool:
    return (
        min(a.x_max, b.x_max) - max(a.x_min, b.x_min) <= 0
        or min(a.y_max, b.y_max) - max(a.y_min, b.y_min) <= 0
    )


def generate_scenario(
    height: int = 32,
    width: int = 32,
    num_boxes: int = 2,
    k: float = 4.0,
    seed: int = 0,
    box_min: int = 2,
    box_max: int = 2,
    score_floor: float = DEFAULT_SCORE_FLOOR,
    name: str | None = None,
) -> SyntheticSpec:
    """Build a random synthetic scenario.

    Template pixels sit exactly on the value rails (0.0 or 1.0), so a pixel
    perturbed away from the template can end up a full unit away per channel,
    and the 8-bit round trip through PNG reproduces the template exactly.
    Boxes are tiny: over so few pixels the per-box confidence varies sharply
    from one noise draw to the next, and a handful of strong pixels carries
    the whole margin, which is the regime where a search penalized for pixel
    count separates from one that is not. Placement rejection-samples for
    disjoint boxes and falls back to overlap when the canvas is too crowded
    (SyntheticSpec.overlapping records which happened).
    """
    rng = np.random.default_rng(seed)
    template = np.where(
        rng.integers(0, 2, size=(height, width, 3)) > 0, 1.0, 0.0
    )
    boxes: list[SyntheticBox] = []
    for j in range(num_boxes):
        cand = None
        for _ in range(200):
            bh = min(int(rng.integers(box_min, box_max + 1)), height)
            bw = min(int(rng.integers(box_min, box_max + 1)), width)
            y0 = int(rng.integers(0, height - bh + 1))
            x0 = int(rng.integers(0, width - bw + 1))
            cand = BoundingBox(x0, y0, x0 + bw, y0 + bh)
            if all(_boxes_disjoint(cand, sb.box) for sb in boxes):
                break
        boxes.append(SyntheticBox(box=cand, k=k, label=f"object{j}"))
    return SyntheticSpec(
        name=name or f"scenario-{seed}",
        template=template,
        boxes=boxes,
        score_floor=score_floor,
    )


def save_scenario(spec: SyntheticSpec, json_path: str | Path) -> Path:
    """Write the scenario JSON plus its template PNG next to it."""
    json_path = Path(json_path)
    template_name = json_path.stem + "_template.png"
    save_image(spec.template, json_path.parent / template_name)
    doc = {
        "name": spec.name,
        "height": spec.height,
        "width": spec.width,
        "template_png": template_name,
        "score_floor": spec.score_floor,
        "overlapping": spec.overlapping,
        "boxes": [
            {
                "x_min": sb.box.x_min,
                "y_min": sb.box.y_min,
                "x_max": sb.box.x_max,
                "y_max": sb.box.y_max,
                "k": sb.k,
                "label": sb.label,
            }
            for sb in spec.boxes
        ],
    }
    json_path.write_text(json.dumps(doc, indent=2) + "\n")
    return json_path


def load_scenario(json_path: str | Path) -> SyntheticSpec:
    json_path = Path(json_path)
    doc = json.loads(json_path.read_text())
    template = load_image(json_path.parent / doc["template_png"])
    boxes = [
        SyntheticBox(
            box=BoundingBox(b["x_min"], b["y_min"], b["x_max"], b["y_max"]),
            k=float(b["k"]),
            label=b["label"],
        )
        for b in doc["boxes"]
    ]
    return SyntheticSpec(
        name=doc["name"],
        template=template,
        boxes=boxes,
        score_floor=float(doc.get("score_floor", DEFAULT_SCORE_FLOOR)),
    )


class RemoteDetector:
    """HTTP client for a detection service speaking the wire protocol.

    Transport errors (timeouts, refused connections, 5xx responses) are
    retried up to max_retries times with exponential backoff; protocol
    violations (bad schema, scores outside [0, 1]) fail immediately.
    """

    def __init__(
        self,
        endpoint: str,
        score_floor: float = DEFAULT_SCORE_FLOOR,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.2,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.score_floor = score_floor
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def _post(self, payload: dict) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * (2 ** (attempt - 1)))
            try:
                resp = requests.post(
                    self.endpoint + "/detect", json=payload, timeout=self.timeout
                )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = TransportError(f"transport failure: {exc}")
                continue
            if resp.status_code >= 500:
                last_exc = TransportError(f"server error {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ProtocolError(
                    f"unexpected status {resp.status_code}: {resp.text[:200]}"
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise ProtocolError(f"response is not JSON: {exc}") from exc
        raise last_exc  # type: ignore[misc]

    def detect(self, image: np.ndarray) -> DetectionSet:
        payload = {
            "image_png_b64": base64.b64encode(png_bytes(image)).decode("ascii"),
            "score_floor": self.score_floor,
        }
        doc = self._post(payload)
        try:
            raw = doc["detections"]
        except (TypeError, KeyError) as exc:
            raise ProtocolError(f"missing 'detections' field: {doc!r}") from exc
        detections = []
        for item in raw:
            try:
                label = str(item["label"])
                score = float(item["score"])
                x0, y0, x1, y1 = (float(v) for v in item["box"])
            except (TypeError, KeyError, ValueError) as exc:
                raise ProtocolError(f"malformed detection {item!r}") from exc
            if not (0.0 <= score <= 1.0):
                raise ProtocolError(f"score {score} outside [0, 1]")
            try:
                box = BoundingBox(x0, y0, x1, y1)
            except ValueError as exc:
                raise ProtocolError(str(exc)) from exc
            detections.append(Detection(label, score, box))
        detections.sort(key=lambda d: -d.score)
        return DetectionSet(
            detections=tuple(detections),
            image_height=image.shape[0],
            image_width=image.shape[1],
        )

    def health(self) -> dict:
        try:
            resp = requests.get(self.endpoint + "/health", timeout=self.timeout)
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise TransportError(f"health check failed: {exc}") from exc
        if resp.status_code != 200:
            raise TransportError(f"health check status {resp.status_code}")
        return resp.json()


@dataclass
class CountingDetector:
    """Wrapper that counts detect() calls; used to assert call budgets."""

    inner: object
    calls: int = 0
    log: list = field(default_factory=list)

    def detect(self, image: np.ndarray) -> DetectionSet:
        self.calls += 1
        return self.inner.detect(image)

    def mark(self) -> int:
        """Record the current count and return calls since the last mark."""
        start = self.log[-1] if self.log else 0
        self.log.append(self.calls)
        return self.calls - start


def build_detector(descriptor: str):
    """Build a detector from a CLI descriptor.

    Accepted forms: "synthetic:<scenario.json>" and "remote:<url>".
    """
    kind, _, arg = descriptor.partition(":")
    if kind == "synthetic" and arg:
        return SyntheticDetector(load_scenario(arg))
    if kind == "remote" and arg:
        return RemoteDetector(arg)
    raise ValueError(
        f"unrecognized detector descriptor {descriptor!r}; expected "
        "synthetic:<scenario.json> or remote:<url>"
    )
