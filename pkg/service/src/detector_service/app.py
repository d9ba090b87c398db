"""HTTP face of a detection model, speaking a small JSON protocol.

POST /detect accepts {"image_png_b64": <base64 PNG>, "score_floor": <real>}
and answers {"detections": [{"label", "score", "box"}, ...], "model": <name>}
with boxes as [x_min, y_min, x_max, y_max] in submitted-image pixel
coordinates. GET /health answers {"status": "ok", "model": <name>}.

Malformed JSON or base64 is a 400, a payload that is not a decodable image
is a 422, and a failure inside the model is a 500. The transport layer
accepts requests concurrently but inference runs one request at a time
behind a lock, so the device sees them in sequence.
"""

import base64
import binascii
import io
import json
import threading
from typing import Callable, Iterable, Sequence

import numpy as np
from fastapi import FastAPI, Request
from fastapi.concurrency import run_in_threadpool
from fastapi.responses import JSONResponse
from PIL import Image

RawDetection = tuple[str, float, Sequence[float]]
InferFn = Callable[[np.ndarray], Iterable[RawDetection]]


def map_model_output(
    raw: Iterable[RawDetection], width: int, height: int, score_floor: float
) -> list[dict]:
    """Normalize raw (label, score, box) triples into protocol detections.

    Scores are clamped to [0, 1] and entries scoring below score_floor are
    dropped. Box corners are reordered if needed and clipped to the image
    bounds. The survivors come back sorted by descending score.
    """
    out = []
    for label, score, box in raw:
        score = min(1.0, max(0.0, float(score)))
        if score < score_floor:
            continue
        x_lo, x_hi = sorted((float(box[0]), float(box[2])))
        y_lo, y_hi = sorted((float(box[1]), float(box[3])))
        out.append(
            {
                "label": str(label),
                "score": score,
                "box": [
                    min(max(x_lo, 0.0), float(width)),
                    min(max(y_lo, 0.0), float(height)),
                    min(max(x_hi, 0.0), float(width)),
                    min(max(y_hi, 0.0), float(height)),
                ],
            }
        )
    out.sort(key=lambda det: -det["score"])
    return out


def _error(status: int, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": message})


def create_app(
    infer_fn: InferFn, model_name: str, score_floor: float = 0.05
) -> FastAPI:
    """Wrap an inference callable in the wire protocol.

    infer_fn maps an RGB float image in [0, 1] with shape (height, width, 3)
    to raw (label, score, box) triples in the image's own coordinates;
    map_model_output cleans them up afterwards. score_floor is the default
    cutoff for requests that do not send their own.
    """
    app = FastAPI(title=model_name)
    lock = threading.Lock()  # one inference at a time per device

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "model": model_name}

    @app.post("/detect")
    async def detect(request: Request):
        try:
            doc = json.loads(await request.body())
        except (ValueError, UnicodeDecodeError):
            return _error(400, "request body is not valid JSON")
        if not isinstance(doc, dict) or not isinstance(doc.get("image_png_b64"), str):
            return _error(400, "image_png_b64 must be a base64 string")
        floor = doc.get("score_floor", score_floor)
        if isinstance(floor, bool) or not isinstance(floor, (int, float)):
            return _error(400, "score_floor must be a number")
        if not 0.0 <= floor < 1.0:
            return _error(400, "score_floor must lie in [0, 1)")
        try:
            blob = base64.b64decode(doc["image_png_b64"], validate=True)
        except (binascii.Error, ValueError):
            return _error(400, "image_png_b64 is not valid base64")
        try:
            with Image.open(io.BytesIO(blob)) as decoded:
                rgb = decoded.convert("RGB")
        except Exception:  # Pillow raises a zoo of types for broken payloads
            return _error(422, "payload did not decode as an image")
        image = np.asarray(rgb, dtype=np.float32) / 255.0
        height, width = image.shape[:2]

        def run() -> list[RawDetection]:
            with lock:
                return list(infer_fn(image))

        try:
            raw = await run_in_threadpool(run)
        except Exception as exc:
            return _error(500, f"inference failed: {exc}")
        return {
            "detections": map_model_output(raw, width, height, float(floor)),
            "model": model_name,
        }

    return app
