"""Pretrained model loaders behind a uniform inference interface.

Each loader returns (infer_fn, canonical name). infer_fn takes an RGB float
image in [0, 1] and returns raw (label, score, box) triples with boxes in
the submitted image's pixel coordinates; protocol cleanup happens later in
map_model_output. The heavy frameworks are imported lazily so the protocol
layer stays importable without torch. First use downloads weights, so the
model hubs must be reachable or the cache already warm.
"""

from typing import Iterable

import numpy as np

MODEL_NAMES = ("detr", "faster-rcnn")

DETR_CHECKPOINT = "facebook/detr-resnet-50"


def load_backend(model_name: str, device: str = "cpu"):
    if model_name == "detr":
        return _load_detr(device)
    if model_name == "faster-rcnn":
        return _load_faster_rcnn(device)
    raise ValueError(f"unknown model {model_name!r}, expected one of {MODEL_NAMES}")


def _pin_determinism(torch) -> None:
    # best effort; eval-mode CPU inference is already stable in practice
    torch.manual_seed(0)
    try:
        torch.use_deterministic_algorithms(True, warn_only=True)
    except (AttributeError, TypeError):
        pass


def _load_faster_rcnn(device: str):
    import torch
    from torchvision.models.detection import (
        FasterRCNN_ResNet50_FPN_Weights,
        fasterrcnn_resnet50_fpn,
    )

    weights = FasterRCNN_ResNet50_FPN_Weights.DEFAULT
    model = fasterrcnn_resnet50_fpn(weights=weights).to(device).eval()
    categories = weights.meta["categories"]
    _pin_determinism(torch)

    def infer(image: np.ndarray) -> Iterable:
        tensor = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)
        with torch.no_grad():
            out = model([tensor.to(device)])[0]
        raw = []
        for label, score, box in zip(out["labels"], out["scores"], out["boxes"]):
            idx = int(label)
            name = categories[idx] if 0 <= idx < len(categories) else str(idx)
            raw.append((name, float(score), tuple(float(v) for v in box)))
        return raw

    return infer, "faster-rcnn"


def _load_detr(device: str, checkpoint: str = DETR_CHECKPOINT):
    import torch
    from transformers import DetrForObjectDetection, DetrImageProcessor

    processor = DetrImageProcessor.from_pretrained(checkpoint)
    model = DetrForObjectDetection.from_pretrained(checkpoint).to(device).eval()
    _pin_determinism(torch)

    def infer(image: np.ndarray) -> Iterable:
        # the processor resizes and normalizes internally; target_sizes maps
        # the predicted boxes back onto the submitted frame
        pixels = np.clip(image * 255.0, 0.0, 255.0).round().astype(np.uint8)
        inputs = processor(images=pixels, return_tensors="pt").to(device)
        with torch.no_grad():
            outputs = model(**inputs)
        target = torch.tensor([[image.shape[0], image.shape[1]]])
        result = processor.post_process_object_detection(
            outputs, threshold=0.0, target_sizes=target
        )[0]
        raw = []
        for label, score, box in zip(
            result["labels"], result["scores"], result["boxes"]
        ):
            raw.append(
                (
                    model.config.id2label[int(label)],
                    float(score),
                    tuple(float(v) for v in box),
                )
            )
        return raw

    return infer, "detr"
