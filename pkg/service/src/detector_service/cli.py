"""Command-line launcher: pick a model, bind a port, serve the protocol."""

import argparse
from dataclasses import dataclass

from .backends import MODEL_NAMES


@dataclass(frozen=True)
class ServiceConfig:
    model_name: str = "detr"
    device: str = "cpu"
    port: int = 8000
    score_floor: float = 0.05

    def validate(self) -> None:
        if self.model_name not in MODEL_NAMES:
            raise ValueError(f"model_name must be one of {MODEL_NAMES}")
        if not 1 <= self.port <= 65535:
            raise ValueError("port must lie in [1, 65535]")
        if not 0.0 <= self.score_floor < 1.0:
            raise ValueError("score_floor must lie in [0, 1)")


def serve(config: ServiceConfig, host: str = "0.0.0.0") -> None:
    """Load the model and block serving it.

    Needs the model weights downloadable or already cached. Binds all
    interfaces by default so the engine can reach it across containers.
    """
    import uvicorn

    from .app import create_app
    from .backends import load_backend

    config.validate()
    infer_fn, name = load_backend(config.model_name, config.device)
    app = create_app(infer_fn, name, config.score_floor)
    uvicorn.run(app, host=host, port=config.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detector-service",
        description="Serve a pretrained object detector over the wire protocol.",
    )
    parser.add_argument("--model", choices=MODEL_NAMES, default="detr")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--device", default="cpu")
    parser.add_argument(
        "--score-floor",
        type=float,
        default=0.05,
        help="default detection cutoff when a request sends none",
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config = ServiceConfig(
        model_name=args.model,
        device=args.device,
        port=args.port,
        score_floor=args.score_floor,
    )
    try:
        config.validate()
    except ValueError as exc:
        parser.error(str(exc))
    serve(config)
    return 0
