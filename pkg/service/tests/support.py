"""Helpers shared by the service tests: PNG encoding and a live uvicorn server."""

import base64
import io
import threading
import time

import numpy as np
import uvicorn
from PIL import Image


def png_b64(pixels: np.ndarray) -> str:
    """uint8 HxWx3 array to base64-encoded PNG."""
    buf = io.BytesIO()
    Image.fromarray(pixels, mode="RGB").save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


class LiveServer:
    """uvicorn in a daemon thread on an OS-assigned port.

    Entering the context blocks until the socket is accepting and yields the
    base URL; exiting asks the server to stop and joins the thread.
    """

    def __init__(self, app):
        config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
        self.server = uvicorn.Server(config)
        self.thread = threading.Thread(target=self.server.run, daemon=True)

    def __enter__(self) -> str:
        self.thread.start()
        deadline = time.monotonic() + 15.0
        while not self.server.started:
            if time.monotonic() > deadline:
                raise RuntimeError("server did not come up in time")
            time.sleep(0.02)
        port = self.server.servers[0].sockets[0].getsockname()[1]
        return f"http://127.0.0.1:{port}"

    def __exit__(self, *exc) -> None:
        self.server.should_exit = True
        self.thread.join(timeout=10.0)
