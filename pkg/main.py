import asyncio
import logging
from typing import Any, Dict, Optional, Set

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware

from app.api.routes import router
from app.core.benchmark_manager import BenchmarkManager

logger = logging.getLogger(__name__)

app = FastAPI(title="limatch camera/LiDAR matching service")
app.add_middleware(
    CORSMiddleware,
    allow_origins=["*"],
    allow_credentials=True,
    allow_methods=["*"],
    allow_headers=["*"],
)


class RecordBroadcaster:
    """Pushes benchmark records to every subscribed WebSocket as {"type": "record", "data": ...}."""

    def __init__(self):
        self.clients: Set[WebSocket] = set()
        self.loop: Optional[asyncio.AbstractEventLoop] = None

    async def subscribe(self, websocket: WebSocket):
        await websocket.accept()
        self.clients.add(websocket)
        logger.info(f"[WebSocket] subscriber joined ({len(self.clients)} active)")

    def unsubscribe(self, websocket: WebSocket):
        self.clients.discard(websocket)

    async def publish(self, kind: str, payload: Dict[str, Any]):
        dead = []
        for client in list(self.clients):
            try:
                await client.send_json({"type": kind, "data": payload})
            except Exception as e:
                logger.warning(f"[WebSocket] dropping subscriber: {e}")
                dead.append(client)
        for client in dead:
            self.unsubscribe(client)

    def publish_threadsafe(self, record: Dict[str, Any]):
        # Runs on the benchmark consumer thread
        if self.loop is not None and self.clients:
            asyncio.run_coroutine_threadsafe(self.publish("record", record), self.loop)


broadcaster = RecordBroadcaster()


@app.on_event("startup")
async def attach_benchmark_stream():
    broadcaster.loop = asyncio.get_running_loop()
    BenchmarkManager().on_record = broadcaster.publish_threadsafe
    logger.info("[Server] benchmark records streamed on /ws")


app.include_router(router)


@app.websocket("/ws")
async def record_stream(websocket: WebSocket):
    await broadcaster.subscribe(websocket)
    await broadcaster.publish("status", BenchmarkManager().get_status())
    try:
        while True:
            await websocket.receive_text()
    except WebSocketDisconnect:
        broadcaster.unsubscribe(websocket)


if __name__ == "__main__":
    import uvicorn

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    uvicorn.run(app, host="0.0.0.0", port=8000)
