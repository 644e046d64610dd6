"""asyncio TCP front end for the gateway, plus the matching client transport."""
from __future__ import annotations

import asyncio
import itertools
import logging
from typing import Callable

from ..core.clock import WallClockLoop
from ..core.types import InferenceRequest, RequestRecord
from ..gateway import Gateway
from .protocol import (
    OUTCOME_FOR_STATUS,
    STATUS_FOR_OUTCOME,
    DecodeError,
    Request,
    Response,
    decode_message,
    encode_message,
    read_frame,
)

log = logging.getLogger(__name__)


class GatewayServer:
    """Speaks the wire protocol on a TCP socket and routes through `gateway`.

    One request at a time per connection; the response is written when the
    gateway answers. The last finished record per peer port is kept in
    `records` so in-process clients can recover the full timing breakdown.
    """

    def __init__(self, gateway: Gateway | None, loop: WallClockLoop | None) -> None:
        self.gateway = gateway
        self.loop = loop
        self.records: dict[int, RequestRecord] = {}
        self._ids = itertools.count()
        self._server: asyncio.AbstractServer | None = None
        self._conns: set[asyncio.StreamWriter] = set()

    @property
    def address(self) -> tuple[str, int]:
        return self._server.sockets[0].getsockname()[:2]

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> None:
        self._server = await asyncio.start_server(self._handle, host, port)

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            for w in list(self._conns):
                w.close()
            await self._server.wait_closed()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        self._conns.add(writer)
        peer_port = writer.get_extra_info("peername")[1]
        try:
            while True:
                try:
                    msg = decode_message(await read_frame(reader))
                except (asyncio.IncompleteReadError, ConnectionError):
                    return
                except DecodeError as e:
                    log.warning("dropping connection from port %d: %s", peer_port, e)
                    return
                if not isinstance(msg, Request):
                    return
                rec = await self.handle_request(msg)
                self.records[peer_port] = rec
                queue = rec.queue_time if rec.t_compute_start is not None else 0
                compute = rec.compute_time if rec.t_compute_end is not None else 0
                writer.write(encode_message(Response(STATUS_FOR_OUTCOME[rec.outcome], queue, compute)))
                await writer.drain()
        finally:
            self._conns.discard(writer)
            writer.close()

    async def handle_request(self, msg: Request) -> RequestRecord:
        fut: asyncio.Future[RequestRecord] = asyncio.get_running_loop().create_future()

        def respond(rec: RequestRecord) -> None:
            if not fut.done():
                fut.set_result(rec)

        req = InferenceRequest(next(self._ids), msg.model, msg.batch, msg.token, len(msg.payload))
        self.gateway.route(req, None, respond)
        return await fut


class TcpTransport:
    """Client side: one persistent connection per closed-loop client."""

    def __init__(self, loop: WallClockLoop, server: GatewayServer) -> None:
        self.loop = loop
        self.server = server
        self._conns: dict[int, tuple[asyncio.StreamReader, asyncio.StreamWriter]] = {}
        self._tasks: set[asyncio.Task] = set()

    async def _conn(self, client_id: int):
        c = self._conns.get(client_id)
        if c is None:
            host, port = self.server.address
            c = self._conns[client_id] = await asyncio.open_connection(host, port)
        return c

    def send(self, client_id: int, request: InferenceRequest, on_recv: Callable[[RequestRecord], None]) -> None:
        t_send = self.loop.now()
        task = asyncio.ensure_future(self._roundtrip(client_id, request, t_send, on_recv))
        self._tasks.add(task)
        task.add_done_callback(self._done)

    def _done(self, task: asyncio.Task) -> None:
        self._tasks.discard(task)
        if not task.cancelled() and task.exception() is not None:
            log.error("client request failed", exc_info=task.exception())

    async def _roundtrip(self, client_id, request, t_send, on_recv) -> None:
        reader, writer = await self._conn(client_id)
        payload = b"\0" * request.payload_size
        writer.write(encode_message(Request(request.token, request.model, request.batch_size, payload)))
        await writer.drain()
        resp = decode_message(await read_frame(reader))
        t_recv = self.loop.now()
        if not isinstance(resp, Response):
            raise DecodeError("expected a response frame")
        rec = self.server.records.pop(writer.get_extra_info("sockname")[1], None)
        if rec is None:
            rec = record_from_response(request, resp, t_send, t_recv)
        rec.request_id = request.request_id
        rec.t_client_send = t_send
        rec.t_client_recv = t_recv
        on_recv(rec)

    async def close(self) -> None:
        for t in list(self._tasks):
            t.cancel()
        for _, w in self._conns.values():
            w.close()
        self._conns.clear()


def record_from_response(request: InferenceRequest, resp: Response, t_send: int, t_recv: int) -> RequestRecord:
    """Best-effort record when only the wire response is available: all
    network time is attributed to the request leg."""
    outcome = OUTCOME_FOR_STATUS[resp.status]
    rec = RequestRecord(request.request_id, request.model, t_client_send=t_send, t_client_recv=t_recv, outcome=outcome)
    end = t_recv
    start = end - resp.compute_ns
    enq = start - resp.queue_ns
    rec.t_gateway_in = enq
    if resp.status == 0:
        rec.t_enqueue, rec.t_compute_start, rec.t_compute_end = enq, start, end
    return rec
