"""TCP and WebSocket listeners feeding the gateway service.

Both transports carry identical frames: raw frames back to back on TCP,
one frame per binary message on WebSocket. Each connection gets its own
thread, which also serializes dispatch per session.
"""

import logging
import socket
import threading

from fhirgate.errors import GatewayError, Truncated
from fhirgate.gateway import wsproto
from fhirgate.gateway.framing import decode_frame
from fhirgate.gateway.service import GatewayService
from fhirgate.gateway.wsproto import HandshakeFailed

log = logging.getLogger(__name__)

WS_PATH = "/ws"


class GatewayServer:
    def __init__(self, service: GatewayService, host: str = "127.0.0.1",
                 tcp_port: int = 7842, ws_port: int = 7843):
        self.service = service
        self.host = host
        self.tcp_port = tcp_port
        self.ws_port = ws_port
        self._tcp_listener: socket.socket | None = None
        self._ws_listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._stopping = threading.Event()

    def start(self) -> None:
        """Bind both listeners; the real port numbers land on the instance."""
        self._tcp_listener = self._bind(self.tcp_port)
        self.tcp_port = self._tcp_listener.getsockname()[1]
        try:
            self._ws_listener = self._bind(self.ws_port)
        except OSError:
            self._tcp_listener.close()
            raise
        self.ws_port = self._ws_listener.getsockname()[1]
        for listener, conn_handler in ((self._tcp_listener, self._serve_tcp),
                                       (self._ws_listener, self._serve_ws)):
            thread = threading.Thread(target=self._accept_loop,
                                      args=(listener, conn_handler), daemon=True)
            thread.start()
            self._threads.append(thread)

    def _bind(self, port: int) -> socket.socket:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self.host, port))
        listener.listen(64)
        listener.settimeout(0.5)  # lets the accept loop notice a stop request
        return listener

    def stop(self) -> None:
        self._stopping.set()
        for listener in (self._tcp_listener, self._ws_listener):
            if listener is not None:
                try:
                    listener.shutdown(socket.SHUT_RDWR)
                except OSError:
                    pass
                try:
                    listener.close()
                except OSError:
                    pass
        for session in self.service.sessions():
            self.service.close_session(session, "server stopping")
        for thread in self._threads:
            thread.join(timeout=2.0)

    def _accept_loop(self, listener: socket.socket, conn_handler) -> None:
        while not self._stopping.is_set():
            try:
                conn, addr = listener.accept()
            except TimeoutError:
                continue
            except OSError:
                return
            conn.settimeout(None)
            conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            thread = threading.Thread(target=conn_handler, args=(conn, addr),
                                      daemon=True)
            thread.start()

    # -- raw TCP ---------------------------------------------------------------

    def _serve_tcp(self, conn: socket.socket, addr) -> None:
        session = self.service.connect(
            send_raw=conn.sendall,
            close_raw=lambda: _quiet_close(conn))
        buf = b""
        try:
            while not session.closed:
                try:
                    data = conn.recv(65536)
                except OSError:
                    break
                if not data:
                    break
                buf += data
                while True:
                    try:
                        frame, buf = decode_frame(buf)
                    except Truncated:
                        break
                    except GatewayError as exc:
                        self.service.close_session(session, exc.code)
                        return
                    self.service.handle_frame(session, frame)
                    if session.closed:
                        return
        finally:
            self.service.close_session(session)

    # -- WebSocket ---------------------------------------------------------------

    def _serve_ws(self, conn: socket.socket, addr) -> None:
        try:
            path = wsproto.handshake(conn)
        except (HandshakeFailed, OSError):
            _quiet_close(conn)
            return
        if path.split("?", 1)[0] != WS_PATH:
            wsproto.send_close(conn)
            _quiet_close(conn)
            return
        session = self.service.connect(
            send_raw=lambda data: wsproto.send_message(conn, data),
            close_raw=lambda: (_ws_quiet_close(conn)))
        try:
            while not session.closed:
                message = wsproto.recv_message(conn)
                if message is None:
                    break
                try:
                    frame, rest = decode_frame(message)
                except GatewayError as exc:
                    self.service.close_session(session, exc.code)
                    return
                if rest:
                    self.service.close_session(session, "TrailingBytes")
                    return
                self.service.handle_frame(session, frame)
        finally:
            self.service.close_session(session)


def _quiet_close(conn: socket.socket) -> None:
    try:
        conn.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        conn.close()
    except OSError:
        pass


def _ws_quiet_close(conn: socket.socket) -> None:
    wsproto.send_close(conn)
    _quiet_close(conn)
