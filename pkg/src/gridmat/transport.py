"""Message-passing substrate: ranks, point-to-point messages, collectives.

Two interchangeable backends share one :class:`Communicator` interface:

* in-process -- every rank is a thread of the current process, messages
  travel through queues (default for tests and the ``local`` CLI backend);
* socket -- every rank is an OS process, messages travel over a full TCP
  mesh established through a rendezvous address (``tcp`` CLI backend).

All collectives are implemented on top of send/recv with a fixed linear
ordering (rank 0 upward), so reductions are bitwise reproducible for a
given communicator size, on either backend.  Every collective ends with a
barrier: no rank leaves a collective before all ranks have entered it.

Payloads are raw bytes.  Numeric payloads are encoded little-endian
(``<f8`` / ``<i8``) by the helpers in this module so both backends move
bit-identical data.
"""

from __future__ import annotations

import json
import socket
import struct
import threading
import time
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

# User tags live below _COLL_BASE; the range above it is reserved for the
# collective protocol.  The socket wire format packs (group_id, tag) into
# the 4-byte frame tag, which caps group ids at 255 splits per world.
TAG_LIMIT = 0xF00000
_COLL_BASE = 0xF00000
_T_BCAST = _COLL_BASE + 0
_T_GATHER = _COLL_BASE + 1
_T_BARRIER_IN = _COLL_BASE + 2
_T_BARRIER_OUT = _COLL_BASE + 3
_T_HANDSHAKE = _COLL_BASE + 4
_MAX_GROUPS = 256

DEFAULT_TIMEOUT = 120.0


class TransportError(RuntimeError):
    """Communication failure: peer loss, timeout, or SPMD misuse."""


class ReduceOp(Enum):
    SUM = "sum"
    MAX = "max"
    MIN = "min"
    MAXABSLOC = "max-abs-with-location"


def encode_f64(values) -> bytes:
    """Little-endian f8 encoding used for all float payloads."""
    return np.ascontiguousarray(np.asarray(values, dtype="<f8")).tobytes()


def decode_f64(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype="<f8").copy()


def encode_i64(values) -> bytes:
    return np.ascontiguousarray(np.asarray(values, dtype="<i8")).tobytes()


def decode_i64(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype="<i8").copy()


class _Inbox:
    """Per-rank mailbox; FIFO queue per (src, group, tag) channel."""

    def __init__(self) -> None:
        self._cond = threading.Condition()
        self._queues: dict[tuple, list] = {}
        self._poison: Optional[BaseException] = None
        self._dead: dict[int, BaseException] = {}

    def put(self, key: tuple, payload: bytes) -> None:
        with self._cond:
            self._queues.setdefault(key, []).append(payload)
            self._cond.notify_all()

    def take(self, key: tuple, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        with self._cond:
            while True:
                q = self._queues.get(key)
                if q:
                    return q.pop(0)
                if self._poison is not None:
                    raise TransportError(str(self._poison)) from self._poison
                if key[0] in self._dead:
                    exc = self._dead[key[0]]
                    raise TransportError(str(exc)) from exc
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise TransportError(
                        f"recv timed out after {timeout:.0f}s on channel {key}"
                    )
                self._cond.wait(remaining)

    def poison(self, exc: BaseException) -> None:
        with self._cond:
            if self._poison is None:
                self._poison = exc
            self._cond.notify_all()

    def mark_dead(self, src: int, exc: BaseException) -> None:
        # buffered messages from src stay readable; only further waits fail
        with self._cond:
            self._dead.setdefault(src, exc)
            self._cond.notify_all()


class _Endpoint:
    """Backend-specific delivery engine owned by one rank."""

    backend = "none"

    def __init__(self, world_rank: int, nranks: int) -> None:
        self.world_rank = world_rank
        self.nranks = nranks
        self.inbox = _Inbox()
        self.group_counter = 0
        self.timeout = DEFAULT_TIMEOUT

    def deliver(self, dest_world: int, group: int, tag: int, payload: bytes) -> None:
        raise NotImplementedError

    def take(self, src_world: int, group: int, tag: int) -> bytes:
        return self.inbox.take((src_world, group, tag), self.timeout)

    def shutdown(self) -> None:
        pass


class _LocalWorld:
    """Shared state of an in-process world: one inbox per rank-thread."""

    def __init__(self, nranks: int) -> None:
        self.nranks = nranks
        self.endpoints = [_LocalEndpoint(self, r, nranks) for r in range(nranks)]

    def poison_all(self, exc: BaseException) -> None:
        for ep in self.endpoints:
            ep.inbox.poison(exc)


class _LocalEndpoint(_Endpoint):
    backend = "in-process"

    def __init__(self, world: _LocalWorld, world_rank: int, nranks: int) -> None:
        super().__init__(world_rank, nranks)
        self._world = world

    def deliver(self, dest_world: int, group: int, tag: int, payload: bytes) -> None:
        self._world.endpoints[dest_world].inbox.put(
            (self.world_rank, group, tag), payload
        )


def _pack_wire_tag(group: int, tag: int) -> int:
    if not 0 <= tag < 0x1000000:
        raise ValueError(f"tag {tag} outside 24-bit wire range")
    if not 0 <= group < _MAX_GROUPS:
        raise TransportError(f"group id {group} exceeds wire limit {_MAX_GROUPS - 1}")
    return (group << 24) | tag


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    got = 0
    while got < n:
        piece = sock.recv(min(n - got, 1 << 20))
        if not piece:
            raise TransportError("peer disconnected")
        chunks.append(piece)
        got += len(piece)
    return b"".join(chunks)


def _read_frame(sock: socket.socket) -> tuple[int, bytes]:
    header = _recv_exact(sock, 8)
    length, wire_tag = struct.unpack("<II", header)
    payload = _recv_exact(sock, length) if length else b""
    return wire_tag, payload


def _write_frame(sock: socket.socket, wire_tag: int, payload: bytes) -> None:
    sock.sendall(struct.pack("<II", len(payload), wire_tag) + payload)


class _SocketEndpoint(_Endpoint):
    """One rank of a socket world: TCP link + reader thread per peer."""

    backend = "socket"

    def __init__(self, world_rank: int, nranks: int) -> None:
        super().__init__(world_rank, nranks)
        self._peers: dict[int, socket.socket] = {}
        self._send_locks: dict[int, threading.Lock] = {}
        self._readers: list[threading.Thread] = []
        self._closing = False

    def add_peer(self, rank: int, sock: socket.socket) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._peers[rank] = sock
        self._send_locks[rank] = threading.Lock()

    def start_readers(self) -> None:
        for rank, sock in self._peers.items():
            t = threading.Thread(
                target=self._reader_loop, args=(rank, sock), daemon=True
            )
            t.start()
            self._readers.append(t)

    def _reader_loop(self, peer: int, sock: socket.socket) -> None:
        try:
            while True:
                wire_tag, payload = _read_frame(sock)
                self.inbox.put((peer, wire_tag >> 24, wire_tag & 0xFFFFFF), payload)
        except (TransportError, OSError) as exc:
            if not self._closing:
                self.inbox.mark_dead(
                    peer, TransportError(f"lost connection to rank {peer}: {exc}")
                )

    def deliver(self, dest_world: int, group: int, tag: int, payload: bytes) -> None:
        if dest_world == self.world_rank:
            self.inbox.put((self.world_rank, group, tag), payload)
            return
        wire_tag = _pack_wire_tag(group, tag)
        sock = self._peers[dest_world]
        with self._send_locks[dest_world]:
            _write_frame(sock, wire_tag, payload)

    def shutdown(self) -> None:
        self._closing = True
        for sock in self._peers.values():
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()


class Communicator:
    """Ordered group of ranks with point-to-point and collective messaging.

    Collective calls must be made in identical order by every member (SPMD
    contract).  A Communicator may be handed from one thread to another but
    must not be used from two threads of the same rank concurrently.
    """

    def __init__(self, endpoint: _Endpoint, world_ranks: list[int], rank: int,
                 group_id: int) -> None:
        self._ep = endpoint
        self._world_ranks = world_ranks
        self.rank = rank
        self.size = len(world_ranks)
        self.group_id = group_id

    @property
    def backend(self) -> str:
        return self._ep.backend

    def __repr__(self) -> str:
        return (f"Communicator(rank={self.rank}, size={self.size}, "
                f"group={self.group_id}, backend={self._ep.backend})")

    def _check_rank(self, r: int, what: str) -> None:
        if not 0 <= r < self.size:
            raise ValueError(f"{what} {r} out of range for size {self.size}")

    # -- point to point ------------------------------------------------

    def send(self, dest: int, tag: int, payload: bytes) -> None:
        """Send bytes to ``dest``.  Buffered: self-sends never deadlock

        (the buffer is memory-bound, not fixed-size).  Messages between a
        fixed (src, dest, tag) triple arrive in send order.
        """
        self._check_rank(dest, "dest")
        if not 0 <= tag < TAG_LIMIT:
            raise ValueError(f"tag must be in [0, {TAG_LIMIT})")
        self._ep.deliver(self._world_ranks[dest], self.group_id, tag, bytes(payload))

    def recv(self, src: int, tag: int) -> bytes:
        self._check_rank(src, "src")
        if not 0 <= tag < TAG_LIMIT:
            raise ValueError(f"tag must be in [0, {TAG_LIMIT})")
        return self._ep.take(self._world_ranks[src], self.group_id, tag)

    def _isend(self, dest: int, tag: int, payload: bytes) -> None:
        # internal: collective-protocol tags above TAG_LIMIT
        self._ep.deliver(self._world_ranks[dest], self.group_id, tag, payload)

    def _irecv(self, src: int, tag: int) -> bytes:
        return self._ep.take(self._world_ranks[src], self.group_id, tag)

    # -- collectives ----------------------------------------------------

    def barrier(self) -> None:
        """No rank returns before every rank has entered."""
        if self.size == 1:
            return
        if self.rank == 0:
            for s in range(1, self.size):
                self._irecv(s, _T_BARRIER_IN)
            for d in range(1, self.size):
                self._isend(d, _T_BARRIER_OUT, b"")
        else:
            self._isend(0, _T_BARRIER_IN, b"")
            self._irecv(0, _T_BARRIER_OUT)

    def broadcast(self, root: int, payload: bytes) -> bytes:
        """Every rank returns root's payload bit-exactly."""
        self._check_rank(root, "root")
        if self.size > 1:
            if self.rank == root:
                data = bytes(payload)
                for d in range(self.size):
                    if d != root:
                        self._isend(d, _T_BCAST, data)
            else:
                data = self._irecv(root, _T_BCAST)
            self.barrier()
            return data
        return bytes(payload)

    def gather_blocks(self, payload: bytes) -> Optional[list[bytes]]:
        """Collect every rank's bytes at rank 0, in rank order; None elsewhere."""
        if self.rank == 0:
            blocks = [bytes(payload)]
            for s in range(1, self.size):
                blocks.append(self._irecv(s, _T_GATHER))
            return blocks
        self._isend(0, _T_GATHER, bytes(payload))
        return None

    def allgather_blocks(self, payload: bytes) -> list[bytes]:
        """Every rank gets the list of all ranks' payloads, in rank order."""
        blocks = self.gather_blocks(payload)
        if self.rank == 0:
            head = struct.pack("<I", self.size) + b"".join(
                struct.pack("<Q", len(b)) for b in blocks
            )
            packed = head + b"".join(blocks)
        else:
            packed = b""
        packed = self.broadcast(0, packed)
        (n,) = struct.unpack_from("<I", packed, 0)
        sizes = struct.unpack_from(f"<{n}Q", packed, 4)
        out = []
        off = 4 + 8 * n
        for s in sizes:
            out.append(packed[off:off + s])
            off += s
        return out

    def allgatherv(self, payload: bytes) -> bytes:
        """Concatenation of all ranks' payloads in rank order, on all ranks."""
        return b"".join(self.allgather_blocks(payload))

    def allreduce(self, op: ReduceOp, values: np.ndarray) -> np.ndarray:
        """Elementwise reduction of f8 vectors, identical on all ranks.

        SUM accumulates in rank order 0..size-1, making the result bitwise
        reproducible for a fixed size.  Vector lengths must match across
        ranks (checked at rank 0).
        """
        if op not in (ReduceOp.SUM, ReduceOp.MAX, ReduceOp.MIN):
            raise ValueError(f"allreduce does not handle {op}; "
                             "use allreduce_maxabsloc for located reductions")
        vec = np.asarray(values, dtype="<f8")
        blocks = self.gather_blocks(vec.tobytes())
        if self.rank == 0:
            parts = [np.frombuffer(b, dtype="<f8") for b in blocks]
            lengths = {len(p) for p in parts}
            if len(lengths) > 1:
                out = b"\x01" + json.dumps(sorted(lengths)).encode()
            else:
                acc = parts[0].copy()
                for p in parts[1:]:
                    if op is ReduceOp.SUM:
                        acc += p
                    elif op is ReduceOp.MAX:
                        np.maximum(acc, p, out=acc)
                    elif op is ReduceOp.MIN:
                        np.minimum(acc, p, out=acc)
                    else:
                        raise ValueError(f"allreduce does not handle {op}")
                out = b"\x00" + acc.tobytes()
        else:
            out = b""
        out = self.broadcast(0, out)
        if out[:1] != b"\x00":
            raise TransportError(
                f"allreduce length mismatch across ranks: {out[1:].decode()}"
            )
        return np.frombuffer(out[1:], dtype="<f8").copy()

    def allreduce_maxabsloc(
        self, pairs: Sequence[tuple[float, int]]
    ) -> list[tuple[float, int]]:
        """Elementwise (max |value|, index) with smallest-index tie-break."""
        vals = np.asarray([p[0] for p in pairs], dtype="<f8")
        idxs = np.asarray([p[1] for p in pairs], dtype="<i8")
        payload = vals.tobytes() + idxs.tobytes()
        blocks = self.gather_blocks(payload)
        if self.rank == 0:
            n = len(vals)
            parts = []
            for b in blocks:
                if len(b) != 16 * n:
                    parts = None
                    break
                parts.append((np.frombuffer(b[:8 * n], dtype="<f8"),
                              np.frombuffer(b[8 * n:], dtype="<i8")))
            if parts is None:
                out = b"\x01"
            else:
                mag = np.abs(parts[0][0])
                idx = parts[0][1].copy()
                for v, i in parts[1:]:
                    m = np.abs(v)
                    take = (m > mag) | ((m == mag) & (i < idx))
                    mag = np.where(take, m, mag)
                    idx = np.where(take, i, idx)
                out = b"\x00" + mag.astype("<f8").tobytes() + idx.astype("<i8").tobytes()
        else:
            out = b""
        out = self.broadcast(0, out)
        if out[:1] != b"\x00":
            raise TransportError("allreduce length mismatch across ranks")
        body = out[1:]
        n = len(body) // 16
        mag = np.frombuffer(body[:8 * n], dtype="<f8")
        idx = np.frombuffer(body[8 * n:], dtype="<i8")
        return [(float(m), int(i)) for m, i in zip(mag, idx)]

    def split(self, color: int, key: int) -> "Communicator":
        """Partition by color; within a part, order members by key then rank.

        Collective over this communicator.  The new group id is agreed
        collectively so all members of any derived communicator share it.
        """
        record = struct.pack("<qqqq", color, key, self.rank, self._ep.group_counter)
        blocks = self.allgather_blocks(record)
        rows = [struct.unpack("<qqqq", b) for b in blocks]
        new_gid = max(r[3] for r in rows) + 1
        if new_gid >= _MAX_GROUPS:
            raise TransportError("too many communicator splits for wire tag space")
        self._ep.group_counter = new_gid
        mine = [r for r in rows if r[0] == color]
        mine.sort(key=lambda r: (r[1], r[2]))
        members = [r[2] for r in mine]
        world_ranks = [self._world_ranks[m] for m in members]
        return Communicator(self._ep, world_ranks, members.index(self.rank), new_gid)

    def shutdown(self) -> None:
        self._ep.shutdown()


# -- world creation ----------------------------------------------------


def run_ranks(nranks: int, entry: Callable, *args, timeout: float = DEFAULT_TIMEOUT):
    """In-process world: run ``entry(comm, *args)`` on ``nranks`` threads.

    Returns the per-rank return values in rank order.  If any rank raises,
    the remaining ranks are unblocked and the lowest-ranked failure is
    re-raised on the caller thread.
    """
    if nranks < 1:
        raise ValueError("nranks must be >= 1")
    world = _LocalWorld(nranks)
    for ep in world.endpoints:
        ep.timeout = timeout
    results: list = [None] * nranks
    errors: list = [None] * nranks

    def body(r: int) -> None:
        comm = Communicator(world.endpoints[r], list(range(nranks)), r, 0)
        try:
            comm.barrier()
            results[r] = entry(comm, *args)
        except BaseException as exc:  # noqa: BLE001 - must unblock siblings
            errors[r] = exc
            world.poison_all(TransportError(f"rank {r} failed: {exc!r}"))

    threads = [threading.Thread(target=body, args=(r,), daemon=True)
               for r in range(nranks)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    real = [e for e in errors
            if e is not None and not isinstance(e, TransportError)]
    if real:
        raise real[0]
    for e in errors:
        if e is not None:
            raise e
    return results


def single_world() -> Communicator:
    """Size-1 in-process world on the calling thread (no extra threads)."""
    world = _LocalWorld(1)
    return Communicator(world.endpoints[0], [0], 0, 0)


def _parse_address(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


def connect_world(nranks: int, rendezvous: str, key: int,
                  timeout: float = 30.0) -> Communicator:
    """Socket world member.  ``key`` 0 hosts the rendezvous and becomes

    rank 0; other keys are sorted to assign ranks 1..nranks-1
    deterministically.  Returns after the full TCP mesh is up and
    barrier-synchronized.
    """
    if nranks < 1:
        raise ValueError("nranks must be >= 1")
    host, port = _parse_address(rendezvous)
    ep = _SocketEndpoint(0, nranks)
    deadline = time.monotonic() + timeout

    if key == 0:
        rank = 0
        if nranks > 1:
            lsock = socket.create_server((host, port))
            lsock.settimeout(timeout)
            hellos = []
            try:
                for _ in range(nranks - 1):
                    conn, _addr = lsock.accept()
                    conn.settimeout(timeout)
                    tag, payload = _read_frame(conn)
                    conn.settimeout(None)
                    msg = json.loads(payload)
                    hellos.append((msg["key"], msg["host"], msg["port"], conn))
            except socket.timeout as exc:
                raise TransportError("rendezvous connection timeout") from exc
            finally:
                lsock.close()
            hellos.sort(key=lambda h: h[0])
            peers = [(i + 1, h[1], h[2]) for i, h in enumerate(hellos)]
            for i, (k, _h, _p, conn) in enumerate(hellos):
                assign = json.dumps({"rank": i + 1, "peers": peers}).encode()
                _write_frame(conn, _T_HANDSHAKE, assign)
                ep.add_peer(i + 1, conn)
    else:
        mysock = socket.create_server((host, 0))
        mysock.settimeout(timeout)
        myport = mysock.getsockname()[1]
        root = None
        while True:
            try:
                root = socket.create_connection((host, port), timeout=1.0)
                break
            except OSError:
                if time.monotonic() > deadline:
                    raise TransportError(
                        f"connection timeout reaching rendezvous {rendezvous}"
                    ) from None
                time.sleep(0.05)
        hello = json.dumps({"key": key, "host": host, "port": myport}).encode()
        _write_frame(root, _T_HANDSHAKE, hello)
        root.settimeout(timeout)
        try:
            _tag, payload = _read_frame(root)
            msg = json.loads(payload)
            rank = msg["rank"]
            root.settimeout(None)
            ep.add_peer(0, root)
            # mesh: connect to lower ranks, accept from higher ranks
            for prank, phost, pport in msg["peers"]:
                if 0 < prank < rank:
                    s = socket.create_connection((phost, pport), timeout=timeout)
                    s.settimeout(None)
                    _write_frame(s, _T_HANDSHAKE,
                                 json.dumps({"rank": rank}).encode())
                    ep.add_peer(prank, s)
            for _ in range(nranks - 1 - rank):
                conn, _addr = mysock.accept()
                conn.settimeout(timeout)
                _tag, payload = _read_frame(conn)
                conn.settimeout(None)
                ep.add_peer(json.loads(payload)["rank"], conn)
        except socket.timeout as exc:
            raise TransportError("connection timeout during world setup") from exc
        finally:
            mysock.close()

    ep.world_rank = rank
    ep.start_readers()
    comm = Communicator(ep, list(range(nranks)), rank, 0)
    comm.barrier()
    return comm
