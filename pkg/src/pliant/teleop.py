"""WebSocket bridge letting a human steer the simulator and record demos.

Wire protocol (JSON text frames, versioned with "v"):

  server -> client, 20 Hz on the sim clock:
    {"v": 1, "type": "state", "tick": int, "task": str, "recording": bool,
     "grid": [G*G floats, row-major],
     "arms": [{"pose": [9], "wrench": [6], "gripper": f, "stiffness_mode": s}]}

  client -> server:
    {"v": 1, "type": "command", "delta": [dx dy dz drx dry drz],
     "gripper": f, "stiffness_toggle": bool, "record": "start|stop|discard"}

Deltas are clamped server-side to +-5 mm / +-0.05 rad per message; unknown
fields are ignored; malformed JSON is answered with an "error" frame. The
sim loop owns the world; the connection handler only enqueues commands and
reads snapshots (at most one command applied per tick, last write wins).
"""
from __future__ import annotations

import json
import logging
import queue
import socket
import threading
import time
from pathlib import Path

import numpy as np

from . import wsock
from .compliance import set_stiffness_mode
from .config import RunConfig
from .datastore import Episode, episode_filename, write_episode
from .envs import TaskEnv
from .geometry import rotmat_to_6d, so3_exp
from .simworld import render_grid

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DELTA_POS_LIMIT = 0.005
DELTA_ROT_LIMIT = 0.05
BROADCAST_HZ = 20.0


def clamp_delta(delta: np.ndarray) -> np.ndarray:
    delta = np.asarray(delta, dtype=np.float64)
    out = delta.copy()
    out[:3] = np.clip(out[:3], -DELTA_POS_LIMIT, DELTA_POS_LIMIT)
    out[3:] = np.clip(out[3:], -DELTA_ROT_LIMIT, DELTA_ROT_LIMIT)
    return out


def parse_command(text: str) -> tuple[dict | None, str | None]:
    """Validate one client frame; returns (command, error_message)."""
    try:
        msg = json.loads(text)
    except json.JSONDecodeError as e:
        return None, f"malformed JSON: {e}"
    if not isinstance(msg, dict) or msg.get("type") != "command":
        return None, f"expected a command object, got {type(msg).__name__}"
    cmd: dict = {}
    if "delta" in msg:
        delta = msg["delta"]
        if (not isinstance(delta, list) or len(delta) != 6
                or not all(isinstance(x, (int, float)) for x in delta)):
            return None, "delta must be a list of 6 numbers"
        cmd["delta"] = clamp_delta(np.asarray(delta, dtype=np.float64))
    if "gripper" in msg:
        if not isinstance(msg["gripper"], (int, float)):
            return None, "gripper must be a number"
        cmd["gripper"] = float(np.clip(msg["gripper"], 0.0, 1.0))
    if "stiffness_toggle" in msg:
        if not isinstance(msg["stiffness_toggle"], bool):
            return None, "stiffness_toggle must be a boolean"
        cmd["stiffness_toggle"] = msg["stiffness_toggle"]
    if "record" in msg:
        if msg["record"] not in ("start", "stop", "discard"):
            return None, "record must be start|stop|discard"
        cmd["record"] = msg["record"]
    return cmd, None  # unknown fields ignored


class TeleopBridge:
    """Serves one task world over a WebSocket; records on demand."""

    def __init__(self, cfg: RunConfig, task: str, out_dir: str | Path | None,
                 port: int = 8765, lockstep: bool = False, seed: int = 0,
                 session_ticks: int = 10 ** 9):
        self.cfg = cfg
        self.task = task
        self.out_dir = Path(out_dir) if out_dir else None
        self.port = port
        self.lockstep = lockstep
        self.seed = seed
        self.env = TaskEnv(cfg, task, max_ticks=session_ticks)
        self.env.reset(seed)
        body = self.env.world.arms[0]
        self._target_pos = body.position.copy()
        self._target_rot = body.rotation.copy()
        self._gripper = 0.0
        self._mode = "high"
        self._cmd_queue: "queue.Queue[dict]" = queue.Queue()
        self._client: socket.socket | None = None
        self._client_lock = threading.Lock()
        self._recording = False
        self._rows: dict[str, list] | None = None
        self._record_start_seed = seed
        self.episodes_written: list[Path] = []
        self._listener: socket.socket | None = None
        self._stop = threading.Event()
        self._next_broadcast = 0.0

    # -- networking ------------------------------------------------------------
    def start(self) -> int:
        """Open the listener; returns the bound port."""
        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind(("127.0.0.1", self.port))
        self._listener.listen(1)
        self.port = self._listener.getsockname()[1]
        threading.Thread(target=self._accept_loop, daemon=True).start()
        return self.port

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._client_loop, args=(conn,), daemon=True).start()

    def _client_loop(self, conn: socket.socket) -> None:
        try:
            wsock.server_handshake(conn)
        except (ConnectionError, OSError) as e:
            log.info("handshake failed: %s", e)
            conn.close()
            return
        with self._client_lock:
            if self._client is not None:
                try:
                    wsock.send_close(self._client)
                    self._client.close()
                except OSError:
                    pass
            self._client = conn
        self._send(self._state_message())  # immediate snapshot for new clients
        try:
            while not self._stop.is_set():
                op, payload = wsock.recv_message(conn)
                if op == wsock.OP_CLOSE:
                    break
                cmd, err = parse_command(payload.decode("utf-8", errors="replace"))
                if err is not None:
                    self._send(json.dumps({"v": PROTOCOL_VERSION, "type": "error",
                                           "message": err}))
                    continue
                self._cmd_queue.put(cmd)
        except (ConnectionError, OSError):
            pass  # session survives client disconnect
        finally:
            with self._client_lock:
                if self._client is conn:
                    self._client = None
            conn.close()

    def _send(self, text: str) -> None:
        with self._client_lock:
            client = self._client
        if client is None:
            return
        try:
            wsock.send_text(client, text)
        except OSError:
            with self._client_lock:
                if self._client is client:
                    self._client = None

    # -- state snapshots ----------------------------------------------------------
    def _state_message(self) -> str:
        world = self.env.world
        arms = []
        for i, body in enumerate(world.arms):
            arms.append({
                "pose": np.concatenate([body.position, rotmat_to_6d(body.rotation)]).tolist(),
                "wrench": world.contact_wrench[i].as_vector().tolist(),
                "gripper": float(world.gripper[i]),
                "stiffness_mode": self._mode if i == 0 else "high",
            })
        return json.dumps({
            "v": PROTOCOL_VERSION,
            "type": "state",
            "tick": world.tick,
            "task": self.task,
            "recording": self._recording,
            "grid": [round(float(x), 6) for x in render_grid(world).reshape(-1)],
            "arms": arms,
        })

    # -- command application ---------------------------------------------------------
    def _apply_command(self, cmd: dict) -> None:
        if "delta" in cmd:
            delta = cmd["delta"]
            self._target_pos = self._target_pos + delta[:3]
            self._target_rot = so3_exp(delta[3:]) @ self._target_rot
        if "gripper" in cmd:
            self._gripper = cmd["gripper"]
        if cmd.get("stiffness_toggle"):
            self._mode = "low" if self._mode == "high" else "high"
        record = cmd.get("record")
        if record == "start" and not self._recording:
            self._recording = True
            self._record_start_seed = self.env.tick
            self._rows = {"pose9": [], "wrench": [], "grid": [], "action": []}
        elif record == "stop" and self._recording:
            self._finish_recording()
        elif record == "discard":
            self._recording = False
            self._rows = None

    def _finish_recording(self) -> None:
        self._recording = False
        rows, self._rows = self._rows, None
        if not rows or not rows["action"]:
            return
        meta = self.env.episode_meta(self._record_start_seed, "human")
        ep = Episode(
            meta=meta,
            pose9=np.asarray(rows["pose9"], dtype=np.float32),
            wrench=np.asarray(rows["wrench"], dtype=np.float32),
            grid=np.asarray(rows["grid"], dtype=np.float32),
            action=np.asarray(rows["action"], dtype=np.float32),
        )
        if self.out_dir is not None:
            path = (Path(self.out_dir) / self.task /
                    episode_filename(len(self.episodes_written), self._record_start_seed))
            write_episode(path, ep)
            self.episodes_written.append(path)
            log.info("teleop episode written: %s", path)
        self.last_episode = ep

    # -- the sim loop ----------------------------------------------------------------
    def current_action(self) -> np.ndarray:
        stiff = set_stiffness_mode(self._mode, self.task, arm=0,
                                   presets={self.task: self.env.presets})
        return np.concatenate([self._target_pos, rotmat_to_6d(self._target_rot),
                               [self._gripper], stiff])

    def run_tick(self, timeout: float | None = None) -> None:
        """One sim tick: coalesce queued commands (latest wins), act, maybe broadcast.

        In lockstep mode a positive timeout blocks until a command arrives
        (scripted clients stay one-command-per-tick); timeout None never waits.
        """
        cmd = None
        if self.lockstep and timeout is not None:
            try:
                cmd = self._cmd_queue.get(timeout=timeout)
            except queue.Empty:
                pass
        while True:  # drain anything newer; older commands are dropped
            try:
                cmd = self._cmd_queue.get_nowait()
            except queue.Empty:
                break
        if cmd:
            self._apply_command(cmd)
        obs = self.env.observe(0)
        action = self.current_action()
        if self._recording and self._rows is not None:
            self._rows["pose9"].append(obs.pose9[1])
            self._rows["wrench"].append(obs.wrench[1])
            self._rows["grid"].append(obs.grid[1])
            self._rows["action"].append(action)
        self.env.apply_action(action)
        sim_time = self.env.world.time
        if self.lockstep or sim_time >= self._next_broadcast:
            self._send(self._state_message())
            while self._next_broadcast <= sim_time:
                self._next_broadcast += 1.0 / BROADCAST_HZ

    LOCKSTEP_WAIT = 5.0  # seconds a lockstep tick waits for the next command

    def run(self, max_ticks: int | None = None) -> None:
        """Real-time (or lockstep) loop until stopped."""
        dt = self.env.sim_params.dt
        t_wall = time.monotonic()
        n = 0
        while not self._stop.is_set() and (max_ticks is None or n < max_ticks):
            self.run_tick(timeout=self.LOCKSTEP_WAIT if self.lockstep else None)
            n += 1
            if not self.lockstep:
                t_wall += dt
                pause = t_wall - time.monotonic()
                if pause > 0:
                    time.sleep(pause)
        if self._recording:
            self._finish_recording()

    def stop(self) -> None:
        self._stop.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._client_lock:
            if self._client is not None:
                wsock.send_close(self._client)
                self._client.close()
                self._client = None


class TeleopClient:
    """Blocking scripted client for tests and command-stream replay."""

    def __init__(self, port: int, host: str = "127.0.0.1", timeout: float = 10.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        wsock.client_handshake(self.sock, host, port)

    def send(self, message: dict) -> None:
        wsock.send_text(self.sock, json.dumps(message), mask=True)

    def send_raw(self, text: str) -> None:
        wsock.send_text(self.sock, text, mask=True)

    def recv(self) -> dict:
        op, payload = wsock.recv_message(self.sock)
        if op == wsock.OP_CLOSE:
            raise ConnectionError("server closed")
        return json.loads(payload.decode("utf-8"))

    def close(self) -> None:
        wsock.send_close(self.sock, mask=True)
        self.sock.close()
