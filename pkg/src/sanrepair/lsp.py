"""Minimal language-server-protocol client over child-process pipes.

Serves exactly two query shapes for the navigation layer: name-based
definition lookup (workspace/symbol) and reference lookup at a definition
site (textDocument/references). Any transport or server failure surfaces
as ServerUnavailable so callers can drop to the grep fallback.
"""

import json
import os
import queue
import shutil
import subprocess
import threading
from typing import List, Optional

from .errors import ServerUnavailable

REQUEST_TIMEOUT = 20.0


def _uri(path: str) -> str:
    return "file://" + os.path.abspath(path)


def _from_uri(uri: str) -> str:
    if uri.startswith("file://"):
        return uri[len("file://"):]
    return uri


class LspClient:
    """One language server; serial request/response with id matching."""

    def __init__(
        self,
        root: str,
        server_argv: Optional[List[str]] = None,
        compile_commands_dir: Optional[str] = None,
    ):
        self.root = os.path.abspath(root)
        argv = list(server_argv) if server_argv else ["clangd", "--background-index=0", "--log=error"]
        if compile_commands_dir and argv and os.path.basename(argv[0]).startswith("clangd"):
            argv.append(f"--compile-commands-dir={compile_commands_dir}")
        if shutil.which(argv[0]) is None:
            raise ServerUnavailable(f"language server {argv[0]!r} not found on PATH")
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                cwd=self.root,
            )
        except OSError as exc:
            raise ServerUnavailable(f"could not launch language server: {exc}")
        self._messages: "queue.Queue[Optional[dict]]" = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._next_id = 1
        self._opened = set()
        self._initialize()

    # --- transport ---

    def _pump(self) -> None:
        stream = self._proc.stdout
        try:
            while True:
                headers = {}
                while True:
                    line = stream.readline()
                    if not line:
                        raise EOFError
                    line = line.decode("ascii", errors="replace").strip()
                    if not line:
                        break
                    key, _, value = line.partition(":")
                    headers[key.strip().lower()] = value.strip()
                length = int(headers.get("content-length", "0"))
                body = stream.read(length)
                if len(body) < length:
                    raise EOFError
                self._messages.put(json.loads(body.decode("utf-8", errors="replace")))
        except (EOFError, ValueError, OSError):
            self._messages.put(None)

    def _write(self, message: dict) -> None:
        data = json.dumps(message).encode("utf-8")
        frame = b"Content-Length: %d\r\n\r\n%s" % (len(data), data)
        try:
            self._proc.stdin.write(frame)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            raise ServerUnavailable("language server pipe is broken")

    def _notify(self, method: str, params: dict) -> None:
        self._write({"jsonrpc": "2.0", "method": method, "params": params})

    def request(self, method: str, params: dict, timeout: float = REQUEST_TIMEOUT):
        request_id = self._next_id
        self._next_id += 1
        self._write({"jsonrpc": "2.0", "id": request_id, "method": method, "params": params})
        while True:
            try:
                message = self._messages.get(timeout=timeout)
            except queue.Empty:
                raise ServerUnavailable(f"language server timed out on {method}")
            if message is None:
                raise ServerUnavailable("language server closed its pipe")
            if message.get("id") == request_id:
                if "error" in message:
                    raise ServerUnavailable(f"{method} failed: {message['error'].get('message')}")
                return message.get("result")
            # Server-initiated requests need an answer or the server may stall.
            if "method" in message and "id" in message:
                self._write({"jsonrpc": "2.0", "id": message["id"], "result": None})

    # --- lifecycle ---

    def _initialize(self) -> None:
        self.request(
            "initialize",
            {
                "processId": os.getpid(),
                "rootUri": _uri(self.root),
                "capabilities": {
                    "textDocument": {
                        "references": {}, "definition": {},
                    },
                    "workspace": {"symbol": {}},
                },
            },
            timeout=30.0,
        )
        self._notify("initialized", {})

    @property
    def alive(self) -> bool:
        return self._proc.poll() is None

    def close(self) -> None:
        try:
            if self.alive:
                self.request("shutdown", {}, timeout=5.0)
                self._notify("exit", {})
                self._proc.wait(timeout=5)
        except (ServerUnavailable, subprocess.TimeoutExpired):
            self._proc.kill()
            self._proc.wait()

    # --- queries ---

    def _ensure_open(self, path: str) -> None:
        if path in self._opened:
            return
        with open(path, encoding="utf-8", errors="replace") as fh:
            text = fh.read()
        self._notify(
            "textDocument/didOpen",
            {
                "textDocument": {
                    "uri": _uri(path), "languageId": "c", "version": 1, "text": text,
                }
            },
        )
        self._opened.add(path)

    def workspace_symbols(self, query: str) -> List[dict]:
        """[(name, kind, path, line0, character0)] as raw dicts."""
        result = self.request("workspace/symbol", {"query": query}) or []
        hits = []
        for sym in result:
            location = sym.get("location") or {}
            rng = (location.get("range") or {}).get("start") or {}
            hits.append(
                {
                    "name": sym.get("name", ""),
                    "path": _from_uri(location.get("uri", "")),
                    "line": int(rng.get("line", 0)),
                    "character": int(rng.get("character", 0)),
                }
            )
        return hits

    def references(self, path: str, line0: int, character0: int) -> List[dict]:
        """Reference sites for the symbol at a (0-based) position."""
        self._ensure_open(path)
        result = self.request(
            "textDocument/references",
            {
                "textDocument": {"uri": _uri(path)},
                "position": {"line": line0, "character": character0},
                "context": {"includeDeclaration": False},
            },
        ) or []
        return [
            {
                "path": _from_uri(loc.get("uri", "")),
                "line": int((loc.get("range") or {}).get("start", {}).get("line", 0)),
            }
            for loc in result
        ]
