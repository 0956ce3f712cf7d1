"""Wire-protocol client for external predictor / heuristic / denoiser services.

Transport is newline-delimited JSON (UTF-8, one object per line) over either
the stdio of a child process or a TCP stream. Request ids are strictly
increasing; a response {"id": n, "error": msg} or any transport failure
surfaces as PredictorUnavailable. Unknown response fields are ignored.
"""

from __future__ import annotations

import json
import shlex
import socket
import subprocess
from typing import Optional, Sequence

import numpy as np

from .chemio import write_smiles
from .diffusion import ConditionVector, GraphTokenization, GraphTokens
from .errors import PredictorUnavailable
from .molgraph import MolecularGraph
from .retro import Proposal
from .templates import RetroTemplate, template_from_json


class _StdioTransport:
    def __init__(self, command: str):
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )

    def send_line(self, line: str) -> None:
        if self.proc.stdin is None or self.proc.poll() is not None:
            raise PredictorUnavailable("predictor process is not running")
        try:
            self.proc.stdin.write(line + "\n")
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise PredictorUnavailable(f"predictor pipe broken: {exc}") from exc

    def recv_line(self) -> str:
        if self.proc.stdout is None:
            raise PredictorUnavailable("predictor has no stdout")
        line = self.proc.stdout.readline()
        if line == "":
            raise PredictorUnavailable("predictor closed the stream")
        return line

    def close(self) -> None:
        try:
            if self.proc.stdin:
                self.proc.stdin.close()
            self.proc.terminate()
            self.proc.wait(timeout=5)
        except Exception:
            self.proc.kill()


class _TcpTransport:
    def __init__(self, host: str, port: int, timeout: float = 30.0):
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise PredictorUnavailable(f"cannot connect to {host}:{port}: {exc}") from exc
        self.reader = self.sock.makefile("r", encoding="utf-8")
        self.writer = self.sock.makefile("w", encoding="utf-8")

    def send_line(self, line: str) -> None:
        try:
            self.writer.write(line + "\n")
            self.writer.flush()
        except OSError as exc:
            raise PredictorUnavailable(f"socket write failed: {exc}") from exc

    def recv_line(self) -> str:
        try:
            line = self.reader.readline()
        except OSError as exc:
            raise PredictorUnavailable(f"socket read failed: {exc}") from exc
        if line == "":
            raise PredictorUnavailable("predictor closed the connection")
        return line

    def close(self) -> None:
        try:
            self.reader.close()
            self.writer.close()
            self.sock.close()
        except Exception:
            pass


class WireClient:
    """Synchronous request/response over one of the two transports."""

    def __init__(self, transport):
        self.transport = transport
        self.next_id = 1

    @classmethod
    def spawn(cls, command: str) -> "WireClient":
        return cls(_StdioTransport(command))

    @classmethod
    def connect(cls, host: str, port: int, timeout: float = 30.0) -> "WireClient":
        return cls(_TcpTransport(host, port, timeout))

    def request(self, req_type: str, payload: dict) -> dict:
        req_id = self.next_id
        self.next_id += 1
        req = {"id": req_id, "type": req_type}
        req.update(payload)
        self.transport.send_line(json.dumps(req))
        line = self.transport.recv_line()
        try:
            resp = json.loads(line)
        except json.JSONDecodeError as exc:
            raise PredictorUnavailable(f"malformed response: {exc}") from exc
        if not isinstance(resp, dict):
            raise PredictorUnavailable("response is not a JSON object")
        if resp.get("id") != req_id:
            raise PredictorUnavailable(
                f"response id {resp.get('id')} does not match request id {req_id}"
            )
        if "error" in resp:
            raise PredictorUnavailable(str(resp["error"]))
        return resp

    def expand(self, product: str, context: str, k: int) -> list[dict]:
        resp = self.request("expand", {"product": product, "context": context, "k": k})
        proposals = resp.get("proposals")
        if not isinstance(proposals, list):
            raise PredictorUnavailable("expand response missing 'proposals' list")
        return proposals

    def heuristic(
        self,
        target: str,
        step: int,
        template: Optional[str] = None,
        reactants: Optional[Sequence[str]] = None,
    ) -> list[float]:
        resp = self.request(
            "heuristic",
            {
                "target": target,
                "step": step,
                "template": template,
                "reactants": list(reactants) if reactants is not None else None,
            },
        )
        probs = resp.get("probs")
        if not isinstance(probs, list) or len(probs) != 5:
            raise PredictorUnavailable("heuristic response needs 5 'probs'")
        return [float(p) for p in probs]

    def denoise(self, tokens: Sequence[Sequence[float]], t: int, conditions: dict) -> list:
        resp = self.request(
            "denoise", {"tokens": [list(row) for row in tokens], "t": t, "conditions": conditions}
        )
        x0 = resp.get("x0_probs")
        if not isinstance(x0, list):
            raise PredictorUnavailable("denoise response missing 'x0_probs'")
        return x0

    def close(self) -> None:
        self.transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class WirePredictor:
    """retro.Predictor backed by a WireClient; inline templates honored,
    otherwise template ids resolve against the local db at expand time."""

    def __init__(self, client: WireClient, templates_db: Optional[dict[str, RetroTemplate]] = None):
        self.client = client
        self.templates_db = templates_db or {}

    def __call__(self, product: MolecularGraph, context: str, k: int) -> list[Proposal]:
        raw = self.client.expand(write_smiles(product), context, k)
        proposals = []
        for entry in raw:
            tid = str(entry["template_id"])
            prob = float(entry["prob"])
            if entry.get("template") is not None:
                template = template_from_json(dict(entry["template"]), tid, prob)
            else:
                template = self.templates_db.get(tid)  # unresolved ids skipped downstream
            proposals.append(Proposal(tid, prob, template=template))
        return proposals


class WireHeuristic:
    """retro.HeuristicProvider backed by a WireClient."""

    def __init__(self, client: WireClient):
        self.client = client

    def __call__(self, target: str, step: int, template=None, reactants=None):
        return self.client.heuristic(target, step, template=template, reactants=reactants)


def conditions_to_json(cond: ConditionVector) -> dict:
    doc: dict = {
        "categorical": dict(cond.categorical),
        "continuous": dict(cond.continuous),
    }
    if cond.text is not None:
        doc["text"] = [float(x) for x in cond.text]
    return doc


class WireDenoiser:
    """diffusion.GraphDenoiser backed by a WireClient: ships the flattened
    token matrix, splits the returned x0 distribution back into node and
    edge blocks."""

    def __init__(self, client: WireClient, tokenization: Optional[GraphTokenization] = None):
        self.client = client
        self.tok = tokenization or GraphTokenization()

    def __call__(self, tokens: GraphTokens, t: int, conditions: ConditionVector):
        matrix = tokens.as_matrix()
        x0 = np.asarray(
            self.client.denoise(matrix.tolist(), t, conditions_to_json(conditions)),
            dtype=float,
        )
        if x0.shape != matrix.shape:
            raise PredictorUnavailable(
                f"x0_probs shape {x0.shape} does not match tokens {matrix.shape}"
            )
        lay = tokens.layout
        n = tokens.nodes.shape[0]
        node_probs = x0[:, : lay.F_V]
        edge_probs = x0[:, lay.F_V :].reshape(n, lay.N_G, lay.F_E)
        return node_probs, edge_probs
