"""HTTP client for an external trajectory scorer."""

from __future__ import annotations

import json
import math
import socket
import urllib.error
import urllib.request

from .errors import BadResponse, Timeout, Unreachable
from .stage import FramingReport


def remote_request(prompt: str, caption: str, report: FramingReport) -> dict:
    return {
        "prompt": prompt,
        "caption": caption,
        "frames": [
            {"u": f.anchor_uv[0], "v": f.anchor_uv[1], "rho": f.rho, "visible": f.visible, "in_border": f.in_border}
            for f in report.frames
        ],
    }


def post_score(endpoint: str, payload: dict, timeout: float = 10.0) -> float:
    body = json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(endpoint, data=body, headers={"Content-Type": "application/json"}, method="POST")
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except urllib.error.HTTPError as exc:
        raise BadResponse(f"HTTP {exc.code}") from None
    except urllib.error.URLError as exc:
        if isinstance(exc.reason, (socket.timeout, TimeoutError)):
            raise Timeout(f"no answer within {timeout} s") from None
        raise Unreachable(str(exc.reason)) from None
    except (socket.timeout, TimeoutError):
        raise Timeout(f"no answer within {timeout} s") from None
    except OSError as exc:
        raise Unreachable(str(exc)) from None
    try:
        score = json.loads(raw)["score"]
    except (ValueError, KeyError, TypeError):
        raise BadResponse("response is not {\"score\": number}") from None
    if isinstance(score, bool) or not isinstance(score, (int, float)) or not math.isfinite(score):
        raise BadResponse(f"non-numeric score {score!r}")
    return float(score)
