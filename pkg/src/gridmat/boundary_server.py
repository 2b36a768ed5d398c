"""Line-delimited JSON server over stdin/stdout for the bindings boundary.

Requests: ``{"id": n, "fn": "symbol", "args": [...]}``.
Responses: ``{"id": n, "status": 0, "value": ...}`` on success, otherwise
``{"id": n, "status": s, "error": "..."}``.  A ``{"fn": "shutdown"}``
request acknowledges and exits.  Floats travel as JSON numbers, which both
sides parse to the same IEEE doubles (shortest round-trip decimal).
"""

from __future__ import annotations

import json
import sys

from . import boundary


def serve(inp=None, out=None) -> None:
    inp = inp if inp is not None else sys.stdin
    out = out if out is not None else sys.stdout
    for line in inp:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError as exc:
            out.write(json.dumps({"id": None, "status": 3,
                                  "error": f"bad request: {exc}"}) + "\n")
            out.flush()
            continue
        rid = req.get("id")
        fn = req.get("fn", "")
        if fn == "shutdown":
            out.write(json.dumps({"id": rid, "status": 0, "value": None}) + "\n")
            out.flush()
            return
        status, value = boundary.invoke(fn, req.get("args", []))
        if status == 0:
            resp = {"id": rid, "status": 0, "value": value}
        else:
            resp = {"id": rid, "status": status, "error": boundary.last_error()}
        out.write(json.dumps(resp) + "\n")
        out.flush()


if __name__ == "__main__":
    serve()
