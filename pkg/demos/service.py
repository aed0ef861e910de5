"""
Serving with hot reload
=======================

Run the detection service in-process, query it and move the clock forward
until the index expires.
"""

from __future__ import annotations

import json
import threading
import urllib.request

from hotquery import Backends, DetectionConfig
from hotquery.service import DetectionService, make_server
from hotquery.event_store import Event, StoreSnapshot
from hotquery.index_generation import IndexQuery, Pattern

NOW = 1_760_000_000
backends = Backends.reference()
text = "harbor bridge crane collision"
event = Event("bridge", "Harbor bridge closes", NOW, "A crane struck the harbor bridge.", (), "general",
              ("a1",), 1, 0.8, NOW)


def source():
    pool = [IndexQuery("bridge-0", "bridge", text, Pattern.FACTUAL, NOW, NOW, tuple(backends.embedder.vector(text)))]
    return StoreSnapshot(1, {}, {"bridge": event}), pool


service = DetectionService(DetectionConfig(), backends, source, now_fn=lambda: NOW)
server = make_server(service, "127.0.0.1", 0)
threading.Thread(target=server.serve_forever, daemon=True).start()
url = f"http://127.0.0.1:{server.server_address[1]}"


def post(path, body):
    req = urllib.request.Request(url + path, json.dumps(body).encode(), {"Content-Type": "application/json"})
    with urllib.request.urlopen(req) as r:
        return json.loads(r.read())


print(post("/detect", {"q_o": "is the harbor bridge closed after the crane collision", "q_h": []}))

# a week later every index query has expired
print(post("/admin/reload", {"now": NOW + 7 * 86400}))
print(post("/detect", {"q_o": "is the harbor bridge closed after the crane collision"}))

server.shutdown()
server.server_close()
