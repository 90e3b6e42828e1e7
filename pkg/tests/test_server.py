import json
import subprocess
import sys
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import httpx
import pytest

from ehr_mcp.client import HttpClient, LocalClient, StdioClient
from ehr_mcp.server import NOT_INITIALIZED, make_http_server, serve_stdio

GOLDEN = Path(__file__).parent / "golden"
REQUESTS = (GOLDEN / "requests.jsonl").read_text(encoding="utf-8").splitlines()
RESPONSES = (GOLDEN / "responses.jsonl").read_bytes()


@pytest.fixture(scope="module")
def http_url(server42):
    httpd = make_http_server(server42, "127.0.0.1", 0)
    t = threading.Thread(target=httpd.serve_forever, daemon=True)
    t.start()
    host, port = httpd.server_address[:2]
    yield f"http://{host}:{port}"
    httpd.shutdown()
    httpd.server_close()


def test_in_process_matches_golden(server42):
    session = server42.session()
    out = [r for r in (session.handle_line(line) for line in REQUESTS) if r is not None]
    assert "".join(r + "\n" for r in out).encode("utf-8") == RESPONSES


def test_stdio_matches_golden(warehouse_dir):
    proc = subprocess.run(
        [sys.executable, "-m", "ehr_mcp", "--warehouse", str(warehouse_dir), "serve"],
        input="".join(line + "\n" for line in REQUESTS).encode("utf-8"),
        capture_output=True,
        timeout=60,
    )
    assert proc.returncode == 0, proc.stderr.decode()
    assert proc.stdout == RESPONSES
    # every tool call is logged on stderr, never on the protocol stream
    assert b"tool=calculate_cockcroft_gault" in proc.stderr


def test_http_matches_golden(http_url):
    chunks = []
    with httpx.Client() as c:
        for line in REQUESTS:
            r = c.post(http_url + "/rpc", content=line.encode("utf-8"))
            if r.status_code == 202:
                assert r.content == b""
                continue
            assert r.status_code == 200
            chunks.append(r.content + b"\n")
    assert b"".join(chunks) == RESPONSES


def test_serve_stdio_in_process(server42):
    import io

    out = io.StringIO()
    serve_stdio(server42, io.StringIO("\n".join(REQUESTS[:3]) + "\n\n"), out)
    assert len(out.getvalue().splitlines()) == 2


def test_requests_before_initialize(server42):
    session = server42.session()
    reply = json.loads(session.handle_line('{"jsonrpc":"2.0","id":1,"method":"tools/list"}'))
    assert reply["error"]["code"] == NOT_INITIALIZED
    assert session.handle_line('{"jsonrpc":"2.0","method":"notifications/initialized"}') is None
    again = [json.loads(session.handle_line(REQUESTS[0])) for _ in range(2)]
    assert again[0] == again[1]


def test_tools_list_matches_table(server42):
    client = LocalClient(server42)
    tools = {t["name"]: set(t["inputSchema"]["required"]) for t in client.list_tools()}
    assert tools == {
        "patient_basic_info": {"patient_id"},
        "lab_results": {"patient_id", "start_date", "end_date"},
        "bacteria_results": {"patient_id", "start_date", "end_date"},
        "antibiotics_treatment": {"patient_id", "start_date", "end_date"},
        "calculate_cockcroft_gault": {"age", "sex", "weight", "serum_creatinine"},
    }


def test_responses_keep_request_order(server42):
    session = server42.session(initialized=True)
    batch = [{"jsonrpc": "2.0", "id": i, "method": "ping"} for i in range(20)]
    out = json.loads(session.handle_line(json.dumps(batch)))
    assert [r["id"] for r in out] == list(range(20))


def test_concurrent_http_ids(http_url):
    def worker(k):
        ids = []
        with httpx.Client() as c:
            for j in range(10):
                msg_id = k * 1000 + j
                body = {
                    "jsonrpc": "2.0",
                    "id": msg_id,
                    "method": "tools/call",
                    "params": {"name": "patient_basic_info", "arguments": {"patient_id": f"P00{k % 8 + 1}"}},
                }
                reply = c.post(http_url + "/rpc", json=body).json()
                assert not reply["result"]["isError"]
                text = json.loads(reply["result"]["content"][0]["text"])
                ids.append((reply["id"], msg_id, text["personal_info"]["date_of_birth"]))
        return ids

    with ThreadPoolExecutor(8) as pool:
        results = list(pool.map(worker, range(8)))
    dobs = {}
    for k, ids in enumerate(results):
        for got, sent, dob in ids:
            assert got == sent
            dobs.setdefault(k % 8, set()).add(dob)
    assert all(len(v) == 1 for v in dobs.values())


def test_http_edges(http_url):
    with httpx.Client() as c:
        big = b'{"jsonrpc":"2.0","id":1,"method":"ping","params":{"pad":"' + b"x" * (1 << 20) + b'"}}'
        r = c.post(http_url + "/rpc", content=big)
        assert r.status_code == 413
    with httpx.Client() as c:
        r = c.get(http_url + "/rpc")
        assert r.status_code == 405
        assert r.headers["allow"] == "POST"
        r = c.post(http_url + "/other", content=b"{}")
        assert r.status_code == 404
        r = c.post(http_url + "/rpc", content=b'{"jsonrpc":"2.0","method":"notifications/initialized"}')
        assert r.status_code == 202
        r = c.post(http_url + "/rpc", content=b"{oops")
        assert r.json()["error"]["code"] == -32700


def test_http_client(http_url):
    client = HttpClient(http_url + "/rpc")
    try:
        res = client.call_tool(
            "calculate_cockcroft_gault", {"age": 49, "sex": "male", "weight": 77.3, "serum_creatinine": 0.86}
        )
        assert json.loads(res.text)["creatinine_clearance"] == 113.6
        assert len(client.list_tools()) == 5
    finally:
        client.close()


def test_stdio_client(warehouse_dir):
    with StdioClient(warehouse=str(warehouse_dir)) as client:
        res = client.call_tool("patient_basic_info", {"patient_id": "P999"})
        assert res.is_error and res.error_code == "execution_error"
        assert [t["name"] for t in client.list_tools()][0] == "patient_basic_info"
