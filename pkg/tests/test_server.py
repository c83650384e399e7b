import io
import json
import threading
from urllib.error import HTTPError
from urllib.request import Request, urlopen

import numpy as np
import pytest
from PIL import Image

from disrefine.server import serve_http


@pytest.fixture(scope="module")
def live_server(tmp_path_factory):
    from disrefine.coarse import DegradeParams, degrade_manifest
    from disrefine.dataio import generate_synthetic_dataset
    from disrefine.enrich import enrich_manifest, write_enriched_root
    from disrefine.refiner import TrainConfig, train_gt_encoder, train_refiner

    root = tmp_path_factory.mktemp("srv") / "ds"
    manifest = generate_synthetic_dataset(root, seed=21, count=6, size=32)
    enriched = write_enriched_root(enrich_manifest(manifest, min_area=8), root.parent / "enr")
    degrade = DegradeParams(seed=2, dilate_erode_radius=1, boundary_blur_sigma=0.8)
    with_coarse = degrade_manifest(enriched, degrade, out_dir=root.parent / "enr" / "coarse")
    cfg = TrainConfig(iterations=30, batch_size=3, learning_rate=2e-3, seed=1, levels=2, base_channels=4)
    enc, _ = train_gt_encoder(with_coarse, cfg)
    params, _ = train_refiner(with_coarse, enc, cfg)

    server = serve_http(with_coarse, params, bind=("127.0.0.1", 0))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    url = f"http://127.0.0.1:{server.server_address[1]}"
    yield {"url": url, "manifest": with_coarse}
    server.shutdown()


def _get(url):
    with urlopen(url, timeout=10) as resp:
        return resp.status, resp.headers, resp.read()


def _post(url, payload):
    req = Request(url, data=json.dumps(payload).encode(), headers={"Content-Type": "application/json"})
    with urlopen(req, timeout=30) as resp:
        return resp.status, resp.headers, resp.read()


def test_samples_listing(live_server):
    status, _, body = _get(live_server["url"] + "/samples")
    assert status == 200
    listing = json.loads(body)
    assert [e["id"] for e in listing] == live_server["manifest"].ids()
    assert all(e["width"] == 32 and e["height"] == 32 for e in listing)


def test_image_and_coarse_png(live_server):
    sid = live_server["manifest"].ids()[0]
    from urllib.parse import quote

    status, headers, body = _get(live_server["url"] + "/image/" + quote(sid, safe=""))
    assert status == 200
    assert headers["Content-Type"] == "image/png"
    img = Image.open(io.BytesIO(body))
    assert img.size == (32, 32)
    status, _, _ = _get(live_server["url"] + "/coarse/" + quote(sid, safe=""))
    assert status == 200


def test_refine_purity(live_server):
    sid = live_server["manifest"].ids()[0]
    payload = {"id": sid, "box": [4, 4, 20, 20]}
    s1, h1, b1 = _post(live_server["url"] + "/refine", payload)
    s2, h2, b2 = _post(live_server["url"] + "/refine", payload)
    assert s1 == s2 == 200
    assert b1 == b2  # byte-identical payloads
    assert h1["Content-Type"] == "image/png"
    metrics = json.loads(h1["X-Metrics"])
    assert 0.0 <= metrics["mae"] <= 1.0
    assert h1["X-Metrics"] == h2["X-Metrics"]
    mask = np.asarray(Image.open(io.BytesIO(b1)))
    assert mask.shape == (32, 32)


def test_refine_validation_errors(live_server):
    with pytest.raises(HTTPError) as err:
        _post(live_server["url"] + "/refine", {"id": "nope", "box": [0, 0, 4, 4]})
    assert err.value.code == 404
    with pytest.raises(HTTPError) as err:
        _post(live_server["url"] + "/refine", {"id": live_server["manifest"].ids()[0], "box": [0, 0, 99, 4]})
    assert err.value.code == 400
    assert "box" in json.loads(err.value.read())["error"]
    with pytest.raises(HTTPError) as err:
        _post(live_server["url"] + "/refine", {"id": live_server["manifest"].ids()[0]})
    assert err.value.code == 400
    with pytest.raises(HTTPError) as err:
        _get(live_server["url"] + "/image/ghost")
    assert err.value.code == 404


def test_concurrent_refines_consistent(live_server):
    sid = live_server["manifest"].ids()[1]
    results = [None] * 6
    def worker(k):
        _, _, body = _post(live_server["url"] + "/refine", {"id": sid, "box": [2, 2, 24, 24]})
        results[k] = body
    threads = [threading.Thread(target=worker, args=(k,)) for k in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(r == results[0] for r in results)
