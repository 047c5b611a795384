from __future__ import annotations

import json

import pytest
from fastapi.testclient import TestClient

from remarket.fraud import TamperKit
from remarket.marketplace import Marketplace
from remarket.service import create_app

from conftest import TickingClock

PRODUCT_BODY = {
    "product": {
        "product_id": "P1",
        "name": "Oak beam 3m",
        "material": "timber",
        "manufacturer": "Heartwood Ltd",
        "year_installed": 2012,
    },
    "seller_id": "seller-1",
    "price": "120.00",
    "values": {
        "material": "timber",
        "condition_score": 0.95,
        "age_years": 5,
        "expected_lifecycle_years": 50,
    },
}

WEAK_BODY = {
    **PRODUCT_BODY,
    "product": {**PRODUCT_BODY["product"], "product_id": "P-WEAK"},
    "values": {
        "condition_score": 0.55,
        "age_years": 25,
        "expected_lifecycle_years": 50,
        "damage_flags": ["cracked"],
    },
}


@pytest.fixture
def market(tmp_path):
    return Marketplace(tmp_path / "data", clock=TickingClock())


@pytest.fixture
def client(market):
    return TestClient(create_app(market))


def _register(client, participant_id, role):
    response = client.post(
        "/participants", json={"participant_id": participant_id, "role": role}
    )
    assert response.status_code == 201
    return response.json()


def _list_product(client, body=PRODUCT_BODY):
    _register(client, body["seller_id"], "seller")
    response = client.post("/products", json=body)
    assert response.status_code == 201, response.text
    return response.json()


def test_health(client):
    assert client.get("/health").json() == {"status": "ok"}


def test_register_participants(client):
    body = _register(client, "seller-1", "seller")
    assert body["participant_id"] == "seller-1"
    assert body["role"] == "seller"
    conflict = client.post(
        "/participants", json={"participant_id": "seller-1", "role": "buyer"}
    )
    assert conflict.status_code == 409
    assert conflict.json()["error"]["code"] == "duplicate_participant"


def test_add_product_and_error_paths(client):
    listing = _list_product(client)
    assert listing["status"] == "active"
    assert listing["anchor_tid"]

    duplicate = client.post("/products", json=PRODUCT_BODY)
    assert duplicate.status_code == 409
    assert duplicate.json()["error"]["code"] == "duplicate_product"

    weak = client.post("/products", json=WEAK_BODY)
    assert weak.status_code == 422
    assert weak.json()["error"]["code"] == "not_strong_reuse"

    bad_price = client.post(
        "/products",
        json={**PRODUCT_BODY, "product": {**PRODUCT_BODY["product"], "product_id": "P2"}, "price": "1.999"},
    )
    assert bad_price.status_code == 422
    assert bad_price.json()["error"]["code"] == "invalid_price"


def test_search_endpoint(client):
    _list_product(client)
    page = client.get("/listings", params={"material": "timber"}).json()
    assert page["total"] == 1
    assert page["items"][0]["product_id"] == "P1"
    empty = client.get("/listings", params={"material": "granite"}).json()
    assert empty["total"] == 0
    bad = client.get("/listings", params={"page_size": 999})
    assert bad.status_code == 422
    assert bad.json()["error"]["code"] == "invalid_pagination"


def test_listing_dpp_endpoint(client):
    listing = _list_product(client)
    passport = client.get(f"/listings/{listing['listing_id']}/dpp").json()
    assert passport["product_id"] == "P1"
    assert passport["version"] == 1
    missing = client.get("/listings/L-999999/dpp")
    assert missing.status_code == 404
    assert missing.json()["error"]["code"] == "listing_not_found"


def test_verify_messages_bit_exact(client, market):
    listing = _list_product(client)
    pid, tid, lid = listing["product_id"], listing["anchor_tid"], listing["listing_id"]

    honest = client.get("/verify", params={"pid": pid, "tid": tid}).json()
    assert honest["message"] == "Verification successful."
    assert (honest["x_i"], honest["y_i"], honest["v_i"]) == (1, 1, 1)

    TamperKit(market).set_listing_price(lid, "199.00")
    priced = client.get("/verify", params={"pid": pid, "tid": tid}).json()
    assert priced["message"] == "Verification failed: Pricing does not match."

    TamperKit(market).set_listing_price(lid, "120.00")
    TamperKit(market).repoint_listing_dpp(lid)
    swapped = client.get("/verify", params={"pid": pid, "tid": tid}).json()
    assert swapped["message"] == "Discrepancy found: DPP does not match."
    assert swapped["v_i"] == 0


def test_order_and_payment_flow(client):
    listing = _list_product(client)
    _register(client, "buyer-1", "buyer")

    unknown_buyer = client.post(
        "/orders", json={"buyer_id": "ghost", "listing_id": listing["listing_id"]}
    )
    assert unknown_buyer.status_code == 404
    assert unknown_buyer.json()["error"]["code"] == "unknown_participant"

    order = client.post(
        "/orders", json={"buyer_id": "buyer-1", "listing_id": listing["listing_id"]}
    )
    assert order.status_code == 201
    oid = order.json()["order_id"]

    declined = client.post(f"/orders/{oid}/pay", json={"instrument": "FAIL-card"}).json()
    assert declined["message"] == "Payment failed."
    assert declined["t_status"] == 0

    order2 = client.post(
        "/orders", json={"buyer_id": "buyer-1", "listing_id": listing["listing_id"]}
    ).json()
    receipt = client.post(
        f"/orders/{order2['order_id']}/pay", json={"instrument": "OK-card"}
    ).json()
    assert receipt["t_status"] == 1
    assert receipt["new_dpp_address"]
    assert receipt["ownership_tid"]
    assert receipt["message"] is None

    record = client.get(f"/ledger/records/{receipt['ownership_tid']}").json()
    assert record["record"]["record_kind"] == "OwnershipTransferred"
    assert record["record"]["owner_id"] == "buyer-1"


def test_ledger_endpoints(client, market):
    listing = _list_product(client)
    record = client.get(f"/ledger/records/{listing['anchor_tid']}").json()
    assert record["record"]["product_id"] == "P1"
    missing = client.get("/ledger/records/999:0")
    assert missing.status_code == 404

    report = client.get("/ledger/verify").json()
    assert report["valid"] is True

    chain_path = market.data_dir / "chain.log"
    raw = bytearray(chain_path.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    chain_path.write_bytes(bytes(raw))
    broken = client.get("/ledger/verify").json()
    assert broken["valid"] is False
    assert broken["corrupt_height"] is not None


def test_request_log_lines_written(client, market):
    client.get("/health")
    client.get("/health")
    lines = (market.data_dir / "api_log.jsonl").read_text().splitlines()
    assert len(lines) >= 2
    entry = json.loads(lines[-1])
    assert entry["path"] == "/health"
    assert entry["status"] == 200
    assert entry["duration_ms"] >= 0


def test_static_ui_mount(tmp_path, market):
    ui_dir = tmp_path / "ui"
    ui_dir.mkdir()
    (ui_dir / "index.html").write_text("<!doctype html><title>market</title>")
    client = TestClient(create_app(market, ui_dir=ui_dir))
    response = client.get("/ui/")
    assert response.status_code == 200
    assert "market" in response.text
