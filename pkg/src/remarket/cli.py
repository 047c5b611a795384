"""Command-line interface.

Marketplace verbs (add, search, verify, buy, ledger-verify) talk to a
running server over the JSON API; serve/load/fraud-sim/ccpo-eval run
locally. Config precedence: defaults < config file < MARKET_* env < flags.
"""

from __future__ import annotations

import json
import sys
import tempfile
from pathlib import Path

import click
import httpx

from . import ccpo, fraud
from .config import load_config
from .errors import RemarketError
from .marketplace import Marketplace

DEFAULT_SERVER = "http://127.0.0.1:8700"


def _client(server: str) -> httpx.Client:
    return httpx.Client(base_url=server, timeout=30.0)


def _show_error(response: httpx.Response) -> None:
    try:
        error = response.json()["error"]
        click.echo(f"error [{error['code']}]: {error['message']}", err=True)
    except Exception:
        click.echo(f"error: HTTP {response.status_code}: {response.text}", err=True)
    sys.exit(1)


def _expect(response: httpx.Response, *codes: int) -> dict:
    if response.status_code not in codes:
        _show_error(response)
    return response.json()


@click.group()
def main() -> None:
    """Trustworthy second-hand marketplace for built-environment materials."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--port", type=int, default=None)
@click.option("--data-dir", type=click.Path(), default=None)
@click.option("--ui", "ui_dir", type=click.Path(exists=True), default=None, help="Static UI assets to mount at /ui.")
def serve(config_path, port, data_dir, ui_dir) -> None:
    """Run the marketplace HTTP server."""
    from .service import run_server

    config = load_config(config_path, port=port, data_dir=data_dir, ui_dir=ui_dir)
    click.echo(f"serving on http://127.0.0.1:{config.port} (data: {config.data_dir})")
    run_server(config)


@main.command()
@click.option("--n", type=int, required=True, help="Number of synthetic products to push.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--data-dir", type=click.Path(), default=None)
@click.option("--out", "out_dir", type=click.Path(), default=None, help="Report directory (default: <data-dir>/reports).")
@click.option("--parallelism", type=int, default=4, show_default=True)
def load(n, config_path, data_dir, out_dir, parallelism) -> None:
    """Run the end-to-end load harness and write CSV + figure reports."""
    from .report import render_load_figure, write_load_csv
    from .service import run_load

    config = load_config(config_path, data_dir=data_dir)
    report = run_load(n, config, parallelism=parallelism)
    out = Path(out_dir) if out_dir else config.data_dir / "reports"
    csv_path = write_load_csv(report, out / "load_report.csv")
    fig_path = render_load_figure(report, out / "load_report.png")
    click.echo(json.dumps(report.to_dict(), indent=2))
    click.echo(f"csv: {csv_path}")
    click.echo(f"figure: {fig_path}")
    if report.failures:
        sys.exit(1)


@main.command()
@click.option("--file", "file_path", type=click.Path(exists=True), required=True,
              help='JSON file: {"product": {...}, "values": {...}}.')
@click.option("--seller", required=True)
@click.option("--price", required=True)
@click.option("--server", envvar="MARKET_SERVER", default=DEFAULT_SERVER, show_default=True)
def add(file_path, seller, price, server) -> None:
    """List a product (registers the seller if needed)."""
    payload = json.loads(Path(file_path).read_text(encoding="utf-8"))
    if "product" not in payload:
        payload = {"product": payload, "values": {}}
    with _client(server) as client:
        client.post("/participants", json={"participant_id": seller, "role": "seller"})
        response = client.post(
            "/products",
            json={
                "product": payload["product"],
                "seller_id": seller,
                "price": price,
                "values": payload.get("values", {}),
            },
        )
        listing = _expect(response, 201)
    click.echo(json.dumps(listing, indent=2))


@main.command()
@click.option("--material", default=None)
@click.option("--category", default=None)
@click.option("--q", default=None)
@click.option("--page", type=int, default=1)
@click.option("--page-size", type=int, default=20)
@click.option("--server", envvar="MARKET_SERVER", default=DEFAULT_SERVER, show_default=True)
def search(material, category, q, page, page_size, server) -> None:
    """Search active, verified listings."""
    params = {"page": page, "page_size": page_size}
    for key, value in (("material", material), ("category", category), ("q", q)):
        if value:
            params[key] = value
    with _client(server) as client:
        result = _expect(client.get("/listings", params=params), 200)
    click.echo(f"{result['total']} listing(s), page {result['page']}")
    for item in result["items"]:
        click.echo(
            f"{item['listing_id']}  {item['product_id']}  {item['price']}  "
            f"{item['search_facets'].get('material', '')}  {item['cpd']['summary']}"
        )


@main.command()
@click.option("--pid", required=True)
@click.option("--tid", required=True)
@click.option("--server", envvar="MARKET_SERVER", default=DEFAULT_SERVER, show_default=True)
def verify(pid, tid, server) -> None:
    """Verify a product's passport and price against the chain."""
    with _client(server) as client:
        report = _expect(client.get("/verify", params={"pid": pid, "tid": tid}), 200)
    click.echo(report["message"])
    click.echo(json.dumps(report, indent=2))
    if report["message"] != "Verification successful.":
        sys.exit(2)


@main.command()
@click.option("--listing", "listing_id", required=True)
@click.option("--buyer", required=True)
@click.option("--instrument", default="OK-card", show_default=True)
@click.option("--server", envvar="MARKET_SERVER", default=DEFAULT_SERVER, show_default=True)
def buy(listing_id, buyer, instrument, server) -> None:
    """Place an order for a listing and pay it."""
    with _client(server) as client:
        client.post("/participants", json={"participant_id": buyer, "role": "buyer"})
        order = _expect(
            client.post("/orders", json={"buyer_id": buyer, "listing_id": listing_id}), 201
        )
        receipt = _expect(
            client.post(f"/orders/{order['order_id']}/pay", json={"instrument": instrument}), 200
        )
    click.echo(json.dumps(receipt, indent=2))
    if receipt["t_status"] != 1:
        click.echo(receipt.get("message") or "Payment failed.", err=True)
        sys.exit(2)


@main.command("ledger-verify")
@click.option("--server", envvar="MARKET_SERVER", default=DEFAULT_SERVER, show_default=True)
def ledger_verify(server) -> None:
    """Recompute every block hash and link on the server's chain."""
    with _client(server) as client:
        report = _expect(client.get("/ledger/verify"), 200)
    click.echo(json.dumps(report, indent=2))
    if not report["valid"]:
        sys.exit(2)


@main.command("ccpo-eval")
@click.option("--file", "file_path", type=click.Path(exists=True), required=True,
              help="Product description JSON carrying value fields.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def ccpo_eval(file_path, config_path) -> None:
    """Score a product's value fields and print category + disposition."""
    config = load_config(config_path)
    payload = json.loads(Path(file_path).read_text(encoding="utf-8"))
    values = ccpo.ValueFields.from_dict(payload.get("values", payload))
    score = ccpo.score(values, config.weights)
    category = ccpo.categorize_score(score, config.thresholds)
    click.echo(f"score: {score:.4f}")
    click.echo(f"category: {category.value}")
    click.echo(f"listing_status: {ccpo.listing_status(category)}")
    click.echo(f"disposition: {ccpo.disposition(category).value}")


@main.command("fraud-sim")
@click.option("--scenario", type=click.Choice(["seller", "buyer", "marketplace", "all"]),
              default="all", show_default=True)
@click.option("--data-dir", type=click.Path(), default=None,
              help="Fixture root (default: a temp directory).")
def fraud_sim(scenario, data_dir) -> None:
    """Run the adversarial scenario suite; exit 0 iff detections match expectations."""
    root = Path(data_dir) if data_dir else Path(tempfile.mkdtemp(prefix="fraud-sim-"))
    selected = [
        entry for entry in fraud.SCENARIO_SUITE if scenario in ("all", entry[0])
    ]
    all_ok = True
    for index, (family, variant, expected) in enumerate(selected):
        fixture = root / f"{family}-{variant}-{index}"
        market = Marketplace(fixture)
        outcome = fraud.run_scenario(market, family, variant)
        ok = outcome.detection == expected
        all_ok &= ok
        line = outcome.to_dict()
        line.update(expected_detection=expected, ok=ok)
        click.echo(json.dumps(line))
    sys.exit(0 if all_ok else 2)


if __name__ == "__main__":
    try:
        main()
    except RemarketError as exc:
        click.echo(f"error [{exc.code}]: {exc}", err=True)
        sys.exit(1)
