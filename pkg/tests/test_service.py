from __future__ import annotations

import csv

import pytest

from remarket.config import ServiceConfig, load_config, parse_config_text
from remarket.errors import ConfigError
from remarket.ledger import RecordKind
from remarket.report import render_load_figure, write_load_csv
from remarket.service import build_marketplace, run_load, synthetic_products


def test_config_defaults(tmp_path):
    config = load_config()
    assert config.port == 8700
    assert config.thresholds.theta_strong == 0.70
    assert config.thresholds.theta_weak == 0.40
    assert config.weights.condition == 0.6
    assert config.currency == "GBP"


def test_config_file_parsing(tmp_path):
    path = tmp_path / "market.conf"
    path.write_text(
        """
        # marketplace settings
        data_dir = /tmp/market-test
        port = 9100
        theta_strong = 0.8
        theta_weak = 0.3
        weight_condition = 0.5
        weight_lifecycle = 0.5
        damage_penalty = 0.2
        currency = EUR
        ledger_batch_size = 2
        """
    )
    config = load_config(path)
    assert str(config.data_dir) == "/tmp/market-test"
    assert config.port == 9100
    assert config.thresholds.theta_strong == 0.8
    assert config.weights.damage_penalty == 0.2
    assert config.currency == "EUR"
    assert config.ledger_batch_size == 2


def test_config_env_overrides(tmp_path, monkeypatch):
    path = tmp_path / "market.conf"
    path.write_text("port = 9100\ndata_dir = /tmp/ignored\n")
    monkeypatch.setenv("MARKET_PORT", "9200")
    monkeypatch.setenv("MARKET_DATA_DIR", str(tmp_path / "env-data"))
    config = load_config(path)
    assert config.port == 9200
    assert config.data_dir == tmp_path / "env-data"


def test_config_rejects_garbage():
    with pytest.raises(ConfigError):
        parse_config_text("mystery_knob = 1")
    with pytest.raises(ConfigError):
        parse_config_text("just some words")
    with pytest.raises(ConfigError):
        ServiceConfig(port=80)
    with pytest.raises(ConfigError):
        ServiceConfig(ledger_batch_size=0)
    with pytest.raises(ConfigError):
        load_config("/nonexistent/market.conf")


def test_synthetic_products_are_unique_and_strong():
    from remarket import ccpo

    jobs = synthetic_products(100)
    assert len({p.product_id for p, _ in jobs}) == 100
    for _, values in jobs:
        assert ccpo.categorize(values) is ccpo.ReuseCategory.STRONG


def test_load_twenty(tmp_path):
    config = ServiceConfig(data_dir=tmp_path / "load20")
    report = run_load(20, config)
    assert report.n_products == 20
    assert report.successes == 20
    assert report.failures == 0
    assert report.successes + report.failures == report.n_products

    market = build_marketplace(config)
    assert market.ledger.verify_chain().valid
    added = [
        record
        for _, record in market.ledger.records_with_tids()
        if record.record_kind is RecordKind.PRODUCT_ADDED
    ]
    listings = market.listings()
    anchored = {l.dpp_address for l in listings}
    assert len(listings) == len(added) == len(anchored) == 20
    assert market.audit() == []


def test_load_rerun_counts_duplicates_as_failures(tmp_path):
    config = ServiceConfig(data_dir=tmp_path / "loaddup")
    first = run_load(1, config)
    second = run_load(1, config)
    assert (first.successes, first.failures) == (1, 0)
    assert (second.successes, second.failures) == (0, 1)
    assert "duplicate_product" in second.per_product[0].error


def test_load_stage_timings_populated(tmp_path):
    config = ServiceConfig(data_dir=tmp_path / "loadtime")
    report = run_load(5, config, parallelism=2)
    for stage in ("dpp_creation", "cas_store", "ledger_record"):
        assert report.stage_totals_ms[stage] >= 0.0
    ok_rows = [t for t in report.per_product if t.ok]
    assert all(set(t.stages_ms) == {"dpp_creation", "cas_store", "ledger_record"} for t in ok_rows)


def test_load_rejects_nonpositive_n(tmp_path):
    with pytest.raises(ValueError):
        run_load(0, ServiceConfig(data_dir=tmp_path / "x"))


def test_server_fails_to_start_on_busy_port(tmp_path):
    import socket
    import threading
    import time

    import uvicorn

    from remarket.marketplace import Marketplace
    from remarket.service import create_app

    blocker = socket.socket()
    blocker.bind(("127.0.0.1", 0))
    blocker.listen(1)
    port = blocker.getsockname()[1]
    try:
        app = create_app(Marketplace(tmp_path / "busy"))
        server = uvicorn.Server(uvicorn.Config(app, host="127.0.0.1", port=port, log_level="critical"))
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        thread.join(timeout=5)
        assert not thread.is_alive()
        assert not server.started
    finally:
        blocker.close()


def test_report_csv_and_figure(tmp_path):
    config = ServiceConfig(data_dir=tmp_path / "loadrep")
    report = run_load(6, config)
    csv_path = write_load_csv(report, tmp_path / "out" / "load_report.csv")
    fig_path = render_load_figure(report, tmp_path / "out" / "load_report.png")
    with open(csv_path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["product_id", "ok"]
    assert len(rows) == 7  # header + 6 products
    assert fig_path.exists()
    assert fig_path.stat().st_size > 5000
