"""Process entry point: HTTP server over the marketplace and the load harness.

The server exposes the marketplace as a JSON API (consumed by the CLI, the
tests and the web UI) and writes one structured log line per request. The
load harness pushes n synthetic IFC-lite products through the full
passport -> cas -> ledger pipeline and reports per-stage timings.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import canonical
from .ccpo import ValueFields
from .config import ServiceConfig
from .dpp import IfcLiteProduct
from .errors import RemarketError
from .marketplace import Marketplace


def build_marketplace(config: ServiceConfig, **kwargs) -> Marketplace:
    return Marketplace(
        config.data_dir,
        thresholds=config.thresholds,
        weights=config.weights,
        ledger_batch_size=config.ledger_batch_size,
        currency=config.currency,
        **kwargs,
    )


class ParticipantIn(BaseModel):
    participant_id: str
    role: str


class ProductIn(BaseModel):
    product: dict
    seller_id: str
    price: str
    values: dict


class OrderIn(BaseModel):
    buyer_id: str
    listing_id: str


class PayIn(BaseModel):
    instrument: str


def create_app(market: Marketplace, ui_dir: Path | None = None) -> FastAPI:
    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        yield
        market.ledger.flush()  # graceful shutdown seals any batched records

    app = FastAPI(title="remarket", docs_url=None, redoc_url=None, lifespan=lifespan)
    log_path = market.data_dir / "api_log.jsonl"
    log_lock = threading.Lock()

    @app.exception_handler(RemarketError)
    async def _domain_error(_request: Request, exc: RemarketError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.http_status,
            content={"error": {"code": exc.code, "message": str(exc)}},
        )

    @app.middleware("http")
    async def _request_log(request: Request, call_next):
        started = time.perf_counter()
        response: Response = await call_next(request)
        line = json.dumps(
            {
                "ts": canonical.format_utc(canonical.utc_now()),
                "method": request.method,
                "path": request.url.path,
                "status": response.status_code,
                "duration_ms": round((time.perf_counter() - started) * 1000, 3),
            }
        )
        with log_lock:
            with open(log_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
        return response

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/participants", status_code=201)
    def register(body: ParticipantIn) -> dict:
        return market.register_participant(body.participant_id, body.role).to_dict()

    @app.post("/products", status_code=201)
    def add_product(body: ProductIn) -> dict:
        listing = market.add_product(
            IfcLiteProduct.from_dict(body.product),
            body.seller_id,
            body.price,
            ValueFields.from_dict(body.values),
        )
        return listing.to_dict()

    @app.get("/listings")
    def search(
        material: str | None = None,
        category: str | None = None,
        q: str | None = None,
        page: int = 1,
        page_size: int = 20,
    ) -> dict:
        return market.search(
            material=material, category=category, q=q, page=page, page_size=page_size
        ).to_dict()

    @app.get("/listings/{listing_id}/dpp")
    def listing_dpp(listing_id: str) -> dict:
        return market.retrieve_dpp(listing_id).to_dict()

    @app.get("/verify")
    def verify(pid: str, tid: str) -> dict:
        return market.verify_product(pid, tid).to_dict()

    @app.post("/orders", status_code=201)
    def place_order(body: OrderIn) -> dict:
        return market.place_order(body.buyer_id, body.listing_id).to_dict()

    @app.post("/orders/{order_id}/pay")
    def pay(order_id: str, body: PayIn) -> dict:
        return market.pay(order_id, body.instrument).to_dict()

    @app.get("/ledger/records/{tid}")
    def ledger_record(tid: str) -> dict:
        record = market.ledger.get_record(tid)
        return {"tid": tid, "record": record.to_dict()}

    @app.get("/ledger/verify")
    def ledger_verify() -> dict:
        return market.ledger.verify_chain().to_dict()

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def run_server(config: ServiceConfig) -> None:
    """Serve until shutdown; raises on busy port or unwritable data dir."""
    import uvicorn

    market = build_marketplace(config)
    app = create_app(market, ui_dir=config.ui_dir)
    uvicorn.run(app, host="127.0.0.1", port=config.port, log_level="warning")


# -- load harness -------------------------------------------------------------

STAGES = ("dpp_creation", "cas_store", "ledger_record")


@dataclass
class ProductTiming:
    product_id: str
    ok: bool
    stages_ms: dict[str, float] = field(default_factory=dict)
    error: str = ""


@dataclass
class LoadReport:
    n_products: int
    successes: int
    failures: int
    stage_totals_ms: dict[str, float]
    wall_clock_ms: float
    per_product: list[ProductTiming] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "n_products": self.n_products,
            "successes": self.successes,
            "failures": self.failures,
            "stage_totals_ms": {k: round(v, 3) for k, v in self.stage_totals_ms.items()},
            "wall_clock_ms": round(self.wall_clock_ms, 3),
        }


def synthetic_products(n: int) -> list[tuple[IfcLiteProduct, ValueFields]]:
    materials = ("timber", "steel", "brick", "concrete", "aluminium")
    out = []
    for index in range(n):
        material = materials[index % len(materials)]
        product = IfcLiteProduct(
            product_id=f"P-LOAD-{index + 1:04d}",
            name=f"Reclaimed {material} unit {index + 1}",
            material=material,
            dimensions={"length": {"value": 2.0 + index % 7, "unit": "m"}},
            manufacturer="Synthetics Ltd",
            year_installed=2000 + index % 20,
        )
        values = ValueFields(
            material=material,
            condition_score=0.9,
            age_years=float(index % 10),
            expected_lifecycle_years=50.0,
        )
        out.append((product, values))
    return out


def run_load(
    n: int,
    config: ServiceConfig,
    *,
    market: Marketplace | None = None,
    parallelism: int = 4,
    seller_id: str = "loader-seller",
) -> LoadReport:
    """Push n synthetic products through add_product and time each stage.

    Duplicate ids (e.g. a re-run over the same store) count as failures,
    never exceptions.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    market = market or build_marketplace(config)
    market.register_participant(seller_id, "seller")
    jobs = synthetic_products(n)
    started = time.perf_counter()

    def push(job: tuple[IfcLiteProduct, ValueFields]) -> ProductTiming:
        product, values = job
        timing = ProductTiming(product_id=product.product_id, ok=False)

        def stage_timer(stage: str, seconds: float) -> None:
            timing.stages_ms[stage] = seconds * 1000.0

        try:
            market.add_product(product, seller_id, "100.00", values, stage_timer=stage_timer)
            timing.ok = True
        except RemarketError as exc:
            timing.error = f"{exc.code}: {exc}"
        return timing

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(push, jobs))

    totals = {stage: 0.0 for stage in STAGES}
    for timing in results:
        for stage in STAGES:
            totals[stage] += timing.stages_ms.get(stage, 0.0)
    return LoadReport(
        n_products=n,
        successes=sum(1 for t in results if t.ok),
        failures=sum(1 for t in results if not t.ok),
        stage_totals_ms=totals,
        wall_clock_ms=(time.perf_counter() - started) * 1000.0,
        per_product=results,
    )
