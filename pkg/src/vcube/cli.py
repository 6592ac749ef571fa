"""
Command-line interface.

Exit codes:

    0  success
    2  usage error (bad flags, missing synthesis parameters)
    3  product declaration failed to parse or validate
    4  catalog error (duplicate, missing band, grid mismatch, unknown product)
    5  nothing to generate (no matching scenes, bbox outside the grid)
    6  source fetch failed
    7  internal error
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import yaml

from . import errors
from .cache import TileCache
from .catalog import Catalog
from .executor import Request, execute, plan
from .fetch import LocalFetcher
from .ops import list_ops
from .pipeline import parse_spec, render_dot, serialize_spec, validate
from .raster import BBox, GeoTransform, write_vras
from .scenegen import SceneTemplate, daily, gen_optical, gen_sar
from .sensors import Sensor

EXIT_OK, EXIT_USAGE, EXIT_SPEC, EXIT_CATALOG, EXIT_NO_SCENES, EXIT_FETCH, EXIT_INTERNAL = 0, 2, 3, 4, 5, 6, 7


@dataclass
class Config:
    data_root: Path = Path(".vcube/data")
    cache_root: Path = Path(".vcube/cache")
    catalog: Path = Path(".vcube/catalog")
    max_cache_bytes: int | None = None
    jobs: int = 1

    @classmethod
    def load(cls, path: str | None) -> "Config":
        cfg = cls()
        if path is None:
            return cfg
        p = Path(path)
        doc = yaml.safe_load(p.read_text("utf-8")) or {}
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a mapping")
        for key in ("data_root", "cache_root", "catalog"):
            if key in doc:
                setattr(cfg, key, (p.parent / doc[key]))
        if "max_cache_bytes" in doc:
            cfg.max_cache_bytes = int(doc["max_cache_bytes"])
        if "jobs" in doc:
            cfg.jobs = int(doc["jobs"])
        return cfg

    def apply(self, args: argparse.Namespace) -> "Config":
        for flag, attr in (("data", "data_root"), ("cache", "cache_root"), ("catalog", "catalog")):
            val = getattr(args, flag, None)
            if val is not None:
                setattr(self, attr, Path(val))
        if getattr(args, "max_cache_bytes", None) is not None:
            self.max_cache_bytes = args.max_cache_bytes
        if getattr(args, "jobs", None) is not None:
            self.jobs = args.jobs
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")
        return self


def parse_time(text: str) -> int:
    """Integer epoch seconds or an RFC 3339 timestamp (naive times are UTC)."""
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00").replace("z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


# --- commands --------------------------------------------------------------------

def cmd_ingest(cfg: Config, args) -> int:
    cat = Catalog(cfg.catalog)
    report, rc = [], EXIT_OK
    for path in args.paths:
        before = len(cat)
        try:
            rec = cat.ingest_scene(path)
            status = "ingested" if len(cat) > before else "unchanged"
            report.append({"path": path, "scene_id": rec.scene_id, "status": status})
        except errors.VcubeError as exc:
            report.append({"path": path, "status": "error", "error": f"{type(exc).__name__}: {exc}"})
            rc = EXIT_CATALOG
    if args.json:
        _emit(report)
    else:
        for r in report:
            if r["status"] == "error":
                print(f"error {r['path']}: {r['error']}")
            else:
                print(f"{r['status']} {r['scene_id']}")
    return rc


def cmd_product(cfg: Config, args) -> int:
    cat = Catalog(cfg.catalog)
    if args.action == "add":
        text = Path(args.file).read_bytes()
        spec = parse_spec(text)
        for w in validate(spec):
            print(f"warning: {w}", file=sys.stderr)
        rec = cat.register_product(spec)
        print(f"registered {rec.name}")
    elif args.action == "list":
        rows = [{"name": r.name, "sensor": r.spec.sensor.value, "nodes": len(r.spec.nodes),
                 "outputs": sorted(r.spec.outputs), "registered_at": r.registered_at}
                for r in cat.products()]
        if args.json:
            _emit(rows)
        else:
            for r in rows:
                print(f"{r['name']}\t{r['sensor']}\t{','.join(r['outputs'])}")
    elif args.action == "show":
        rec = cat.product(args.name)
        if args.json:
            _emit(rec.spec.to_dict())
        else:
            sys.stdout.write(serialize_spec(rec.spec))
    elif args.action == "graph":
        sys.stdout.write(render_dot(cat.product(args.name).spec))
    return EXIT_OK


def cmd_generate(cfg: Config, args) -> int:
    cat = Catalog(cfg.catalog)
    try:
        bbox = BBox.parse(args.bbox)
        req = Request(args.product, bbox, parse_time(args.t0), parse_time(args.t1),
                      None if args.center is None else parse_time(args.center),
                      args.half_window)
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    cache = TileCache(cfg.cache_root)
    outputs, stats = execute(plan(cat, req), cache, LocalFetcher(), jobs=cfg.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, raster in outputs.items():
        path = out / f"{name}.vras"
        write_vras(raster, path)
        print(f"wrote {path}")
    if cfg.max_cache_bytes is not None:
        cache.evict(cfg.max_cache_bytes)
    report = stats.to_json()
    report["cache"] = cache.stats()
    if args.stats == "-":
        _emit(report)
    elif args.stats:
        Path(args.stats).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def cmd_cache(cfg: Config, args) -> int:
    cache = TileCache(cfg.cache_root)
    if args.action == "stats":
        _emit(cache.stats())
    else:
        n = cache.evict(args.max_bytes)
        _emit({"evicted": n, **cache.stats()})
    return EXIT_OK


def cmd_ops(cfg: Config, args) -> int:
    _emit(list_ops())
    return EXIT_OK


def cmd_scenegen(cfg: Config, args) -> int:
    sensor = Sensor.OPTICAL if args.kind == "optical" else Sensor.SAR
    if "," in args.dates or not args.dates.strip().isdigit():
        stamps = [parse_time(t) for t in args.dates.split(",")]
    else:
        stamps = daily(parse_time(args.start), int(args.dates), args.step_days)
    tpl = SceneTemplate(sensor, args.width, args.height,
                        GeoTransform(args.origin_x, args.origin_y, args.pixel_size, args.pixel_size),
                        stamps, seed=args.seed, cloud_fraction=args.cloud_fraction,
                        looks=args.looks, crs=args.crs)
    out = Path(args.out) if args.out else cfg.data_root
    sidecars = (gen_optical if sensor is Sensor.OPTICAL else gen_sar)(tpl, out)
    for s in sidecars:
        print(s)
    return EXIT_OK


# --- argument parsing ------------------------------------------------------------

def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS, help="YAML/JSON config file")
    p.add_argument("--catalog", default=argparse.SUPPRESS, help="catalog directory")
    p.add_argument("--cache", default=argparse.SUPPRESS, help="cache directory")
    p.add_argument("--data", default=argparse.SUPPRESS, help="data root directory")
    p.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="worker threads")
    p.add_argument("--max-cache-bytes", type=int, default=argparse.SUPPRESS)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="vcube", parents=[common],
                                     description="Lazy virtual raster products.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="index scene sidecars")
    p.add_argument("paths", nargs="+")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("product", parents=[common], help="manage product declarations")
    psub = p.add_subparsers(dest="action", required=True)
    a = psub.add_parser("add", parents=[common])
    a.add_argument("file")
    a = psub.add_parser("list", parents=[common])
    a.add_argument("--json", action="store_true")
    a = psub.add_parser("show", parents=[common])
    a.add_argument("name")
    a.add_argument("--json", action="store_true")
    a = psub.add_parser("graph", parents=[common])
    a.add_argument("name")
    p.set_defaults(func=cmd_product)

    p = sub.add_parser("generate", parents=[common], help="materialize a product")
    p.add_argument("product")
    p.add_argument("--bbox", required=True, help="minx,miny,maxx,maxy")
    p.add_argument("--from", dest="t0", required=True)
    p.add_argument("--to", dest="t1", required=True)
    p.add_argument("--center")
    p.add_argument("--half-window", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--stats", help="write run statistics JSON here ('-' for stdout)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("cache", parents=[common], help="inspect or trim the tile cache")
    csub = p.add_subparsers(dest="action", required=True)
    csub.add_parser("stats", parents=[common])
    e = csub.add_parser("evict", parents=[common])
    e.add_argument("--max-bytes", type=int, required=True)
    p.set_defaults(func=cmd_cache)

    p = sub.add_parser("ops", parents=[common], help="describe built-in operations")
    osub = p.add_subparsers(dest="action", required=True)
    osub.add_parser("list", parents=[common])
    p.set_defaults(func=cmd_ops)

    p = sub.add_parser("scenegen", parents=[common], help="write synthetic scenes")
    p.add_argument("kind", choices=["optical", "sar"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dates", default="1", help="count, or comma-separated timestamps")
    p.add_argument("--start", default="2023-01-01T00:00:00Z")
    p.add_argument("--step-days", type=int, default=5)
    p.add_argument("--cloud-fraction", type=float, default=0.0)
    p.add_argument("--looks", type=float, default=4.0)
    p.add_argument("--width", type=int, default=256)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--origin-x", type=float, default=0.0)
    p.add_argument("--origin-y", type=float, default=2560.0)
    p.add_argument("--pixel-size", type=float, default=10.0)
    p.add_argument("--crs", default="EPSG:32630")
    p.add_argument("--out")
    p.set_defaults(func=cmd_scenegen)
    return parser


_EXIT_FOR = [
    (errors.SpecError, EXIT_SPEC),
    (errors.ValidationFailed, EXIT_SPEC),
    (errors.MissingSynthesisParams, EXIT_USAGE),
    (errors.NoScenes, EXIT_NO_SCENES),
    (errors.NoOverlap, EXIT_NO_SCENES),
    (errors.FetchFailed, EXIT_FETCH),
    (errors.CatalogError, EXIT_CATALOG),
    (errors.GridMismatch, EXIT_CATALOG),
    (errors.BadTemplate, EXIT_USAGE),
]


def exit_code_for(exc: BaseException) -> int:
    for cls, code in _EXIT_FOR:
        if isinstance(exc, cls):
            return code
    return EXIT_INTERNAL


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = Config.load(getattr(args, "config", None)).apply(args)
    except (OSError, ValueError, yaml.YAMLError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(cfg, args)
    except errors.VcubeError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if isinstance(exc, errors.CycleDetected):
            print("cycle: " + " ".join(exc.cycle), file=sys.stderr)
        return exit_code_for(exc)
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
