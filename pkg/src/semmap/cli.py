"""Command-line entry point: ``semmap run | eval | render-map``.

Exit codes: 0 success, 2 configuration or input error, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, MapFormatError, SchemaVersionError, SemMapError
from .pipeline import EVAL_COLUMNS, eval_reports, load_config, run_pipeline
from .planner import read_paths_csv
from .semantic_map import compose_costmap, load_map

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("semmap")

_PATH_COLOURS = {"metric": (0, 90, 255), "semantic": (0, 170, 0)}


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = Path(args.out) if args.out else cfg.output
    if out is None:
        raise ConfigError("no output directory: set 'output' in the config or pass --out")
    result = run_pipeline(cfg, out, metric_only=args.metric_only, trace=args.trace, dump_clouds=args.dump_clouds)
    rep = result.report
    for name, res in rep["paths"].items():
        print(f"{name:9s} {res.get('status')}  collided={res.get('collided')}")
    print(f"artifacts written to {result.out_dir}")
    return EXIT_OK


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _cmd_eval(args) -> int:
    rows = eval_reports(args.reports)
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, EVAL_COLUMNS)
            w.writeheader()
            w.writerows(rows)
    table = [EVAL_COLUMNS] + [[_fmt(r[c]) for c in EVAL_COLUMNS] for r in rows]
    widths = [max(len(row[k]) for row in table) for k in range(len(EVAL_COLUMNS))]
    for row in table:
        print("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
    return EXIT_OK


def map_image(map_path) -> np.ndarray:
    """RGB rendering of a saved map: free white, occupied black, semantic cells red.

    Paths from a sibling ``paths.csv`` are drawn on top.  Row 0 is the highest y.
    """
    grid, semantic, _ = load_map(map_path)
    cells = grid.cells if semantic is None else compose_costmap(grid, semantic).cells
    grey = (255 - cells).astype(np.uint8)
    rgb = np.repeat(grey[..., None], 3, axis=2)
    if semantic is not None:
        sem = semantic.values > grid.cells
        rgb[sem, 0] = 255
        rgb[sem, 1] = rgb[sem, 2] = grey[sem]
    base = Path(map_path)
    paths_file = (base if base.is_dir() else base.parent) / "paths.csv"
    if paths_file.is_file():
        g = grid.geometry
        for name, pts in read_paths_csv(paths_file).items():
            i, j = g.cell_of(pts[:, 0], pts[:, 1])
            ok = g.inside(i, j)
            rgb[j[ok], i[ok]] = _PATH_COLOURS.get(name, (255, 0, 255))
    return np.flipud(rgb)


def write_ppm(path, rgb: np.ndarray) -> None:
    h, w, _ = rgb.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(rgb, dtype=np.uint8).tobytes())


def _cmd_render_map(args) -> int:
    rgb = map_image(args.map)
    out = Path(args.output)
    if out.suffix.lower() == ".ppm":
        write_ppm(out, rgb)
    else:
        try:
            from PIL import Image
        except ImportError as exc:
            raise ConfigError("writing anything but .ppm needs Pillow (pip install 'artifact[png]')") from exc
        Image.fromarray(rgb, "RGB").save(out)
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semmap", description="Semantic costmaps for hollow-bottom furniture.")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario end to end")
    r.add_argument("config", help="scenario JSON file")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--out", help="output directory (overrides the config)")
    r.add_argument("--metric-only", action="store_true", help="skip detection and the semantic layer")
    r.add_argument("--trace", action="store_true", help="also write tracks.csv")
    r.add_argument("--dump-clouds", action="store_true", help="write per-observation object clouds as .xyz")
    r.set_defaults(func=_cmd_run)

    e = sub.add_parser("eval", help="summarise one or more report.json files")
    e.add_argument("reports", nargs="+", help="report.json files")
    e.add_argument("--csv", help="also write the table as CSV")
    e.set_defaults(func=_cmd_eval)

    m = sub.add_parser("render-map", help="render a saved map to an image")
    m.add_argument("map", help="map directory or its map.json")
    m.add_argument("-o", "--output", required=True, help="image file (.ppm natively, others via Pillow)")
    m.set_defaults(func=_cmd_render_map)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, SchemaVersionError, MapFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SemMapError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
