"""Command line front end.

Subcommands: genpath, extract, slice, baseline, metrics, compare.  Exit
codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baseline import extract_baseline
from .binoctree import ExtractionConfig, parse_extraction_config
from .consistency import consistency_series, svg_plot
from .contour4d import MeshFormatError, load_mesh4d, save_mesh4d
from .field import ConfigError, load_scene_config, make_field
from .pipeline import extract
from .slicer import SliceTable, extrude_time_faces, load_obj, write_frames, frame_name
from .trajectory import PathError, generate_path, load_path, save_path

log = logging.getLogger("stmesh")


class UsageError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"[{stage}] {exc}")


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (UsageError, ConfigError, PathError, FileNotFoundError):
        raise
    except Exception as exc:  # tagged and reported with exit code 1
        raise StageError(name, exc) from exc


def format_stats(stats: dict) -> str:
    return "".join(f"{k}: {v}\n" for k, v in stats.items())


def _config(args) -> ExtractionConfig:
    cfg = ExtractionConfig(seed=args.seed)
    if args.config:
        cfg = parse_extraction_config(Path(args.config).read_text(encoding="utf-8"), cfg)
    for key in ("delta_t", "d_hat_1", "d_hat_2", "max_depth", "size_cap"):
        v = getattr(args, key, None)
        if v is not None:
            setattr(cfg, key, v)
    return cfg


def _require(path, what):
    if not path or not Path(path).is_file():
        raise UsageError(f"{what} not found: {path}")
    return path


def _scene_and_path(args):
    field = make_field(load_scene_config(_require(args.scene, "scene file")))
    path = load_path(_require(args.path, "camera path"))
    return field, path


def _out(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------


def cmd_genpath(args) -> int:
    if not args.duration > 0:
        raise UsageError("--duration must be > 0")
    if args.fps < 1:
        raise UsageError("--fps must be >= 1")
    kw = dict(width=args.width, height=args.height, fov_y=args.fov)
    for k in ("radius", "altitude"):
        if getattr(args, k) is not None:
            kw[k] = getattr(args, k)
    for k in ("center", "start", "end"):
        if getattr(args, k) is not None:
            kw[k] = tuple(getattr(args, k))
    path = generate_path(args.kind, args.duration, args.fps, args.seed, **kw)
    target = args.out or "path.csv"
    if os.path.isdir(target):
        target = os.path.join(target, "path.csv")
    save_path(path, target)
    log.info("wrote %d samples to %s", len(path), target)
    return 0


def cmd_extract(args) -> int:
    field, path = _scene_and_path(args)
    cfg = _config(args)
    out = _out(args)
    ex = _stage("extract", extract, field, path, cfg)
    _stage("write", save_mesh4d, ex.mesh, out / "mesh4d.bin")
    if args.dump_tree:
        (out / "tree.txt").write_text(ex.tree.dump(), encoding="utf-8")
    stats = dict(ex.stats)
    stats["mesh_polyhedra"] = len(ex.mesh.polyhedra)
    stats["mesh_vertices"] = ex.mesh.n_vertices
    (out / "stats.txt").write_text(format_stats(stats), encoding="utf-8")
    sys.stdout.write(format_stats(stats))
    return 0


def cmd_slice(args) -> int:
    mesh = _stage("load", load_mesh4d, _require(args.mesh, "mesh file"))
    path = load_path(_require(args.path, "camera path"))
    if args.extrude_time_faces:
        mesh = _stage("extrude", extrude_time_faces, mesh)
    table = _stage("slice", SliceTable, mesh)
    frames = [_stage("slice", table.slice, float(t)) for t in path.times]
    write_frames(frames, path.times, _out(args), triangulate=not args.polygons)
    return 0


def cmd_baseline(args) -> int:
    field, path = _scene_and_path(args)
    if args.length < 1:
        raise UsageError("--length must be >= 1")
    cfg = _config(args)
    meshes, plan, _ = _stage("baseline", extract_baseline, field, path, args.length, cfg)
    out = _out(args) / f"baseline_{args.length}"
    write_frames(meshes, path.times, out)
    return 0


def _load_frames(directory, n):
    d = Path(directory)
    return [load_obj(d / frame_name(i)) for i in range(n)]


def cmd_metrics(args) -> int:
    path = load_path(_require(args.path, "camera path"))
    if not args.frames or not Path(args.frames).is_dir():
        raise UsageError(f"frame directory not found: {args.frames}")
    meshes = _stage("load", _load_frames, args.frames, len(path))
    rep = _stage("metrics", consistency_series, meshes, path, args.label)
    out = _out(args)
    (out / f"consistency_{args.label}.csv").write_text(rep.to_csv(), encoding="utf-8")
    (out / f"consistency_{args.label}.svg").write_text(svg_plot([rep]), encoding="utf-8")
    return 0


def _variants(methods, deltas):
    out = []
    for m in methods:
        if m == "ours":
            for dt in deltas:
                out.append(("ours" if dt is None else f"ours-dt{dt:g}", "ours", dt, 0))
        elif m.startswith("baseline-"):
            try:
                n = int(m.split("-", 1)[1])
            except ValueError:
                raise UsageError(f"bad method {m!r}") from None
            out.append((m, "baseline", None, n))
        else:
            raise UsageError(f"unknown method {m!r}")
    return out


def cmd_compare(args) -> int:
    methods = [m for m in args.methods.split(",") if m]
    deltas = [float(v) for v in args.delta_t_list.split(",") if v] if args.delta_t_list else [None]
    variants = _variants(methods, [d for d in deltas])
    if len(variants) < 2:
        raise UsageError("compare needs at least two method/parameter variants")
    field, path = _scene_and_path(args)
    base_cfg = _config(args)
    out = _out(args)
    reports, counts, failures = [], [], []
    for label, kind, dt, n in variants:
        cfg = ExtractionConfig(**{**base_cfg.__dict__})
        if dt is not None:
            cfg.delta_t = dt
        try:
            if kind == "ours":
                ex = extract(field, path, cfg)
                meshes = ex.frames(path.times, args.extrude_time_faces)
                total = ex.mesh.n_vertices
            else:
                meshes, plan, st = extract_baseline(field, path, n, cfg)
                total = sum(s["vertices"] for s in st)
            rep = consistency_series(meshes, path, label)
        except Exception as exc:
            log.error("variant %s failed: %s", label, exc)
            failures.append(label)
            continue
        reports.append(rep)
        per_frame = [m.n_vertices for m in meshes]
        counts.append((label, per_frame, total))
    lines = ["frame,t," + ",".join(f"{r.label}_ssim,{r.label}_normal_diff_deg,{r.label}_valley_severity" for r in reports)]
    for i, t in enumerate(path.times.tolist()):
        row = [str(i), repr(t)]
        for r in reports:
            row += [_num(r.ssim[i]), _num(r.normal_diff[i]), _num(r.severity[i])]
        lines.append(",".join(row))
    (out / "compare.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "compare.svg").write_text(svg_plot(reports), encoding="utf-8")
    vc = ["method,mean_vertices_per_frame,total_vertices,max_valley_severity"]
    for (label, per_frame, total), r in zip(counts, reports):
        vc.append(f"{label},{float(np.mean(per_frame))!r},{total},{r.max_severity()!r}")
    (out / "vertex_counts.csv").write_text("\n".join(vc) + "\n", encoding="utf-8")
    with open(out / "vertex_counts_per_frame.csv", "w", encoding="utf-8") as fp:
        fp.write("frame," + ",".join(c[0] for c in counts) + "\n")
        for i in range(len(path)):
            fp.write(f"{i}," + ",".join(str(c[1][i]) for c in counts) + "\n")
    sys.stdout.write("\n".join(vc) + "\n")
    if failures:
        sys.stderr.write(f"failed variants: {', '.join(failures)}\n")
        return 1
    return 0


def _num(x) -> str:
    return "" if not np.isfinite(x) else repr(float(x))


# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="extraction config file (key = value)")
    common.add_argument("--out", help="output file or directory")
    common.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    common.add_argument("--seed", type=int, default=0)

    p = _Parser(prog="stmesh", description=__doc__, parents=[common],
                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scene_opts(sp):
        sp.add_argument("--scene", required=True, help="scene config file")
        sp.add_argument("--path", required=True, help="camera path CSV")
        sp.add_argument("--delta-t", dest="delta_t", type=float)
        sp.add_argument("--d-hat-1", dest="d_hat_1", type=float)
        sp.add_argument("--d-hat-2", dest="d_hat_2", type=float)
        sp.add_argument("--max-depth", dest="max_depth", type=int)
        sp.add_argument("--size-cap", dest="size_cap", type=int)

    g = sub.add_parser("genpath", parents=[common], help="generate a camera path CSV")
    g.add_argument("--kind", choices=("orbit", "flythrough", "static"), default="orbit")
    g.add_argument("--duration", type=float, default=20.0)
    g.add_argument("--fps", type=int, default=24)
    g.add_argument("--width", type=int, default=160)
    g.add_argument("--height", type=int, default=90)
    g.add_argument("--fov", type=float, default=60.0)
    g.add_argument("--radius", type=float)
    g.add_argument("--altitude", type=float)
    g.add_argument("--center", type=float, nargs=3)
    g.add_argument("--start", type=float, nargs=3)
    g.add_argument("--end", type=float, nargs=3)
    g.set_defaults(func=cmd_genpath)

    e = sub.add_parser("extract", parents=[common], help="build the tree and the 4D mesh")
    scene_opts(e)
    e.add_argument("--dump-tree", action="store_true")
    e.set_defaults(func=cmd_extract)

    s = sub.add_parser("slice", parents=[common], help="slice a 4D mesh at every camera time")
    s.add_argument("--mesh", required=True)
    s.add_argument("--path", required=True)
    s.add_argument("--extrude-time-faces", action="store_true")
    s.add_argument("--polygons", action="store_true", help="write polygons instead of triangles")
    s.set_defaults(func=cmd_slice)

    b = sub.add_parser("baseline", parents=[common], help="fixed-length block baseline")
    scene_opts(b)
    b.add_argument("--length", type=int, default=24)
    b.set_defaults(func=cmd_baseline)

    m = sub.add_parser("metrics", parents=[common], help="consistency series of a frame directory")
    m.add_argument("--path", required=True)
    m.add_argument("--frames", required=True)
    m.add_argument("--label", default="ours")
    m.set_defaults(func=cmd_metrics)

    c = sub.add_parser("compare", parents=[common], help="run and score several variants")
    scene_opts(c)
    c.add_argument("--methods", default="ours,baseline-24")
    c.add_argument("--delta-t-list", dest="delta_t_list", default=None)
    c.add_argument("--extrude-time-faces", action="store_true")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("BINOC_LOG", "WARNING").upper(), format="%(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, ConfigError, PathError) as exc:
        sys.stderr.write(f"stmesh {args.command}: {exc}\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(f"stmesh {args.command}: {exc}\n")
        return 2
    except (StageError, MeshFormatError, OSError, RuntimeError, ValueError) as exc:
        sys.stderr.write(f"stmesh {args.command}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
