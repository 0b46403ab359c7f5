"""Command-line surface orchestrating the pipeline end to end."""
from __future__ import annotations

import argparse
import json
import sys
import zlib

import numpy as np

from . import hollowdist, model, rigcore, skinlab, synthgen, voxelize
from .hgraph import build_graph


def _write_weights(weights: rigcore.WeightRows, path) -> None:
    doc = {
        "num_bones": weights.num_bones,
        "rows": [weights.row_pairs(i) for i in range(len(weights))],
    }
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def _read_weights(path) -> rigcore.WeightRows:
    with open(path) as f:
        doc = json.load(f)
    return rigcore.WeightRows.from_pairs(doc["rows"], doc["num_bones"])


def _hyper_from_args(args) -> model.HyperParams:
    return model.HyperParams(
        k=args.k,
        vertex_local=args.vertex_local,
        vertex_global=args.global_dim,
        bone_local=args.bone_local,
        bone_global=args.global_dim,
        final_dims=tuple(int(x) for x in args.final_dims.split(",") if x),
        lambda_smooth=args.lambda_s,
        local_stages=args.stages,
        distance_mode=args.distance,
        smoothing=not args.no_smoothing,
        resolution=args.resolution,
        geo_threshold=args.geo_threshold,
    )


def cmd_synth(args) -> int:
    config = synthgen.SynthConfig(
        prop_probability=args.prop_prob,
        antenna_probability=args.antenna_prob,
        resolution=args.resolution,
    )
    paths = synthgen.gen_dataset(args.count, config, args.seed, args.out)
    print(f"wrote {len(paths)} rigs to {args.out}")
    return 0


def cmd_voxelize(args) -> int:
    rig = rigcore.load_rig(args.rig)
    grid = voxelize.voxelize_mesh(rig.mesh, args.resolution)
    voxelize.export_grid(grid, args.out)
    print(f"grid {grid.resolution}^3, cell {grid.cell_size:.6g} m, "
          f"{int(grid.labels.sum())} mesh cells -> {args.out}")
    return 0


def cmd_hollowdist(args) -> int:
    rig = rigcore.load_rig(args.rig)
    merged, _ = rigcore.merge_rig(rig)
    grid = voxelize.voxelize_mesh(merged.mesh, args.resolution)
    summaries = []
    n, b = merged.mesh.num_vertices, merged.skeleton.num_bones
    d = np.zeros((n, b))
    for j, cells in enumerate(hollowdist.bone_cell_sets(merged, grid)):
        field = hollowdist.compute_cell_distances(grid, cells, bone=j)
        d[:, j] = hollowdist.vertex_distances(field, merged.mesh.vertices, grid)
        finite = field.steps >= 0
        dist = field.dist
        summaries.append({
            "bone": j,
            "finite_cells": int(finite.sum()),
            "min": float(dist[finite].min()),
            "max": float(dist[finite].max()),
        })
    with open(args.out, "w") as f:
        json.dump({"distances": d.tolist(), "bone_fields": summaries}, f)
        f.write("\n")
    print(f"distance matrix {n}x{b} -> {args.out}")
    return 0


def cmd_graph(args) -> int:
    rig = rigcore.load_rig(args.rig)
    merged, _ = rigcore.merge_rig(rig)
    with open(args.dist) as f:
        d = np.asarray(json.load(f)["distances"])
    graph = build_graph(merged.mesh, merged.skeleton, d, args.k, args.geo_threshold)
    def checksum(a):
        return zlib.crc32(np.ascontiguousarray(a).tobytes())
    doc = {
        "vertices": graph.num_vertices,
        "bones": graph.num_bones,
        "mesh_edges": len(graph.mesh_edges),
        "skeleton_edges": len(graph.skel_edges),
        "geo_neighbor_total": int(sum(len(g) for g in graph.geo_neighbors)),
        "vertex_attr_crc32": checksum(graph.vertex_attr),
        "bone_attr_crc32": checksum(graph.bone_attr),
        "topk_crc32": checksum(graph.topk),
    }
    with open(args.out, "w") as f:
        json.dump(doc, f)
        f.write("\n")
    print(json.dumps(doc))
    return 0


def cmd_train(args) -> int:
    h = _hyper_from_args(args)
    paths = synthgen.load_manifest(args.data)
    if not paths:
        raise rigcore.RigError(f"no rig bundles found in {args.data}")
    samples = [model.prepare_sample(rigcore.load_rig(p), h) for p in paths]
    params, history = model.train(samples, h, args.epochs, seed=args.seed,
                                  lr=args.lr, wd=args.wd)
    model.save_checkpoint(params, h, args.out)
    if args.loss_log:
        with open(args.loss_log, "w") as f:
            for epoch, value in enumerate(history):
                f.write(f"{epoch}\t{value!r}\n")
    print(f"trained {args.epochs} epochs on {len(samples)} rigs; "
          f"final loss {history[-1] if history else float('nan'):.6f} -> {args.out}")
    return 0


def cmd_predict(args) -> int:
    params, h = model.load_checkpoint(args.model)
    rig = rigcore.load_rig(args.rig)
    weights = model.predict(rig, params, h)
    _write_weights(weights, args.out)
    print(f"predicted weights for {len(weights)} vertices -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    rig = rigcore.load_rig(args.rig)
    gt_rig = rigcore.load_rig(args.gt)
    if gt_rig.weights is None:
        raise rigcore.RigError(f"{args.gt} carries no ground-truth weights")
    pred = _read_weights(args.pred)
    poses = skinlab.sample_poses(rig.skeleton, args.poses, args.seed)
    report = skinlab.evaluate(rig, pred, gt_rig.weights, poses, tau=args.tau)
    doc = report.as_dict()
    with open(args.report, "w") as f:
        json.dump(doc, f)
        f.write("\n")
    print(json.dumps(doc))
    return 0


def cmd_deform(args) -> int:
    rig = rigcore.load_rig(args.rig)
    weights = _read_weights(args.weights)
    with open(args.pose) as f:
        doc = json.load(f)
    pose = skinlab.Pose.identity(rig.skeleton.num_bones)
    axes, angles = pose.axes.copy(), pose.angles.copy()
    for entry in doc:
        axes[entry["bone"]] = np.asarray(entry["axis"], dtype=np.float64)
        angles[entry["bone"]] = float(entry["angle"])
    pose = skinlab.Pose(axes, angles)
    tf = skinlab.forward_kinematics(rig.skeleton, pose)
    deformed = skinlab.lbs_deform(rig.mesh.vertices, weights, tf)
    rigcore.save_obj_mesh(rigcore.Mesh(deformed, rig.mesh.triangles), args.out)
    print(f"deformed mesh -> {args.out}")
    return 0


def cmd_stats_topk(args) -> int:
    paths = synthgen.load_manifest(args.data)
    h = model.HyperParams(resolution=args.resolution)
    pairs = []
    for p in paths:
        rig, _ = rigcore.merge_rig(rigcore.load_rig(p))
        if rig.weights is None:
            continue
        pairs.append((rig.weights, model.distance_matrix(rig, h)))
    if not pairs:
        raise rigcore.RigError(f"no rigs with ground-truth weights in {args.data}")
    mass, infl = skinlab.topk_coverage(pairs, args.kmax)
    with open(args.out, "w") as f:
        f.write("k,weight_mass_ratio,influential_ratio\n")
        for k in range(args.kmax):
            f.write(f"{k + 1},{mass[k]!r},{infl[k]!r}\n")
    print(f"coverage table for K=1..{args.kmax} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="heterskin",
        description="Skin-weight prediction pipeline: synthesize, voxelize, "
                    "train, predict, evaluate.",
    )
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads (1 guarantees bit-determinism)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic rigs")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--prop-prob", type=float, default=0.3)
    p.add_argument("--antenna-prob", type=float, default=0.3)
    p.add_argument("--resolution", type=int, default=48)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("voxelize", help="voxelize a rig's mesh")
    p.add_argument("--rig", required=True)
    p.add_argument("--resolution", type=int, default=88)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_voxelize)

    p = sub.add_parser("hollowdist", help="vertex-bone distance matrix")
    p.add_argument("--rig", required=True)
    p.add_argument("--resolution", type=int, default=88)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_hollowdist)

    p = sub.add_parser("graph", help="heterogeneous graph summary")
    p.add_argument("--rig", required=True)
    p.add_argument("--dist", required=True)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--geo-threshold", type=float, default=0.06)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="train the network")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, required=True)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--wd", type=float, default=1e-4)
    p.add_argument("--lambda-s", type=float, default=0.4)
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--distance", choices=["hollow", "euclidean"], default="hollow")
    p.add_argument("--no-smoothing", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--resolution", type=int, default=88)
    p.add_argument("--geo-threshold", type=float, default=0.06)
    p.add_argument("--vertex-local", type=int, default=256)
    p.add_argument("--bone-local", type=int, default=128)
    p.add_argument("--global-dim", type=int, default=512)
    p.add_argument("--final-dims", default="1024,512")
    p.add_argument("--stages", type=int, default=3)
    p.add_argument("--loss-log", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict weights for a rig")
    p.add_argument("--model", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="score predicted weights")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--rig", required=True)
    p.add_argument("--poses", type=int, default=10)
    p.add_argument("--tau", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("deform", help="pose a rig with given weights")
    p.add_argument("--rig", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--pose", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_deform)

    p = sub.add_parser("stats", help="dataset statistics")
    stats_sub = p.add_subparsers(dest="stats_command", required=True)
    pk = stats_sub.add_parser("topk", help="Top-K coverage curves")
    pk.add_argument("--data", required=True)
    pk.add_argument("--kmax", type=int, default=8)
    pk.add_argument("--out", required=True)
    pk.add_argument("--resolution", type=int, default=48)
    pk.set_defaults(func=cmd_stats_topk)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except (rigcore.RigError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
