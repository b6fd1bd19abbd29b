"""canon9d command line interface."""

from __future__ import annotations

import json
import math
import sys

import click

from canon9d import align as align_mod
from canon9d import cluster as cluster_mod
from canon9d import ingest
from canon9d.align import AlignConfig
from canon9d.canonical import propagate
from canon9d.core import Pose9D, SimilarityTransform
from canon9d.evaluation import (
    compile_symmetry,
    evaluate,
    format_report,
    rules_table_from_inventory,
)
from canon9d.pipeline import (
    AwaitingVerification,
    NoVerifiedReference,
    Pipeline,
    PipelineConfig,
    PipelineState,
    object_embedding,
    summarize,
)


@click.group()
def main():
    """Canonicalize featured point clouds into shared 9D coordinate frames."""


@main.command()
@click.argument("manifest", type=click.Path(exists=True))
def validate(manifest):
    """Validate a manifest and every file it references."""
    try:
        records = ingest.load_manifest(manifest)
        for record in records:
            ingest.read_fpc(record.surface_path)
            if record.camera_path:
                ingest.load_cameras(record.camera_path)
    except ingest.FormatError as exc:
        click.echo(f"invalid: {exc}", err=True)
        sys.exit(1)
    click.echo(f"ok: {len(records)} objects")


@main.command("cluster")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--k", type=int, default=None, help="number of clusters")
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, type=click.Path())
def cluster_cmd(manifest, k, seed, out):
    """Cluster manifest objects and select per-cluster medoid references."""
    records = ingest.load_manifest(manifest)
    embeddings = [
        cluster_mod.ObjectEmbedding(
            r.object_id, object_embedding(ingest.read_fpc(r.surface_path)))
        for r in records
    ]
    k = k or max(1, math.ceil(len(embeddings) / 100))
    clustering = cluster_mod.kmeans_cosine(embeddings, k, seed=seed)
    by_cluster: dict[int, list] = {}
    for e in embeddings:
        by_cluster.setdefault(clustering.assignments[e.object_id], []).append(e)
    result = {
        str(c): {
            "members": sorted(e.object_id for e in members),
            "medoid": cluster_mod.medoid(members),
        }
        for c, members in sorted(by_cluster.items())
    }
    with open(out, "w") as fh:
        json.dump(result, fh, indent=1, sort_keys=True)
    click.echo(f"wrote {len(result)} clusters to {out}")


@main.command("align")
@click.option("--reference", "reference_path", required=True,
              type=click.Path(exists=True))
@click.option("--instance", "instance_path", required=True,
              type=click.Path(exists=True))
@click.option("--alpha", type=float, default=0.2)
@click.option("--seed", type=int, default=0)
@click.option("--out", required=True, type=click.Path())
def align_cmd(reference_path, instance_path, alpha, seed, out):
    """Estimate the similarity transform aligning an instance to a reference."""
    reference = ingest.read_fpc(reference_path)
    instance = ingest.read_fpc(instance_path)
    config = AlignConfig(alpha=alpha)
    transform, score = align_mod.align(instance, reference, config, seed=seed)
    with open(out, "w") as fh:
        json.dump({**transform.to_dict(), "score": score}, fh, indent=1)
    click.echo(f"score {score:.6g} -> {out}")


@main.command("pose")
@click.option("--surface", "surface_path", required=True, type=click.Path(exists=True))
@click.option("--transform", "transform_path", required=True,
              type=click.Path(exists=True))
@click.option("--reference-pose", "ref_pose_path", required=True,
              type=click.Path(exists=True))
@click.option("--cameras", "camera_path", required=True, type=click.Path(exists=True))
@click.option("--quantile", type=float, default=0.01)
@click.option("--out", required=True, type=click.Path())
def pose_cmd(surface_path, transform_path, ref_pose_path, camera_path, quantile, out):
    """Fit the canonical box and propagate per-frame 9D poses."""
    from canon9d.canonical import make_canonical_pose

    surface = ingest.read_fpc(surface_path)
    with open(transform_path) as fh:
        transform = SimilarityTransform.from_dict(json.load(fh))
    with open(ref_pose_path) as fh:
        reference_pose = Pose9D.from_dict(json.load(fh))
    frames = ingest.load_cameras(camera_path)
    canonical = make_canonical_pose(surface, transform, reference_pose, quantile)
    poses = propagate(canonical, frames)
    payload = {
        "canonical": canonical.to_dict(),
        "frames": [
            {"frame_id": f.frame_id, **p.to_dict()}
            for f, p in zip(frames, poses)
        ],
    }
    with open(out, "w") as fh:
        json.dump(payload, fh, indent=1)
    click.echo(f"wrote {len(poses)} frame poses to {out}")


@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--symmetry", "symmetry_path", type=click.Path(exists=True),
              default=None, help="orientation rules JSON (default: bundled)")
@click.option("--out", required=True, type=click.Path())
def eval_cmd(pred_path, gt_path, symmetry_path, out):
    """Symmetry-aware evaluation of predicted vs ground-truth 9D poses.

    Pose files map sample id -> {rotation, translation, extents, category}.
    """
    with open(pred_path) as fh:
        pred_raw = json.load(fh)
    with open(gt_path) as fh:
        gt_raw = json.load(fh)
    inventory = None
    if symmetry_path:
        with open(symmetry_path) as fh:
            inventory = json.load(fh)
    table = rules_table_from_inventory(inventory)
    symmetry_map = compile_symmetry(table, inventory)
    pred = {k: Pose9D.from_dict(v) for k, v in pred_raw.items()}
    gt = {k: Pose9D.from_dict(v) for k, v in gt_raw.items()}
    category_map = {k: v.get("category", "") for k, v in gt_raw.items()}
    report = evaluate(pred, gt, symmetry_map, category_map)
    with open(out, "w") as fh:
        json.dump(report.to_dict(), fh, indent=1, sort_keys=True)
    click.echo(format_report(report))


@main.command("pipeline")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--state", "state_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--resume", is_flag=True, default=False)
@click.option("--auto-verify", is_flag=True, default=False)
@click.option("--seed", type=int, default=0)
@click.option("--k", type=int, default=None)
def pipeline_cmd(manifest, state_dir, config_path, resume, auto_verify, seed, k):
    """Run canonicalization iterations over a manifest."""
    if config_path:
        with open(config_path) as fh:
            config = PipelineConfig.from_dict(json.load(fh))
    else:
        config = PipelineConfig(seed=seed, k=k)
    if auto_verify:
        config.auto_verify = True
    if resume:
        state = PipelineState.load(state_dir)
    else:
        state = PipelineState(manifest, state_dir)
        state.save()
    pipeline = Pipeline(state, config)
    try:
        pipeline.run()
    except (NoVerifiedReference, AwaitingVerification) as exc:
        click.echo(f"paused: {exc}")
    click.echo(json.dumps(summarize(state), indent=1))


@main.command("serve")
@click.option("--state", "state_dir", required=True, type=click.Path(exists=True))
@click.option("--port", type=int, default=8009)
@click.option("--host", default="127.0.0.1")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
def serve_cmd(state_dir, port, host, config_path):
    """Serve the annotation/verification HTTP API."""
    from canon9d.service import serve

    config = None
    if config_path:
        with open(config_path) as fh:
            config = PipelineConfig.from_dict(json.load(fh))
    serve(state_dir, port, host, config)


if __name__ == "__main__":
    main()
