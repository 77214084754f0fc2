"""Pipeline stages over on-disk artifacts; each stage is usable on its own."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import embed, metrics, mine, plots, records, synth
from .config import PipelineConfig
from .pretrain.train import TrainConfig, TrainData, train_loop

log = logging.getLogger(__name__)

STAGES = ("synth", "ingest", "fit-pca", "embed", "mine", "train", "eval")


def stage_seed(seed: int, stage: str) -> int:
    """Independent per-stage seed derived from the global one."""
    ss = np.random.SeedSequence([seed, STAGES.index(stage)])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def run_synth(out_dir, videos=50, frames=200, coherence=0.9, seed=0, size=64, stroke=1.5,
              noise=0.0, threads=1) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    corpus = synth.generate_corpus(videos, frames, coherence, seed=seed, threads=threads,
                                   size=size, stroke=stroke, noise_sigma=noise)
    paths = {
        "records": out / "records.jsonl",
        "images": out / "images.simg",
        "joints3d": out / "joints3d.npy",
    }
    records.write_records(corpus.records, paths["records"])
    synth.save_images(corpus.images, paths["images"])
    np.save(paths["joints3d"], corpus.joints3d)
    log.info("synth: %d records over %d videos", len(corpus.records), videos)
    return paths


def run_ingest(records_path, out_path, seed=0, images_path=None, out_images=None,
               balance=True, strict=False, min_score=None) -> dict:
    rs = records.read_records(records_path, strict=strict, min_score=min_score)
    for issue in rs.errors:
        log.warning("%s line %d: %s", records_path, issue.line, issue.message)
    if min_score is not None and images_path is not None:
        # images align with the unfiltered file, so re-derive the kept rows
        full = records.read_records(records_path, strict=strict)
        keep_keys = {r.key for r in rs.records}
        src_rows = np.array([i for i, r in enumerate(full.records) if r.key in keep_keys], dtype=np.int64)
    else:
        src_rows = np.arange(len(rs), dtype=np.int64)
    if balance:
        keep, flip = records.balance_selection(rs, seed)
        out = records.balance_hands(rs, seed)
    else:
        keep = np.arange(len(rs), dtype=np.int64)
        flip = np.zeros(len(rs), dtype=bool)
        out = rs
    records.write_records(out, out_path)
    report = {"input": len(rs) + len(rs.errors), "invalid": len(rs.errors),
              "output": len(out), "videos": len(out.videos)}
    if images_path is not None:
        if out_images is None:
            raise ValueError("--images needs --out-images")
        imgs = synth.load_images(images_path)
        sel = imgs[src_rows[keep]]
        sel[flip] = sel[flip][:, :, ::-1]
        synth.save_images(sel, out_images)
    log.info("ingest: %s", report)
    return report


def run_fit_pca(records_path, out_path, dim=14, center=True, subsample=None, seed=0, threads=1):
    rs = records.read_records(records_path)
    model = embed.fit_pca(embed.flatten_set(rs), dim, center=center, subsample=subsample,
                          seed=seed, threads=threads)
    model.save(out_path)
    return model


def run_embed(records_path, model_path, out_path, threads=1):
    rs = records.read_records(records_path)
    model = embed.PcaModel.load(model_path)
    store = embed.embed_records(model, rs, threads=threads)
    embed.save_cache(store, out_path)
    return store


def parse_query(text: str) -> tuple[str, int]:
    vid, sep, frame = text.rpartition(":")
    if not sep or not vid:
        raise ValueError(f"query must look like VIDEO:FRAME, got {text!r}")
    return vid, int(frame)


def find_row(store: embed.EmbeddingStore, video_id: str, frame_id: int) -> int:
    for i, (v, f) in enumerate(zip(store.video_ids, store.frame_ids.tolist())):
        if v == video_id and f == frame_id:
            return i
    raise ValueError(f"no embedding for {video_id}:{frame_id}")


def run_mine(embeddings_path, out_path, topk=1, query=None, threads=1):
    store = embed.load_cache(embeddings_path)
    index = mine.build_index(store)
    if query is not None:
        row = find_row(store, *parse_query(query))
        mine.write_topk([(row, mine.topk(index, row, topk))], store, out_path)
        return None
    if topk == 1:
        table = mine.mine_all(index, threads=threads)
        mine.write_pairs(table, store, out_path)
        return table
    ids, dists = index.search(np.arange(len(store)), topk, threads=threads)
    results = [(q, mine.TopK(i, d, len(i) < topk)) for q, (i, d) in enumerate(zip(ids, dists))]
    mine.write_topk(results, store, out_path)
    return None


def run_topk(embeddings_path, query, k, stream):
    store = embed.load_cache(embeddings_path)
    index = mine.build_index(store)
    row = find_row(store, *parse_query(query))
    res = mine.topk(index, row, k)
    if res.short:
        log.warning("only %d cross-video candidates for %s", len(res), query)
    mine.write_topk([(row, res)], store, stream)
    return res


def load_train_data(records_path, images_path, embeddings_path, pairs_path, topk_positives=1,
                    threads=1) -> TrainData:
    rs = records.read_records(records_path)
    images = synth.load_images(images_path)
    if images.shape[0] != len(rs):
        raise ValueError(f"{images.shape[0]} images for {len(rs)} records")
    store = embed.load_cache(embeddings_path)
    if len(store) != len(rs):
        raise ValueError("embedding cache does not align with the records")
    top1 = mine.read_pairs(pairs_path, store)
    if len(top1) != len(rs) or not np.array_equal(np.sort(top1.query), np.arange(len(rs))):
        raise ValueError("pair table does not cover the corpus")
    top1_pos = top1.positive_of(len(rs))
    if topk_positives == 1:
        pos = top1_pos
    else:
        pos = mine.mine_ranked(mine.build_index(store), topk_positives, threads=threads).positive
    return TrainData(images, embed.flatten_set(rs), pos, top1_pos)


def run_train(records_path, images_path, model_path, embeddings_path, pairs_path, out_dir,
              cfg: TrainConfig, threads=1, figures=True) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_train_data(records_path, images_path, embeddings_path, pairs_path,
                           cfg.topk_positives, threads)
    pca = embed.PcaModel.load(model_path)
    # single BLAS thread: keeps every reduction order, hence the trajectory, fixed
    with threadpool_limits(1), open(out / "metrics.jsonl", "w", encoding="utf-8") as fh:
        model, steps, summary = train_loop(data, cfg, pca, log_fh=fh)
    model.save(out / "encoder.npz")
    summary = {"steps": cfg.steps, **summary,
               "final_loss": steps[-1]["loss"] if steps else None}
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    if figures and steps:
        plots.training_curves(steps, out / "training_curves.png")
    return summary


def load_poses(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".npy"):
        return np.load(path)
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line)["joints"])
    return np.array(rows, dtype=np.float64)


def run_eval_pose(pred_path, gt_path, root_relative=False, figure=None) -> dict:
    pred, gt = load_poses(pred_path), load_poses(gt_path)
    report = {
        "count": int(len(pred)),
        "mpjpe_mm": metrics.mpjpe(pred, gt, root_relative),
        "pck_auc": metrics.pck_auc(pred, gt, root_relative=root_relative),
        "root_relative": root_relative,
    }
    if figure:
        th, pck = metrics.pck_curve(pred, gt, root_relative=root_relative)
        plots.pck_curve(th, pck, figure, report["pck_auc"])
    return report


def run_eval_mining(records_path, embeddings_path, pairs_path, seed=0, ranks=(1, 2, 5, 10, 50),
                    figure=None, threads=1) -> dict:
    rs = records.read_records(records_path)
    store = embed.load_cache(embeddings_path)
    table = mine.read_pairs(pairs_path, store)
    report = metrics.mining_quality(rs, table.query, table.positive, seed=seed)
    index = mine.build_index(store)
    ids, _ = index.search(np.arange(len(store)), max(ranks), threads=threads)
    x = embed.flatten_set(rs)
    profile = metrics.rank_distance_profile(x, ids, ranks)
    report["rank_profile"] = {str(k): v for k, v in profile.items()}
    if figure:
        plots.rank_profile(profile, figure, report["random_mean"])
    return report


def write_json(obj, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def run_all(cfg: PipelineConfig, out_dir, threads=1) -> dict:
    """synth -> ingest -> fit-pca -> embed -> mine -> train -> eval, all under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = cfg.synth
    raw = run_synth(out / "synth", s.videos, s.frames, s.coherence, stage_seed(cfg.seed, "synth"),
                    s.size, s.stroke, s.noise, threads)
    rec_path, img_path = out / "records.jsonl", out / "images.simg"
    run_ingest(raw["records"], rec_path, stage_seed(cfg.seed, "ingest"), raw["images"], img_path,
               cfg.ingest.balance, cfg.ingest.strict, cfg.ingest.min_score)
    pca_path = out / "pca.json"
    run_fit_pca(rec_path, pca_path, cfg.pca.dim, cfg.pca.center, cfg.pca.subsample,
                stage_seed(cfg.seed, "fit-pca"), threads)
    emb_path = out / "embeddings.simh"
    run_embed(rec_path, pca_path, emb_path, threads)
    pairs_path = out / "pairs.jsonl"
    run_mine(emb_path, pairs_path, 1, None, threads)
    tcfg = TrainConfig.from_dict({**cfg.train.to_dict(), "seed": stage_seed(cfg.seed, "train")})
    summary = run_train(rec_path, img_path, pca_path, emb_path, pairs_path, out / "train", tcfg, threads)
    report = run_eval_mining(rec_path, emb_path, pairs_path, stage_seed(cfg.seed, "eval"),
                             tuple(cfg.mine.profile_ranks), out / "rank_profile.png", threads)
    write_json(report, out / "mining_report.json")
    write_json(cfg.to_dict(), out / "config.resolved.json")

    manifest = {}
    for root, _, files in os.walk(out):
        for name in files:
            p = Path(root) / name
            if p.name == "manifest.json":
                continue
            manifest[str(p.relative_to(out))] = sha256(p)
    manifest = dict(sorted(manifest.items()))
    write_json(manifest, out / "manifest.json")
    return {"train": summary, "mining": report, "manifest": manifest}
