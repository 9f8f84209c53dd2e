"""Command-line entry point.

Every subcommand reads and writes inside the output directory (``--out``)::

    data/            synth corpus (raw CSV, grids, truth, manifest)
    voyages/         ingest: tagged 1-minute voyages
    fused/           fuse: voyages with weather attached
    split.json       calibrate: train/test voyage ids
    fuel_model.json  calibrate (+ normalization after score)
    scores.csv       score: per-voyage totals and Eff-Scores
    stats.csv        score: all vs cruising totals
    clusters.json    cluster
    models/          train <model> <cluster>
    optimized/       optimize <model> <cluster>
    reports/         evaluate, report

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from .clustering import CLUSTER_PERCENTS, load_clusters, percentile_clusters, save_clusters
from .config import ConfigError, PipelineConfig, load_config
from .core import RouteConfig, Voyage
from .efficiency import (
    RouteConditions,
    calibrate_fuel_model,
    eff_gain,
    eff_score,
    estimate_profile_efficiency,
    load_fuel_model,
    save_fuel_model,
    score_corpus,
    voyage_totals,
)
from .evaluate import IDENTITY, MODELS, fit_model, make_predictor, optimize_voyage, run_experiment, split_voyages
from .ingest import dataset_stats, read_voyages, write_voyages
from .models.hmm import load_hmm, save_hmm
from .models.knn import load_knn, save_knn
from .models.lstm import load_lstm, save_lstm
from .pipeline import build_voyages, fuse, load_raw_records
from .reports import emit_reports, load_profiles, read_records_csv, save_profiles
from .synth import generate_voyages, write_corpus
from .util import atomic_write_text

logger = logging.getLogger("voyopt")

MODEL_CHOICES = MODELS + (IDENTITY,)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="voyopt", description="Voyage speed-profile optimization toolkit.")
    p.add_argument("--config", help="JSON config file (see --print-default-config)")
    p.add_argument("--seed", type=int, help="global seed, overrides the config")
    p.add_argument("--out", help="output directory, overrides the config")
    p.add_argument("--jobs", type=int, default=1, help="worker processes for evaluate (default 1)")
    p.add_argument("--print-default-config", action="store_true", help="print the default config and exit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.add_parser("synth", help="generate a synthetic corpus into <out>/data")
    sub.add_parser("ingest", help="parse, resample and tag raw records into voyages")
    sub.add_parser("fuse", help="attach interpolated weather to the ingested voyages")
    sub.add_parser("calibrate", help="split voyages and fit the surrogate fuel model")
    sub.add_parser("score", help="voyage totals, Eff-Scores and the dataset statistics table")
    sub.add_parser("cluster", help="percentile clusters of the scored training voyages")
    for name, text in (("train", "fit one model on one cluster"),
                       ("optimize", "predict speed profiles for the test voyages")):
        sp = sub.add_parser(name, help=text)
        sp.add_argument("model", choices=MODEL_CHOICES)
        sp.add_argument("cluster", choices=tuple(CLUSTER_PERCENTS))
    sub.add_parser("evaluate", help="train and evaluate every model on every cluster, write reports")
    sub.add_parser("report", help="regenerate report files from <out>/reports/records.csv")
    return p


# -- helpers ------------------------------------------------------------------

def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise DataError(f"missing {path} (run `{hint}` first)")
    return path


def _resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        d = cfg.to_dict()
        d.update(overrides)
        cfg = PipelineConfig.from_dict(d)
    return cfg


def _data_manifest(cfg: PipelineConfig) -> dict:
    path = _require(cfg.data_path / "manifest.json", "synth")
    return json.loads(path.read_text())


def _grids_manifest(cfg: PipelineConfig) -> Path:
    if cfg.grids_manifest:
        return _require(Path(cfg.grids_manifest), "synth")
    return _require(cfg.data_path / _data_manifest(cfg)["grids_manifest"], "synth")


def _ingest(cfg: PipelineConfig):
    manifest = _data_manifest(cfg)
    route = cfg.route_config()
    if route is None:
        route = RouteConfig.from_dict(manifest["route"])
    paths = [_require(cfg.data_path / p, "synth") for p in manifest["records"]]
    records = load_raw_records(paths, cfg.schema)
    return build_voyages(records, route, cfg.auto_cruising_threshold)


def _fused(cfg: PipelineConfig) -> List[Voyage]:
    """Fused voyages from ``fused/`` if present, else built from the data dir in memory."""
    fused_dir = cfg.out_path / "fused"
    if (fused_dir / "index.json").exists():
        return read_voyages(fused_dir)
    voyages, _ = _ingest(cfg)
    return fuse(voyages, _grids_manifest(cfg))


def _split(cfg: PipelineConfig, voyages):
    exp = cfg.experiment_config()
    return split_voyages(voyages, exp.split, exp.seed)


def _coeffs(cfg: PipelineConfig):
    fixed = cfg.fixed_coeffs()
    if fixed is not None:
        return fixed
    return load_fuel_model(_require(cfg.out_path / "fuel_model.json", "calibrate"))[0]


def _cluster_voyages(cfg: PipelineConfig, cluster: str) -> List[Voyage]:
    train, _ = _split(cfg, _fused(cfg))
    scored, _ = score_corpus(train)
    cs = load_clusters(_require(cfg.out_path / "clusters.json", "cluster"))
    ids = set(cs.get(cluster))
    return [v for v in scored if v.id in ids]


def _model_path(cfg: PipelineConfig, model: str, cluster: str) -> Path:
    safe = model.replace("-", "").lower()
    return cfg.out_path / "models" / f"{safe}_{cluster}.json"


# -- subcommands ----------------------------------------------------------------

def cmd_synth(cfg: PipelineConfig) -> None:
    scfg = cfg.synth_config()
    corpus = generate_voyages(scfg)
    path = write_corpus(corpus, cfg.data_path)
    logger.info("wrote %d voyages' raw records (%d rows) to %s", scfg.n_voyages, len(corpus.records), path.parent)


def cmd_ingest(cfg: PipelineConfig) -> None:
    voyages, route = _ingest(cfg)
    write_voyages(voyages, cfg.out_path / "voyages")
    atomic_write_text(cfg.out_path / "voyages" / "route.json", json.dumps(route.to_dict(), indent=2) + "\n")


def cmd_fuse(cfg: PipelineConfig) -> None:
    voyages = read_voyages(_require(cfg.out_path / "voyages", "ingest"))
    write_voyages(fuse(voyages, _grids_manifest(cfg)), cfg.out_path / "fused")


def cmd_calibrate(cfg: PipelineConfig) -> None:
    voyages = read_voyages(_require(cfg.out_path / "fused", "fuse"))
    train, test = _split(cfg, voyages)
    atomic_write_text(cfg.out_path / "split.json",
                      json.dumps({"train": [v.id for v in train], "test": [v.id for v in test]}, indent=1) + "\n")
    c = cfg.fixed_coeffs() or calibrate_fuel_model(train)
    save_fuel_model(cfg.out_path / "fuel_model.json", c)
    logger.info("fuel model: c0=%.4g c1=%.4g c2=%.4g c3=%.4g (relative RMSE %.3g)", c.c0, c.c1, c.c2, c.c3, c.rel_rmse)


def cmd_score(cfg: PipelineConfig) -> None:
    voyages = read_voyages(_require(cfg.out_path / "fused", "fuse"))
    coeffs = _coeffs(cfg)
    train, test = _split(cfg, voyages)
    scored_train, norm = score_corpus(train)
    save_fuel_model(cfg.out_path / "fuel_model.json", coeffs, norm)
    # test voyages are scored against the frozen training maxima
    rows = []
    for v in scored_train:
        t = v.totals
        rows.append((v.id, "train", t.fuel_total, t.time_total, t.distance_total, v.eff_score))
    for v in test:
        t = voyage_totals(v)
        rows.append((v.id, "test", t.fuel_total, t.time_total, t.distance_total,
                     eff_score(t.fuel_total / norm.fuel_max, t.time_total / norm.time_max)))
    rows.sort()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("voyage_id", "split", "fuel_l", "time_h", "distance_km", "eff_score"))
    w.writerows([(r[0], r[1]) + tuple(format(x, ".10g") for x in r[2:]) for r in rows])
    atomic_write_text(cfg.out_path / "scores.csv", buf.getvalue())
    stats = dataset_stats(voyages).to_csv()
    atomic_write_text(cfg.out_path / "stats.csv", stats)
    sys.stdout.write(stats)


def cmd_cluster(cfg: PipelineConfig) -> None:
    train, _ = _split(cfg, _fused(cfg))
    scored, _ = score_corpus(train)
    cs = percentile_clusters(scored)
    save_clusters(cfg.out_path / "clusters.json", cs)
    for name, ids in cs.items():
        logger.info("%s: %d voyages", name, len(ids))


def cmd_train(cfg: PipelineConfig, model: str, cluster: str) -> None:
    exp = cfg.experiment_config()
    voyages = _cluster_voyages(cfg, cluster)
    artifact = fit_model(model, voyages, exp)
    path = _model_path(cfg, model, cluster)
    if model == "KNN":
        save_knn(path, artifact)
    elif model == "HMM":
        save_hmm(path, *artifact)
    elif model == "LSTM":
        save_lstm(path, artifact)
    else:  # 1NN-DTW keeps the cluster itself; Identity has nothing to learn
        ids = [v.id for v in artifact] if artifact else []
        atomic_write_text(path, json.dumps({"model": model, "cluster": cluster, "voyages": ids}, indent=1) + "\n")
    logger.info("trained %s on %s (%d voyages) -> %s", model, cluster, len(voyages), path)


def _load_artifact(cfg: PipelineConfig, model: str, cluster: str, voyages: Sequence[Voyage]):
    path = _require(_model_path(cfg, model, cluster), f"train {model} {cluster}")
    if model == "KNN":
        return load_knn(path)
    if model == "HMM":
        return load_hmm(path)
    if model == "LSTM":
        return load_lstm(path)
    ids = json.loads(path.read_text())["voyages"]
    by_id = {v.id: v for v in voyages}
    return [by_id[i] for i in ids] if model != IDENTITY else None


def cmd_optimize(cfg: PipelineConfig, model: str, cluster: str) -> None:
    exp = cfg.experiment_config()
    voyages = _fused(cfg)
    train, test = _split(cfg, voyages)
    coeffs = _coeffs(cfg)
    scored, norm = score_corpus(train)
    artifact = _load_artifact(cfg, model, cluster, scored)
    predict = make_predictor(model, artifact, exp)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("voyage_id", "position", "sog_measured", "sog_predicted"))
    gains = []
    for v in test:
        cond = RouteConditions.from_voyage(v)
        meas = estimate_profile_efficiency(v.column("sog"), cond, coeffs, norm)
        sog, _ = optimize_voyage(v, predict, cond, coeffs, meas.time * (1 + exp.slack), exp)
        pred = estimate_profile_efficiency(sog, cond, coeffs, norm)
        if meas.eff_score > 0:
            gains.append(eff_gain(meas.eff_score, pred.eff_score))
        for x, a, b in zip(v.positions, v.column("sog"), sog):
            w.writerow((v.id, format(x, ".10g"), format(a, ".10g"), format(b, ".10g")))
    safe = model.replace("-", "").lower()
    atomic_write_text(cfg.out_path / "optimized" / f"{safe}_{cluster}.csv", buf.getvalue())
    improved = sum(g > 0 for g in gains)
    mean = sum(gains) / len(gains) if gains else float("nan")
    sys.stdout.write(f"{model}\t{cluster}\tmean_gain_pct={mean:.4f}\timproved={improved}/{len(test)}\n")


def cmd_evaluate(cfg: PipelineConfig, jobs: int) -> None:
    exp = cfg.experiment_config()
    voyages = _fused(cfg)
    result = run_experiment(voyages, exp, coeffs=cfg.fixed_coeffs(), n_jobs=jobs)
    out = cfg.out_path / "reports"
    emit_reports(result.records, out, result.profiles, exp.plot_cluster)
    save_profiles(result.profiles, out / "profiles.json")
    summary = {
        "train_ids": result.train_ids, "test_ids": result.test_ids,
        "clusters": json.loads(result.clusters.to_json()),
        "coefficients": [result.coeffs.c0, result.coeffs.c1, result.coeffs.c2, result.coeffs.c3],
        "normalization": {"fuel_max": result.norm.fuel_max, "time_max": result.norm.time_max},
        "failures": [list(f) for f in result.failures], "partial": result.partial,
        "plot_cluster": exp.plot_cluster,
    }
    atomic_write_text(out / "experiment.json", json.dumps(summary, indent=1) + "\n")
    if result.partial:
        logger.warning("%d (cluster, model) cells failed; tables are partial", len(result.failures))


def cmd_report(cfg: PipelineConfig) -> None:
    out = cfg.out_path / "reports"
    records = read_records_csv(_require(out / "records.csv", "evaluate"))
    profiles = load_profiles(out / "profiles.json") if (out / "profiles.json").exists() else {}
    plot_cluster = cfg.experiment_config().plot_cluster
    emit_reports(records, out, profiles, plot_cluster)


# -- dispatch -------------------------------------------------------------------

def _setup_logging(verbose: bool) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("voyopt")
    root.handlers[:] = [handler]
    root.setLevel(logging.DEBUG if verbose else logging.INFO)
    root.propagate = False


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.print_default_config and args.command is None:
            raise UsageError(parser.format_usage() + "voyopt: error: a subcommand is required")
        if args.jobs < 1:
            raise UsageError(parser.format_usage() + "voyopt: error: --jobs must be >= 1")
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return 1
    if args.print_default_config:
        sys.stdout.write(PipelineConfig().to_json())
        return 0
    _setup_logging(args.verbose)
    try:
        cfg = _resolve_config(args)
        cmd = args.command
        if cmd in ("train", "optimize"):
            globals()[f"cmd_{cmd}"](cfg, args.model, args.cluster)
        elif cmd == "evaluate":
            cmd_evaluate(cfg, args.jobs)
        else:
            globals()[f"cmd_{cmd}"](cfg)
    except (DataError, ConfigError, ValueError, KeyError, OSError, RuntimeError, ArithmeticError) as exc:
        sys.stderr.write(f"voyopt: error: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
