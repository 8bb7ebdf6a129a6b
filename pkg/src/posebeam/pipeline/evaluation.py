"""
Results tables: one row per (enhancer, estimator) over a manifest split, the
test-time adaptation conditions, and the buffer-size search.
"""
import concurrent.futures
import logging
import math
import pathlib
from dataclasses import dataclass, field

import numpy as np

from ..estimation.classical import BUFFER_GRID
from ..metrics.si_sdr import MetricReport
from ..models.config import PipelineConfig, num_threads
from ..models.scene import Manifest
from ..simulation.scene import SceneBundle
from ..utils.export import export_to_csv, save_csv, save_json
from ..utils.models import WeightsNotAvailableError
from .pipeline import REFERENCE_ROW, PipelineModels, kill_microphone, load_models, reference_si_sdr, run_pipeline

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("condition", "enhancer", "estimator", "num_scenes", "si_sdr_db", "config_hash")
SCENE_COLUMNS = ("condition", "scene_id", "enhancer", "estimator", "si_sdr_db", "config_hash")
MISSING_COLUMNS = ("condition", "enhancer", "estimator", "reason")

NO_MODIFICATION = "no-modification"


class WeightsModifiedError(RuntimeError):
    def __init__(self, stage: str):
        self.stage = stage
        super().__init__(f"{stage} weights changed during evaluation")


@dataclass
class ResultsTable:
    """Summary rows, per-scene rows and the rows that could not be produced."""
    rows: list[dict] = field(default_factory=list)
    scene_rows: list[dict] = field(default_factory=list)
    missing: list[dict] = field(default_factory=list)

    def add_report(self, report: MetricReport, condition: str = NO_MODIFICATION) -> None:
        self.rows.append(dict(report.summary_row(), condition=condition))
        self.scene_rows.extend(dict(row, condition=condition) for row in report.scene_rows())

    def add_missing(self, cfg: PipelineConfig, reason: str, condition: str = NO_MODIFICATION) -> None:
        logger.warning(f"No row for {cfg.enhancer}/{cfg.estimator} ({condition}): {reason}")
        self.missing.append({"condition": condition, "enhancer": cfg.enhancer, "estimator": cfg.estimator,
                             "reason": reason})

    def extend(self, other: "ResultsTable") -> None:
        self.rows.extend(other.rows)
        self.scene_rows.extend(other.scene_rows)
        self.missing.extend(other.missing)

    def row(self, enhancer: str, estimator: str, condition: str = NO_MODIFICATION) -> dict | None:
        for row in self.rows:
            if (row["enhancer"], row["estimator"], row["condition"]) == (enhancer, estimator, condition):
                return row
        return None

    def to_dict(self) -> dict:
        return {"rows": self.rows, "scenes": self.scene_rows, "missing": self.missing}

    def to_csv(self) -> str:
        return export_to_csv(self.rows, SUMMARY_COLUMNS)

    def save(self, out_dir, stem: str = "results") -> None:
        """Writes <stem>.csv, <stem>-scenes.csv, <stem>-missing.csv and <stem>.json."""
        out_path = pathlib.Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        save_csv(self.rows, SUMMARY_COLUMNS, out_path / f"{stem}.csv")
        save_csv(self.scene_rows, SCENE_COLUMNS, out_path / f"{stem}-scenes.csv")
        save_csv(self.missing, MISSING_COLUMNS, out_path / f"{stem}-missing.csv")
        save_json(self.to_dict(), out_path / f"{stem}.json")


def load_split(manifest: Manifest, split: str, max_scenes: int | None = None) -> list[SceneBundle]:
    records = manifest.split(split)[:max_scenes]
    logger.info(f"Loading {len(records)} '{split}' scenes from {manifest.path}")
    return [record.load_bundle() for record in records]


def _map_scenes(fn, scenes: list[SceneBundle], max_workers: int | None) -> list:
    if len(scenes) <= 1:
        return [fn(scene) for scene in scenes]
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_workers or num_threads()) as pool:
        return list(pool.map(fn, scenes))


def _check_digests(before: dict[str, str], models: PipelineModels) -> None:
    for stage, digest in models.digests().items():
        if before.get(stage) != digest:
            raise WeightsModifiedError(stage)


def evaluate_config(scenes: list[SceneBundle], cfg: PipelineConfig, models: PipelineModels | None = None, *,
                    max_workers: int | None = None) -> MetricReport:
    """Runs one pipeline over scenes; never modifies the networks it is given."""
    if models is None and scenes and (cfg.is_learned or cfg.uses_lstm_enhancer):
        models = load_models(cfg, scenes[0].num_mics)
    models = models or PipelineModels()
    before = models.digests()
    results = _map_scenes(lambda scene: run_pipeline(scene, cfg, models).report, scenes, max_workers)
    _check_digests(before, models)

    report = MetricReport(cfg.enhancer, cfg.estimator, config_hash=cfg.config_hash())
    for scene_report in results:
        report = report.merge(scene_report)
    logger.info(f"{cfg.enhancer}/{cfg.estimator}: {report.mean_db:.2f} dB over {report.num_scenes} scenes")
    return report


def reference_report(scenes: list[SceneBundle], cfg: PipelineConfig) -> MetricReport:
    report = MetricReport(*REFERENCE_ROW, config_hash=cfg.config_hash())
    for scene in scenes:
        report.add(scene.scene_id, reference_si_sdr(scene))
    return report


def evaluate(manifest: Manifest, configs: list[PipelineConfig], *, split: str = "test",
             max_scenes: int | None = None, include_reference: bool = True,
             max_workers: int | None = None) -> ResultsTable:
    """
    One row per configuration with the mean SI-SDR over the split, plus the
    unprocessed reference-microphone row. Configurations whose weights are
    missing are listed in ``missing``; the other rows are still produced.
    """
    scenes = load_split(manifest, split, max_scenes)
    table = ResultsTable()
    if not scenes:
        logger.warning(f"Split '{split}' is empty; writing a header-only table")
        return table
    if include_reference:
        table.add_report(reference_report(scenes, configs[0] if configs else PipelineConfig()))
    for cfg in configs:
        try:
            table.add_report(evaluate_config(scenes, cfg, max_workers=max_workers))
        except WeightsNotAvailableError as e:
            table.add_missing(cfg, str(e))
    return table


def adaptation_conditions(cfg: PipelineConfig) -> list[tuple[str, PipelineConfig, bool]]:
    """(name, modified config, dead microphone) for every test-time modification."""
    window, hop = cfg.window_len, cfg.hop
    return [
        (NO_MODIFICATION, cfg, False),
        ("double-window", cfg.with_updates(window_len=2 * window), False),
        ("halve-hop", cfg.with_updates(hop=hop // 2), False),
        ("double-window-hop", cfg.with_updates(window_len=2 * window, hop=2 * hop), False),
        ("halve-window-hop", cfg.with_updates(window_len=window // 2, hop=hop // 2), False),
        ("enhancer-swap", cfg.with_updates(enhancer="anechoic_irm"), False),
        ("oracle-separation", cfg.with_updates(enhancer="oracle"), False),
        ("dead-microphone", cfg, True),
    ]


def adapt_experiments(cfg: PipelineConfig, manifest: Manifest, *, split: str = "test", seed: int = 0,
                      max_scenes: int | None = None, max_workers: int | None = None) -> ResultsTable:
    """
    Runs the trained pipeline under each modification without retraining.

    The networks are loaded once; the estimator weights are shared across STFT
    sizes. The LSTM enhancer depends on the number of bins and cannot run at a
    different window length; those rows are reported missing.
    """
    scenes = load_split(manifest, split, max_scenes)
    table = ResultsTable()
    if not scenes:
        return table
    models = load_models(cfg, scenes[0].num_mics)
    before = models.digests()

    for condition, modified, dead_mic in adaptation_conditions(cfg):
        if modified.uses_lstm_enhancer and modified.window_len != cfg.window_len:
            table.add_missing(modified, "the mask network is tied to the number of frequency bins", condition)
            continue
        run_models = models if modified.uses_lstm_enhancer else PipelineModels(estimator=models.estimator)
        condition_scenes = scenes
        if dead_mic:
            condition_scenes = [kill_microphone(scene, np.random.default_rng([seed, index]))[0]
                                for index, scene in enumerate(scenes)]
        try:
            report = evaluate_config(condition_scenes, modified, run_models, max_workers=max_workers)
        except ValueError as e:
            table.add_missing(modified, str(e), condition)
            continue
        table.add_report(report, condition)

    _check_digests(before, models)
    return table


def tune_buffer(manifest: Manifest, cfg: PipelineConfig, *, grid=BUFFER_GRID, split: str = "val",
                max_scenes: int | None = None, max_workers: int | None = None) -> tuple[int, ResultsTable]:
    """Grid search of the buffered estimator's window; returns the best B and one row per candidate."""
    scenes = load_split(manifest, split, max_scenes)
    table = ResultsTable()
    best_frames, best_value = grid[0], -math.inf
    for frames in grid:
        report = evaluate_config(scenes, cfg.with_updates(estimator="buffer", buffer_frames=frames),
                                 max_workers=max_workers)
        table.add_report(report, f"buffer-{frames}")
        if report.mean_db > best_value:
            best_frames, best_value = frames, report.mean_db
    logger.info(f"Best buffer: {best_frames} frames ({best_value:.2f} dB)")
    return best_frames, table
