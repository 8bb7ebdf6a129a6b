import argparse
import dataclasses
import logging
import os
import pathlib
import signal
import threading

import torch

from .audio.wav_io import read_wav, write_wav
from .autodiff.optim import NumericFailureError
from .models.config import ENV_LOG_LEVEL, ConfigError, RunConfig, load_config, num_threads
from .models.scene import Manifest
from .pipeline.benchmark import benchmark
from .pipeline.evaluation import adapt_experiments, evaluate, tune_buffer
from .pipeline.pipeline import enhance_waveform, load_models
from .pipeline.trainer import train
from .simulation.dataset import generate_dataset
from .utils.export import save_json

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

DESK_SCALE_SCENES = 300


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="posebeam",
                                     description="Learned online covariance estimation for MVDR beamforming.")
    parser.add_argument("--config", help="JSON configuration file (pipeline/train/simulation sections)")
    parser.add_argument("--log-level", default=None, help=f"logging level (default INFO or ${ENV_LOG_LEVEL})")
    commands = parser.add_subparsers(dest="command", required=True)
    # --config is also accepted after the subcommand
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help=argparse.SUPPRESS)

    simulate = commands.add_parser("simulate", parents=[common], help="render a scene dataset and its manifest")
    simulate.add_argument("--out", required=True, help="output directory")
    simulate.add_argument("--scenes", dest="n_scenes", type=int, default=DESK_SCALE_SCENES, help="number of scenes")
    simulate.add_argument("--seed", type=int, default=0, help="split seed")
    simulate.add_argument("--synthetic", action="store_true", help="use generated sources instead of corpora")
    simulate.add_argument("--static", action="store_true", help="keep the array still in every scene")

    train_cmd = commands.add_parser("train", parents=[common], help="train the estimator and/or the mask enhancer")
    train_cmd.add_argument("--manifest", help="manifest with the train split (default: pipeline.manifest)")
    train_cmd.add_argument("--val-manifest", help="manifest with the val split (default: --manifest)")
    train_cmd.add_argument("--out", required=True, help="training directory")
    train_cmd.add_argument("--resume", action="store_true", help="continue from the directory's checkpoint")

    eval_cmd = commands.add_parser("eval", parents=[common], help="results table over a manifest split")
    eval_cmd.add_argument("--manifest")
    eval_cmd.add_argument("--rows", nargs="*", default=[],
                          help="enhancer:estimator pairs overriding the configured pipeline, e.g. oracle:fixed")
    eval_cmd.add_argument("--split", default="test")
    eval_cmd.add_argument("--max-scenes", type=int)
    eval_cmd.add_argument("--out", required=True, help="directory for results.csv / results.json")

    adapt = commands.add_parser("adapt", parents=[common], help="test-time modifications of a trained pipeline")
    adapt.add_argument("--manifest")
    adapt.add_argument("--split", default="test")
    adapt.add_argument("--max-scenes", type=int)
    adapt.add_argument("--seed", type=int, default=0, help="dead-microphone seed")
    adapt.add_argument("--out", required=True)

    tune = commands.add_parser("tune-buffer", parents=[common], help="grid search of the buffered estimator's window")
    tune.add_argument("--manifest")
    tune.add_argument("--split", default="val")
    tune.add_argument("--max-scenes", type=int)
    tune.add_argument("--out", required=True)

    bench = commands.add_parser("bench", parents=[common], help="real-time factor and FLOP count")
    bench.add_argument("--mics", type=int, default=6)
    bench.add_argument("--duration", type=float, default=5.0, help="seconds of audio to process")
    bench.add_argument("--out", help="optional JSON report path")

    enhance_cmd = commands.add_parser("enhance", parents=[common], help="enhance a multichannel WAV file")
    enhance_cmd.add_argument("input")
    enhance_cmd.add_argument("output")
    return parser


class PosebeamApplication:
    """Command-line entry point; ``run`` returns the process exit status."""

    def __init__(self):
        self.parser = _build_parser()
        self.cancel_event = threading.Event()

    def run(self, argv: list[str]) -> int:
        args = self.parser.parse_args(argv[1:])
        level = (args.log_level or os.environ.get(ENV_LOG_LEVEL) or "INFO").upper()
        logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

        try:
            config = load_config(args.config)
            torch.set_num_threads(num_threads())
            handler = getattr(self, f"do_{args.command.replace('-', '_')}")
            handler(args, config)
        except ConfigError as e:
            logger.error(str(e))
            return EXIT_CONFIG
        except NumericFailureError as e:
            logger.error(str(e))
            return EXIT_NUMERIC
        except (OSError, RuntimeError, ValueError) as e:
            logger.error(f"{args.command} failed: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
            return EXIT_ERROR
        return EXIT_OK

    @staticmethod
    def _manifest(path, config: RunConfig) -> Manifest:
        path = path or config.pipeline.manifest
        if not path:
            raise ConfigError("pipeline.manifest", "no manifest given (use --manifest or pipeline.manifest)")
        return Manifest.load_from_json(path)

    def do_simulate(self, args, config: RunConfig) -> None:
        simulation = config.simulation
        if args.static:
            simulation = dataclasses.replace(simulation, dynamic=False)
        manifest = generate_dataset(simulation, args.out, args.n_scenes, args.seed, synthetic=args.synthetic)
        logger.info(f"Wrote {len(manifest.records)} scenes; manifest at {manifest.path}")

    def do_train(self, args, config: RunConfig) -> None:
        train_manifest = self._manifest(args.manifest, config)
        val_manifest = Manifest.load_from_json(args.val_manifest) if args.val_manifest else train_manifest
        previous = signal.signal(signal.SIGINT, lambda *_: self.cancel_event.set())
        try:
            result = train(train_manifest, val_manifest, config.train, config.pipeline, args.out,
                           resume=args.resume, cancel_event=self.cancel_event)
        finally:
            signal.signal(signal.SIGINT, previous)
        logger.info(f"Training {result.stopped}: best val {result.best_val_si_sdr_db:.2f} dB "
                    f"at epoch {result.best_epoch}; log at {result.log_path}")

    def _pipeline_rows(self, args, config: RunConfig):
        if not args.rows:
            return [config.pipeline]
        rows = []
        for spec in args.rows:
            enhancer, sep, estimator = spec.partition(":")
            if not sep:
                raise ConfigError("--rows", f"expected enhancer:estimator, got {spec!r}")
            rows.append(config.pipeline.with_updates(enhancer=enhancer, estimator=estimator))
        return rows

    def do_eval(self, args, config: RunConfig) -> None:
        table = evaluate(self._manifest(args.manifest, config), self._pipeline_rows(args, config),
                         split=args.split, max_scenes=args.max_scenes)
        table.save(args.out)
        print(table.to_csv(), end="")

    def do_adapt(self, args, config: RunConfig) -> None:
        table = adapt_experiments(config.pipeline, self._manifest(args.manifest, config), split=args.split,
                                  seed=args.seed, max_scenes=args.max_scenes)
        table.save(args.out, stem="adapt")
        print(table.to_csv(), end="")

    def do_tune_buffer(self, args, config: RunConfig) -> None:
        best, table = tune_buffer(self._manifest(args.manifest, config), config.pipeline, split=args.split,
                                  max_scenes=args.max_scenes)
        table.save(args.out, stem="buffer-search")
        print(f"best buffer-frames: {best}")

    def do_bench(self, args, config: RunConfig) -> None:
        report = benchmark(config.pipeline, num_mics=args.mics, duration_s=args.duration,
                           sample_rate_hz=config.simulation.sample_rate_hz, seed=config.pipeline.seed)
        if args.out:
            save_json(report.to_dict(), args.out)
        for key, value in report.to_dict().items():
            print(f"{key}: {value}")

    def do_enhance(self, args, config: RunConfig) -> None:
        mixture = read_wav(args.input, expected_rate=config.simulation.sample_rate_hz)
        models = load_models(config.pipeline, mixture.num_channels)
        enhanced, diagnostics = enhance_waveform(mixture, config.pipeline, models)
        write_wav(pathlib.Path(args.output), enhanced)
        logger.info(f"Wrote {args.output} ({enhanced.duration_s:.2f} s, "
                    f"{diagnostics.get('stabilized-bins', 0)} stabilised bins)")
