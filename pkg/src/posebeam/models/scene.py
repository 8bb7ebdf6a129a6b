import json
import logging
import pathlib
from dataclasses import dataclass, field

from ..audio.wav_io import read_wav, write_wav
from ..simulation.room import RoomSpec
from ..simulation.scene import SceneBundle
from ..simulation.trajectory import PoseTrajectory
from ..utils.io import atomic_write_json

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLITS = ("train", "val", "test")
WAV_KEYS = ("mixture", "speech-echoic", "speech-anechoic", "noise")


@dataclass
class SceneRecord:
    """
    Manifest entry for one generated scene.

    File paths are stored relative to the manifest directory and resolved
    against ``base_dir`` on load.
    """
    scene_id: str
    split: str
    seed: int
    snr_db: float
    room: RoomSpec
    wav_paths: dict[str, str]
    trajectory_path: str
    speech_files: list[str] = field(default_factory=list)
    noise_files: list[str] = field(default_factory=list)
    base_dir: pathlib.Path = field(default_factory=pathlib.Path)

    @classmethod
    def from_dict(cls, data: dict, base_dir) -> "SceneRecord":
        """
        Builds a record from its manifest dictionary.

        Raises:
            ValueError: a mandatory key is missing or has the wrong type.
        """
        mandatory = ["id", "split", "seed", "snr-db", "room", "wavs", "trajectory"]
        missing = [key for key in mandatory if key not in data]
        if missing:
            raise ValueError(f"Scene record is missing mandatory keys: {', '.join(missing)}")

        scene_id = data["id"]
        if not isinstance(scene_id, str) or not scene_id:
            raise ValueError("Invalid 'id' (must be non-empty string) in scene record")
        if data["split"] not in SPLITS:
            raise ValueError(f"Invalid 'split' {data['split']!r} in scene {scene_id}, expected one of {SPLITS}")
        wavs = data["wavs"]
        if not isinstance(wavs, dict) or any(key not in wavs for key in WAV_KEYS):
            raise ValueError(f"'wavs' in scene {scene_id} must map {', '.join(WAV_KEYS)} to paths")

        return cls(
            scene_id=scene_id,
            split=data["split"],
            seed=int(data["seed"]),
            snr_db=float(data["snr-db"]),
            room=RoomSpec.from_dict(data["room"]),
            wav_paths={key: str(wavs[key]) for key in WAV_KEYS},
            trajectory_path=str(data["trajectory"]),
            speech_files=list(data.get("speech-files", [])),
            noise_files=list(data.get("noise-files", [])),
            base_dir=pathlib.Path(base_dir),
        )

    def to_dict(self) -> dict:
        return {
            "id": self.scene_id,
            "split": self.split,
            "seed": self.seed,
            "snr-db": round(self.snr_db, 6),
            "room": self.room.to_dict(),
            "wavs": dict(self.wav_paths),
            "trajectory": self.trajectory_path,
            "speech-files": list(self.speech_files),
            "noise-files": list(self.noise_files),
        }

    def resolve(self, relative: str) -> pathlib.Path:
        return self.base_dir / relative

    def load_trajectory(self) -> PoseTrajectory:
        with self.resolve(self.trajectory_path).open("r", encoding="utf-8") as f:
            return PoseTrajectory.from_dict(json.load(f))

    def load_bundle(self) -> SceneBundle:
        """Reads the scene's WAVs and trajectory back into a bundle."""
        signals = {key: read_wav(self.resolve(path), expected_rate=None) for key, path in self.wav_paths.items()}
        return SceneBundle(
            mixture=signals["mixture"],
            speech_echoic=signals["speech-echoic"],
            speech_anechoic=signals["speech-anechoic"],
            noise=signals["noise"],
            trajectory=self.load_trajectory(),
            snr_db=self.snr_db,
            scene_id=self.scene_id,
        )

    @classmethod
    def save_bundle(cls, bundle: SceneBundle, *, split: str, seed: int, room: RoomSpec, out_dir,
                    speech_files: list[str] | None = None, noise_files: list[str] | None = None) -> "SceneRecord":
        """Writes a rendered scene as float32 WAVs plus a trajectory JSON under ``out_dir/split``."""
        out_dir = pathlib.Path(out_dir)
        rel_dir = pathlib.Path(split) / bundle.scene_id
        signals = {
            "mixture": bundle.mixture,
            "speech-echoic": bundle.speech_echoic,
            "speech-anechoic": bundle.speech_anechoic,
            "noise": bundle.noise,
        }
        wav_paths = {}
        for key, wave in signals.items():
            rel = rel_dir / f"{key}.wav"
            write_wav(out_dir / rel, wave, encoding="float32")
            wav_paths[key] = rel.as_posix()
        trajectory_rel = rel_dir / "trajectory.json"
        atomic_write_json(bundle.trajectory.to_dict(), str(out_dir / trajectory_rel))

        return cls(scene_id=bundle.scene_id, split=split, seed=seed, snr_db=bundle.snr_db, room=room,
                   wav_paths=wav_paths, trajectory_path=trajectory_rel.as_posix(),
                   speech_files=list(speech_files or []), noise_files=list(noise_files or []), base_dir=out_dir)

    def __repr__(self):
        return f"<SceneRecord(id='{self.scene_id}', split='{self.split}', snr_db={self.snr_db:.2f})>"


@dataclass
class Manifest:
    """Scene records plus the generation settings that produced them."""
    records: list[SceneRecord] = field(default_factory=list)
    settings: dict = field(default_factory=dict)
    path: pathlib.Path | None = None

    def split(self, name: str) -> list[SceneRecord]:
        return [r for r in self.records if r.split == name]

    def to_dict(self) -> dict:
        return {"version": MANIFEST_VERSION, "settings": self.settings,
                "scenes": [r.to_dict() for r in self.records]}

    def save(self, path=None) -> None:
        target = pathlib.Path(path or self.path)
        atomic_write_json(self.to_dict(), str(target))
        self.path = target

    @classmethod
    def load_from_json(cls, json_file_path) -> "Manifest":
        """
        Loads and validates a manifest written by ``generate_dataset``.

        Raises:
            FileNotFoundError: the manifest does not exist.
            json.JSONDecodeError: the file is not valid JSON.
            ValueError: the content does not describe scenes.
        """
        path_obj = pathlib.Path(json_file_path)
        if not path_obj.is_file():
            raise FileNotFoundError(f"Manifest not found: {json_file_path}")
        try:
            with path_obj.open("r", encoding="utf-8") as f:
                data = json.load(f)
            if not isinstance(data, dict) or not isinstance(data.get("scenes"), list):
                raise ValueError(f"Manifest {json_file_path} must be an object with a 'scenes' list")
            if data.get("version", MANIFEST_VERSION) != MANIFEST_VERSION:
                raise ValueError(f"Unsupported manifest version {data.get('version')} in {json_file_path}")
            records = [SceneRecord.from_dict(item, path_obj.parent) for item in data["scenes"]]
        except (json.JSONDecodeError, ValueError) as e:
            logger.error(f"Failed to load manifest from {json_file_path}: {e}", exc_info=True)
            raise
        return cls(records=records, settings=dict(data.get("settings", {})), path=path_obj)
