"""
Manifest — Опись каталога прогона: снимок конфигурации, файлы и их sha256,
завершённые этапы. Текстовый формат, одна запись на строку:

    run <имя>
    stage <этап>
    file <относительный путь> <sha256>

Строки файлов отсортированы, времени в описи нет — байты детерминированы.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

from core.errors import MissingArtifactError

logger = logging.getLogger("nett.manifest")

MANIFEST_FILE = "run.manifest"
SNAPSHOT_FILE = "config.snapshot"


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    run_name: str
    directory: Path
    files: dict[str, str] = field(default_factory=dict)
    stages: list[str] = field(default_factory=list)

    @property
    def path(self) -> Path:
        return self.directory / MANIFEST_FILE

    @property
    def config_snapshot(self) -> Path:
        return self.directory / SNAPSHOT_FILE

    def add_file(self, path: str | Path) -> str:
        path = Path(path)
        rel = path.relative_to(self.directory).as_posix()
        self.files[rel] = file_sha256(path)
        return rel

    def forget(self, sub: str | Path) -> None:
        """Убрать из описи все файлы под каталогом sub."""
        prefix = f"{Path(sub).as_posix()}/"
        self.files = {rel: d for rel, d in self.files.items() if not rel.startswith(prefix)}

    def add_tree(self, sub: str | Path) -> None:
        root = self.directory / sub
        for p in sorted(root.rglob("*")):
            if p.is_file():
                self.add_file(p)

    def has_stage(self, stage: str) -> bool:
        return stage in self.stages

    def mark_stage(self, stage: str) -> None:
        if stage not in self.stages:
            self.stages.append(stage)
        self.save()

    def save(self) -> Path:
        lines = [f"run {self.run_name}"]
        lines += [f"stage {s}" for s in self.stages]
        lines += [f"file {rel} {digest}" for rel, digest in sorted(self.files.items())]
        self.path.write_text("\n".join(lines) + "\n")
        return self.path

    @classmethod
    def load(cls, directory: str | Path) -> RunManifest:
        directory = Path(directory)
        path = directory / MANIFEST_FILE
        if not path.exists():
            raise MissingArtifactError(f"run manifest not found: {path}")
        manifest = cls(run_name="", directory=directory)
        for line in path.read_text().splitlines():
            kind, _, rest = line.partition(" ")
            if kind == "run":
                manifest.run_name = rest
            elif kind == "stage":
                manifest.stages.append(rest)
            elif kind == "file":
                rel, digest = rest.rsplit(" ", 1)
                manifest.files[rel] = digest
        return manifest

    @classmethod
    def open(cls, directory: str | Path, run_name: str) -> RunManifest:
        """Загрузить опись, если она есть, иначе начать новую."""
        directory = Path(directory)
        if (directory / MANIFEST_FILE).exists():
            return cls.load(directory)
        return cls(run_name=run_name, directory=directory)

    def verify(self) -> list[str]:
        """Пути, которых нет или чей хеш изменился."""
        bad = []
        for rel, digest in sorted(self.files.items()):
            p = self.directory / rel
            if not p.exists() or file_sha256(p) != digest:
                bad.append(rel)
        if bad:
            logger.warning(f"⚠️ Опись {self.run_name}: {len(bad)} файлов не совпадают")
        return bad
