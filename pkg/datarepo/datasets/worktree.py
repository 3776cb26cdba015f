"""
Reading file trees for check-in and writing them back on checkout.
"""
import logging
import os
import stat
from pathlib import Path

from repository.exceptions import ValidationError
from repository.layout import DSR_DIR
from repository.validators import validate_relative_path

logger = logging.getLogger(__name__)


def scan_worktree(root: Path) -> list[tuple[str, Path]]:
    """Every regular file under *root* as ``(repository path, filesystem path)``.

    Symlinks are followed only when they resolve inside *root*; directory
    symlinks are never descended (their targets are walked directly).
    """
    root = Path(root)
    if not root.is_dir():
        raise ValidationError(f"worktree {root} is not a readable directory")
    resolved_root = root.resolve()
    files = []
    for dirpath, dirnames, filenames in os.walk(root, followlinks=False):
        current = Path(dirpath)
        if current == root and DSR_DIR in dirnames:
            dirnames.remove(DSR_DIR)
        for dirname in list(dirnames):
            candidate = current / dirname
            if candidate.is_symlink():
                _ensure_inside(candidate, resolved_root)
                dirnames.remove(dirname)
        dirnames.sort()
        for filename in sorted(filenames):
            path = current / filename
            if path.is_symlink():
                _ensure_inside(path, resolved_root)
            mode = path.stat().st_mode
            if stat.S_ISDIR(mode):
                continue
            if not stat.S_ISREG(mode):
                raise ValidationError(f"{path} is not a regular file")
            relative = path.relative_to(root).as_posix()
            files.append((validate_relative_path(relative), path))
    files.sort(key=lambda item: item[0].encode('utf-8'))
    return files


def _ensure_inside(link: Path, resolved_root: Path) -> None:
    target = link.resolve()
    if target != resolved_root and resolved_root not in target.parents:
        raise ValidationError(f"{link} points outside the worktree ({target})")


def prepare_destination(dest: Path) -> Path:
    dest = Path(dest)
    if dest.exists():
        if not dest.is_dir():
            raise ValidationError(f"checkout destination {dest} is not a directory")
        if any(dest.iterdir()):
            raise ValidationError(f"checkout destination {dest} is not empty")
    else:
        dest.mkdir(parents=True)
    return dest


def make_read_only(root: Path) -> None:
    for dirpath, _dirnames, filenames in os.walk(root):
        for filename in filenames:
            path = Path(dirpath) / filename
            path.chmod(path.stat().st_mode & ~(stat.S_IWUSR | stat.S_IWGRP | stat.S_IWOTH))
