from __future__ import annotations

import shutil
import subprocess
from pathlib import Path

DEFAULT_VERSION = "unknown"
REPO_ROOT = Path(__file__).resolve().parent.parent
VERSION_FILE = REPO_ROOT / "VERSION"


def get_display_version() -> str:
    try:
        version = VERSION_FILE.read_text(encoding="utf-8").strip()
    except OSError:
        return DEFAULT_VERSION
    return version or DEFAULT_VERSION


def _git_describe() -> str | None:
    git = shutil.which("git")
    if git is None or not (REPO_ROOT / ".git").exists():
        return None
    try:
        completed = subprocess.run(
            [git, "describe", "--always", "--dirty", "--tags"],
            cwd=REPO_ROOT,
            capture_output=True,
            text=True,
            timeout=5,
            check=False,
        )
    except (OSError, subprocess.SubprocessError):
        return None
    described = completed.stdout.strip()
    if completed.returncode != 0 or not described:
        return None
    return described


def get_describe_version() -> str:
    """VERSION file content, suffixed with `git describe` output when available."""
    version = get_display_version()
    described = _git_describe()
    if described is None or described == version:
        return version
    return f"{version}+g{described}"
