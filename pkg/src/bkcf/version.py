from __future__ import annotations

import os
from dataclasses import dataclass

APP_NAME = "Boolean Kernel CF"
__version__ = "0.3.0"


@dataclass(frozen=True)
class BuildInfo:
    build: str | None
    git_sha: str | None


def get_build_info() -> BuildInfo:
    # Set by CI or release scripts; a bare checkout reports the version only.
    build = os.environ.get("BKCF_BUILD") or None
    git_sha = os.environ.get("BKCF_GIT_SHA") or None
    if build is None:
        return BuildInfo(build=None, git_sha=None)
    return BuildInfo(build=build, git_sha=git_sha)


def version_string() -> str:
    info = get_build_info()
    text = f"{APP_NAME} {__version__}"
    if info.build:
        text += f" (build:{info.build}"
        if info.git_sha:
            text += f", {info.git_sha[:10]}"
        text += ")"
    return text
