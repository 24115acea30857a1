"""Run manifests: one JSON record per CLI run describing exactly what ran."""

import json
import os
import subprocess
import time
from dataclasses import asdict, dataclass, field

from . import __version__


def _describe_version():
    """git-describe when available, falling back to the package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"sgnet-{__version__}"


@dataclass
class RunManifest:
    command: str
    seed: int
    out_dir: str
    config_path: str = ""
    config: dict = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""
    version: str = ""
    kernels_backend: str = ""
    threads: str = ""

    @classmethod
    def begin(cls, command, seed, out_dir, config_path="", config=None):
        from . import kernels

        return cls(
            command=command,
            seed=seed,
            out_dir=str(out_dir),
            config_path=str(config_path),
            config=dict(config or {}),
            started_at=_utc_now(),
            version=_describe_version(),
            kernels_backend=kernels.BACKEND,
            threads=os.environ.get("SGNET_THREADS", ""),
        )

    def finish(self):
        self.finished_at = _utc_now()
        return self

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _utc_now():
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
