from pathlib import Path
from typing import Annotated

import typer

from .config import RunConfig, parse_assignments, resolve_config

ConfigOption = Annotated[
    Path | None,
    typer.Option("--config", "-c", help="Config file with key=value lines."),
]
SeedOption = Annotated[
    int | None,
    typer.Option("--seed", "-s", help="Random seed. Overrides the config file."),
]
OutDirOption = Annotated[
    Path | None,
    typer.Option("--out-dir", "-o", help="Directory to write outputs to."),
]
SetOption = Annotated[
    list[str] | None,
    typer.Option("--set", help="Override a config key, e.g. --set stage2_epochs=3. Repeatable."),
]


def load_run_config(
    config: Path | None,
    seed: int | None,
    out_dir: Path | None,
    assignments: list[str] | None,
    **flags: str | None,
) -> RunConfig:
    """Resolves the run config from file, `--set` values and dedicated flags, in
    increasing priority."""
    overrides: dict[str, str | None] = dict(parse_assignments(assignments or []))
    if seed is not None:
        overrides["seed"] = str(seed)
    if out_dir is not None:
        overrides["out_dir"] = str(out_dir)
    overrides.update({k: v for k, v in flags.items() if v is not None})
    return resolve_config(config, overrides)
