import logging
import os
from importlib.metadata import version

import typer
from dotenv import load_dotenv

from .ablate import ablate
from .eval import evaluate
from .gen_synth import gen_synth
from .grad_check import grad_check
from .train import train

load_dotenv()

logging.basicConfig(
    level=os.getenv("MC3_LOG_LEVEL", "INFO").upper(),
    format="%(asctime)s [%(levelname)s] %(message)s",
)


def version_callback(value: bool) -> None:
    if value:
        print(f"mc3 {version('mc3')}")
        raise typer.Exit()


app = typer.Typer()


@app.callback(invoke_without_command=True)
def main_callback(
    version: bool = typer.Option(
        False,
        "--version",
        "-V",
        help="Show version and exit.",
        callback=version_callback,
        is_eager=True,
    ),
) -> None:
    pass


app.command(name="gen-synth")(gen_synth)
app.command()(train)
app.command(name="eval")(evaluate)
app.command(name="grad-check")(grad_check)
app.command()(ablate)


def main():
    app()


if __name__ == "__main__":
    main()
