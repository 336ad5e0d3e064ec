import logging
from typing import Annotated

import typer

from ..display import draw_grad_check
from ..gradient_suite import require_pass, run_gradient_suite
from .errors import exit_on_error

logger = logging.getLogger(__name__)


def grad_check(
    seed: Annotated[int, typer.Option("--seed", "-s", help="Random seed.")] = 0,
    batch: Annotated[int, typer.Option("--batch", help="Batch size per instance.")] = 8,
    dim: Annotated[int, typer.Option("--dim", help="Embedding size per instance.")] = 16,
    instances: Annotated[
        int, typer.Option("--instances", "-n", help="Number of random instances.")
    ] = 20,
    inject_fault: Annotated[bool, typer.Option("--inject-fault", hidden=True)] = False,
) -> None:
    """Check every analytic gradient against central finite differences."""
    with exit_on_error():
        results = run_gradient_suite(seed, batch, dim, instances, inject_fault)
        draw_grad_check(results)
        require_pass(results)
