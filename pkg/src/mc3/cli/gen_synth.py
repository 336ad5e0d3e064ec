import logging

import numpy as np
import pandas as pd

from ..common import Split
from ..corpus import write_corpus
from ..display import draw_frame
from ..synthetic import RegionLabel, bank_filename, generate_synthetic
from .errors import exit_on_error
from .options import ConfigOption, OutDirOption, SeedOption, SetOption, load_run_config

logger = logging.getLogger(__name__)


def gen_synth(
    config: ConfigOption = None,
    seed: SeedOption = None,
    out_dir: OutDirOption = None,
    set_: SetOption = None,
) -> None:
    """Generate a synthetic corpus: three feature banks and a manifest."""
    with exit_on_error():
        run = load_run_config(config, seed, out_dir, set_)
        corpus = generate_synthetic(run.synth_config())
        banks = {bank_filename(m): bank for m, bank in corpus.banks.items()}
        written = write_corpus(run.out_dir, banks, corpus.records)
        written.append(run.write_resolved())

    for path in written:
        logger.info(f"Wrote {path}")

    counts = np.bincount(corpus.regions, minlength=len(RegionLabel))
    splits = pd.Series([r.split.value for r in corpus.records]).value_counts()
    draw_frame(
        pd.DataFrame(
            {
                "Region": [label.name for label in RegionLabel],
                "Samples": [int(c) for c in counts],
            }
        ),
        title="Agreement regions",
    )
    draw_frame(
        pd.DataFrame(
            {
                "Split": [s.value for s in Split],
                "Samples": [int(splits.get(s.value, 0)) for s in Split],
            }
        ),
        title="Splits",
    )
