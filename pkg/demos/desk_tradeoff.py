"""One-seed version of the trade-off study on the synthetic dataset (about 6 minutes).

Pretrains the shared encoder with all tails, then finetunes the predictor at
several lambda values and prints accuracy, tail usage and cost per setting.
"""

import sys
import tempfile

from mtvit.config import RunConfig
from mtvit.experiment import tradeoff_study

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
with tempfile.TemporaryDirectory() as work:
    summary = tradeoff_study(RunConfig(alpha=0.25), seeds=(seed,), work_dir=work)
    print("\n".join(summary.lines()))
