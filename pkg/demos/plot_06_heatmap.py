"""
Distance heatmaps from the command line
=======================================

The ``otreg heatmap`` command writes ``1 - cos`` between two matrices as an
ASCII PGM on a fixed [0, 2] scale, so images from different runs compare
directly.  Here it is driven from Python through ``otreg.cli.main``.
"""

import tempfile
from pathlib import Path

import numpy as np

from otreg.cli import main
from otreg.io import save_matrix
from otreg.sequence import adapter_forward, stack_frames
from otreg.trainer import ExperimentConfig, run_experiment, sample_targets

exp = ExperimentConfig.toy()
result = run_experiment(exp)
sample = result.corpus.eval[0]
targets = sample_targets(sample, result.corpus.table, exp.train)

out = Path(tempfile.mkdtemp())
for tag, params in (("stage1", result.stage1), ("final", result.final)):
    f = adapter_forward(stack_frames(sample.raw_speech, exp.train.k), params)
    save_matrix(out / f"{tag}_speech.emb", f)
    save_matrix(out / "targets.emb", targets.embeddings)
    main(["heatmap", "--source", str(out / f"{tag}_speech.emb"), "--target", str(out / "targets.emb"),
          "--out", str(out / f"{tag}.pgm")])
    pixels = np.array((out / f"{tag}.pgm").read_text().split()[4:], dtype=int)
    print(tag, "mean pixel", pixels.mean().round(1), "->", out / f"{tag}.pgm")
