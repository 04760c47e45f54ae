"""
Pairwise compression
====================

Adjacent frame pairs that point the same way are averaged, then frames that
look like the pad embedding are removed.  Pairing is fixed (0,1), (2,3), ...,
so a doubled "l" survives as two frames.
"""

import numpy as np

from otreg import ot_compress, unique_targets

rng = np.random.default_rng(1)
basis, _ = np.linalg.qr(rng.normal(size=(6, 6)))
letters = dict(zip("helo", basis[:4]))
pad = basis[5:6]

###############################################################################
# "hheelllloo" compresses to five frames that spell "hello".

word = "hheelllloo"
out, report = ot_compress(np.array([letters[c] for c in word]), pad)
decoded = "".join("helo"[int(np.argmax(basis[:4] @ row))] for row in out)
print(word, "->", decoded, report.as_dict())

###############################################################################
# Pad-like frames disappear, whatever their length.

frames = np.vstack([letters["h"], 2.5 * pad[0], letters["e"]])
out, report = ot_compress(frames, pad)
print("dropped post-merge rows", report.dropped_indices, "kept", out.shape[0])

###############################################################################
# Target side: the unique set for "hello" keeps one "l" and appends the pad.

targets = unique_targets(np.array([letters[c] for c in "hello"]), pad, token_ids=[ord(c) for c in "hello"])
print("unique targets:", [chr(t) if t >= 0 else "<pad>" for t in targets.token_ids])
