"""
A synthetic speech/text corpus
==============================

Tokens are unit vectors; "speech" frames are token embeddings pushed through
a fixed random mixing matrix, repeated, interleaved with pad runs and
perturbed by noise.  Everything is drawn from one SplitMix64 stream.
"""

import numpy as np

from otreg import CorpusConfig, SplitMix64, make_corpus

print(hex(SplitMix64(0).next_u64()))

corpus = make_corpus(CorpusConfig())
lengths = [s.raw_speech.shape[0] for s in corpus.train]
print(f"{len(corpus.train)} training utterances, frames per utterance {min(lengths)}..{max(lengths)}")

###############################################################################
# The first utterance: its tokens and which token each frame came from.

first = corpus.train[0]
print("tokens:", first.tokens)
print("frames:", ["pad" if t == corpus.table.pad_id else t for t in first.frame_to_token])

###############################################################################
# Without noise the mixing can be undone exactly, which is what an ideal
# adapter would learn.

recovered = first.raw_speech @ np.linalg.pinv(corpus.mixing)
clean = corpus.table.rows[first.frame_to_token]
print("max recovery error with noise_sigma=0.05:", float(np.abs(recovered - clean).max()))
