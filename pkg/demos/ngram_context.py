"""Why a short-context n-gram loses its place inside a block.

A 4-gram sees the last three tokens. In a box sequence the same position
levels appear in many bbox slots and the same codewords in many faces, so
one context is followed by tokens of several different slot types. This
script counts how often that happens.

Run: python3 demos/ngram_context.py
"""
from collections import defaultdict

from brepseq import VocabLayout, tokenize_solid, train_codebook
from brepseq.codebook import solid_latents
from brepseq.ingestion import sample_dataset

solids = [s for _, _, s in sample_dataset(100, {"box": 1.0}, seed=0)]
layout = VocabLayout(n_geo=512)
cb = train_codebook(solid_latents(solids), n_geo=512, epochs=1)
seqs = [tokenize_solid(s, cb, layout, seed=i).tokens for i, s in enumerate(solids)]

nxt = defaultdict(set)
for s in seqs:
    seg = layout.segment_ids(s)
    for i in range(3, len(s)):
        # what kind of token comes next; SEP and END are told apart
        kind = int(seg[i]) if seg[i] != 3 else s[i]
        nxt[tuple(s[i - 3:i])].add(kind)

ambiguous = sum(len(v) > 1 for v in nxt.values())
print(f"{len(nxt)} distinct 3-token contexts, {ambiguous} followed by more than one token type")
