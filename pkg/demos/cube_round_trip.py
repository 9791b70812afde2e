"""Encode a unit cube as tokens, look at the blocks, and decode it back.

Run: python3 demos/cube_round_trip.py
"""
import numpy as np

from brepseq import (VocabLayout, evaluate_sequence, generate_procedural, tokenize_solid, train_codebook)
from brepseq.codebook import solid_latents

cube = generate_procedural("box", {"size": (1, 1, 1), "center": (0, 0, 0), "angle": 0.0})
print(f"cube: {cube.n_faces} faces, {cube.n_edges} edges")

# A codebook fitted on the cube alone is lossless: each patch becomes a codeword.
layout = VocabLayout()
cb = train_codebook(solid_latents([cube]), n_geo=layout.n_geo, epochs=1)

seq = tokenize_solid(cube, cb, layout, seed=0)
t = seq.tokens
print(f"{len(t)} tokens (11*6 + 12*12 + 3), face-index offset r = {seq.r}")

seg = layout.segment_ids(t)
names = "IGPS"
print("first face block :", t[1:12], "".join(names[s] for s in seg[1:12]))
first_edge = 2 + 11 * cube.n_faces
print("first edge block :", t[first_edge:first_edge + 12], "".join(names[s] for s in seg[first_edge:first_edge + 12]))

model, report = evaluate_sequence(t, cb, layout)
print(f"decoded: V={model.n_vertices} E={model.n_edges} F={model.n_faces}, valid={report.valid}")
print("vertices (rounded):")
print(np.round(model.vertices, 3))
