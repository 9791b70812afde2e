"""Holistic token sequences for boundary-representation solids.

Encode solids as one token stream (geometry, position and face-index tokens
in face/edge blocks), decode generated streams back into solids with
clustered vertices, and train/sample next-token models over them.
"""

from .codebook import Codebook, RestartConfig, decode, encode_face, train_codebook
from .core import SolidModel, compute_bbox, face_adjacency
from .detokenizer import (ReconstructedModel, ValidityReport, check_validity, detokenize, evaluate_sequence,
                          parse_sequence, reconstruct_vertices)
from .ingestion import generate_procedural, load_solid, save_solid
from .quantize import QuantConfig, dequantize_coord, detokenize_bbox, quantize_coord, tokenize_bbox
from .sequencer import TokenSeq, VocabLayout, order_edges, order_faces, reindex, tokenize_solid

__version__ = "0.1.0"

__all__ = [
    "Codebook", "RestartConfig", "decode", "encode_face", "train_codebook",
    "SolidModel", "compute_bbox", "face_adjacency",
    "ReconstructedModel", "ValidityReport", "check_validity", "detokenize", "evaluate_sequence",
    "parse_sequence", "reconstruct_vertices",
    "generate_procedural", "load_solid", "save_solid",
    "QuantConfig", "dequantize_coord", "detokenize_bbox", "quantize_coord", "tokenize_bbox",
    "TokenSeq", "VocabLayout", "order_edges", "order_faces", "reindex", "tokenize_solid",
]
