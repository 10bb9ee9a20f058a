"""Speech abilities for a frozen text LM, end to end at desk scale.

The recipe: prompt a frozen instruction-following LM with transcripts to
generate response targets, then train an audio encoder so the same frozen
LM gives the same responses when prompted with audio embeddings instead of
text. Evaluation covers response perplexity, a cascaded ASR+LM baseline,
and embedding-space alignment analysis.
"""

__version__ = "0.1.0"
