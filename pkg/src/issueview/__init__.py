"""Mine SRE chat logs into a structured issue database and retrieve similar
past incidents with domain-trained subword embeddings."""

__version__ = "0.1.0"
