"""
Indexador: tokenización, embeddings por hashing de features e índice invertido.
"""
