"""
Repositorio de contexto persistente: historial, memoria y scratchpads.
"""
