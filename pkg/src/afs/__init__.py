"""
Núcleo del Agentic File System: rutas, nodos y dispatcher de operaciones.
"""
