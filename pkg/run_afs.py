#!/usr/bin/env python3
"""
Script CLI para ejecutar el Agentic File System.

Uso:
    python run_afs.py [opciones globales] <verbo> [argumentos]

Ejemplos:
    python run_afs.py ls /context --depth 2
    python run_afs.py session run scripts/chatbot.script --agent chatbot
    python run_afs.py review list
    python run_afs.py log verify
"""

import sys
from pathlib import Path

# Agregar src al path
sys.path.insert(0, str(Path(__file__).parent))

from src.cli.main import main


if __name__ == '__main__':
    sys.exit(main())
