"""
Pipeline de ingeniería de contexto: Constructor, Updater y Evaluator.
"""
