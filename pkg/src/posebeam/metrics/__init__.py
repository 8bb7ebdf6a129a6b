# src/posebeam/metrics/__init__.py
