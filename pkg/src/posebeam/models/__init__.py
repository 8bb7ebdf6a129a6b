# src/posebeam/models/__init__.py
