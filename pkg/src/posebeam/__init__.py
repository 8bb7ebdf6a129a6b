# This file marks the posebeam directory as a Python package.
