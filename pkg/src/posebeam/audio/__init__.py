# This file makes the audio directory a Python package.
