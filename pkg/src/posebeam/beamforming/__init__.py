# MVDR weights and steering extraction.
