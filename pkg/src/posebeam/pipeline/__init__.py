# Pipeline assembly, training, evaluation and benchmarking.
