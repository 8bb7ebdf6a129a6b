# Single-channel speech/noise estimators.
