"""BiLSTM autoencoder anomaly detection for multichannel smart-meter series.

The package is organised bottom-up:

- ``linalg``: activations, dense products and seeded initialisation
- ``recurrent``: LSTM cell, sequence unrolling, bidirectional layer, BPTT
- ``autoencoder``: encoder/decoder model, reconstruction and its gradients
- ``training``: Adam, dropout, clipping and the epoch loop
- ``preprocess``: cleaning, 15-minute resampling, Haar denoising, windows
- ``detector``: per-timestep reconstruction error and thresholding
- ``evaluate``: confusion metrics and ROC/AUC
- ``datagen``: synthetic meter data with labelled anomalies
- ``cli``: the command-line pipeline, file formats and plots
"""

__version__ = "0.1.0"

CHANNELS = ("electricity", "water", "heating", "hot_water")
STEP_SECONDS = 900
