"""Train speed estimation toolkit.

Submodules:
    signals        core time-series types and CSV ingestion/export
    simulator      synthetic train-run generation (phases, WSP, sensor faults)
    dataset        window construction, normalization, train/val splitting
    akf            adaptive Kalman filter baseline
    nn             dense-tensor neural network kernels (forward + backward)
    architectures  the three CNN regressors and the training loop
    hpo            TPE sampler, median pruner, study driver
    report         RMSE metrics, estimator comparison, SVG plots
    cli            command-line entry point
"""

__version__ = "0.1.0"
