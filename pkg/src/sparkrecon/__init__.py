"""Scan-specific residual correction of parallel MRI reconstructions.

Modules: ``kcore`` (FFT, masks, metrics), ``simdata`` (phantom acquisitions),
``grappa``, ``vcsvc`` (virtual coils, SVC-GRAPPA), ``micronet`` (numpy CNN
engine), ``raki``, ``spark`` and ``bench`` (formats, sweeps, CLI).
"""
__version__ = "0.1.0"
