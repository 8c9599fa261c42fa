"""Numerical linearization of nonautonomous ODEs with dichotomy spectra."""
