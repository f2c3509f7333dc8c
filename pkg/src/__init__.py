# Spectral Stability Toolkit
# Spectral diagnostics for the stability of small neural networks