# MF Massive MIMO Simulator Package
__version__ = 'v1.0.0'  # release tag; run metadata prefers `git describe`
