"""Forest/non-forest segmentation and deforestation mapping for multi-band
satellite tiles.

Pipeline stages: manifest-driven ingestion (or synthetic scene generation),
percentile normalization and augmentation, four from-scratch encoder-decoder
segmentation networks, class-weighted training, metric evaluation, and
change-map/area derivation between two dated classification maps.
"""

__version__ = "0.1.0"
