"""pushlab: a desk-scale lab where a simulated robot pushes tabletop objects,
labels its own segmentation masks from the observed motion, and fine-tunes a
patch-scoring network on the self-labeled data."""

__version__ = "0.1.0"
