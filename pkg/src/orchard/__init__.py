"""orchard: an image-classification toolkit built from scratch.

Dataset preparation with classic x8 augmentation, CutMix/MixUp mixing,
small inception-style and residual CNNs trained with Adam and early
stopping, confusion-matrix evaluation, and Grad-CAM/LIME/Kernel-SHAP
explanations. See the CLI (`orchard --help`) for the end-to-end pipeline.
"""

__version__ = "0.1.0"
