"""Desk-scale adversarial robustness workbench.

Train a small convolutional classifier, attack it (FGSM, DeepFool,
Carlini-Wagner L2 and a generator-based universal perturbation), recover
true labels for the adversarial images with PCA + KNN, retrain, and
measure what the retraining defense does and does not stop.
"""

__version__ = "0.1.0"
