"""Scikit-learn style front end for the graph segmentation model.

GraphSegmenter exposes fit/predict/score and composes with sklearn
tooling (get_params/set_params/clone come from BaseEstimator). X is a
sequence of [h, w, 3] images in [0, 1], y a sequence of integer label
maps of the same spatial size.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from . import model as mdl
from .data import LabeledImage
from .metrics import confusion, metrics
from .validation import check_image_batch, check_label_batch


class GraphSegmenter(BaseEstimator):
    """Semantic segmentation via attention graph convolutions on KNN
    patch graphs, trained with an information-bottleneck regularizer
    over node- and edge-masked graph views.

    Parameters mirror SegModelConfig; `classes=None` infers the class
    count from the training labels.
    """

    def __init__(self, classes=None, patch_size=8, embed_dim=32, stages=2,
                 k_neighbors=8, heads=4, conv_variant="gat", leaky_slope=0.2,
                 beta=0.1, tau=0.5, mixture_m=2, node_masking=True,
                 edge_masking=True, gib_stages="last", mask_logit_init=2.0,
                 epochs=80, batch_size=32, lr=5e-4, weight_decay=1e-5,
                 optimizer_decay=0.0, squared_norm=False, flip_augment=True,
                 seed=0):
        self.classes = classes
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.stages = stages
        self.k_neighbors = k_neighbors
        self.heads = heads
        self.conv_variant = conv_variant
        self.leaky_slope = leaky_slope
        self.beta = beta
        self.tau = tau
        self.mixture_m = mixture_m
        self.node_masking = node_masking
        self.edge_masking = edge_masking
        self.gib_stages = gib_stages
        self.mask_logit_init = mask_logit_init
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.weight_decay = weight_decay
        self.optimizer_decay = optimizer_decay
        self.squared_norm = squared_norm
        self.flip_augment = flip_augment
        self.seed = seed

    def _config(self, image_size, classes):
        return mdl.SegModelConfig(
            classes=classes, image_size=image_size, patch_size=self.patch_size,
            embed_dim=self.embed_dim, stages=self.stages,
            k_neighbors=self.k_neighbors, heads=self.heads,
            conv_variant=self.conv_variant, leaky_slope=self.leaky_slope,
            beta=self.beta, tau=self.tau, mixture_m=self.mixture_m,
            node_masking=self.node_masking, edge_masking=self.edge_masking,
            gib_stages=self.gib_stages, mask_logit_init=self.mask_logit_init,
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            weight_decay=self.weight_decay, optimizer_decay=self.optimizer_decay,
            squared_norm=self.squared_norm, flip_augment=self.flip_augment,
            seed=self.seed).validate()

    def fit(self, X, y):
        images = check_image_batch(X)
        classes = self.classes
        if classes is None:
            classes = int(max(lab.max() for lab in
                              check_label_batch(y, images))) + 1
            classes = max(classes, 2)
        labels = check_label_batch(y, images, classes)
        cfg = self._config(images[0].shape[:2], classes)
        self.model_ = mdl.build_model(cfg)
        dataset = [LabeledImage(img, lab, f"fit-{i}")
                   for i, (img, lab) in enumerate(zip(images, labels))]
        self.log_ = mdl.train(self.model_, dataset)
        self.classes_ = classes
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("fit must be called before predict/score")

    def predict(self, X):
        self._check_fitted()
        images = check_image_batch(X)
        return [mdl.predict(self.model_, img) for img in images]

    def predict_one(self, image):
        self._check_fitted()
        return mdl.predict(self.model_, np.asarray(image))

    def score(self, X, y):
        """Mean IoU over the given images."""
        self._check_fitted()
        images = check_image_batch(X)
        labels = check_label_batch(y, images, self.classes_)
        cm = None
        for img, lab in zip(images, labels):
            c = confusion(mdl.predict(self.model_, img), lab, self.classes_)
            cm = c if cm is None else cm.add(c)
        return metrics(cm).miou
