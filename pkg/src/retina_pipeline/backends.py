"""Adapters for ImageNet backbones from ``tf.keras.applications``.

Only imported when a named backbone is used; TensorFlow is an optional
dependency (``pip install .[pretrained]``). The adapters act as frozen
feature extractors: they take batches scaled to [0, 1] and return the
final convolutional feature map.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError
from .modelkit import BackboneName, BackboneSpec, WeightsOrigin, feature_shape

_KERAS_APPLICATIONS = {
    BackboneName.RESNET50: ("resnet50", "ResNet50"),
    BackboneName.VGG16: ("vgg16", "VGG16"),
    BackboneName.VGG19: ("vgg19", "VGG19"),
    BackboneName.INCEPTION_V3: ("inception_v3", "InceptionV3"),
    BackboneName.INCEPTION_RESNET_V2: ("inception_resnet_v2", "InceptionResNetV2"),
}


class KerasExtractor:
    def __init__(self, spec: BackboneSpec):
        try:
            import tensorflow as tf
        except ImportError:
            raise ConfigError(
                f"{spec.name.value} needs TensorFlow; install the 'pretrained' extra or use the TOY backbone"
            ) from None
        module_name, ctor_name = _KERAS_APPLICATIONS[spec.name]
        apps = tf.keras.applications
        weights = "imagenet" if spec.weights_origin is WeightsOrigin.PRETRAINED_IMAGENET else None
        self.model = getattr(apps, ctor_name)(
            include_top=False, weights=weights, input_shape=(spec.input_size, spec.input_size, 3)
        )
        self.model.trainable = False
        self._preprocess = getattr(apps, module_name).preprocess_input
        expected = feature_shape(spec.name, spec.input_size)
        if tuple(self.model.output_shape[1:]) != expected:
            raise ConfigError(f"{ctor_name} yields {self.model.output_shape[1:]}, table says {expected}")

    def __call__(self, batch) -> np.ndarray:
        x = self._preprocess(np.asarray(batch, dtype=np.float32) * 255.0)
        return np.asarray(self.model(x, training=False), dtype=np.float64)


def load_extractor(spec: BackboneSpec):
    if spec.name is BackboneName.TOY:
        raise ConfigError("the TOY backbone is built into the classifier")
    return KerasExtractor(spec)
