"""Fixture regeneration: train the two digit-recognition architectures.

The two architectures mirror the shipped fixtures: a 3x3x8 valid-padded
convolution over 28x28x1 inputs, optionally a 2x2 max-pooling, then
dense 42 and dense 10 layers.  Training runs on 28x28 digit data: MNIST
IDX files when available, otherwise the bundled 8x8 UCI digits upscaled
to 28x28 (the sandbox has no network access to fetch MNIST).
"""

from __future__ import annotations

import numpy as np

from . import idx


def upscaled_digits(seed: int = 0):
    """28x28 digit data from scikit-learn's bundled 8x8 set.

    Nearest-neighbour 4x upscale to 32x32, then a 2-pixel border crop;
    pixel values normalised into [0, 1].  Returns a shuffled
    (train_x, train_y, val_x, val_y) split.
    """
    from sklearn.datasets import load_digits
    data = load_digits()
    images = data.images / 16.0
    big = np.repeat(np.repeat(images, 4, axis=1), 4, axis=2)[:, 2:30, 2:30]
    x = big[..., None].astype(np.float32)
    y = data.target.astype(np.int64)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(x))
    x, y = x[order], y[order]
    n_val = len(x) // 5
    return x[n_val:], y[n_val:], x[:n_val], y[:n_val]


def mnist_idx_data(idx_dir):
    """(train_x, train_y, val_x, val_y) from the four standard IDX files."""
    import os
    names = {
        "train_images": ("train-images-idx3-ubyte", "train-images.idx3-ubyte"),
        "train_labels": ("train-labels-idx1-ubyte", "train-labels.idx1-ubyte"),
        "test_images": ("t10k-images-idx3-ubyte", "t10k-images.idx3-ubyte"),
        "test_labels": ("t10k-labels-idx1-ubyte", "t10k-labels.idx1-ubyte"),
    }

    def find(kind):
        for base in names[kind]:
            for suffix in ("", ".gz"):
                path = os.path.join(idx_dir, base + suffix)
                if os.path.exists(path):
                    return path
        raise FileNotFoundError(f"no {kind} IDX file under {idx_dir}")

    train_x, train_y = idx.load_mnist_pair(find("train_images"), find("train_labels"))
    val_x, val_y = idx.load_mnist_pair(find("test_images"), find("test_labels"))
    return (train_x.astype(np.float32), train_y,
            val_x.astype(np.float32), val_y)


def build_architecture(maxpool: bool, seed: int = 0):
    """The fixture architecture as a compiled Keras model."""
    import tensorflow as tf
    from tensorflow import keras

    tf.random.set_seed(seed)
    layers = [keras.layers.Input(shape=(28, 28, 1)),
              keras.layers.Conv2D(8, 3, activation="relu", name="conv2d")]
    if maxpool:
        layers.append(keras.layers.MaxPooling2D(2, name="max_pooling2d"))
    layers += [keras.layers.Flatten(name="flatten"),
               keras.layers.Dense(42, activation="relu", name="dense"),
               keras.layers.Dense(10, activation="softmax", name="dense_1")]
    model = keras.Sequential(layers)
    model.compile(optimizer="adam", loss="sparse_categorical_crossentropy",
                  metrics=["accuracy"])
    return model


def train_fixture(out_h5, maxpool: bool = False, data=None, epochs: int = 40,
                  target_accuracy: float = 0.97, seed: int = 0) -> dict:
    """Train one fixture architecture and save the HDF5 checkpoint.

    Stops early once the validation accuracy clears the target; returns
    the training metadata (epochs run, final accuracies).
    """
    from tensorflow import keras

    if data is None:
        data = upscaled_digits(seed=seed)
    train_x, train_y, val_x, val_y = data
    model = build_architecture(maxpool=maxpool, seed=seed)

    stop = keras.callbacks.EarlyStopping(
        monitor="val_accuracy", mode="max", baseline=None, patience=epochs,
        restore_best_weights=True)

    class StopAtTarget(keras.callbacks.Callback):
        def on_epoch_end(self, epoch, logs=None):
            if logs and logs.get("val_accuracy", 0.0) >= target_accuracy + 0.005:
                self.model.stop_training = True

    history = model.fit(train_x, train_y, validation_data=(val_x, val_y),
                        epochs=epochs, batch_size=64, verbose=0,
                        callbacks=[stop, StopAtTarget()], shuffle=True)
    val_accuracy = float(max(history.history["val_accuracy"]))
    model.save(out_h5)
    return {
        "epochs": len(history.history["val_accuracy"]),
        "val_accuracy": val_accuracy,
        "train_accuracy": float(history.history["accuracy"][-1]),
        "maxpool": maxpool,
        "seed": seed,
        "samples": int(len(train_x)),
    }
