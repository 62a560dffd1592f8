"""Train a small ReLU classifier on synthetic data and export it for certification.

The network is a 50 -> 20 -> 20 -> 5 MLP fitted with scikit-learn on five
Gaussian clusters clipped to the unit box (a desk-scale stand-in for an
MNIST 2x[20] model). Running this script writes

    <out>/synthetic_50x20x20x5.json   model file
    <out>/synthetic_pool.json         200 held-out inputs with labels
    <out>/inputs/input_XXX.json       the first 10 pool inputs, one per file

Usage:
    python demos/train_synthetic_classifier.py --out tests/data
"""

import argparse
import json
from pathlib import Path

import numpy as np
from sklearn.neural_network import MLPClassifier

from probcert.network import Network, save_input, save_network

N_IN, N_CLASSES, SPREAD = 50, 5, 0.15


def make_data(rng, per_class):
    centres = np.random.default_rng(1234).uniform(0.0, 1.0, (N_CLASSES, N_IN))
    x = np.vstack([np.clip(c + SPREAD * rng.standard_normal((per_class, N_IN)), 0, 1) for c in centres])
    y = np.repeat(np.arange(N_CLASSES), per_class)
    return x, y


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="tests/data")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    x_train, y_train = make_data(np.random.default_rng(0), 400)
    clf = MLPClassifier((20, 20), activation="relu", max_iter=500, random_state=0)
    clf.fit(x_train, y_train)

    net = Network.from_arrays([w.T for w in clf.coefs_], clf.intercepts_, ["relu", "relu", "identity"])
    save_network(net, out / "synthetic_50x20x20x5.json")

    x_test, y_test = make_data(np.random.default_rng(1), 40)
    order = np.random.default_rng(2).permutation(len(y_test))
    x_test, y_test = x_test[order], y_test[order]
    pred = np.argmax(net.forward(x_test), axis=1)
    print(f"train accuracy {clf.score(x_train, y_train):.3f}, test accuracy {(pred == y_test).mean():.3f}")

    pool = [{"x0": x.tolist(), "label": int(y)} for x, y in zip(x_test, y_test)]
    (out / "synthetic_pool.json").write_text(json.dumps(pool))
    (out / "inputs").mkdir(exist_ok=True)
    for i in range(10):
        save_input(x_test[i], out / "inputs" / f"input_{i:03d}.json", int(y_test[i]))


if __name__ == "__main__":
    main()
