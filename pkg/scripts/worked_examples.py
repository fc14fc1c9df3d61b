"""Print the small worked examples: Saaty consistency, chain completions, one layer, BTL."""

import math

import numpy as np

from sparsepcm.bench import generate_chain
from sparsepcm.btl import win_probability
from sparsepcm.core import DensePcm, consistency_report, principal_eigen
from sparsepcm.lls import lls_complete
from sparsepcm.model import ModelConfig, init_model


def main():
    np.set_printoptions(precision=4, suppress=True)
    b = DensePcm(np.array([[1, 3, 4], [1 / 3, 1, 2], [1 / 4, 1 / 2, 1]]))
    lam, w = principal_eigen(b)
    print("matrix B: lambda_max", round(lam, 4), "w", w)
    print(consistency_report(b))

    for ratios in ([3, 5, 2], [3, 5, 2, 4]):
        x, pcm = lls_complete(generate_chain(len(ratios) + 1, ratios))
        print(f"\nchain {ratios}: scores {x.scores}")
        print(pcm.entries)

    model = init_model(4, ModelConfig(d=2, layers=1, nonlinearity="relu"), generate_chain(4, [3.0, 5.0, 2.0]))
    model.params.update(
        H0=np.array([[0.2, -0.1], [-0.3, 0.4], [0.1, 0.0], [-0.2, -0.5]]),
        W1=np.eye(2), W2=0.5 * np.eye(2), v=np.ones(2),
    )
    H = model.embeddings()
    print("\none layer embeddings\n", H)
    print("a12 =", round(math.exp(float(model.log_ratios(0, 1, H))), 4))

    for r in (3, 5, 2, 4, 120):
        print(f"sigma(log {r}) = {float(win_probability(math.log(r))):.4f}")


if __name__ == "__main__":
    main()
