"""Print the segway LQR gain (Q = I, R = 1) and the induced polytope matrix H.

The gain is pasted into configs/segway.json; training only consumes it.
"""

import argparse
import json

import numpy as np
import scipy.linalg
import torch

from polycert.lifted import lifting_from_linearization
from polycert.models import segway


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--r", type=float, default=1.0, help="LQR input weight")
    args = ap.parse_args()
    sys = segway(())
    zero = torch.zeros(3, dtype=torch.float64)
    A, B, _ = sys.point_jacobian(zero, torch.zeros(1, dtype=torch.float64), torch.zeros(0, dtype=torch.float64))
    A, B = A.numpy(), B.numpy()
    R = np.array([[args.r]])
    P = scipy.linalg.solve_continuous_are(A, B, np.eye(3), R)
    K = -np.linalg.solve(R, B.T @ P)  # u = K x
    H = lifting_from_linearization(A + B @ K)
    print(json.dumps({"A": A.tolist(), "B": B.tolist(), "K": K.tolist(),
                      "eig": sorted(np.linalg.eigvals(A + B @ K).real.tolist()),
                      "H": H.tolist()}, indent=2))


if __name__ == "__main__":
    main()
