"""Audit the training gradient against finite differences, term by term.

Each row switches the two consistency weights on or off and reports the
worst relative error over a batch of random heads. A deliberately wrong
gradient is checked last to show the harness can fail.

    python demos/gradient_audit.py
"""

import numpy as np

from dcptlab.gradcheck import LAMBDA_COMBOS, TOLERANCE, check_one


def main():
    for feat_on, pred_on in LAMBDA_COMBOS:
        worst = max(check_one(np.random.default_rng([7, k]), 8, 4, feat_on, pred_on)[0] for k in range(25))
        label = f"L_feat {'on ' if feat_on else 'off'}  L_pred {'on ' if pred_on else 'off'}"
        print(f"{label}  worst rel err {worst:.2e}  {'ok' if worst < TOLERANCE else 'FAIL'}")
    wrong, _ = check_one(np.random.default_rng(0), 8, 4, True, True, force_wrong=True)
    print(f"perturbed gradient     rel err {wrong:.2e}  (should be far above {TOLERANCE:g})")


if __name__ == "__main__":
    main()
