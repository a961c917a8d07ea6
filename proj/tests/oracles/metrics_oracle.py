#!/usr/bin/env python3
"""Independent oracle for the reference classification scores.

Prints weighted averages for VGG16, sample SDs for every backbone, F1 values
regenerated from (P, R), and the exhaustive class-support search. The
numbers printed here are frozen into tests/test_acceptance.cpp.
"""

import itertools
import statistics

# precision, recall, f1 for benign, malignant, normal (percent)
TABLE = {
    "vgg19": [(74.74, 81.61, 78.02), (60.00, 61.36, 60.67), (68.75, 44.00, 53.66)],
    "vgg16": [(74.49, 83.91, 78.92), (72.50, 65.91, 69.05), (72.22, 52.00, 60.47)],
    "resnet50": [(69.73, 87.36, 77.51), (84.61, 25.00, 38.60), (61.77, 84.00, 71.19)],
    "densenet121": [(74.74, 81.61, 78.02), (62.75, 72.73, 67.37), (80.00, 32.00, 45.70)],
}
SD = {
    "vgg19": (0.1254, 0.0741, 0.1882),
    "vgg16": (0.0923, 0.0124, 0.1600),
    "resnet50": (0.2088, 0.1160, 0.3507),
    "densenet121": (0.1647, 0.0884, 0.2645),
}


def weighted(rows, support):
    n = sum(support)
    return [sum(r[i] * s for r, s in zip(rows, support)) / n for i in range(3)]


def recall_ok(pct, n):
    return any(round(100.0 * tp / n, 2) == pct for tp in range(n + 1))


def tp_for(pct, n):
    return [tp for tp in range(n + 1) if round(100.0 * tp / n, 2) == pct]


def precision_consistent(support):
    total = sum(support)
    for rows in TABLE.values():
        choices = []
        for (p, r, _), n in zip(rows, support):
            preds = set()
            for tp in tp_for(r, n):
                for pred in range(max(tp, 1), total + 1):
                    if round(100.0 * tp / pred, 2) == p:
                        preds.add(pred)
            choices.append(sorted(preds))
        if not any(sum(c) == total for c in itertools.product(*choices)):
            return False
    return True


def main():
    w = weighted(TABLE["vgg16"], (87, 44, 25))
    print("vgg16 weighted P/R/F1: %.6f %.6f %.6f" % tuple(w))
    print("vgg16 accuracy 73+29+13 / 156 = %.6f" % (100.0 * 115 / 156))
    for name, rows in TABLE.items():
        f1 = [r[2] / 100 for r in rows]
        p = [r[0] / 100 for r in rows]
        rc = [r[1] / 100 for r in rows]
        got = (statistics.stdev(f1), statistics.stdev(p), statistics.stdev(rc))
        pop = statistics.pstdev(f1)
        print("%-12s SD f1/p/r %.6f %.6f %.6f (reference %s) pop-f1 %.4f" % (name, *got, SD[name], pop))
    for name, rows in TABLE.items():
        for cls, (p, r, f) in zip("BMN", rows):
            g = 2 * p * r / (p + r)
            print("%-12s %s F1 regen %.4f reference %.2f diff %+.4f" % (name, cls, g, f, g - f))
    recalls = [[rows[c][1] for rows in TABLE.values()] for c in range(3)]
    cands = []
    for b in range(1, 201):
        if not all(recall_ok(x, b) for x in recalls[0]):
            continue
        for m in range(1, 201 - b):
            if not all(recall_ok(x, m) for x in recalls[1]):
                continue
            for n in range(1, 201 - b - m):
                if all(recall_ok(x, n) for x in recalls[2]):
                    cands.append((b, m, n))
    print("recall-consistent supports (sum <= 200):", cands)
    print("also precision-consistent:", [c for c in cands if precision_consistent(c)])


if __name__ == "__main__":
    main()
