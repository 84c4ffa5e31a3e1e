"""Relative error reduction of the fused system (I) over the acoustic system (B)."""
from accentlid.evalsim import relative_error_reduction

# accuracy (%) of B and I on each test set
RESULTS = {
    "CMU Arctic": (87.6, 95.5),
    "L2 Arctic": (74.6, 90.5),
    "CSLU FAE": (79.5, 88.2),
    "EFAC non-native": (51.8, 69.5),
}

if __name__ == "__main__":
    print(f"{'test set':<18}{'B':>7}{'I':>7}{'RER':>8}")
    for name, (b, i) in RESULTS.items():
        print(f"{name:<18}{b:>7.1f}{i:>7.1f}{relative_error_reduction(b / 100, i / 100):>8.3f}")
