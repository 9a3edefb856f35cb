"""Published Table 1 cells (percent) and the stated error-reduction bands."""

COLUMNS = ("100 labels, L=4", "100 labels, L=8", "1000 labels, L=4", "1000 labels, L=8")

# stage -> one (accuracy, top-5) pair per column
TABLE1 = {
    "baseline": [(28.90, 65.56), (28.90, 65.56), (8.65, 25.55), (8.65, 25.55)],
    "focal_training": [(43.00, 83.40), (44.85, 85.85), (18.08, 46.29), (18.00, 45.47)],
    "unification": [(47.40, 87.89), (49.51, 89.04), (21.89, 52.72), (22.16, 53.47)],
    "merging": [(49.85, 89.79), (52.72, 91.17), (23.53, 54.99), (24.14, 56.18)],
}

# stage -> ((accuracy band), (top-5 band)), whole percent as printed
BANDS = {
    "focal_training": ((10, 22), (27, 59)),
    "unification": ((14, 29), (36, 68)),
    "merging": ((16, 34), (40, 74)),
}
