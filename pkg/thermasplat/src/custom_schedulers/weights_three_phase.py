# Enhancer weight stepping 0.3 -> 0.2 -> 0.1; the rest is shared by the GS and thermal terms
# in the proportion of the final triple.
settings = {
    "name": "three_phase",
    "settings": {
        "early_weight": ["FLOAT", 0.3, 0.0, 0.9, 0.01, False],
        "middle_weight": ["FLOAT", 0.2, 0.0, 0.9, 0.01, False],
        "late_weight": ["FLOAT", 0.1, 0.0, 0.9, 0.01, False],
        "middle_from": ["FLOAT", 0.3, 0.0, 1.0, 0.01, False],
        "late_from": ["FLOAT", 0.7, 0.0, 1.0, 0.01, False],
    },
}


def get_weights(t, total, initial, final, early_weight=0.3, middle_weight=0.2, late_weight=0.1, middle_from=0.3, late_from=0.7):
    if not 0 < middle_from < late_from < 1:
        raise ValueError("three_phase breakpoints must be strictly increasing inside (0, 1).")

    progress = t / total
    if progress < middle_from:
        enhancer = early_weight
    elif progress < late_from:
        enhancer = middle_weight
    else:
        enhancer = late_weight

    rest = final[1] + final[2]
    if rest <= 0:
        return [enhancer, 1.0 - enhancer, 0.0]
    return [enhancer, (1.0 - enhancer) * final[1] / rest, (1.0 - enhancer) * final[2] / rest]
