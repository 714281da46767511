# Define the settings for the four-stage loss-weight schedule.
# Note: Do not include 't', 'total', 'initial' or 'final' in the settings as they get passed automatically.
# The settings dictionary should have the same names as the keyword parameters in the get_weights function.
settings = {
    "name": "four_stage",
    "settings": {
        # Format: "parameter_name": [type, default_value, min_value, max_value, step_value, round_flag]
        "hold_until": ["FLOAT", 0.2, 0.0, 1.0, 0.01, False],
        "ramp_until": ["FLOAT", 0.4, 0.0, 1.0, 0.01, False],
        "finetune_from": ["FLOAT", 0.7, 0.0, 1.0, 0.01, False],
    },
}


# A schedule must have a function called "get_weights" to work properly.
def get_weights(t, total, initial, final, hold_until=0.2, ramp_until=0.4, finetune_from=0.7):
    """
    Hold the initial triple, ramp linearly to the final one, then keep it.

    Args:
    t (int): Current iteration.
    total (int): Total iterations.
    initial (tuple): Normalized starting triple (enh, gs, therm).
    final (tuple): Normalized target triple.
    hold_until, ramp_until, finetune_from (float): Breakpoints as fractions of total.

    Returns:
    list: The raw triple at t; the caller renormalizes.
    """
    if not 0 < hold_until < ramp_until < finetune_from < 1:
        raise ValueError("four_stage breakpoints must be strictly increasing inside (0, 1).")

    progress = t / total
    if progress < hold_until:
        return list(initial)
    if progress < ramp_until:
        mix = (progress - hold_until) / (ramp_until - hold_until)
        return [a + (b - a) * mix for a, b in zip(initial, final)]
    # from finetune_from on the final triple is held while the learning rate keeps decaying
    return list(final)
