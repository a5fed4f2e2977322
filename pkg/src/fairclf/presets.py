"""Named synthetic-dataset presets for reproducible desk-scale experiments."""

from .data import SynthConfig

# Two overlapping identity groups with the prevalence skew of a large
# gender-annotated comment corpus (~11% and ~13% of records) and a strongly
# elevated positive rate inside both groups, plus positive feature shifts
# that squeeze group negatives toward the decision boundary. Both effects
# make an unconstrained classifier false-positive-prone on the groups, the
# dominant bias pattern in identity-term toxicity data. Group positive
# rates are amplified well above the corpus values they mimic so that the
# rate gaps stay resolvable above sampling noise at n = 5000.
JIGSAW_SKEW = SynthConfig(
    n_records=5000,
    dim=16,
    group_names=("male", "female"),
    group_prevalence=(0.110, 0.132),
    group_positive_rate=(0.50, 0.45),
    overall_positive_rate=0.114,
    group_shift=(0.40, 0.275),
    noise_scale=0.475,
    seed=100,
)

SYNTH_PRESETS = {"jigsaw-skew": JIGSAW_SKEW}
