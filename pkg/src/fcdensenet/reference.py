"""Published reference figures for the FC-DenseNet family.

The ``inspect --paper-diff`` command compares this library's derived
accounting against these widely cited figures and flags every
disagreement. One is expected and documented: the published per-stage
table lists 578 feature maps at the 7-layer upsampling block of the
103-layer network, while the family's own construction rules give
160 + 304 + 112 = 576. This module keeps the published value verbatim;
the diff marks it.
"""

# Per-stage feature-map totals (m) as published for the 103-layer preset:
# stem, five down stages, bottleneck, five up stages.
PUBLISHED_M_SCHEDULE = {
    "fc-densenet103": (48, 112, 192, 304, 464, 656, 896, 1088, 816, 578, 384, 256),
}

# Published parameter totals, in millions, for the 11-class configuration.
PUBLISHED_PARAMS_MILLIONS = {
    "fc-densenet56": 1.5,
    "fc-densenet67": 3.5,
    "fc-densenet103": 9.4,
}

# Published convolutional-layer totals.
PUBLISHED_CONV_LAYERS = {
    "fc-densenet56": 56,
    "fc-densenet67": 67,
    "fc-densenet103": 103,
}


def diff_m_schedule(name, computed):
    """Compare a computed m schedule against the published one.

    Returns (n_match, entries) where entries are dicts with the stage index,
    computed and published values, and a match flag. Returns (None, [])
    when no published schedule exists for the preset.
    """
    published = PUBLISHED_M_SCHEDULE.get(name)
    if published is None:
        return None, []
    entries = []
    n_match = 0
    for i, (ours, theirs) in enumerate(zip(computed, published)):
        match = ours == theirs
        n_match += match
        entries.append(
            {"stage": i, "computed": ours, "published": theirs, "match": match}
        )
    return n_match, entries
