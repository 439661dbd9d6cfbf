"""Chain specifications shipped with the package."""

from importlib import resources

from augkern.chain import ChainSpec

BUNDLED = {
    "two_state": "Two states swapped by one augmentation; training set {a}.",
    "jitter_two_class_40": "1-D grid of 20 positions x 2 labels under Gaussian jitter.",
    "jitter_two_class_10": "1-D grid of 5 positions x 2 labels under Gaussian jitter.",
}


def bundled_path(name):
    if name not in BUNDLED:
        raise KeyError(f"no bundled spec {name!r}; choose from {sorted(BUNDLED)}")
    return resources.files("augkern") / "data" / f"{name}.json"


def load_chain(name) -> ChainSpec:
    path = bundled_path(name)
    with resources.as_file(path) as p:
        return ChainSpec.from_json(p)
