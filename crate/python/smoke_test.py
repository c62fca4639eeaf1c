"""End-to-end check of the Python bindings.

Build and install first:  maturin develop -m crates/python/Cargo.toml --release
"""

import math
import random
import sys
import tempfile
from pathlib import Path

import slr


def main() -> int:
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        languages, splits = slr.synth_corpus(
            tmp / "corpus", num_target=2, num_nontarget=2, num_heldout=0, per_class=4, seed=1
        )
        splits = dict(splits)
        assert languages and set(splits) == {"train", "val", "test_closed", "test_open"}

        path, label = splits["test_open"][0]
        samples = slr.load_wav(path)
        fitted = slr.fit_to_duration(samples, 10.0)
        assert len(fitted) == 10 * slr.SAMPLE_RATE
        spec = slr.log_mel(fitted)
        assert len(spec) == 1001 and len(spec[0]) == 64
        assert all(math.isfinite(v) for row in spec for v in row)

        model = slr.Model.build("tc_resnet10", len(languages), "multilabel", width=0.25, languages=languages)
        print(model)
        assert model.count_params() == sum(layer[3] for layer in model.layers())
        weights = tmp / "m.slrw"
        model.save(weights)
        again = slr.Model.load(weights)
        a = model.predict(samples)
        b = again.predict(samples)
        assert a == b, (a, b)
        outcome, acts = a
        assert len(acts) == len(languages) and all(0.0 <= x <= 1.0 for x in acts)
        assert outcome == slr.decide(acts, "multilabel")

        assert slr.decide([0.1, 0.2], "multilabel") is None
        assert slr.decide([0.2, 0.7, 0.1], "multiclass_plus_other") == 1
        assert slr.error_rate([0, None, 1, 1], [0, None, 0, 1]) == 25.0

        try:
            slr.Model.load(tmp / "missing.slrw")
        except OSError:
            pass
        else:
            raise AssertionError("missing weights should raise")
        try:
            slr.Model.build("resnet50", 2, "multilabel")
        except ValueError:
            pass
        else:
            raise AssertionError("unknown architecture should raise")

        noise = [random.uniform(-0.1, 0.1) for _ in range(3 * slr.SAMPLE_RATE)]
        print("noise ->", model.predict(noise))
    print("python smoke test OK")
    return 0


if __name__ == "__main__":
    sys.exit(main())
