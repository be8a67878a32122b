import numpy as np
import pytest

from memefuse.preprocess import LabelVector, RawSample


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_sample(sid, ocr, captions, labels, image=None, side=8,
                seed=0) -> RawSample:
    if image is None:
        image = np.random.default_rng(seed).integers(
            0, 256, size=(side, side, 3), dtype=np.int64).astype(np.uint8)
    return RawSample(id=sid, ocr_text=ocr, captions=captions, image=image,
                     labels=LabelVector(*labels))
