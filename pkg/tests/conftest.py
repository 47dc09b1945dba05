import numpy as np
import pytest

from paintsr import imaging
from paintsr.dataset import TrainingTriple
from paintsr.imaging import ImageTensor


def random_image(rng, h=16, w=16, c=3) -> ImageTensor:
    return ImageTensor(rng.random((h, w, c)))


def toy_painting(seed: int, size: int = 128, coarse: int = 8, texture: float = 0.15) -> ImageTensor:
    """Smooth low-frequency field plus mild bounded texture noise."""
    rng = np.random.default_rng(seed)
    base = rng.random((coarse, coarse, 3))
    img = imaging.bicubic_resize(ImageTensor(base), size / coarse)
    noise = rng.standard_normal((size, size, 3)) * texture
    data = np.clip(img.data + noise * (img.data * (1.0 - img.data)), 0.0, 1.0)
    return ImageTensor(data)


def toy_triples(n: int = 8, tile: int = 64, s: int = 8, seed: int = 5,
                n_paintings: int = 4) -> list[TrainingTriple]:
    rng = np.random.default_rng(seed)
    paintings = [toy_painting(200 + seed + i, size=tile * 2) for i in range(n_paintings)]
    triples = []
    for i in range(n):
        p = paintings[i % n_paintings]
        top, left = rng.integers(0, tile, 2)
        hr = ImageTensor(p.data[top : top + tile, left : left + tile])
        q = paintings[(i + 1) % n_paintings]
        rt, rl = rng.integers(0, tile, 2)
        ref = ImageTensor(q.data[rt : rt + tile, rl : rl + tile])
        triples.append(
            TrainingTriple(
                hr=hr, lr=imaging.degrade_bicubic(hr, s), ref=ref, s=s,
                painting_id=f"p{i % n_paintings}", tile_index=i,
            )
        )
    return triples


@pytest.fixture
def rng():
    return np.random.default_rng(0)
