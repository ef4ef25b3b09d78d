import numpy as np
import pytest

from lowra.codebook import default_codebook
from lowra.errors import ShapeError
from lowra.quantizer import ChannelQuantizer, QuantizedLayer
from lowra.tensor import block_normalize


def mixed_books(rows, rng):
    return [default_codebook(int(p)) for p in rng.choice([1, 2, 4], rows)]


def test_dequantize_matches_lookup(rng):
    w = rng.standard_normal((6, 100)).astype(np.float32)
    books = mixed_books(6, rng)
    layer = ChannelQuantizer(books, 64).quantize(w, "l")
    norm, state = block_normalize(w, 64)
    expand = state.expand()
    out = layer.dequantize()
    for i, book in enumerate(books):
        codes = np.searchsorted(book.thresholds, norm[i], side="left")
        np.testing.assert_array_equal(layer.codes(i).codes, codes)
        expected = book.mappings.astype(np.float32)[codes] * expand[i]
        np.testing.assert_array_equal(out[i], expected)


def test_layer_sizes(rng):
    w = rng.standard_normal((3, 70)).astype(np.float32)
    books = [default_codebook(1), default_codebook(2), default_codebook(4)]
    layer = ChannelQuantizer(books, 64).quantize(w)
    assert [len(p) for p in layer.packed] == [9, 18, 35]
    assert layer.payload_bytes == 62
    assert layer.code_bits == 70 * 7
    assert layer.absmax.shape == (3, 2)


def test_requantize_is_fixed_point(rng):
    w = rng.standard_normal((4, 128)).astype(np.float32)
    q = ChannelQuantizer(mixed_books(4, rng), 64)
    layer = q.quantize(w)
    again = q.quantize(layer.dequantize())
    # Each block's absmax element maps to +-1, which every default book decodes exactly.
    assert again.packed == layer.packed


def test_row_mismatch(rng):
    with pytest.raises(ShapeError):
        ChannelQuantizer([default_codebook(2)] * 2).quantize(np.ones((3, 4)))


def test_layer_validation():
    with pytest.raises(ShapeError):
        QuantizedLayer("x", 1, 8, 64, [default_codebook(2)], np.ones((1, 1)), [b"\x00"])
