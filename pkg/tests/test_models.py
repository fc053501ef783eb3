import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from cganfusion.models import (
    DiscriminatorSpec,
    GeneratorSpec,
    NonFiniteActivationError,
    checksum,
    desk_specs,
    discriminator_forward,
    discriminator_spec,
    generator_forward,
    generator_spec,
    init_weights,
    latent_size,
    parameter_count,
    scale_spec,
    spec_from_dict,
)
from oracles import conv_out, deconv_out, layer_params

# Architecture table transcribed row by row: (kind, c_in, c_out, k, s, p, bn, prelu)
G_TABLE = [
    ("conv", 8, 64, 4, 2, 1, False, False),
    ("conv", 64, 128, 4, 2, 1, True, True),
    ("conv", 128, 256, 4, 2, 1, True, True),
    ("conv", 256, 512, 4, 2, 1, True, True),
    ("conv", 512, 1024, 4, 2, 1, True, True),
    ("conv", 1024, 1024, 4, 1, 1, True, True),
    ("deconv", 1024, 1024, 4, 1, 1, True, True),
    ("deconv", 2048, 512, 4, 2, 1, True, True),
    ("deconv", 1024, 256, 4, 2, 1, True, True),
    ("deconv", 512, 128, 4, 2, 1, True, True),
    ("deconv", 256, 64, 4, 2, 1, True, True),
    ("deconv", 128, 64, 4, 2, 1, False, False),
    ("deconv", 64, 4, 3, 1, 1, False, False),
]
D_TABLE = [
    (12, 128, 4, 2, 1, False),
    (128, 256, 4, 2, 1, True),
    (256, 512, 4, 2, 1, True),
    (512, 512, 4, 2, 1, True),
    (512, 1, 4, 1, 1, False),
]


def _table_shapes(n=256):
    out = []
    for kind, _, c_out, k, s, p, _, _ in G_TABLE:
        n = conv_out(n, k, s, p) if kind == "conv" else deconv_out(n, k, s, p)
        out.append((c_out, n))
    return out


@pytest.fixture(scope="module")
def full_generator():
    return init_weights(generator_spec(), 0).eval()


class TestConformance:
    def test_oracle_shapes_frozen(self):
        # conv arithmetic, applied layer by layer to a 256 input
        assert _table_shapes() == [
            (64, 128), (128, 64), (256, 32), (512, 16), (1024, 8), (1024, 7),
            (1024, 8), (512, 16), (256, 32), (128, 64), (64, 128), (64, 256), (4, 256),
        ]

    def test_spec_matches_table(self):
        spec = generator_spec()
        rows = [(s.kind, s.c_in, s.c_out, s.kernel, s.stride, s.padding, s.norm, s.act == "prelu") for s in spec.layers]
        assert rows == G_TABLE
        assert [s.dropout for s in spec.decoder] == [0.4, 0.4, 0, 0, 0, 0]
        d = discriminator_spec()
        assert [(s.c_in, s.c_out, s.kernel, s.stride, s.padding, s.norm) for s in d.convs] == D_TABLE
        assert latent_size(spec) == 7

    def test_generator_feature_shapes(self, full_generator):
        feats = {}
        with torch.no_grad():
            out = full_generator(torch.rand(1, 8, 256, 256), features=feats)
        got = [(tuple(v.shape[1:2]) + tuple(v.shape[2:3])) for v in feats.values()]
        assert got == _table_shapes()
        assert out.shape == (1, 4, 256, 256)

    def test_discriminator_shapes(self):
        d = init_weights(discriminator_spec(), 1).eval()
        feats = {}
        with torch.no_grad():
            out = d(torch.rand(1, 4, 256, 256), torch.rand(1, 8, 256, 256), features=feats)
        assert [v.shape[-1] for v in feats.values()] == [128, 64, 32, 16, 15]
        assert out.shape == (1, 1, 15, 15)
        assert float(out.min()) > 0 and float(out.max()) < 1

    def test_parameter_counts_match_oracle(self, full_generator):
        g_oracle = sum(layer_params(k, ci, co, bn, pr) for _, ci, co, k, _, _, bn, pr in G_TABLE)
        d_oracle = sum(layer_params(k, ci, co, bn) for ci, co, k, _, _, bn in D_TABLE)
        assert parameter_count(full_generator) == g_oracle == 67_134_286
        assert parameter_count(init_weights(discriminator_spec(), 0)) == d_oracle == 6_852_481


class TestTrivial:
    def test_zero_weights_zero_output(self):
        g, _ = desk_specs(64, 0.25)
        model = init_weights(g, 0)
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        model.eval()
        out = model(torch.zeros(2, 8, 64, 64))
        assert torch.count_nonzero(out) == 0

    def test_zero_discriminator_gives_half(self):
        _, d = desk_specs(64, 0.25)
        model = init_weights(d, 0)
        with torch.no_grad():
            for p in model.parameters():
                p.zero_()
        out = model(torch.rand(2, 4, 64, 64), torch.rand(2, 8, 64, 64))
        assert torch.all(out == 0.5)

    def test_seed_checksums(self):
        g, _ = desk_specs(64, 0.5)
        assert checksum(init_weights(g, 3)) == checksum(init_weights(g, 3))
        assert checksum(init_weights(g, 3)) != checksum(init_weights(g, 4))

    def test_init_distribution(self):
        model = init_weights(generator_spec(), 0)
        w = model.encoder["e5"].conv.weight.detach()
        assert abs(float(w.mean())) < 1e-3
        assert float(w.std()) == pytest.approx(0.02, rel=0.01)
        assert model.decoder["d2"].act.weight.item() == 0.25
        assert torch.all(model.encoder["e2"].norm.weight == 1)


class TestScaleSpec:
    def test_full_size_unchanged(self):
        assert scale_spec(generator_spec(), 256) == generator_spec()
        assert scale_spec(discriminator_spec(), 256) == discriminator_spec()

    def test_64(self):
        g = scale_spec(generator_spec(), 64)
        assert sum(1 for s in g.encoder if s.stride == 2) == 3
        assert g.encoder[-1].c_out == g.ladder[-1] == 256
        assert latent_size(g) == 7
        model = init_weights(g, 0).eval()
        assert model(torch.rand(1, 8, 64, 64)).shape == (1, 4, 64, 64)
        assert parameter_count(model) == 4_208_202

    def test_128(self):
        g = scale_spec(generator_spec(), 128)
        assert latent_size(g) == 7 and g.ladder == (64, 128, 256, 512)

    def test_width(self):
        g, d = desk_specs(64, 0.5)
        assert g.ladder == (32, 64, 128) and d.ladder == (64, 128, 256, 256)

    def test_unsupported(self):
        with pytest.raises(ValueError):
            scale_spec(generator_spec(), 32)

    def test_spec_roundtrip(self):
        for spec in desk_specs(64, 0.5):
            assert spec_from_dict(spec.to_dict()) == spec
        assert isinstance(spec_from_dict(generator_spec().to_dict()), GeneratorSpec)
        assert isinstance(spec_from_dict(discriminator_spec().to_dict()), DiscriminatorSpec)


@pytest.fixture(scope="module")
def small():
    g, d = desk_specs(64, 0.25)
    return init_weights(g, 0).eval(), init_weights(d, 1).eval()


class TestBehaviour:
    def test_deterministic_mode_bit_identical(self, small):
        g, _ = small
        c = torch.rand(2, 8, 64, 64)
        with torch.no_grad():
            assert torch.equal(g(c), g(c))

    def test_stochastic_mode_varies(self, small):
        g, _ = small
        c = torch.rand(1, 8, 64, 64)
        with torch.no_grad():
            assert not torch.equal(g(c, stochastic=True), g(c, stochastic=True))

    @settings(max_examples=5, deadline=None)
    @given(n=st.integers(1, 3), seed=st.integers(0, 100))
    def test_shape_contract(self, small, n, seed):
        g, d = small
        torch.manual_seed(seed)
        c = torch.rand(n, 8, 64, 64)
        with torch.no_grad():
            y = generator_forward(g, c)
            p = discriminator_forward(d, y, c)
        assert y.shape == (n, 4, 64, 64) and p.shape == (n, 1, 3, 3)
        assert torch.all((p > 0) & (p < 1))

    def test_shape_errors(self, small):
        g, d = small
        with pytest.raises(ValueError):
            generator_forward(g, torch.rand(1, 8, 32, 32))
        with pytest.raises(ValueError):
            discriminator_forward(d, torch.rand(1, 3, 64, 64), torch.rand(1, 8, 64, 64))

    def test_nonfinite_names_layer(self, small):
        g, _ = small
        c = torch.rand(1, 8, 64, 64)
        c[0, 0, 5, 5] = float("nan")
        with pytest.raises(NonFiniteActivationError) as ei:
            generator_forward(g, c)
        assert ei.value.layer == "e1"

    def test_receptive_field_locality(self, small):
        _, d = small
        spec = d.spec
        n = 64
        sizes = [n]
        for s in spec.convs:
            sizes.append(conv_out(sizes[-1], s.kernel, s.stride, s.padding))

        def rf(i):
            lo = hi = i
            for s in reversed(spec.convs):
                lo, hi = lo * s.stride - s.padding, hi * s.stride - s.padding + s.kernel - 1
            return lo, hi

        torch.manual_seed(0)
        cand, c = torch.rand(1, 4, n, n), torch.rand(1, 8, n, n)
        for py, px in [(0, 0), (10, 40), (63, 31)]:
            moved = cand.clone()
            moved[0, 2, py, px] += 0.5
            with torch.no_grad():
                diff = (d(moved, c) - d(cand, c))[0, 0].abs().numpy()
            inside = np.zeros_like(diff, bool)
            for i in range(sizes[-1]):
                for j in range(sizes[-1]):
                    (y0, y1), (x0, x1) = rf(i), rf(j)
                    inside[i, j] = y0 <= py <= y1 and x0 <= px <= x1
            assert inside.any()
            assert np.all(diff[~inside] == 0)
            assert np.all(diff[inside] > 0)
