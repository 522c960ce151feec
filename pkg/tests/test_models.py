import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clmex.losses import cross_entropy
from clmex.models import (
    EncoderConfig,
    Network,
    ProjectionConfig,
    ProjectionHead,
    expected_parameter_count,
    predict,
)
from clmex.tensor import Adam, Tensor, no_grad


@pytest.fixture
def net():
    return Network(EncoderConfig(conv_channels=[4, 8], embedding_dim=6), ProjectionConfig(output_dim=5), num_classes=3, seed=1)


def images(seed, n=5, size=12):
    return np.random.default_rng(seed).random((n, 3, size, size))


def test_zero_final_layer_gives_zero_embeddings(net):
    net.encoder.fc_w.data[:] = 0.0
    np.testing.assert_array_equal(net.encode(images(0)).data, 0.0)


def test_batch_equivariance_and_identical_rows(net):
    x = images(1)
    perm = np.array([3, 0, 4, 1, 2])
    r = net.encode(x).data
    np.testing.assert_allclose(net.encode(x[perm]).data, r[perm], rtol=1e-12, atol=1e-14)
    twins = net.encode(np.stack([x[0], x[0]])).data
    np.testing.assert_array_equal(twins[0], twins[1])


def test_encoder_rejects_wrong_channels(net):
    with pytest.raises(ValueError, match="expects"):
        net.encode(np.zeros((2, 1, 8, 8)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), scale=st.floats(1e-3, 1e3))
def test_projection_unit_norm_and_positive_homogeneity(seed, scale):
    rng = np.random.default_rng(seed)
    head = ProjectionHead(6, ProjectionConfig(output_dim=4), rng)
    r = rng.normal(size=(7, 6))
    z = head(Tensor(r)).data
    np.testing.assert_allclose(np.linalg.norm(z, axis=1), 1.0, atol=1e-9)
    head.b1.data[:] = 0.0
    head.b2.data[:] = 0.0
    np.testing.assert_allclose(head(Tensor(r * scale)).data, head(Tensor(r)).data, atol=1e-9)


def test_identity_projection_is_normalized_relu():
    head = ProjectionHead(4, ProjectionConfig(output_dim=4), np.random.default_rng(0))
    head.w1.data = np.eye(4)
    head.w2.data = np.eye(4)
    head.b2.data[:] = 0.0
    r = np.array([[1.0, -2.0, 2.0, 0.0], [0.5, 0.5, -1.0, 0.5]])
    expected = np.maximum(r, 0)
    expected /= np.linalg.norm(expected, axis=1, keepdims=True)
    np.testing.assert_allclose(head(Tensor(r)).data, expected, atol=1e-15)


def test_projection_wider_than_embedding_rejected():
    with pytest.raises(ValueError, match="exceeds"):
        ProjectionHead(4, ProjectionConfig(output_dim=8), np.random.default_rng(0))


def test_zero_head_ties_to_class_zero(net):
    net.classifier.weight.data[:] = 0.0
    logits = net.classify(images(2)).data
    assert np.all(logits == logits[:, :1])
    assert predict(logits).tolist() == [0] * 5


def test_single_class_always_zero():
    n = Network(EncoderConfig(conv_channels=[4], embedding_dim=3), num_classes=1, seed=0)
    assert predict(n.classify(images(3))).tolist() == [0] * 5


def test_classifier_reaches_full_accuracy_on_separable_toy_set():
    rng = np.random.default_rng(0)
    r = np.vstack([rng.normal(loc=2.0, size=(20, 6)), rng.normal(loc=-2.0, size=(20, 6))])
    y = np.array([0] * 20 + [1] * 20)
    n = Network(EncoderConfig(embedding_dim=6), num_classes=2, seed=0)
    opt = Adam(n.classifier.parameters(), lr=0.05)
    for _ in range(200):
        opt.zero_grad()
        cross_entropy(n.classify(Tensor(r)), y).backward()
        opt.step()
    with no_grad():
        assert (predict(n.classify(Tensor(r))) == y).all()


@pytest.mark.parametrize(
    "enc,proj,classes",
    [
        (EncoderConfig(), ProjectionConfig(), 4),
        (EncoderConfig(conv_channels=[8], embedding_dim=16), None, 7),
        (EncoderConfig(in_channels=1, conv_channels=[2, 3, 4, 5], kernel=5), ProjectionConfig(hidden_dim=10, output_dim=3), None),
    ],
)
def test_parameter_count_matches_closed_form(enc, proj, classes):
    n = Network(enc, proj, classes)
    assert n.num_parameters() == expected_parameter_count(enc, proj, classes or 0)


def test_default_parameter_count_by_hand():
    # conv: 16*3*9+16, 32*16*9+32, 64*32*9+64; fc 64*64+64; projection 64*64+64 + 64*32+32
    assert expected_parameter_count(EncoderConfig(), ProjectionConfig()) == 448 + 4640 + 18496 + 4160 + 4160 + 2080


def test_state_dict_roundtrip_through_architecture(net):
    clone = Network.from_architecture(net.architecture())
    clone.load_state_dict(net.state_dict())
    x = images(4)
    np.testing.assert_array_equal(clone.classify(x).data, net.classify(x).data)
    with pytest.raises(KeyError):
        clone.load_state_dict({})


def test_drop_projection_removes_parameters(net):
    before = net.num_parameters()
    net.drop_projection()
    assert not any(k.startswith("projection.") for k in net.named_parameters())
    assert net.num_parameters() < before
    with pytest.raises(RuntimeError):
        net.project(Tensor(np.zeros((1, 6))))
