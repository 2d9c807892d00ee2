import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layercache.errors import ConfigurationError, NumericError
from layercache.model import (
    GroupProfile,
    ModelConfig,
    SyntheticModel,
    default_heterogeneous_config,
)


def tiny_config(**overrides):
    fields = dict(
        seed=5,
        num_groups=2,
        state_dim=16,
        num_steps=10,
        mixing_scale=0.6,
        squash="tanh",
        latent_shape=(4, 4),
        profiles=(
            GroupProfile(kind="smooth_decay", amplitude=0.2, bias_amplitude=0.1,
                         bias_offset=0.2, decay_rate=3.0),
            GroupProfile(kind="oscillatory", amplitude=0.3, bias_amplitude=0.2,
                         period=0.8, decay_rate=0.0),
        ),
    )
    fields.update(overrides)
    return ModelConfig(**fields)


def test_same_seed_and_input_is_bit_identical():
    config = tiny_config()
    x = np.random.default_rng(0).standard_normal(config.state_dim)
    a, _ = SyntheticModel(config).forward(x, 0.7)
    b, _ = SyntheticModel(config).forward(x, 0.7)
    assert np.array_equal(a, b)


def test_zero_amplitude_makes_velocity_sigma_independent():
    profiles = tuple(
        GroupProfile(kind="smooth_decay", amplitude=0.0, bias_amplitude=0.0)
        for _ in range(2)
    )
    config = tiny_config(profiles=profiles)
    model = SyntheticModel(config)
    x = np.random.default_rng(1).standard_normal(config.state_dim)
    v_hi, _ = model.forward(x, 0.9)
    v_lo, _ = model.forward(x, 0.2)
    assert np.array_equal(v_hi, v_lo)


def test_forward_is_sequential_composition():
    config = tiny_config()
    model = SyntheticModel(config)
    x = np.random.default_rng(2).standard_normal(config.state_dim)
    velocity, hiddens = model.forward(x, 0.5)
    h = x
    for g in range(config.num_groups):
        h = model.group_forward(g, h, 0.5)
        assert np.array_equal(h, hiddens[g])
    assert np.array_equal(velocity, model.velocity_from_hidden(hiddens[-1]))


def test_composition_locality_of_profile_changes():
    """Changing group 1's profile must leave group 0's output untouched."""
    base = tiny_config()
    bumped_profiles = (
        base.profiles[0],
        GroupProfile(kind="oscillatory", amplitude=0.9, bias_amplitude=0.2,
                     period=0.8, decay_rate=0.0),
    )
    bumped = tiny_config(profiles=bumped_profiles)
    x = np.random.default_rng(3).standard_normal(base.state_dim)
    _, h_base = SyntheticModel(base).forward(x, 0.5)
    _, h_bumped = SyntheticModel(bumped).forward(x, 0.5)
    assert np.array_equal(h_base[0], h_bumped[0])
    assert not np.array_equal(h_base[1], h_bumped[1])


def test_mixers_respect_spectral_budget():
    model = SyntheticModel(tiny_config(mixing_scale=0.55))
    for mat in model.mixers:
        assert np.linalg.norm(mat, 2) == pytest.approx(0.55, abs=1e-9)
    assert np.linalg.norm(model.readout, 2) == pytest.approx(1.0, abs=1e-9)


def test_shape_mismatch_raises_configuration_error():
    model = SyntheticModel(tiny_config())
    with pytest.raises(ConfigurationError):
        model.forward(np.zeros(7), 0.5)


@pytest.mark.filterwarnings("ignore:invalid value encountered in matmul")
def test_non_finite_input_names_the_group():
    model = SyntheticModel(tiny_config(squash="identity"))
    bad = np.full(model.state_dim, np.inf)
    with pytest.raises(NumericError, match="group 0"):
        model.forward(bad, 0.5)


def test_profile_validation():
    with pytest.raises(ConfigurationError):
        GroupProfile(kind="sawtooth")
    with pytest.raises(ConfigurationError):
        GroupProfile(kind="oscillatory", period=0.0)
    with pytest.raises(ConfigurationError):
        GroupProfile(kind="spike_train", spike_width=0.0)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        tiny_config(mixing_scale=1.5)
    with pytest.raises(ConfigurationError):
        tiny_config(squash="relu")
    with pytest.raises(ConfigurationError):
        tiny_config(latent_shape=(5, 3))
    with pytest.raises(ConfigurationError):
        tiny_config(profiles=(GroupProfile(),))


def test_config_json_round_trip(tmp_path):
    config = default_heterogeneous_config()
    again = ModelConfig.from_json_dict(config.to_json_dict())
    assert again == config
    path = tmp_path / "model.json"
    config.save(path)
    assert ModelConfig.load(path) == config
    # the file itself is plain JSON with the documented fields
    raw = json.loads(path.read_text())
    assert raw["num_groups"] == 3
    assert len(raw["profiles"]) == 3


def test_oscillatory_damping_envelope():
    damped = GroupProfile(kind="oscillatory", period=0.5, decay_rate=2.0)
    steady = GroupProfile(kind="oscillatory", period=0.5, decay_rate=0.0)
    for sigma in np.linspace(0.0, 1.0, 21):
        assert abs(damped.base(sigma, 50)) <= np.exp(-2.0 * (1.0 - sigma)) + 1e-12
    # undamped form is the plain sine
    assert steady.base(0.75, 50) == pytest.approx(np.sin(2 * np.pi * 0.25 / 0.5))


def test_spike_train_base_peaks_at_spike_steps():
    prof = GroupProfile(kind="spike_train", spike_steps=(10,), spike_width=0.5)
    num_steps = 50
    center = 1.0 - 10 / num_steps
    assert prof.base(center, num_steps) == pytest.approx(1.0)
    assert prof.base(center + 0.1, num_steps) < 1e-8


@settings(max_examples=25, deadline=None)
@given(sigma=st.floats(min_value=0.0, max_value=1.0),
       seed=st.integers(min_value=0, max_value=2**16))
def test_bounded_states_under_tanh(sigma, seed):
    """With the squashing nonlinearity no state can leave a fixed box."""
    config = tiny_config()
    model = SyntheticModel(config)
    x = np.random.default_rng(seed).standard_normal(config.state_dim) * 10.0
    _, hiddens = model.forward(x, sigma)
    for g, h in enumerate(hiddens):
        prof = config.profiles[g]
        gain_cap = 1.0 + abs(prof.amplitude)
        bias_cap = abs(prof.bias_amplitude) * (abs(prof.bias_offset) + 1.0)
        assert np.max(np.abs(h)) <= gain_cap + bias_cap + 1e-9


def test_velocity_bound_holds_on_default_model(default_model, rng):
    bound = default_model.velocity_bound()
    for _ in range(5):
        x = rng.standard_normal(default_model.state_dim) * 3.0
        velocity, _ = default_model.forward(x, float(rng.uniform(0.0, 1.0)))
        assert np.max(np.abs(velocity)) <= bound + 1e-9
