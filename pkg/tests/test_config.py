"""Configuration: rounding, seeds, method names and key=value files."""
import pytest

from src.config import (
    PipelineConfig,
    RefineConfig,
    SamplerConfig,
    make_rng,
    normalize_method,
    read_key_values,
    roundInt,
)


def test_round_int_rounds_halves_up():
    assert roundInt(2.5) == 3
    assert roundInt(3.49) == 3
    assert roundInt(3.5 * 256) == 896


def test_method_aliases():
    assert normalize_method("multinomial+dfps") == "mdfps"
    assert normalize_method("Threshold-TopK") == "topk"
    with pytest.raises(ValueError):
        normalize_method("random")


def test_sampler_config_rejects_low_multiplier():
    with pytest.raises(ValueError):
        SamplerConfig(upsample_rate=4, resample_multiplier=0.5)
    with pytest.raises(ValueError):
        SamplerConfig(upsample_rate=0)


def test_refine_config_bounds():
    with pytest.raises(ValueError):
        RefineConfig(k_r=2)
    with pytest.raises(ValueError):
        RefineConfig(degree=3)


def test_make_rng_streams_are_reproducible_and_independent():
    a = make_rng(7, 2, 3).random(5)
    b = make_rng(7, 2, 3).random(5)
    c = make_rng(7, 2, 4).random(5)
    assert (a == b).all()
    assert not (a == c).all()


def test_pipeline_rate_overrides_sampler_rate():
    config = PipelineConfig(upsample_rate=3.5, sampler=SamplerConfig(upsample_rate=2, method="mfps"), seed=9)
    assert config.sampler.upsample_rate == 3.5
    assert config.sampler.seed == 9
    assert config.sampler.method == "mfps"
    assert config.with_method("topk").upsample_rate == 3.5


def test_refine_neighborhood_cannot_exceed_patch():
    with pytest.raises(ValueError):
        PipelineConfig(patch_size=4, refine=RefineConfig(k_r=8))


def test_key_value_file(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# settings\n--rate = 2\nrefine-k=6  # neighbors\n\nsampler=multinomial\n")
    values = read_key_values(str(path))
    assert values == {"rate": "2", "refine_k": "6", "sampler": "multinomial"}

    config = PipelineConfig.from_file(str(path), {"rate": 3.0, "seed": None})
    assert config.upsample_rate == 3.0, "explicit overrides win over the file"
    assert config.refine.k_r == 6
    assert config.sampler.method == "multinomial"


def test_unknown_key_reports_line(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("rate=2\n\ncolour=red\n")
    with pytest.raises(ValueError, match=r"bad\.cfg:3:"):
        read_key_values(str(path))


def test_no_refine_flag():
    config = PipelineConfig.from_mapping({"no_refine": "true"})
    assert not config.refine.enabled
    assert config.smoothing_for(100) == 1
    assert config.smoothing_for(5000) == 0
