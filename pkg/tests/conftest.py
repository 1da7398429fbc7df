import numpy as np
import pytest
import torch

from unisign.encoders import EncoderConfig
from unisign.fusion import FusionConfig
from unisign.lm import LMConfig, Tokenizer
from unisign.model import Clip, build_model
from unisign.pose import NUM_KEYPOINTS, PoseSequence, group_and_normalize
from unisign.sampler import SamplerConfig

NODE_COUNTS = {"lh": 21, "rh": 21, "b": 9, "f": 18}


def random_pose_frames(t, rng=None, width=640.0, height=480.0):
    rng = rng or np.random.default_rng(0)
    frames = np.zeros((t, NUM_KEYPOINTS, 3), dtype=np.float32)
    frames[:, :, 0] = rng.uniform(0, width, size=(t, NUM_KEYPOINTS))
    frames[:, :, 1] = rng.uniform(0, height, size=(t, NUM_KEYPOINTS))
    frames[:, :, 2] = rng.uniform(0, 1, size=(t, NUM_KEYPOINTS))
    return frames


def small_encoder_cfg(**overrides):
    kwargs = dict(input_linear_dim=8, gcn_dims=(8, 12, 16), temporal_dims=(16, 16, 16))
    kwargs.update(overrides)
    return EncoderConfig(**kwargs)


def small_lm_cfg(**overrides):
    kwargs = dict(d_model=32, nhead=2, encoder_layers=1, decoder_layers=1,
                  ffn_dim=64, dropout=0.0, max_len=128)
    kwargs.update(overrides)
    return LMConfig(**kwargs)


def make_toy_corpus(n_clips, t=12, seed=0, sentences=None, labels=None, glosses=None,
                    with_frames=False, confidences=None):
    """Random pose trajectories bound to the given supervision targets."""
    rng = np.random.default_rng(seed)
    clips = []
    for i in range(n_clips):
        frames = random_pose_frames(t, rng)
        if confidences is not None:
            frames[:, :, 2] = confidences
        grouped = group_and_normalize(PoseSequence(frames=frames, clip_id=f"toy{i:03d}"))
        video = None
        if with_frames:
            video = [rng.uniform(0, 1, size=(240, 320, 3)).astype(np.float32) for _ in range(t)]
        clips.append(
            Clip(
                grouped=grouped,
                target_text=sentences[i] if sentences else f"sentence {i}",
                clip_id=f"toy{i:03d}",
                frames=video,
                label=labels[i] if labels else None,
            )
        )
    return clips


def make_toy_model(tokenizer, with_vision=False, p_samp=0.0, seed=0, encoder_cfg=None,
                   lm_cfg=None, fusion_mode="deformable"):
    enc = encoder_cfg or small_encoder_cfg()
    fusion = FusionConfig(channels=enc.feature_dim, heads=2, deform_points=2, mode=fusion_mode)
    torch.manual_seed(seed)
    return build_model(
        node_counts=NODE_COUNTS,
        encoder_cfg=enc,
        tokenizer=tokenizer,
        lm_cfg=lm_cfg or small_lm_cfg(),
        fusion_cfg=fusion,
        with_vision=with_vision,
        sampler_cfg=SamplerConfig(p_samp=p_samp, seed=seed),
    )


def toy_tokenizer(texts):
    return Tokenizer.from_corpus(texts)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def grouped_clip(rng):
    seq = PoseSequence(frames=random_pose_frames(8, rng), clip_id="fixture")
    return group_and_normalize(seq)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)
