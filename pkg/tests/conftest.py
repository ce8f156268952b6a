"""Shared test fixtures: a desk-scale config profile small enough that the
full four-phase pipeline trains in seconds."""

TINY_OVERRIDES = [
    "data.per_kind=8",
    "data.side=32",
    "data.kinds=[noise, jpeg]",
    "vae.base_channels=8",
    "vae.epochs=2",
    "vae.target_psnr=99.0",
    "embeddings.dim=12",
    "embeddings.image_side=32",
    "embeddings.trunk_channels=[8, 16]",
    "embeddings.epochs=3",
    "prompts.style_dim=16",
    "prompts.deg_dim=8",
    "prompts.num_kinds=2",
    "unet.base_channels=8",
    "unet.channel_mults=[1, 2]",
    "unet.time_dim=16",
    "control.widths=[4, 8, 8]",
    "schedule.timesteps=50",
    "schedule.sample_steps=5",
    "stage1.epochs=1",
    "stage1.batch_size=8",
    "stage1.lr=0.001",
    "stage2.epochs=1",
    "stage2.batch_size=8",
]
