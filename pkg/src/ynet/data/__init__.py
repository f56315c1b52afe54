from .geometry import pixel_to_world, rescale_coords, upscale_coords, world_to_pixel
from .synth import SynthScene, synth_scene
from .tracks import (
    Discard,
    PipelineConfig,
    PipelineResult,
    RawTrack,
    WindowedSample,
    downsample_fps,
    filter_and_window,
    load_tracks,
    read_windows,
    run_pipeline,
    split_discontinuities,
    write_discards,
    write_tracks,
    write_windows,
)
