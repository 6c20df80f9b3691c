from .camera import Camera, generate_ray, look_at
from .imageio import read_pfm, read_ppm, write_pfm, write_ppm
from .integrator import (
    HitRecord,
    RenderResult,
    pixel_integral,
    radiance,
    radiance_field,
    render_image,
    render_pixels,
    trace_screen,
)
from .sampling import PixelSampleSet, SampleBatch, batch_samples, chunk_pixels, pixel_samples, sample_pixels
from .shading import shade

__all__ = [
    "Camera",
    "HitRecord",
    "PixelSampleSet",
    "RenderResult",
    "SampleBatch",
    "batch_samples",
    "chunk_pixels",
    "generate_ray",
    "look_at",
    "pixel_integral",
    "pixel_samples",
    "radiance",
    "radiance_field",
    "read_pfm",
    "read_ppm",
    "render_image",
    "render_pixels",
    "sample_pixels",
    "shade",
    "trace_screen",
    "write_pfm",
    "write_ppm",
]
