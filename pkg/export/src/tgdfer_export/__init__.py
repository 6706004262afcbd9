"""Feature exporter bridging raw clips to the TGFB/TGTE training formats."""

from .encoder import ClipEncoder, MissingWeightsError, PromptTooLongError, StubEncoder, build_encoder
from .frames import ClipDecodeError, discover_clips, load_clip_frames, sample_indices
from .jobs import ExportJob, ExportSummary, export_bags, export_text

__version__ = "0.1.0"
