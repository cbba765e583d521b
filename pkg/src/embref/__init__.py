"""embref: embodied-reference grounding on a self-contained synthetic benchmark.

A sender in the image refers to an object with a short phrase and a pointing
gesture; the model re-origins scene coordinates at the sender, encodes a
body-language direction, and reasons over facing, pointing, and verbal
attention to predict the referent's box.
"""

from .config import ConfigError, RunConfig
from .model import GroundingModel, ModelOutputs, collate

__version__ = "0.1.0"

__all__ = ["ConfigError", "RunConfig", "GroundingModel", "ModelOutputs", "collate", "__version__"]
