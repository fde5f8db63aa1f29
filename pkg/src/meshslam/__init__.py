"""meshslam: self-organizing distributed keyframe SLAM at desk scale."""

__version__ = "0.1.0"
