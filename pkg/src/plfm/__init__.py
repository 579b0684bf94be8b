"""Multimodal SAR/optical cloud removal: ConvLSTM + cGAN branches merged by a pixel-classification head."""

__version__ = "0.1.0"
